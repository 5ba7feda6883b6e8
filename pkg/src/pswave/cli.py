"""Batch entry points: forward data generation, inversion, verification
suites, stability sweeps.

Configuration lives in a JSON file; flags only override. Outputs are
deterministic for a fixed seed and independent of the worker count.
Exit codes: 0 ok, 2 config/parse trouble, 3 solver failure, 4
verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fieldcore import (GridSpec, Potential, SolverError, SphereGrid,
                        json_dumps_deterministic)
from .inverse import InverseConfig, layer_strip_reconstruct
from .pointsource import (BackscatterData, measurement_norm, sample_backscatter,
                          uniform_taus)
from .retarded import TruncationError
from .stability import StabilityConfig, make_noise, shell_l2_errors, stability_experiment
from . import verify as verify_suites

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


@dataclass
class RunConfig:
    potential: dict
    grid: GridSpec = field(default_factory=GridSpec)
    sources_polar: int = 8
    sources_azimuth: int = 16
    n_tau: int = 64
    m: int | None = None
    M: int | None = None
    inverse: dict = field(default_factory=dict)
    stability: dict = field(default_factory=dict)
    out_dir: Path = Path(".")
    seed: int = 0
    threads: int = 1

    @staticmethod
    def from_file(path: str | Path, overrides: dict | None = None) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        return RunConfig.from_dict(raw, overrides)

    @staticmethod
    def from_dict(raw: dict, overrides: dict | None = None) -> "RunConfig":
        overrides = overrides or {}
        g = raw.get("grid", {})
        grid = GridSpec(
            n_shells=int(g.get("shells", 48)),
            r_max=float(g.get("r_max", 2.0)),
            n_polar=int(g.get("polar", 16)),
            n_azimuth=int(g.get("azimuth", 32)),
            n_xi_steps=int(g.get("xi_steps", 96)),
            xi_max=float(g.get("xi_max", 2.0)),
            kq_radial=int(g.get("kq_radial", 10)),
            kq_polar=int(g.get("kq_polar", 12)),
            kq_azimuth=int(g.get("kq_azimuth", 24)),
        )
        orders = raw.get("orders", {})
        srcs = raw.get("sources", {})
        cfg = RunConfig(
            potential=raw["potential"],
            grid=grid,
            sources_polar=int(srcs.get("polar", 8)),
            sources_azimuth=int(srcs.get("azimuth", 16)),
            n_tau=int(raw.get("tau", {}).get("count", 64)),
            m=orders.get("m"),
            M=orders.get("M"),
            inverse=raw.get("inverse", {}),
            stability=raw.get("stability", {}),
            out_dir=Path(raw.get("output", {}).get("dir", ".")),
            seed=int(raw.get("seed", 0)),
        )
        for key, val in overrides.items():
            if val is not None:
                setattr(cfg, key, val)
        cfg.out_dir = Path(cfg.out_dir)
        if cfg.n_tau < 8:
            raise ValueError("need at least 8 tau samples")
        return cfg

    def potential_object(self) -> Potential:
        return Potential.from_spec(self.potential)


def cmd_forward(cfg: RunConfig) -> list[Path]:
    """Generate backscattering data: CSV plus JSON sidecar."""
    q = cfg.potential_object()
    sources = SphereGrid(cfg.sources_polar, cfg.sources_azimuth)
    taus = uniform_taus(cfg.n_tau)
    data = sample_backscatter(q, sources, taus, m=cfg.m, M=cfg.M,
                              grid=cfg.grid, threads=cfg.threads)
    data.meta["seed"] = cfg.seed
    data.meta["potential"] = cfg.potential
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / "backscatter.csv"
    data.to_csv(out)
    logger.info("wrote %s", out)
    return [out, out.with_suffix(out.suffix + ".json")]


def cmd_invert(data_path: str | Path, cfg: RunConfig) -> tuple[list[Path], bool]:
    """Reconstruct from a data CSV; returns written paths and a flag marker."""
    data = BackscatterData.from_csv(data_path)
    inv = InverseConfig.from_dict(cfg.inverse, grid=cfg.grid)
    recon = layer_strip_reconstruct(data, config=inv)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = cfg.out_dir / "reconstruction.csv"
    recon.to_csv(out_csv)
    report = {
        "shells": [
            {"r": float(r), "residual": float(res), "flagged": bool(fl)}
            for r, res, fl in zip(recon.radii, recon.residuals, recon.flagged)
        ],
        "amplification_flagged": bool(recon.flagged.any()),
    }
    out_json = cfg.out_dir / "reconstruction_report.json"
    out_json.write_text(json_dumps_deterministic(report))
    return [out_csv, out_json], bool(recon.flagged.any())


def cmd_stability(cfg: RunConfig) -> list[Path]:
    """Noise sweep: per-level reports plus a summary CSV."""
    q = cfg.potential_object()
    noises = cfg.stability.get("noise", [0.0])
    inv = InverseConfig.from_dict(cfg.inverse, grid=cfg.grid)
    scfg = StabilityConfig(grid=cfg.grid, n_sources_polar=cfg.sources_polar,
                           n_sources_azimuth=cfg.sources_azimuth, n_tau=cfg.n_tau,
                           inverse=inv, seed=cfg.seed,
                           amplification_limit=cfg.stability.get("amplification_limit"))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    rows = []
    for level, delta in enumerate(noises):
        report = stability_experiment(q, float(delta), scfg)
        out = cfg.out_dir / f"stability_{level}.json"
        out.write_text(report.to_json())
        paths.append(out)
        rows.append((float(delta), report.lam, report.full_domain_error,
                     report.fit_kind, report.fit_param))
    sweep = cfg.out_dir / "stability_sweep.csv"
    with open(sweep, "w", newline="") as fh:
        fh.write("noise,lambda,full_domain_error,fit_kind,fit_param\n")
        for row in rows:
            fh.write(f"{row[0]:.17g},{row[1]:.17g},{row[2]:.17g},{row[3]},{row[4]:.17g}\n")
    paths.append(sweep)
    return paths


def cmd_verify(suite: str) -> int:
    """Run a named invariant suite; nonzero exit on any failure."""
    suites = verify_suites.SUITES
    if suite not in suites:
        print(f"unknown suite {suite!r}; choose from {sorted(suites)}", file=sys.stderr)
        return EXIT_CONFIG
    failures = []
    for name, passed, detail in suites[suite]():
        status = "pass" if passed else "FAIL"
        print(f"[{status}] {suite}.{name}: {detail}")
        if not passed:
            failures.append({"check": name, "detail": detail})
    if failures:
        print(json.dumps({"suite": suite, "failures": failures}), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pswave",
                                     description="point-source wave data and inversion")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)

    sub.add_parser("forward", parents=[common])
    p_inv = sub.add_parser("invert", parents=[common])
    p_inv.add_argument("data", type=Path, help="backscatter CSV (with sidecar)")
    p_ver = sub.add_parser("verify", parents=[common])
    p_ver.add_argument("--suite", required=True,
                       help="gamma | kernel | goursat | identities | gronwall")
    sub.add_parser("stability", parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0

    if args.command == "verify":
        return cmd_verify(args.suite)

    try:
        overrides = {"out_dir": args.out, "seed": args.seed, "threads": args.threads}
        if args.config is None:
            print("--config is required for this command", file=sys.stderr)
            return EXIT_CONFIG
        cfg = RunConfig.from_file(args.config, overrides)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "forward":
            cmd_forward(cfg)
            return EXIT_OK
        if args.command == "invert":
            try:
                _, flagged = cmd_invert(args.data, cfg)
            except ValueError as exc:
                print(f"data parse error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            if flagged:
                print("amplification limit reached on some shells", file=sys.stderr)
                return EXIT_SOLVER
            return EXIT_OK
        if args.command == "stability":
            cmd_stability(cfg)
            return EXIT_OK
    except (SolverError, TruncationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
