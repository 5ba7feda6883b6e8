"""Point-source wave fields on light cones.

Forward solvers (progressive-wave expansion plus retarded-potential
Neumann series), synthetic backscattering data, layer-stripping
reconstruction and an empirical stability harness.
"""

from .fieldcore import (AXISYMMETRIC, GENERAL, SPHERICAL, ConeTrace,
                        GammaBasis, GridSpec, Potential, SolverError,
                        SpaceTimeField, SpatialField, SphereGrid, gamma_eval,
                        laplacian, radial_derivative, resolve_tier,
                        rotation_to_axis, sphere_integral)
from .progressive import (CoefficientSequence, ResidualSource, assemble_v,
                          compute_coefficients, residual_source)
from .retarded import (KernelEvaluation, NeumannSolution, TruncationError,
                       k_apply_direct, k_apply_lorentz, neumann_constant,
                       neumann_solve)
from .goursat import (GoursatSolution, cone_identity_residual, energy_trace,
                      goursat_solve, pde_residual)
from .pointsource import (BackscatterData, PointSourceSolution,
                          cone_data_from_potential, derivative_channel,
                          measurement_norm, sample_backscatter,
                          solve_point_source, transport_identity_residual,
                          uniform_taus)
from .inverse import (AngularControlEstimate, InverseConfig,
                      ReconstructionState, angular_control_estimate,
                      angular_derivative, boundary_identity_check,
                      boundary_kernel, layer_strip_reconstruct,
                      spherical_mean_derivative)
from .stability import (StabilityConfig, StabilityReport, coords_identity_check,
                        gronwall_bound, gronwall_verify, optimise_exponential,
                        stability_experiment)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
