"""krlx: kinetic Fokker-Planck / Vlasov-Poisson-Fokker-Planck numerics.

Equilibria of the self-consistent system, weighted-space operator calculus,
a positivity-preserving kinetic propagator, hypocoercive decay diagnostics
and the Duhamel fixed-point construction, plus a batch CLI.
"""
from .grids import PhaseGrid, SpatialGrid
from .fields import DistributionField, SpatialField, read_field, write_field
from .phasecore import (CapabilityError, WeightedOperatorSet, apply_lambda_sq,
                        b_inner, bnorm, frac_norm, opnorm_estimate,
                        project_perp)
from .equilibrium import (ConvergenceError, EquilibriumState, PotentialSpec,
                          UnsupportedRegimeError, double_well_potential,
                          initial_potential, maxwellian, quadratic_potential,
                          quartic_potential, solve_poisson_emden)
from .fieldsolve import (check_field_bounds, density, field_from_density,
                         h_alpha_norm, short_time_field_check)
from .witten import SpectralGapReport, perturbed_gap_check, spectral_gap, \
    witten_apply
from .semigroup import (KineticPropagator, PropagatorConfig, gaussian_packet,
                        indicator_probe, kfp_propagate, multiscale_probes,
                        suggest_dt, verify_conjugation_and_continuity,
                        verify_perp_decay, verify_short_time_exponents,
                        wave_probe, wave_probes)
from .vpfp import (ConservationReport, DecayReport, FixedPointConfig,
                   VPFPTrajectory, conservation_check, convolution_bound_check,
                   decay_report, picard_iterate, picard_stitched,
                   relative_entropy, vpfp_run)

__version__ = "0.1.0"
