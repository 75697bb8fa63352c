"""Shared numerical tolerances and truncation policies.

Every production check and every test asserts against the same constants so
that tightening a tolerance in one place propagates everywhere.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # Generator / kernel construction
    row_sum_tol: float = 1e-12          # generator rows must sum to 0 within this
    kernel_entry_tol: float = 1e-12     # allowed negativity / overshoot of K entries
    reconstruction_tol: float = 1e-12   # r*(K - I) must reproduce the generator
    # Probability vectors produced by kernel algebra
    prob_vector_tol: float = 1e-10
    stationary_residual_tol: float = 1e-9
    # Poisson truncation: keep mass 1 - poisson_tail, but never more than
    # hard_cap_factor * (mean + hard_cap_offset) terms.
    poisson_tail: float = 1e-12
    poisson_hard_cap_factor: float = 10.0
    poisson_hard_cap_offset: float = 10.0
    # Spectral vs repeated-multiply agreement for kernel powers
    kernel_power_tol: float = 1e-9
    sparse_mirror_tol: float = 1e-10
    # Rate schedule fitting
    schedule_mi_tol: float = 1e-6       # |MI(cumulative(t)) - (1 - (1-eps) t)|
    newton_residual_tol: float = 1e-13
    newton_max_iter: int = 50
    bisection_max_iter: int = 200
    # Iteration cap for power iteration on very large kernels
    power_iteration_cap: int = 100_000
    # Exhaustive enumeration guard for toy distributions / oracle denoisers
    enumeration_cap: int = 1_000_000
    # Largest vocabulary for which a dense B x B joint is materialized
    # (mutual-information tables, densified mirrors)
    dense_joint_cap: int = 4096


TOLERANCES = Tolerances()
