"""Schedule-conditioned discrete diffusion (SCUD) at desk scale.

Continuous-time discrete Markov forward processes reparameterized as
constant-rate event streams, mutual-information rate schedules, the
event-conditioned training bound and sampler, and numerical verification of
the masking and score-entropy equivalences.
"""

from .config import TOLERANCES, Tolerances
from .ctmc_core import (
    DenseKernel,
    EventProcess,
    GeneratorMatrix,
    SparseRankOneKernel,
    Trajectory,
    build_event_process,
    event_process_from_kernel,
    generator_exponential_apply,
    gillespie_simulate,
    kernel_power_apply,
    stationary_distribution,
)
from .denoiser import (
    Architecture,
    LookupDenoiser,
    MixedDenoiser,
    OracleDenoiser,
    TrainableDenoiser,
    UniformDenoiser,
    denoiser_loss_and_grad,
    train,
    validate_denoiser_output,
)
from .loss import (
    LossEstimate,
    NonFiniteLossError,
    UnreachableStateError,
    backward_from_denoiser,
    exact_expected_loss,
    forward_noise,
    kl_divergence,
    masking_objective,
    posterior_prev,
    scud_elbo_estimate,
    score_from_denoiser,
    sedd_loss,
)
from .processes import (
    build_blosum,
    build_gaussian_band,
    build_masking,
    build_sparse_graph,
    build_uniform,
    ring_similarity,
    synthetic_pair_probs,
)
from .sampler import SamplerConfig, rate_diagnostic, scud_sample, scud_sample_batch
from .schedule import (
    EventSchedule,
    RateSchedule,
    counts_at,
    event_mutual_information,
    fit_schedule,
    sample_event_schedule,
)
from .toy_data import CorrelatedPair, Factorized, MarkovChain, ToyDistribution
from .verification import run_verification

__version__ = "0.1.0"
