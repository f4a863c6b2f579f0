"""flowlab: a desk-scale laboratory for dual-branch guided flow-ODE sampling.

Analytic straight-line flows over Gaussian mixtures stand in for learned
velocity estimators, so every guarantee of the guided sampling mechanism,
such as low-pass error reduction, Lipschitz stability, trajectory-divergence
bounds, and Wasserstein ordering, can be checked against exact oracles.
"""

from .flowfield import (
    AnalyticFlowField,
    GaussianMixture,
    GridField,
    Lattice,
    LinearField,
    PerturbedField,
    band_limited_field,
    inject_band_noise,
    marginal_std,
    monte_carlo_velocity,
    oracle_velocity,
    sample_mixture,
    sample_on_grid,
)
from .relaxation import (
    GaussianKernel1D,
    SmoothedField,
    SpectralReport,
    attenuation_profile,
    band_energy,
    estimate_lipschitz,
    make_kernel,
    relax_field,
)
from .attention import (
    HeadField,
    LogitMatrix,
    TokenSequence,
    ToyVelocityHead,
    blur_logits,
    concat_priors,
    cross_attention,
    relaxed_attention,
    toy_velocity_head,
)
from .visibility import (
    Camera,
    DepthMap,
    VisibilityWeights,
    VoxelGrid,
    build_depth_map,
    dilate_min,
    extract_occupancy,
    kernel_size,
    project,
    soft_visibility,
    visibility_weights,
    voxel_to_camera,
)
from .sampler import (
    BranchPair,
    SamplerError,
    Schedule,
    Trajectory,
    alpha_schedule,
    batch_sample,
    blend_step,
    euler_step,
    integrate,
    visibility_blend,
)
from .metrics import (
    ErrorReport,
    GronwallHypothesisError,
    PointSet,
    StabilityBoundInputs,
    frechet_distance,
    path_error,
    stability_bound,
    verify_gronwall,
    wasserstein2_exact,
    wasserstein2_gaussian_1d,
)
from .experiments import ExperimentConfig, Report, default_config, run

__version__ = "0.1.0"
