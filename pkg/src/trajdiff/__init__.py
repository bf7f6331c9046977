"""Guided diffusion engine for multi-agent 2D trajectory distributions."""

__version__ = "0.1.0"

from .diffusion import (  # noqa: F401
    DiffusionConfig,
    heun_sample,
    precondition_coeffs,
    sample_training_noise,
    score_from_denoiser,
    step_schedule,
    wrap_denoiser,
)
from .engine import (  # noqa: F401
    PcaCodec,
    RawCodec,
    TrajectoryModel,
    build_codec,
    evaluate_corpus,
    train_model,
)
from .guidance import (  # noqa: F401
    AttractorSpec,
    GuidanceConfig,
    RepellerSpec,
    attractor_cost,
    constraint_score,
    postprocess_optimize,
    repeller_cost,
)
from .logprob import exact_divergence, flow, hutchinson_divergence, sample_logp  # noqa: F401
from .metrics import cluster_joint, min_sade, min_sfde, miss_rate, overlap_rate, success_rate  # noqa: F401
from .models import GmmOracle, SetDenoiser, SetDenoiserConfig, noise_embedding, train_step  # noqa: F401
from .pca import PcaModel, Pose, canonicalize, fit_pca, load_pca, save_pca  # noqa: F401
from .scenes import SceneParams, Scenario, generate_scenario, read_corpus, write_corpus  # noqa: F401
