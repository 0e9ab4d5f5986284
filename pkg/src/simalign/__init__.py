"""Over-the-air semantic alignment with stacked intelligent metasurfaces.

Simulates a SIM whose phase shifts are tuned to emulate a linear semantic
aligner between heterogeneous tx/rx latent spaces, sent over a Rayleigh MIMO
channel with MMSE equalization.
"""
from .channel import (
    ChannelRealization,
    NoiseModel,
    Pipeline,
    calibrate_noise,
    mmse_equalizer,
    run_digital_baseline,
    run_pipeline,
    transmit,
)
from .equalize import (
    Aligner,
    FrameOperator,
    PrototypeSet,
    build_frame,
    build_ppfe,
    compose_pfe,
    fit_linear,
    kmeans,
    prototypical_anchors,
)
from .latentio import (
    LatentDataset,
    SyntheticConfig,
    Whitener,
    apply_psi,
    fit_whitener,
    generate_synthetic,
    invert_psi,
    load_latents,
    pair_to_complex,
    save_latents,
)
from .matops import (
    RngStream,
    hermitian_pinv_sqrt,
    partial_isometry,
    sample_complex_gaussian,
    vec_stack,
)
from .simopt import (
    OptimizerConfig,
    TrainTrace,
    emulation_loss,
    optimal_beta,
    optimize,
    phase_gradient,
)
from .simsurface import (
    SimGeometry,
    SimStack,
    assemble_response,
    build_geometry,
    forward,
    propagation_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "Aligner",
    "ChannelRealization",
    "FrameOperator",
    "LatentDataset",
    "NoiseModel",
    "OptimizerConfig",
    "Pipeline",
    "PrototypeSet",
    "RngStream",
    "SimGeometry",
    "SimStack",
    "SyntheticConfig",
    "TrainTrace",
    "Whitener",
    "apply_psi",
    "assemble_response",
    "build_frame",
    "build_geometry",
    "build_ppfe",
    "calibrate_noise",
    "compose_pfe",
    "emulation_loss",
    "fit_linear",
    "fit_whitener",
    "forward",
    "generate_synthetic",
    "hermitian_pinv_sqrt",
    "invert_psi",
    "kmeans",
    "load_latents",
    "mmse_equalizer",
    "optimal_beta",
    "optimize",
    "pair_to_complex",
    "partial_isometry",
    "phase_gradient",
    "propagation_matrix",
    "prototypical_anchors",
    "run_digital_baseline",
    "run_pipeline",
    "sample_complex_gaussian",
    "save_latents",
    "transmit",
    "vec_stack",
]
