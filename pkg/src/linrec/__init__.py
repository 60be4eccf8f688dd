"""linrec: linear recurrent sequence layers with interchangeable
parameterizations, pluggable discretization, and three numerically-equivalent
execution modes (sequential, chunk-parallel, single-step)."""

from .numerics import (
    ComplexPair,
    Rng,
    ShapeError,
    allocation_count,
    as_tensor,
    complex_dtype,
    complex_exp,
    real_dtype,
    sigmoid,
    softplus,
)
from .discretize import (
    NonMonotoneTimestamps,
    SingularBilinear,
    deltas_from_timestamps,
    discretize,
    discretize_bilinear,
    discretize_dirac,
    discretize_zoh,
)
from .scan import (
    StepState,
    combine,
    identity_element,
    init_step_state,
    plan_chunks,
    scan_parallel,
    scan_sequential,
    step,
)
from .autograd import (
    FiniteDiffReport,
    GradBundle,
    Tape,
    TapeConsumed,
    check_layer_gradients,
    finite_diff_check,
    layer_backward,
    scan_backward,
    scan_forward,
)
from .layers import (
    LAYER_KINDS,
    LRU,
    RGLRU,
    S4D,
    S5,
    S6,
    SCHEMES_BY_KIND,
    LayerConfig,
    LayerStepState,
    UnknownLayer,
    init_layer,
    layer_step,
    lti_forward,
    ltv_forward,
    make_layer,
)
from .model import (
    Adam,
    BadMagic,
    Block,
    CorruptHeader,
    GatedMLP,
    LMHeadModel,
    ModelConfig,
    RMSNorm,
    ShapeMismatch,
    TokenOutOfRange,
    UnknownMixer,
    Unsupported,
    build_model,
    cross_entropy,
    generate,
    lm_forward,
    load_checkpoint,
    model_backward,
    register_mixer,
    save_checkpoint,
)
from .bench import (
    BenchConfig,
    BenchRecord,
    ValidationReport,
    run_bench,
    run_validation,
    scaling_report,
)

__version__ = "0.1.0"
