"""snrforge: noise-schedule design over log-SNR plus a desk-scale diffusion lab."""

from .config import PREDICT_TARGETS, ConfigError, RunConfig, run_config_from_dict, run_config_from_json
from .datasets import DATASET_KINDS, Dataset2D, make_dataset
from .metrics import (
    CompareRow,
    EvalReport,
    compare_schedules,
    energy_distance,
    evaluate_samples,
    ks_conformance,
    sliced_wasserstein,
)
from .model import MlpConfig, init_params, model_forward, time_embedding, time_frequencies
from .sampling import (
    SamplePlan,
    SamplingDivergenceError,
    build_plan,
    ddim_step,
    plan_rows,
    sample,
    sample_with_model,
)
from .schedules import (
    Cauchy,
    Cosine,
    CosinePoly,
    CosineScaled,
    CosineShifted,
    DEFAULT_LAMBDA_CLAMP,
    EdmLogNormal,
    FlowMatchOT,
    FmLogitNormal,
    Laplace,
    SCHEDULE_FAMILIES,
    Schedule,
    ScheduleReport,
    alpha_sigma,
    clamp_range_mass,
    normal_quantile,
    poly_time_warp,
    poly_time_warp_inverse,
    schedule_from_dict,
    schedule_from_json,
    validate_schedule,
)
from .training import (
    DegenerateConversionError,
    TrainState,
    TrainingDivergenceError,
    batch_loss_and_grads,
    forward_noise,
    init_train_state,
    load_checkpoint,
    loss_and_grad,
    make_target,
    prediction_to_x0_eps,
    save_checkpoint,
    to_eps_residual,
    train,
    train_steps,
)
from .weighting import (
    Constant,
    CosineEps,
    DegenerateWeightError,
    Edm,
    FmOt,
    MinSnr,
    ScheduleAsWeight,
    SoftMinSnr,
    WEIGHT_KINDS,
    WeightStrategy,
    effective_coefficient,
    strategy_from_dict,
    strategy_from_json,
)

__version__ = "0.1.0"
