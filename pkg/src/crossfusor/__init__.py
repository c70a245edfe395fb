"""History-scaled conditional diffusion for car-following trajectory prediction."""
from .baselines import ConstantVelocityRegressor, KalmanCV, cv_baseline
from .diffusion import (
    DiffusionSchedule,
    NoiseScale,
    compute_noise_scale,
    forward_closed_form,
    forward_step,
    reverse_step,
    sample_trajectory,
)
from .estimator import CrossfusorRegressor
from .metrics import ade, fde, horizon_metrics, rmse
from .model import ABLATIONS, Crossfusor, ModelConfig
from .ngsim import ingest_ngsim
from .platoon import (
    CHANNELS,
    NormalizationStats,
    Platoon,
    PlatoonWindow,
    WindowSet,
    fit_normalization,
    load_windows,
    save_windows,
    split_train_test,
    window_platoons,
)
from .synthetic import generate_mixed, generate_synthetic
from .training import EvalReport, TrainConfig, evaluate, load_checkpoint, run_ablations, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "CHANNELS", "ConstantVelocityRegressor", "Crossfusor", "CrossfusorRegressor", "DiffusionSchedule",
    "EvalReport", "KalmanCV", "ModelConfig", "NoiseScale", "NormalizationStats", "Platoon", "PlatoonWindow",
    "TrainConfig", "WindowSet", "ade", "compute_noise_scale", "cv_baseline", "evaluate", "fde",
    "fit_normalization", "forward_closed_form", "forward_step", "generate_mixed", "generate_synthetic",
    "horizon_metrics", "ingest_ngsim", "load_checkpoint", "load_windows", "reverse_step", "rmse", "run_ablations",
    "sample_trajectory", "save_checkpoint", "save_windows", "split_train_test", "train", "window_platoons",
]
