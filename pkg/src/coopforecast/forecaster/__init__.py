"""LSTM encoder-decoder forecaster with Monte-Carlo dropout."""
from coopforecast.forecaster.checkpoint import load as load_checkpoint
from coopforecast.forecaster.checkpoint import save as save_checkpoint
from coopforecast.forecaster.inference import DEFAULT_PASSES, ForecastDistribution, mc_dropout_infer
from coopforecast.forecaster.model import ModelParams, forward, init_params, nll_loss
from coopforecast.forecaster.synthetic import synthetic_dataset
from coopforecast.forecaster.train import TrainConfig, TrainResult, train

__all__ = [
    "DEFAULT_PASSES",
    "ForecastDistribution",
    "ModelParams",
    "TrainConfig",
    "TrainResult",
    "forward",
    "init_params",
    "load_checkpoint",
    "mc_dropout_infer",
    "nll_loss",
    "save_checkpoint",
    "synthetic_dataset",
    "train",
]
