"""Feature decorrelation (RFF + learned sample weights) and MI-based purification."""
from .harness import RunConfig, decorr_study, evaluate, sweep, train
from .model import DeproLossConfig, DeproModel, ModelDims, depro_loss, encode
from .rff import RffBank, apply, sample_bank

__all__ = [
    "DeproLossConfig", "DeproModel", "ModelDims", "RffBank", "RunConfig", "apply",
    "decorr_study", "depro_loss", "encode", "evaluate", "sample_bank", "sweep", "train",
]
