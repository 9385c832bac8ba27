"""Next-step bandwidth prediction: BiLSTM with a boosted residual corrector."""

from .bilstm import (BiLSTMConfig, BiLSTMParams, ShapeError, bilstm_forward,
                     bilstm_forward_batch, bilstm_train, make_windows)
from .boosting import BoostConfig, RegressionTree, ResidualEnsemble
from .hybrid import (HybridPredictor, ModelFormatError, fit_residual_ensemble,
                     hybrid_predict, load_model, save_model, train_hybrid)

__all__ = [
    "BiLSTMConfig", "BiLSTMParams", "BoostConfig", "HybridPredictor", "ModelFormatError",
    "RegressionTree", "ResidualEnsemble", "ShapeError", "bilstm_forward",
    "bilstm_forward_batch", "bilstm_train", "fit_residual_ensemble", "hybrid_predict",
    "load_model", "make_windows", "save_model", "train_hybrid",
]
