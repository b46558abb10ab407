"""Neural-operator continuous tensor function representation and completion."""
from .tensor import (CoordinateSet, DenseTensor, ObservationSet, coordinate_grid, fold,
                     mode_n_product, observe, random_mask, unfold)
from .model import CtrModel, build_eval_plan, ctr_eval, tucker_baseline_eval
from .trainer import TrainConfig, train, recover_full

__version__ = "0.1.0"

__all__ = [
    "CoordinateSet", "DenseTensor", "ObservationSet", "coordinate_grid", "fold",
    "mode_n_product", "observe", "random_mask", "unfold",
    "CtrModel", "build_eval_plan", "ctr_eval", "tucker_baseline_eval",
    "TrainConfig", "train", "recover_full",
]
