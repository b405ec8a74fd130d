"""Decentralized matrix factorization by SGD for network distance prediction."""

from .model import (ContractError, Coordinate, DistanceModel, LossKind, PartialMatrix,
                    gradient_x, gradient_y, local_loss, loss, predict, predict_matrix)
from .optimizer import (LineSearchResult, UpdateConfig, UpdateOverflow, line_search,
                        minibatch_step, search_row, sgd_step)
from .protocol import (Mode, NeighborRecord, NeighborSet, NodeState, decay_weights, on_contact,
                       select_probe_target)
from .sim import SimConfig, SimResult, run_active, run_landmark, run_passive, run_vivaldi

__version__ = "0.1.0"

__all__ = [
    "ContractError", "Coordinate", "DistanceModel", "LossKind", "PartialMatrix",
    "gradient_x", "gradient_y", "local_loss", "loss", "predict", "predict_matrix",
    "LineSearchResult", "UpdateConfig", "UpdateOverflow", "line_search", "minibatch_step",
    "search_row", "sgd_step",
    "Mode", "NeighborRecord", "NeighborSet", "NodeState", "decay_weights", "on_contact",
    "select_probe_target",
    "SimConfig", "SimResult", "run_active", "run_landmark", "run_passive", "run_vivaldi",
]
