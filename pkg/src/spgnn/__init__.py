"""Graph-based two-stage defect detector written against plain numpy."""
from .config import RunConfig, config_from_dict, config_load, desk_config
from .detector import Spgnn
from .evaluation import EvalReport, average_precision, evaluate, pr_curve
from .train import train

__all__ = ["RunConfig", "Spgnn", "EvalReport", "average_precision", "config_from_dict", "config_load",
           "desk_config", "evaluate", "pr_curve", "train"]
__version__ = "0.1.0"
