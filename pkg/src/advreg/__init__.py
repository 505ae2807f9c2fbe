"""Linear regression trained against an evasion adversary through a pessimistic bilevel program."""

from .attack import AttackSpec, attack_instance, build_attacked_testset
from .baselines import fit_bs, fit_linreg
from .errors import AdvRegError, ContractError, DataLoadError, DomainError, SolverError
from .experiment import ExperimentConfig, evaluate_mse, feature_movement, load_dataset, normalize, run_sweep
from .model import AdversaryBlock, Dataset, ModelConfig, TrainingSplit
from .solver import SolverConfig, Status, initial_point, solve
from .stationarity import BilevelProblem, BlockVariable, assemble_jacobian, assemble_residual

__version__ = "0.1.0"

__all__ = [
    "AdvRegError", "AdversaryBlock", "AttackSpec", "BilevelProblem", "BlockVariable", "ContractError",
    "DataLoadError", "Dataset", "DomainError", "ExperimentConfig", "ModelConfig", "SolverConfig",
    "SolverError", "Status", "TrainingSplit", "assemble_jacobian", "assemble_residual", "attack_instance",
    "build_attacked_testset", "evaluate_mse", "feature_movement", "fit_bs", "fit_linreg", "initial_point",
    "load_dataset", "normalize", "run_sweep", "solve",
]
