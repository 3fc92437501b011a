"""Event-driven surrogate optimization with serial, synchronous and asynchronous workers."""

from .bench import ParetoTimeModel, RunConfig, compute_speedup, run_experiment, run_trial
from .checkpoint import Checkpointer, resume
from .controller import (
    ConstantTime,
    EvalRecord,
    Proposal,
    SerialController,
    SimController,
    ThreadController,
    ThreadWorker,
    ProcessWorker,
    sim_run,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateDesignError,
    DomainError,
    DuplicatePointError,
    NotReadyError,
    ProtocolError,
)
from .gp import GaussianProcess
from .problems import Problem, get_problem, problem_catalog
from .rbf import RbfSurrogate
from .strategy import Hyperparameters, SamplingState, SurrogateStrategy

__version__ = "0.1.0"
