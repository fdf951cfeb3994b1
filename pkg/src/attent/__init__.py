"""Single-head attention learners trained with residual-driven example selection."""

from .antk import KernelMatrix, KernelTrace, antk_gram, antk_pair, loss_reduction_bound, track_convergence
from .learner import (
    AttentionParams, FlatGradient, JacobianCache, LabeledSequence, backward, batch_loss,
    forward_cross, forward_masked, forward_self, jac_key_col, jac_query_col, jac_value, sgd_step,
)
from .numerics import ContractError, RandomSource
from .tasks import Dataset, DatasetFormatError, TaskSpec, generate, load_jsonl, save_jsonl
from .teaching import (
    IntervalSchedule, RatioSchedule, SelectionStrategy, TeachingConfig, TeachingTrace,
    full_batch_sgd, preset, select_hard, select_random, select_soft, teach_loop,
)

__version__ = "0.1.0"
