"""Deterministic federated-averaging simulator for a progressively grown
seq2seq transformer, with exact communication-cost accounting."""

import numpy as _numpy  # noqa: F401  (loads the BLAS the limit below applies to)
import threadpoolctl

# Single-threaded BLAS: the arrays here are far below GEMM threading
# thresholds (threads only add sync overhead), and one fixed reduction order
# keeps results bit-identical whatever the host's thread settings are.
_BLAS_SINGLE_THREAD = threadpoolctl.threadpool_limits(limits=1, user_api="blas")

from .config import RunSettings, default_config_text, load_settings, parse_config_text
from .costs import (
    CostInputs,
    feddt_total_quoted,
    feddt_total_series,
    fedt_total,
    reduction_ratio,
    verify_ledger,
)
from .data import Sample, SplitSpec, SyntheticTask, generate, holdout, split
from .fed import (
    CommLedger,
    FederatedConfig,
    GrowthSchedule,
    RoundReport,
    Server,
    TrainingResult,
    aggregate,
    client_update,
    depth_trace,
    make_schedule,
    maybe_grow,
    run_training,
    sample_clients,
)
from .gradcheck import run_gradcheck
from .model import DynamicTransformer, ModelConfig, loss, new_model
from .optim import AdamState, Param, adam_step, he_scale, sgd_step
from .rng import RNG_VERSION, init_normal, subseed
from .tensor import Tensor, backward, no_grad
from .wire import deserialize_model, seal, serialize_model, unseal

__version__ = "0.1.0"
