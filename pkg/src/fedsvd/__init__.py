"""Federated SVD for sample-partitioned data, with cost accounting and a leakage attack."""

from .attack import (
    AttackTranscript,
    ReconstructionReport,
    build_linear_system,
    pearson_correlation,
    reconstruct_covariance,
)
from .linalg import (
    ConvergenceCriterion,
    IterationResult,
    SvdResult,
    converged,
    gram_schmidt,
    jacobi_eigh,
    principal_angles,
    reference_svd,
    sign_normalize,
    vertical_subspace_iteration,
)
from .partition import VerticalPartition, split_columns, stack_right_blocks
from .protocol import (
    ProtocolConfig,
    TranscriptRecorder,
    approximate_init,
    federated_gram_schmidt,
    federated_randomized_svd,
    federated_subspace_iteration,
    predicted_float_cost,
    run_algorithm,
)
from .transport import LoopbackTransport, Message, MessageKind, TransmissionLedger

__all__ = [name for name in dir() if not name.startswith("_")]
