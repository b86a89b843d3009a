"""Empirical NTK evolution during training: measurement, lazy training and switching runs."""

from .analysis import (
    ConeReport,
    DistanceCurve,
    Embedding2D,
    adjacent_distances,
    cone_embedding,
    cone_report,
    detect_phase_transition,
    distance_to_references,
)
from .data import Dataset, ProbeSet, load_idx, load_mnist5k, probe_sample, synth_blobs
from .lintrain import LinearizedModel, linearize, switch_experiment, train_linearized
from .nn import (
    ArchSpec,
    ModelState,
    ReadoutRule,
    forward,
    grad_params,
    init_model,
    loss_and_grad,
    scalar_output,
)
from .ntk import GramMatrix, GramRecorder, entk_gram, kernel_distance, kernel_velocity
from .train import TrainConfig, TrajectoryLog, evaluate, train

__version__ = "0.1.0"
