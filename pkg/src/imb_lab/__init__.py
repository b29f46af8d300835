"""Information multi-bottleneck training for binary stochastic feed-forward networks."""

from .attack import AttackConfig, l2_attack, robustness_eval
from .data import Dataset, gen_binary_task, load_mnist_idx, split_and_batch
from .estimator import IMBClassifier
from .exact import info_plane_trace, lemma1_residuals, mutual_info, propagate_exact
from .network import NetworkParams, grow_particles, head_forward, layer_forward, sample_layer
from .objectives import bernoulli_kl, compression_term, joint_objective, nll_term, vcr_term
from .optim import optimizer_step
from .probe import conflict_probe
from .training import IMBConfig, evaluate, raiko_backward, train_greedy_imb, train_joint_imb, train_mle

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "Dataset",
    "IMBClassifier",
    "IMBConfig",
    "NetworkParams",
    "bernoulli_kl",
    "compression_term",
    "conflict_probe",
    "evaluate",
    "gen_binary_task",
    "grow_particles",
    "head_forward",
    "info_plane_trace",
    "joint_objective",
    "l2_attack",
    "layer_forward",
    "lemma1_residuals",
    "load_mnist_idx",
    "mutual_info",
    "nll_term",
    "optimizer_step",
    "propagate_exact",
    "raiko_backward",
    "robustness_eval",
    "sample_layer",
    "split_and_batch",
    "train_greedy_imb",
    "train_joint_imb",
    "train_mle",
    "vcr_term",
]
