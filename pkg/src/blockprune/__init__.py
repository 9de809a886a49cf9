"""Iterative transformer block pruning with distillation-based recovery."""

from .model import ModelConfig, TransformerModel, Trace, init_model, forward_with_trace, remove_block
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointFormatError
from .pruning import CalibrationSet, ImportanceReport, cosine_similarity, score_blocks, prune_one
from .recovery import DropRecord, RecoveryConfig, KDLossBreakdown, map_layer, kd_loss, recover
from .pipeline import StopCriterion, IterationLog, iterate, direct_prune, compare
from .evaluate import ProbeItem, MetricSuite, perplexity, choice_accuracy, make_probes, evaluate_model
from .training import PretrainConfig, pretrain
from .corpus import Corpus, encode, decode, VOCAB_SIZE
from .optim import OptimizerState, LowRankAdapter, merge_adapter
from .tensor import Tensor, GradientTape, backward

__all__ = [
    "ModelConfig", "TransformerModel", "Trace", "init_model", "forward_with_trace",
    "remove_block", "save_checkpoint", "load_checkpoint", "CheckpointFormatError",
    "CalibrationSet", "ImportanceReport", "cosine_similarity", "score_blocks",
    "prune_one", "DropRecord", "RecoveryConfig", "KDLossBreakdown", "map_layer",
    "kd_loss", "recover", "StopCriterion", "IterationLog", "iterate", "direct_prune",
    "compare", "ProbeItem", "MetricSuite", "perplexity", "choice_accuracy",
    "make_probes", "evaluate_model", "PretrainConfig", "pretrain", "Corpus",
    "encode", "decode", "VOCAB_SIZE", "OptimizerState", "LowRankAdapter",
    "merge_adapter", "Tensor", "GradientTape", "backward",
]
