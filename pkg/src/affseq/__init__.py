"""Frame-level affect recognition over video feature sequences.

Per-frame CNN features are projected into an embedding space, contextualized
by a from-scratch transformer encoder over fixed-length segments, and scored
by a small per-frame head; per-task losses handle class imbalance, and
multiple trained models fuse by soft average voting over their logits.
"""

from .data import (ClassWeights, FrameSequence, Segment, compute_class_weights,
                   merge_synthetic, read_annotations, read_feature_file,
                   segment_dataset, segment_sequence, write_feature_file)
from .ensemble import EnsembleSpec, LogitSet, ensemble_eval, read_logits, soft_average, write_logits
from .errors import (AffseqError, ConfigError, DataError, DimensionError,
                     FormatError, NumericError, StateError, UsageError)
from .losses import binary_cross_entropy_multilabel, ccc_loss, mse_loss, weighted_cross_entropy
from .metrics import confusion, macro_f1, mean_ccc, multilabel_f1
from .model import (ModelConfig, ModelParams, Task, encoder_layer, forward,
                    init_params, multi_head_attention, param_count, positional_encoding)
from .optim import OptimizerState, TrainConfig, adam_step
from .rng import derive_rng
from .tensor import (Graph, Tensor, dropout, finite_difference_check, gather_rows,
                     layer_norm, log_softmax, matmul, relu, softmax, softplus, tanh)
from .training import (evaluate, load_checkpoint, predict_video, save_checkpoint, train)

__version__ = "0.1.0"
