"""Hierarchical imagined-speech decoding from EEG channel cross-covariance.

Trials become covariance embeddings; six binary phonological tasks are
decoded by CNN + temporal-CNN + autoencoder + boosted-tree bundles, and the
stacked bottleneck codes drive the 11-way speech-token decision.
"""

from .autograd import Adam, Tape, Tensor
from .boosting import GbtModel, GbtParams, best_split_oracle, fit, predict_proba
from .covariance import CovMatrix, EegTrial, channel_cross_covariance, \
    lower_triangular_flatten, standardize_channels
from .dataio import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .evaluation import Metrics, SplitSpec, binary_metrics, confusion, \
    evaluate_pipeline, loso_protocol, multiclass_summary, ratio_sweep, split
from .exceptions import NumericError, ShapeError, ValidationError
from .labels import PHON_ORDER, TOKEN_ORDER, PhonCategory, TokenLabel, \
    derive_phonological_labels
from .networks import DeepAutoencoder, SpatialCnn, TemporalCnn, TrainConfig, \
    encode, extract_penultimate, fuse, train_autoencoder, train_supervised
from .pipeline import PipelineConfig, PipelineModel, TaskModel, predict_token, \
    predict_tokens, stack_latents, train_phase1, train_phase2, train_pipeline
from .synthetic import SynthSpec, generate_synthetic

__version__ = "0.1.0"
