"""Reconfigurable spatio-temporal convolutional networks with latent segmentations.

A video is split into M temporal windows, one per network clique. The
windows are latent: training alternates between choosing the best windows for
each labelled video and a backprop epoch with the windows fixed, and
inference searches labels and windows jointly.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DatasetManifest, ManifestEntry, VideoSample, fold_split, load_dataset,
                   preprocess_video, read_sample, synth_generate, write_sample)
from .errors import (ConfigurationError, DimensionError, FormatError, NumericError,
                     StateError)
from .evaluation import confusion_matrix, cross_validate, per_class_accuracy, predict
from .latent import (LatentVars, count_latent, enumerate_latent, estep_assign, even_split,
                     infer, validate)
from .network import (ModelConfig, Parameters, clique_forward, init_params, network_backward,
                      network_forward, parameter_count, transfer_pretrained)
from .training import TrainConfig, cost, lsbp_train, pretrain, sgd_epoch

__version__ = "0.1.0"
