"""Topology-agnostic EEG encoder: learned-query channel unification over patch tokens."""

from .model import (LUNAClassifier, LUNAEncoder, LUNAPretrainer, ModelConfig, PRESETS, classifier_flops,
                    encoder_flops, preset, pretrainer_flops)
from .montage import MontageLayout, bipolar_montage, montage_from_labels, standard_montage
from .numeric import ConfigError, ContractError, FlopLedger, count_flops, set_precision
from .preprocess import EEGSegment, preprocess_recording
from .synth import synth_eeg
from .training import DivergenceError, TrainSchedule, finetune, pretrain
from .unifier import unify_flops
from .temporal import temporal_flops

__version__ = "0.1.0"
