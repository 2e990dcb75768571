"""Voice disorder detection and classification toolkit.

Modules
-------
audio
    WAV I/O and the immutable AudioClip container.
kernels
    DSP inner loops (resampling, FFT, framing) with a compiled extension
    and a numpy fallback selected at import.
acoustics
    Pitch tracking, jitter, shimmer, HNR measurement.
synth
    Parametric source-filter synthesis of vowels and pseudo-sentences
    under per-class voice presets.
augment
    Recording-type-aware augmentation policies (pitch shift, time
    stretch, additive noise).
features
    Log-mel and MFCC extraction with statistics pooling and a binary
    feature cache.
corpus
    JSONL manifest parsing, validation, and corpus statistics.
experts
    Per-recording-type MLP experts: training, prediction, gradient
    checking, model serialization.
moe
    Entropy-gated selection among expert predictions at session level.
evaluate
    Metrics, speaker-disjoint stratified folds, cross-validation,
    ablations, cross-domain transfer, and report rendering.
cli
    Command-line entry points (``voicekit ...``).
"""

from .audio import AudioClip, load_wav, save_wav
from .corpus import ClipRecord, parse_manifest, validate_manifest
from .errors import VoicekitError
from .evaluate import PipelineConfig, make_speaker_folds, run_cv
from .experts import TrainConfig, predict, train_expert
from .features import FrameSpec, MfccConfig, mfcc, pool_stats
from .moe import entropy, select_prediction

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ClipRecord",
    "FrameSpec",
    "MfccConfig",
    "PipelineConfig",
    "TrainConfig",
    "VoicekitError",
    "entropy",
    "load_wav",
    "make_speaker_folds",
    "mfcc",
    "parse_manifest",
    "pool_stats",
    "predict",
    "run_cv",
    "save_wav",
    "select_prediction",
    "train_expert",
    "__version__",
]
