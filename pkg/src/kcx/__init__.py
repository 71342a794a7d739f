"""FFT-based K-complex detection for multichannel EEG."""

__version__ = "0.1.0"

from .hcm import BoxStore, HarmonicSpaceSpec, HCMDetector, calibrate_hcm, detect_hcm
from .io import AnnotationSet, DataError, EegRecord, load_annotations, load_record, save_record
from .kbp import Detections, KBPDetector, detect_kbp
from .metrics import ConfusionCounts, MatchSpec, evaluate, fpr, match_events, ppv, tpr
from .spectral import FeatureExtractor
from .synth import SynthSpec, generate
from .tuning import KBPGridSearch, ParamGrid, grid_search
from .windows import WindowSpec, make_windows

__all__ = [
    "AnnotationSet",
    "BoxStore",
    "ConfusionCounts",
    "DataError",
    "Detections",
    "EegRecord",
    "FeatureExtractor",
    "HarmonicSpaceSpec",
    "HCMDetector",
    "KBPDetector",
    "KBPGridSearch",
    "MatchSpec",
    "ParamGrid",
    "SynthSpec",
    "WindowSpec",
    "calibrate_hcm",
    "detect_hcm",
    "detect_kbp",
    "evaluate",
    "fpr",
    "generate",
    "grid_search",
    "load_annotations",
    "load_record",
    "make_windows",
    "match_events",
    "ppv",
    "save_record",
    "tpr",
]
