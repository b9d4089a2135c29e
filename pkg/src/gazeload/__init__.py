"""Cognitive-load classification from eye-tracking (gaze + pupil) recordings."""
from .core import GazeSample, GazeSession, SessionMeta, load_session, trim_pre_task
from .dataset import InputMode, SplitMode, WindowConfig, WindowedDataset
from .errors import BadModelFile, DataError, GazeLoadError
from .evaluation import EvalReport, evaluate
from .forest import ForestConfig, ForestGridSearch, GiniForestClassifier
from .ivt import IVTFixationDetector, IvtConfig, detect_fixations
from .mlp import MlpConfig, TanhMLPClassifier
from .preprocess import PreprocessConfig, PupilPreprocessor

__version__ = "0.1.0"

__all__ = [
    "GazeSample", "GazeSession", "SessionMeta", "load_session", "trim_pre_task",
    "InputMode", "SplitMode", "WindowConfig", "WindowedDataset",
    "BadModelFile", "DataError", "GazeLoadError",
    "EvalReport", "evaluate",
    "ForestConfig", "ForestGridSearch", "GiniForestClassifier",
    "IVTFixationDetector", "IvtConfig", "detect_fixations",
    "MlpConfig", "TanhMLPClassifier",
    "PreprocessConfig", "PupilPreprocessor",
]
