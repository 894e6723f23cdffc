from .distortion import DistortionKind, DistortionRecord, inject, sample_plan
from .dsp import AudioBuffer, read_wav, write_wav
from .scoring import FrameScoreSequence, ResolutionFusion, score_utterance

__all__ = [
    "AudioBuffer",
    "DistortionKind",
    "DistortionRecord",
    "FrameScoreSequence",
    "ResolutionFusion",
    "inject",
    "read_wav",
    "sample_plan",
    "score_utterance",
    "write_wav",
]
