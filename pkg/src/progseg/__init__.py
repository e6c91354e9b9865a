"""Joint motion segmentation and background-activity denoising of event streams."""

__version__ = "0.1.0"

from progseg.events import NOISE, Event, EventPacket, LabeledEvents, load_events, save_events
from progseg.warp import WarpParams
from progseg.motion import MeConfig, SegmentationState, initialize, run_me
from progseg.denoise import EdConfig, run_ed
from progseg.progressive import LoopConfig, SegmentationResult, run
from progseg.kernels import BACKEND

__all__ = [
    "NOISE", "Event", "EventPacket", "LabeledEvents", "load_events", "save_events", "WarpParams",
    "MeConfig", "SegmentationState", "initialize", "run_me", "EdConfig", "run_ed",
    "LoopConfig", "SegmentationResult", "run", "BACKEND",
]
