"""Video captioning with dual-graph feature enhancement and gated fusion."""
from .config import ModelConfig, tiny_config
from .model import CaptionModel, forward_teacher_forced
from .search import beam_search, greedy_decode

__all__ = ["ModelConfig", "tiny_config", "CaptionModel", "forward_teacher_forced", "beam_search", "greedy_decode"]
__version__ = "0.1.0"
