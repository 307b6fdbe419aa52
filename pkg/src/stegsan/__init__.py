"""Steganography hiding, blind sanitization and evaluation on desk-scale data."""

from ._accel import backend_name
from .lsb import lsb_hide, lsb_reveal
from .media import AudioClip, MediaError, from_model_range, to_model_range
from .metrics import image_report, verdict

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "MediaError",
    "backend_name",
    "from_model_range",
    "image_report",
    "lsb_hide",
    "lsb_reveal",
    "to_model_range",
    "verdict",
]
