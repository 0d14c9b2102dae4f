"""Tabla tala toolkit: transcription, identification, sequencing, rendering."""

from .core import (
    REST,
    Beat,
    BeatCycle,
    StrokeLabel,
    TalaDefinition,
    TalaFormatError,
    Transcription,
    builtin_tala,
    builtin_talas,
    flatten,
    load_tala,
    load_tala_file,
    save_tala,
    save_tala_file,
    validate_tala,
)

__version__ = "0.1.0"

__all__ = [
    "REST",
    "Beat",
    "BeatCycle",
    "StrokeLabel",
    "TalaDefinition",
    "TalaFormatError",
    "Transcription",
    "builtin_tala",
    "builtin_talas",
    "flatten",
    "load_tala",
    "load_tala_file",
    "save_tala",
    "save_tala_file",
    "validate_tala",
    "__version__",
]
