"""Python bindings for the beatformer ECG beat-sequence transformer."""

from ._core import (
    Model,
    bandpass,
    count_parameters,
    detect_peaks,
    load_record,
    lr_schedule,
    read_token_cache,
    resample_linear,
    tokenize,
)

__all__ = [
    "Model",
    "bandpass",
    "count_parameters",
    "detect_peaks",
    "load_record",
    "lr_schedule",
    "read_token_cache",
    "resample_linear",
    "tokenize",
]
