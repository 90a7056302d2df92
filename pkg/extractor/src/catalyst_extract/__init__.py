"""Feature extraction into the catalyst activation-dump interchange formats."""

from .extract import ExtractionJob, add_pixel_noise, extract, load_images, make_proxy
from .formats import DumpInfo, write_dump
from .hooks import REGISTRY, build_model, extract_head, hook_spec, resolve_module

__version__ = "0.1.0"

__all__ = [
    "REGISTRY",
    "DumpInfo",
    "ExtractionJob",
    "add_pixel_noise",
    "build_model",
    "extract",
    "extract_head",
    "hook_spec",
    "load_images",
    "make_proxy",
    "resolve_module",
    "write_dump",
]
