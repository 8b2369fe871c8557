"""Reference worker for the tofsearch wire protocol."""

from .synth import FixtureLandscape
from .worker import ReferenceWorker

__all__ = ["FixtureLandscape", "ReferenceWorker"]
