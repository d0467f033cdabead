"""Text-aware mispronunciation detection and diagnosis at desk scale."""

__version__ = "0.1.0"
