"""Identity-anchored, artifact-agnostic deepfake detection on facial action unit sequences."""

__version__ = "0.1.0"
