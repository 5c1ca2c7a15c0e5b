"""Context-aware graph contrastive learning for node anomaly detection."""

__version__ = "0.1.0"
