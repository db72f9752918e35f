"""EEG-based QoE classification: ingestion, spectral features, numpy networks, training."""

__version__ = "0.1.0"
