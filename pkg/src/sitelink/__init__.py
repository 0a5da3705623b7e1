"""Link-level simulation of site-specific neural receiver fine-tuning."""

__version__ = "0.1.0"
