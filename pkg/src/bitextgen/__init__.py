"""bitextgen: synthetic parallel-corpus pipeline for low-resource MT."""

__version__ = "0.1.0"
