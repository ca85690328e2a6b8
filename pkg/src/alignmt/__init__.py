"""Word-aligned contrastive training for many-to-many NMT, desk scale."""

__version__ = "0.1.0"
