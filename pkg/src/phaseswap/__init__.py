"""Phase-swap self-supervised pretraining for multichannel bio-signals."""

__version__ = "0.1.0"
