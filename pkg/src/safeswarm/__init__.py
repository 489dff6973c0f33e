"""Safety filtering for noisy agent ensembles with smoothed Boolean barrier functions."""

__version__ = "0.1.0"
