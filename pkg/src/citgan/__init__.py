"""Multi-domain image translation with a multi-task styling network, FID evaluation and a PAD harness."""

__version__ = "0.1.0"
