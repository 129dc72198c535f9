"""Multi-channel target-speaker enhancement workbench with distortion-reducing training regimes."""

__version__ = "0.1.0"
