"""Federated cycle-consistent GAN for translating PPG segments into ABP."""

__version__ = "0.1.0"
