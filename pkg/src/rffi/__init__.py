"""Simulation-backed LoRa radio frequency fingerprint identification."""

__version__ = "0.1.0"
