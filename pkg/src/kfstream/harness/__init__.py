"""Experiment sweeps, claim checks and plotting on top of the core modules."""
