"""Toy models, synthetic tasks and the training harness."""
