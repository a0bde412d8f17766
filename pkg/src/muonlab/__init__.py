"""muonlab - scaled-up Muon and the experiments around it."""

__version__ = "0.1.0"
