"""muonlab utilities."""
