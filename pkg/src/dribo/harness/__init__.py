"""Configuration, CLI, evaluation and verification drivers."""
