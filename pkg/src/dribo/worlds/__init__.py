"""Synthetic environments: rendered distractor control and tabular processes."""
