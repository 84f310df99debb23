"""Checkpoint and run-directory persistence."""
