"""Shared models, configuration and numeric helpers."""
