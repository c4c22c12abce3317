"""Experiment runner and CLI."""
