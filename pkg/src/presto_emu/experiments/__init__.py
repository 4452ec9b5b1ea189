"""Experiment programs built on the emulator."""
