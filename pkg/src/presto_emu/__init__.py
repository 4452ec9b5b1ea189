"""Emulator of a pulsed-mode RFSoC qubit controller closed against a simulated
superconducting qubit / coupler device."""

__version__ = "0.1.0"
