"""Realign MELD-style utterance cuts and localise the uttering speaker's face."""

__version__ = "0.1.0"
