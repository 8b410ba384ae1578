"""Block tokenization and transformer classification of compressed media streams."""

__version__ = "0.1.0"
