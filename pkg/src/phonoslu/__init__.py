"""Joint textual-phonetic pre-training for spoken language understanding."""

__version__ = "0.1.0"
