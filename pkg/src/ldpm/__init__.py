"""Local differential privacy protocols under manipulation."""
__version__ = "0.1.0"
