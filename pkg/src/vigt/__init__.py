"""Video grounding by boundary regression from a learnable token."""

__version__ = "0.1.0"
