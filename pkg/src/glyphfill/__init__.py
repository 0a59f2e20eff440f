"""Element-driven glyph stylization as in-context inpainting with a small MM-DiT."""

__version__ = "0.1.0"
