"""Edit-based discrete diffusion for explicit sequence editing."""

__version__ = "0.1.0"
