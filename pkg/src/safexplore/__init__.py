"""Safe active exploration for a robot adapting a model of a simulated human."""

__version__ = "0.1.0"
