"""Flow-based potential-outcome modeling with a synthetic causal benchmark."""

__version__ = "0.1.0"
