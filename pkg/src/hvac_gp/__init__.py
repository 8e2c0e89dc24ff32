"""GP building-dynamics model, meta kernel learning and confidence-aware MPPI."""

__version__ = "0.1.0"
