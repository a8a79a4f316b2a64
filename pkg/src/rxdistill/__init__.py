"""Knowledge-graph sampled, retrieval-grounded drug selection with teacher distillation."""

__version__ = "0.1.0"
