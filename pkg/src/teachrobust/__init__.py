"""Teacher-relative adversarial robustness: teachers, attacks, learners and experiments."""

__version__ = "0.1.0"
