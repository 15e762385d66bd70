"""Population-guided parallel policy search with TD3 learners, baselines and tabular theory checks."""

__version__ = "0.1.0"
