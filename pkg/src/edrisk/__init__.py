"""Visit-level ED suicide-risk prediction pipeline."""

__version__ = "0.1.0"
