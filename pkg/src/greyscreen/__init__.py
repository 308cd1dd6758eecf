"""Grey-literature search, LLM-assisted screening, and agreement statistics."""

__version__ = "0.1.0"
