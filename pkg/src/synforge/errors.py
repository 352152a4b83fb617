"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid scenario or campaign configuration; message names the field."""


class SearchExhausted(Exception):
    """Structured guess cursor consumed every prefix; refresh the counter estimate and restart."""
