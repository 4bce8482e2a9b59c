"""Text-encoder microservice speaking the newline-delimited JSON scorer protocol."""

__version__ = "0.1.0"

PROTOCOL = "roll-scorer/1"
MAX_TOKENS = 512
