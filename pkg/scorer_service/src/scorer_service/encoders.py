"""Encoders behind the service: a pretrained transformer or an offline hash stand-in.

Both honor the literal [CLS]/[SEP] markers in the incoming text, truncate to
the 512-token limit, and return the sequence-level vector for the [CLS]
position (the hash encoder returns a bag-of-tokens vector of the same shape).
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from . import MAX_TOKENS

_TOKEN = re.compile(r"\[CLS\]|\[SEP\]|\S+")


class EncoderLoadError(RuntimeError):
    """The requested model cannot be loaded; the service must refuse to start."""


def truncate_tokens(tokens: list[str], limit: int = MAX_TOKENS) -> tuple[list[str], bool]:
    """Cut an over-long token sequence, keeping the head and the answer block.

    The answer block starts at the first [SEP]. When it alone exceeds the
    limit, the block's tail is cut instead (the leading [CLS] survives).
    """
    if len(tokens) <= limit:
        return tokens, False
    try:
        first_sep = tokens.index("[SEP]")
    except ValueError:
        return tokens[:limit], True
    tail = tokens[first_sep:]
    head_budget = limit - len(tail)
    if head_budget >= 1:
        return tokens[:head_budget] + tail, True
    return tokens[:1] + tail[: limit - 1], True


class HashingEncoder:
    """Deterministic 768-d bag-of-tokens encoder for offline protocol testing."""

    def __init__(self, dim: int = 768):
        self.dim = dim
        self.name = "hash"

    def encode(self, text: str) -> tuple[np.ndarray, bool]:
        tokens, truncated = truncate_tokens(_TOKEN.findall(text))
        vec = np.zeros(self.dim)
        for token in tokens:
            if token in ("[CLS]", "[SEP]"):
                continue
            digest = hashlib.md5(token.lower().encode("utf-8")).digest()
            vec[int.from_bytes(digest[:8], "big") % self.dim] += 1.0
        return vec, truncated


class TransformersEncoder:
    """Pretrained encoder returning the last-layer [CLS]-position vector."""

    def __init__(self, model_name: str):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderLoadError(f"transformers/torch not installed: {exc}") from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderLoadError(f"cannot load model {model_name!r}: {exc}") from exc
        self._torch = torch
        self._model.eval()
        self.dim = int(self._model.config.hidden_size)
        self.name = model_name

    def encode(self, text: str) -> tuple[np.ndarray, bool]:
        # the input already carries [CLS]/[SEP]; tokenize without re-adding them
        tokens = self._tokenizer.tokenize(text)
        tokens, truncated = truncate_tokens(tokens)
        ids = self._tokenizer.convert_tokens_to_ids(tokens)
        with self._torch.no_grad():
            output = self._model(self._torch.tensor([ids]))
        return output.last_hidden_state[0, 0].numpy().astype(float), truncated


def load_encoder(model_name: str):
    """"hash" for the offline stand-in, anything else via transformers."""
    if model_name == "hash":
        return HashingEncoder()
    return TransformersEncoder(model_name)
