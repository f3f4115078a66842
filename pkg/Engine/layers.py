"""
layers.py
---------
Parameter registry and the transformer building blocks shared by the
encoder and the streaming decoder.

Layers are plain functions over a named parameter dictionary, so the same
weights serve the batched training path and the streaming inference path.
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from exceptions import ConfigError, DimensionError
from numerics import (Tensor, gelu, layer_norm as ln_op, matmul, mul, reshape, rms_normalize,
                      rope_rotate, softmax, transpose)

logger = logging.getLogger(__name__)

INIT_STD = 0.02


class Parameters:
    """
    Ordered, seeded registry of trainable tensors.

    Creation order is part of the model definition: the same seed and the
    same sequence of `add` calls give bitwise-identical initial weights.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, shape: Tuple[int, ...], init: str = "normal") -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"Parameter '{name}' registered twice")
        if init == "normal":
            data = self.rng.normal(0.0, INIT_STD, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ConfigError(f"Unknown initializer '{init}'")
        tensor = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def as_dict(self) -> Dict[str, Tensor]:
        return dict(self._tensors)

    def count(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def astype(self, dtype) -> None:
        """Recast every parameter in place (gradient checks run in float64)."""
        self.dtype = dtype
        for tensor in self._tensors.values():
            tensor.data = tensor.data.astype(dtype)
            tensor.grad = None


# ----------------------------------------------------------------------
# Registration helpers
# ----------------------------------------------------------------------
def add_linear(params: Parameters, name: str, fan_in: int, fan_out: int) -> None:
    params.add(f"{name}.weight", (fan_in, fan_out))
    params.add(f"{name}.bias", (fan_out,), init="zeros")


def add_layer_norm(params: Parameters, name: str, width: int) -> None:
    params.add(f"{name}.gamma", (width,), init="ones")
    params.add(f"{name}.beta", (width,), init="zeros")


def add_attention(params: Parameters, name: str, width: int, num_heads: int) -> None:
    add_linear(params, f"{name}.q", width, width)
    add_linear(params, f"{name}.k", width, width)
    add_linear(params, f"{name}.v", width, width)
    add_linear(params, f"{name}.out", width, width)
    scale = params.add(f"{name}.qk_scale", (1,), init="ones")
    scale.data = (scale.data * np.sqrt(width // num_heads)).astype(params.dtype)


def add_mlp(params: Parameters, name: str, width: int, ratio: int) -> None:
    add_linear(params, f"{name}.fc1", width, width * ratio)
    add_linear(params, f"{name}.fc2", width * ratio, width)


# ----------------------------------------------------------------------
# Forward functions
# ----------------------------------------------------------------------
def linear(params: Parameters, name: str, x: Tensor) -> Tensor:
    return matmul(x, params[f"{name}.weight"]) + params[f"{name}.bias"]


def layer_norm(params: Parameters, name: str, x: Tensor) -> Tensor:
    return ln_op(x, params[f"{name}.gamma"], params[f"{name}.beta"])


def mlp(params: Parameters, name: str, x: Tensor) -> Tensor:
    return linear(params, f"{name}.fc2", gelu(linear(params, f"{name}.fc1", x)))


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    """(n, T, C) -> (n, heads, T, C/heads)"""
    n, tokens, width = x.shape
    if width % num_heads:
        raise DimensionError(f"Width {width} is not divisible by {num_heads} heads")
    return transpose(reshape(x, (n, tokens, num_heads, width // num_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(n, heads, T, d) -> (n, T, heads*d)"""
    n, heads, tokens, dim = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (n, tokens, heads * dim))


def project_queries(params: Parameters, name: str, x: Tensor, num_heads: int,
                    rope: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tensor:
    """QK-normed (and optionally rotated) queries, (n, heads, T, d)."""
    q = rms_normalize(split_heads(linear(params, f"{name}.q", x), num_heads))
    return rope_rotate(q, *rope) if rope is not None else q


def project_keys_values(params: Parameters, name: str, x: Tensor, num_heads: int,
                        rope: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[Tensor, Tensor]:
    """QK-normed keys and values, each (n, heads, T, d); what the decoder cache stores."""
    k = rms_normalize(split_heads(linear(params, f"{name}.k", x), num_heads))
    if rope is not None:
        k = rope_rotate(k, *rope)
    v = split_heads(linear(params, f"{name}.v", x), num_heads)
    return k, v


def attention_logits(params: Parameters, name: str, q: Tensor, k: Tensor) -> Tensor:
    """
    scale * <q, k> / head_dim.

    q and k are RMS-normalized, so |<q, k>| <= head_dim and |logit| <= |scale|.
    """
    head_dim = q.shape[-1]
    scores = matmul(q, transpose(k, (0, 1, 3, 2)))
    return mul(scores, params[f"{name}.qk_scale"] / float(head_dim))


def attend(params: Parameters, name: str, q: Tensor, k: Tensor, v: Tensor,
           mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax attention over projected q/k/v followed by the output projection."""
    weights = softmax(attention_logits(params, name, q, k), axis=-1, mask=mask)
    return linear(params, f"{name}.out", merge_heads(matmul(weights, v)))


def self_attention(params: Parameters, name: str, x: Tensor, num_heads: int,
                   rope: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tensor:
    q = project_queries(params, name, x, num_heads, rope)
    k, v = project_keys_values(params, name, x, num_heads, rope)
    return attend(params, name, q, k, v)
