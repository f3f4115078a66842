"""
kv_cache.py
-----------
Cache policies and the per-layer key/value store of the streaming decoder.

A frame's cross-attention reads the projected keys and values of its
context frames:
- causal: every earlier frame
- window:K: frame 1 plus the K most recent earlier frames
- fa: every other frame of the sequence (offline, mask removed)
Frame 1 has no earlier frame and attends its own tokens.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from exceptions import ContractError
from models import CachePolicy, PolicyKind
from numerics import Tensor

logger = logging.getLogger(__name__)


def context_frames(policy: CachePolicy, t: int, n_frames: Optional[int] = None,
                   mutual_first_pair: bool = False) -> List[int]:
    """
    1-based indices of the frames that frame t cross-attends.

    Args:
        policy: cache policy
        t: 1-based frame index
        n_frames: sequence length (required for full attention and the mutual pair)
        mutual_first_pair: frame 1 attends frame 2 instead of itself
    """
    if t < 1:
        raise ContractError(f"Frame index must be >= 1, got {t}")
    if policy.kind == PolicyKind.FULL_ATTENTION:
        if n_frames is None:
            raise ContractError("Full attention needs the sequence length")
        others = [s for s in range(1, n_frames + 1) if s != t]
        return others or [t]
    if t == 1:
        if mutual_first_pair and n_frames is not None and n_frames >= 2:
            return [2]
        return [1]
    if policy.kind == PolicyKind.WINDOW:
        recent = list(range(max(2, t - policy.k), t))
        return [1] + recent
    return list(range(1, t))


def frame_mask(policy: CachePolicy, n_frames: int, tokens_per_frame: int,
               mutual_first_pair: bool = False) -> np.ndarray:
    """
    Boolean cross-attention mask of shape (N, 1, K, N*K).

    Entry [t, 0, :, s*K:(s+1)*K] is True when frame t+1 attends frame s+1.
    """
    allowed = np.zeros((n_frames, n_frames), dtype=bool)
    for t in range(1, n_frames + 1):
        for s in context_frames(policy, t, n_frames, mutual_first_pair):
            allowed[t - 1, s - 1] = True
    mask = np.repeat(allowed, tokens_per_frame, axis=1)
    return np.broadcast_to(mask[:, None, None, :], (n_frames, 1, tokens_per_frame, n_frames * tokens_per_frame))


def attended_token_count(policy: CachePolicy, t: int, tokens_per_frame: int,
                         n_frames: Optional[int] = None) -> int:
    """
    Context tokens read by frame t (t >= 2).

        causal     : (t - 1) * K
        window:k   : min(t - 1, k + [t - 1 > k]) * K   (frame 1 stays pinned)
        fa         : (N - 1) * K
    """
    if t < 2:
        raise ContractError(f"attended_token_count is defined for t >= 2, got {t}")
    if policy.kind == PolicyKind.FULL_CAUSAL:
        frames = t - 1
    elif policy.kind == PolicyKind.WINDOW:
        frames = min(t - 1, policy.k + int(t - 1 > policy.k))
    else:
        if n_frames is None:
            raise ContractError("Full attention needs the sequence length")
        frames = n_frames - 1
    return frames * tokens_per_frame


@dataclass
class LayerCache:
    frames: List[int] = field(default_factory=list)
    keys: List[np.ndarray] = field(default_factory=list)
    values: List[np.ndarray] = field(default_factory=list)

    def tokens(self) -> int:
        return int(sum(k.shape[-2] for k in self.keys))


class KVCache:
    """
    Projected keys/values of processed frames, one store per decoder layer.

    Keys and values are kept per frame as (heads, K, head_dim) arrays so that
    eviction always removes whole frames.
    """

    def __init__(self, num_layers: int, policy: CachePolicy):
        self.policy = policy
        self.layers: List[LayerCache] = [LayerCache() for _ in range(num_layers)]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def append(self, layer: int, t: int, keys: np.ndarray, values: np.ndarray) -> None:
        """Store frame t's keys/values for `layer`; frame indices must increase."""
        store = self.layers[layer]
        if store.frames and t <= store.frames[-1]:
            raise ContractError(f"Layer {layer}: frame {t} appended after frame {store.frames[-1]}")
        store.frames.append(t)
        store.keys.append(np.array(keys, copy=True))
        store.values.append(np.array(values, copy=True))

    def evict(self) -> List[int]:
        """Apply the window policy: keep frame 1 and the k most recent frames."""
        if self.policy.kind != PolicyKind.WINDOW:
            return []
        dropped: List[int] = []
        for store in self.layers:
            keep = [i for i, f in enumerate(store.frames)
                    if f == 1 or i >= len(store.frames) - self.policy.k]
            dropped = [f for i, f in enumerate(store.frames) if i not in keep]
            store.frames = [store.frames[i] for i in keep]
            store.keys = [store.keys[i] for i in keep]
            store.values = [store.values[i] for i in keep]
        if dropped:
            logger.debug(f"Evicted frames {dropped} under {self.policy}")
        return dropped

    def frames(self, layer: int = 0) -> List[int]:
        return list(self.layers[layer].frames)

    def context(self, layer: int, frames: Optional[List[int]] = None) -> Tuple[Tensor, Tensor]:
        """Concatenated keys and values (1, heads, M, head_dim) of the requested frames."""
        store = self.layers[layer]
        chosen = [i for i, f in enumerate(store.frames) if frames is None or f in frames]
        if not chosen:
            raise ContractError(f"Layer {layer}: no cached frames among {frames}")
        keys = np.concatenate([store.keys[i] for i in chosen], axis=-2)[None]
        values = np.concatenate([store.values[i] for i in chosen], axis=-2)[None]
        return Tensor(keys), Tensor(values)

    def get_cache_length(self, layer: int = 0) -> int:
        return self.layers[layer].tokens()

    def resident_tokens(self) -> int:
        """Tokens held across all layers."""
        return int(sum(store.tokens() for store in self.layers))

    def info(self) -> Dict[str, object]:
        first = self.layers[0] if self.layers else LayerCache()
        return {
            "policy": str(self.policy),
            "layers": self.num_layers,
            "frames": list(first.frames),
            "tokens_per_layer": first.tokens(),
            "resident_tokens": self.resident_tokens(),
        }

    def clear(self) -> None:
        self.layers = [LayerCache() for _ in self.layers]
