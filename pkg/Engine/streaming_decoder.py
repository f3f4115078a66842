"""
streaming_decoder.py
--------------------
The causal decoder: frame-wise self-attention followed by cross-attention
over the features of context frames, one block per layer.

Two equivalent execution paths share the same weights:
- batched_forward: all frames at once with an explicit frame-block mask
  (training path)
- StreamSession: one frame at a time against a KV cache (inference path)

There is no positional embedding across frames; frame 1 is marked by a
learned register token added to its encoder tokens.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from encoder import encode_images
from exceptions import ContractError, SessionError
from kv_cache import KVCache, context_frames, frame_mask
from layers import (Parameters, add_attention, add_layer_norm, add_mlp, attend, layer_norm, mlp,
                    project_keys_values, project_queries, self_attention)
from models import CachePolicy, ModelConfig, PolicyKind
from numerics import Tensor, concat, no_grad, reshape, transpose

logger = logging.getLogger(__name__)


@dataclass
class FramePyramid:
    """Decoder features G^0..G^B of one frame, each (K, C)."""

    t: int
    levels: List[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.levels) - 1


def add_decoder(params: Parameters, cfg: ModelConfig) -> None:
    params.add("dec.register", (1, cfg.width))
    for i in range(cfg.decoder_depth):
        add_layer_norm(params, f"dec.{i}.ln1", cfg.width)
        add_attention(params, f"dec.{i}.self", cfg.width, cfg.num_heads)
        add_layer_norm(params, f"dec.{i}.ln2", cfg.width)
        add_layer_norm(params, f"dec.{i}.ln_ctx", cfg.width)
        add_attention(params, f"dec.{i}.cross", cfg.width, cfg.num_heads)
        add_layer_norm(params, f"dec.{i}.ln3", cfg.width)
        add_mlp(params, f"dec.{i}.mlp", cfg.width, cfg.mlp_ratio)


def add_register(params: Parameters, tokens: Tensor) -> Tensor:
    """F_1 + [reg] on the first frame of a (n, K, C) stack; other frames unchanged."""
    first = tokens[0:1] + params["dec.register"]
    if tokens.shape[0] == 1:
        return first
    return concat([first, tokens[1:]], axis=0)


def context_kv(params: Parameters, cfg: ModelConfig, i: int, g_prev: Tensor) -> Tuple[Tensor, Tensor]:
    """Projected keys/values of layer-i context features G^{i-1}: (n, heads, K, d) each."""
    return project_keys_values(params, f"dec.{i}.cross",
                               layer_norm(params, f"dec.{i}.ln_ctx", g_prev), cfg.num_heads)


def flatten_frames(x: Tensor) -> Tensor:
    """(n, heads, K, d) -> (1, heads, n*K, d), frame-major along the key axis."""
    n, heads, tokens, dim = x.shape
    return reshape(transpose(x, (1, 0, 2, 3)), (1, heads, n * tokens, dim))


def decoder_block(params: Parameters, cfg: ModelConfig, i: int, g_self: Tensor,
                  keys: Tensor, values: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    One decoder layer.

    Args:
        i: 0-based layer index
        g_self: (n, K, C) layer input of the query frames
        keys, values: projected context (1 or n, heads, M, d)
        mask: optional (n, 1, K, M) boolean mask over context tokens

    Raises:
        ContractError: layer index out of range or empty context
    """
    if not 0 <= i < cfg.decoder_depth:
        raise ContractError(f"Decoder layer index {i} out of range [0, {cfg.decoder_depth})")
    if keys.shape[-2] == 0:
        raise ContractError(f"Decoder layer {i}: empty cross-attention context")
    x = g_self + self_attention(params, f"dec.{i}.self", layer_norm(params, f"dec.{i}.ln1", g_self),
                                cfg.num_heads)
    q = project_queries(params, f"dec.{i}.cross", layer_norm(params, f"dec.{i}.ln2", x), cfg.num_heads)
    x = x + attend(params, f"dec.{i}.cross", q, keys, values, mask)
    return x + mlp(params, f"dec.{i}.mlp", layer_norm(params, f"dec.{i}.ln3", x))


def decode_masked(params: Parameters, cfg: ModelConfig, g0: Tensor, mask: np.ndarray) -> List[Tensor]:
    """Run every layer over a (n, K, C) stack whose frames see each other through `mask`."""
    levels = [g0]
    g = g0
    for i in range(cfg.decoder_depth):
        keys, values = context_kv(params, cfg, i, g)
        g = decoder_block(params, cfg, i, g, flatten_frames(keys), flatten_frames(values), mask)
        levels.append(g)
    return levels


def batched_forward(params: Parameters, cfg: ModelConfig, tokens: Tensor,
                    policy: CachePolicy) -> List[Tensor]:
    """
    Decode a whole sequence with the policy encoded as an attention mask.

    Args:
        tokens: (N, K, C) encoder tokens F_1..F_N (register not yet added)

    Returns:
        B+1 pyramid levels, each (N, K, C)

    Raises:
        ContractError: fewer than 2 frames
    """
    n_frames, num_tokens, _ = tokens.shape
    if n_frames < 2:
        raise ContractError(f"batched_forward needs at least 2 frames, got {n_frames}")
    mask = frame_mask(policy, n_frames, num_tokens, cfg.mutual_first_pair)
    return decode_masked(params, cfg, add_register(params, tokens), mask)


class StreamSession:
    """
    Incremental decoding of a frame stream against a KV cache.

    Under the causal and window policies each frame is final as soon as it is
    ingested. Under full attention the per-frame outputs are causal previews
    and `finalize()` recomputes every frame with the causal mask removed.
    """

    def __init__(self, params: Parameters, cfg: ModelConfig, policy: CachePolicy):
        self.params = params
        self.cfg = cfg
        self.policy = policy
        self.cache = KVCache(cfg.decoder_depth, policy)
        self.t = 0
        self.finalized = False
        self.last_attended_tokens = 0
        self._stream_policy = CachePolicy.full_causal() if policy.kind == PolicyKind.FULL_ATTENTION else policy
        self._g0: List[np.ndarray] = []
        self._pending: Optional[np.ndarray] = None

    @property
    def register(self) -> Tensor:
        return self.params["dec.register"]

    def ingest_frame(self, rgb: np.ndarray) -> List[FramePyramid]:
        """
        Encode and decode the next frame.

        Returns:
            pyramids of the frames completed by this call: normally [frame t];
            with the mutual first pair, [] for frame 1 and [frame 1, frame 2] for frame 2

        Raises:
            SessionError: the session was finalized
            DimensionError: resolution differs from the model
        """
        if self.finalized:
            raise SessionError(f"Session already finalized after {self.t} frames")
        with no_grad():
            tokens = encode_images(self.params, self.cfg, np.asarray(rgb)[None])
            return self.ingest_tokens(tokens)

    def ingest_tokens(self, tokens: Tensor) -> List[FramePyramid]:
        if self.finalized:
            raise SessionError(f"Session already finalized after {self.t} frames")
        with no_grad():
            self.t += 1
            t = self.t
            g0 = add_register(self.params, tokens) if t == 1 else tokens
            if self.policy.kind == PolicyKind.FULL_ATTENTION:
                self._g0.append(g0.data[0].copy())

            if self.cfg.mutual_first_pair and t == 1:
                self._pending = g0.data
                logger.debug("Frame 1 deferred until frame 2 arrives")
                return []
            if self._pending is not None:
                return self._decode_first_pair(g0)

            pyramid = self._decode_one(t, g0)
            self.cache.evict()
            return [pyramid]

    def _decode_one(self, t: int, g0: Tensor) -> FramePyramid:
        frames = context_frames(self._stream_policy, t)
        levels = [g0.data[0]]
        g = g0
        for i in range(self.cfg.decoder_depth):
            keys, values = context_kv(self.params, self.cfg, i, g)
            if t == 1:
                self.cache.append(i, t, keys.data[0], values.data[0])
                ctx_k, ctx_v = self.cache.context(i, frames)
            else:
                ctx_k, ctx_v = self.cache.context(i, frames)
                self.cache.append(i, t, keys.data[0], values.data[0])
            if i == 0:
                self.last_attended_tokens = ctx_k.shape[-2]
            g = decoder_block(self.params, self.cfg, i, g, ctx_k, ctx_v)
            levels.append(g.data[0])
        logger.debug(f"Decoded frame {t} against frames {frames}")
        return FramePyramid(t, levels)

    def _decode_first_pair(self, g0_second: Tensor) -> List[FramePyramid]:
        stack = concat([Tensor(self._pending), g0_second], axis=0)
        self._pending = None
        num_tokens = stack.shape[1]
        mask = frame_mask(CachePolicy.full_causal(), 2, num_tokens, mutual_first_pair=True)
        g = stack
        levels = [stack.data]
        for i in range(self.cfg.decoder_depth):
            keys, values = context_kv(self.params, self.cfg, i, g)
            self.cache.append(i, 1, keys.data[0], values.data[0])
            self.cache.append(i, 2, keys.data[1], values.data[1])
            g = decoder_block(self.params, self.cfg, i, g, flatten_frames(keys), flatten_frames(values), mask)
            levels.append(g.data)
        self.last_attended_tokens = num_tokens
        self.cache.evict()
        return [FramePyramid(1, [lv[0] for lv in levels]), FramePyramid(2, [lv[1] for lv in levels])]

    def finalize(self) -> List[FramePyramid]:
        """
        Close the session.

        Returns:
            under full attention, every frame recomputed with all other frames
            as context; otherwise any frame still pending (possibly none)
        """
        if self.finalized:
            raise SessionError("Session already finalized")
        self.finalized = True
        with no_grad():
            if self.policy.kind == PolicyKind.FULL_ATTENTION and self._g0:
                g0 = Tensor(np.stack(self._g0))
                mask = frame_mask(self.policy, len(self._g0), g0.shape[1], self.cfg.mutual_first_pair)
                levels = decode_masked(self.params, self.cfg, g0, mask)
                logger.info(f"Full-attention pass over {len(self._g0)} frames")
                return [FramePyramid(t + 1, [lv.data[t] for lv in levels]) for t in range(len(self._g0))]
            if self._pending is not None:
                pending, self._pending = self._pending, None
                return [self._decode_one(1, Tensor(pending))]
        return []

    def resident_tokens(self) -> int:
        return self.cache.resident_tokens()


def stream_pyramids(params: Parameters, cfg: ModelConfig, frames: Sequence[np.ndarray],
                    policy: CachePolicy) -> List[FramePyramid]:
    """Stream every frame through a fresh session and collect the final pyramids."""
    session = StreamSession(params, cfg, policy)
    done: dict = {}
    for rgb in frames:
        for pyramid in session.ingest_frame(rgb):
            done[pyramid.t] = pyramid
    for pyramid in session.finalize():
        done[pyramid.t] = pyramid
    return [done[t] for t in sorted(done)]
