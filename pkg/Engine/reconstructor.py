"""
reconstructor.py
----------------
The full model: encoder -> streaming decoder -> heads.

Owns the parameter registry and exposes the batched training forward pass
and streaming inference over a frame sequence.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from encoder import add_encoder, encode_images
from exceptions import ConsistencyError
from heads import HeadOutputs, PointmapPrediction, add_heads, run_heads
from layers import Parameters
from models import CachePolicy, ModelConfig
from numerics import Tensor, no_grad
from streaming_decoder import FramePyramid, StreamSession, add_decoder, batched_forward

logger = logging.getLogger(__name__)


class StreamingReconstructor:
    """
    Causal multi-view reconstruction model.

    Example:
        >>> model = StreamingReconstructor(ModelConfig(image_size=(32, 32)))
        >>> outputs, levels = model.forward(np.zeros((2, 32, 32, 3), np.float32), CachePolicy())
        >>> outputs.x_local.shape
        (2, 32, 32, 3)
    """

    def __init__(self, cfg: ModelConfig, seed: Optional[int] = None):
        self.cfg = cfg.check()
        self.params = Parameters(cfg.seed if seed is None else seed)
        add_encoder(self.params, cfg)
        add_decoder(self.params, cfg)
        add_heads(self.params, cfg)
        logger.info(f"Built model with {len(self.params)} tensors / {self.params.count():,} weights")

    # ------------------------------------------------------------------
    # batched path
    # ------------------------------------------------------------------
    def forward(self, images: np.ndarray, policy: CachePolicy) -> Tuple[HeadOutputs, List[Tensor]]:
        """
        Differentiable forward pass over a whole sequence.

        Args:
            images: (N, H, W, 3), N >= 2
            policy: attention mask policy

        Returns:
            head outputs for all N frames and the decoder pyramid
        """
        tokens = encode_images(self.params, self.cfg, images)
        levels = batched_forward(self.params, self.cfg, tokens, policy)
        return run_heads(self.params, self.cfg, levels), levels

    def predict(self, images: np.ndarray, policy: CachePolicy) -> List[PointmapPrediction]:
        with no_grad():
            outputs, _ = self.forward(images, policy)
        return outputs.to_predictions()

    # ------------------------------------------------------------------
    # streaming path
    # ------------------------------------------------------------------
    def new_session(self, policy: CachePolicy) -> StreamSession:
        return StreamSession(self.params, self.cfg, policy)

    def predict_pyramids(self, pyramids: Sequence[FramePyramid]) -> List[PointmapPrediction]:
        if not pyramids:
            return []
        with no_grad():
            levels = [Tensor(np.stack([p.levels[i] for p in pyramids])) for i in range(self.cfg.decoder_depth + 1)]
            outputs = run_heads(self.params, self.cfg, levels)
        predictions = outputs.to_predictions()
        for prediction, pyramid in zip(predictions, pyramids):
            prediction.t = pyramid.t
        return predictions

    def stream(self, frames: Sequence[np.ndarray], policy: CachePolicy,
               on_frame: Optional[Callable[[PointmapPrediction, StreamSession], None]] = None,
               ) -> List[PointmapPrediction]:
        """
        Stream frames through a fresh session.

        `on_frame` is called for every prediction as soon as it is produced,
        before the next frame is read. Under full attention the finalized
        predictions replace the causal previews and are reported again.
        """
        session = self.new_session(policy)
        results: Dict[int, PointmapPrediction] = {}
        for rgb in frames:
            for prediction in self.predict_pyramids(session.ingest_frame(rgb)):
                results[prediction.t] = prediction
                if on_frame is not None:
                    on_frame(prediction, session)
        for prediction in self.predict_pyramids(session.finalize()):
            results[prediction.t] = prediction
            if on_frame is not None:
                on_frame(prediction, session)
        return [results[t] for t in sorted(results)]

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------
    def astype(self, dtype) -> "StreamingReconstructor":
        self.params.astype(dtype)
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise ConsistencyError(
                f"Checkpoint parameters differ from model: missing={sorted(missing)[:3]}, "
                f"unexpected={sorted(unexpected)[:3]}"
            )
        for name, tensor in self.params.items():
            if state[name].shape != tensor.shape:
                raise ConsistencyError(f"Parameter '{name}': checkpoint shape {state[name].shape} != model {tensor.shape}")
            tensor.data = np.array(state[name], dtype=tensor.dtype)
