import numpy as np
import pytest

from encoder import encode_images
from exceptions import ContractError, SessionError
from kv_cache import KVCache, attended_token_count, context_frames, frame_mask
from models import CachePolicy, ModelConfig
from numerics import backward
from reconstructor import StreamingReconstructor
from streaming_decoder import StreamSession, batched_forward, stream_pyramids

POLICIES = [CachePolicy.full_causal(), CachePolicy.window(2), CachePolicy.full_attention()]


def _model(cfg: ModelConfig) -> StreamingReconstructor:
    return StreamingReconstructor(cfg, seed=3)


@pytest.mark.parametrize("policy", POLICIES, ids=str)
def test_streaming_matches_batched(tiny_cfg, random_frames, policy):
    model = _model(tiny_cfg)
    frames = random_frames(8)
    levels = batched_forward(model.params, tiny_cfg, encode_images(model.params, tiny_cfg, frames), policy)
    pyramids = stream_pyramids(model.params, tiny_cfg, list(frames), policy)
    assert [p.t for p in pyramids] == list(range(1, 9))
    for pyramid in pyramids:
        for level, batched in zip(pyramid.levels, levels):
            assert np.abs(level - batched.data[pyramid.t - 1]).max() < 1e-5


@pytest.mark.slow
def test_streaming_matches_batched_over_seeds():
    cfg = ModelConfig()
    height, width = cfg.image_size
    policies = [CachePolicy.full_causal(), CachePolicy.window(3), CachePolicy.full_attention()]
    for seed in range(100):
        model = StreamingReconstructor(cfg, seed=seed)
        frames = np.random.default_rng(seed).random((8, height, width, 3)).astype(np.float32)
        tokens = encode_images(model.params, cfg, frames)
        for policy in policies:
            levels = batched_forward(model.params, cfg, tokens, policy)
            pyramids = stream_pyramids(model.params, cfg, list(frames), policy)
            assert [p.t for p in pyramids] == list(range(1, 9))
            for pyramid in pyramids:
                gap = max(np.abs(a - b.data[pyramid.t - 1]).max() for a, b in zip(pyramid.levels, levels))
                assert gap < 1e-5, f"seed {seed}, policy {policy}, frame {pyramid.t}: {gap}"


def test_mutual_first_pair_matches_batched(tiny_cfg, random_frames):
    cfg = tiny_cfg.model_copy(update={"mutual_first_pair": True})
    model = _model(cfg)
    frames = random_frames(4)
    levels = batched_forward(model.params, cfg, encode_images(model.params, cfg, frames),
                             CachePolicy.full_causal())
    session = model.new_session(CachePolicy.full_causal())
    assert session.ingest_frame(frames[0]) == []
    pair = session.ingest_frame(frames[1])
    assert [p.t for p in pair] == [1, 2]
    pyramids = pair + session.ingest_frame(frames[2]) + session.ingest_frame(frames[3])
    for pyramid in pyramids:
        assert np.abs(pyramid.levels[-1] - levels[-1].data[pyramid.t - 1]).max() < 1e-5


def test_single_frame_with_mutual_pair_is_flushed_on_finalize(tiny_cfg, random_frames):
    cfg = tiny_cfg.model_copy(update={"mutual_first_pair": True})
    session = _model(cfg).new_session(CachePolicy.full_causal())
    assert session.ingest_frame(random_frames(1)[0]) == []
    assert [p.t for p in session.finalize()] == [1]


def test_window_session_with_mutual_pair_keeps_no_frame_history(tiny_cfg, random_frames):
    cfg = tiny_cfg.model_copy(update={"mutual_first_pair": True})
    session = _model(cfg).new_session(CachePolicy.window(2))
    bound = 3 * cfg.num_tokens * cfg.decoder_depth
    for rgb in random_frames(30):
        session.ingest_frame(rgb)
        assert len(session._g0) == 0
        assert session.resident_tokens() <= bound
    assert session.resident_tokens() == bound


@pytest.mark.parametrize("policy", [CachePolicy.full_causal(), CachePolicy.window(2)], ids=str)
def test_streaming_is_strictly_causal(tiny_cfg, random_frames, rng, policy):
    model = _model(tiny_cfg)
    frames = random_frames(5)
    reference = stream_pyramids(model.params, tiny_cfg, list(frames), policy)
    for _ in range(10):
        t = int(rng.integers(1, 5))
        perturbed = frames.copy()
        perturbed[t:] = rng.random(perturbed[t:].shape).astype(np.float32)
        session = model.new_session(policy)
        for i in range(t):
            (pyramid,) = session.ingest_frame(perturbed[i])
            for a, b in zip(pyramid.levels, reference[i].levels):
                assert np.array_equal(a, b)


def test_batched_prefix_ignores_later_frames(tiny_cfg, random_frames, rng):
    model = _model(tiny_cfg)
    frames = random_frames(4)
    base = batched_forward(model.params, tiny_cfg, encode_images(model.params, tiny_cfg, frames),
                           CachePolicy.full_causal())
    frames[3] = rng.random(frames[3].shape).astype(np.float32)
    moved = batched_forward(model.params, tiny_cfg, encode_images(model.params, tiny_cfg, frames),
                            CachePolicy.full_causal())
    assert np.allclose(base[-1].data[:3], moved[-1].data[:3], atol=1e-6)
    assert not np.allclose(base[-1].data[3], moved[-1].data[3])


def test_causal_cache_holds_every_frame(tiny_cfg, random_frames):
    session = _model(tiny_cfg).new_session(CachePolicy.full_causal())
    for rgb in random_frames(3):
        session.ingest_frame(rgb)
    for layer in range(tiny_cfg.decoder_depth):
        assert session.cache.frames(layer) == [1, 2, 3]


def test_window_cache_pins_first_frame(tiny_cfg, random_frames):
    session = _model(tiny_cfg).new_session(CachePolicy.window(2))
    frames = random_frames(8)
    for t, rgb in enumerate(frames, start=1):
        session.ingest_frame(rgb)
        if t == 4:
            assert session.cache.frames() == [1, 3, 4]
    for layer in range(tiny_cfg.decoder_depth):
        assert session.cache.frames(layer) == [1, 7, 8]
    assert session.resident_tokens() == 3 * tiny_cfg.num_tokens * tiny_cfg.decoder_depth


def test_session_reports_attended_tokens(tiny_cfg, random_frames):
    policy = CachePolicy.window(2)
    session = _model(tiny_cfg).new_session(policy)
    for t, rgb in enumerate(random_frames(6), start=1):
        session.ingest_frame(rgb)
        if t >= 2:
            assert session.last_attended_tokens == attended_token_count(policy, t, tiny_cfg.num_tokens)


def test_attended_token_examples():
    assert attended_token_count(CachePolicy.window(2), 10, 16) == 48
    assert attended_token_count(CachePolicy.full_causal(), 10, 16) == 144
    assert attended_token_count(CachePolicy.full_attention(), 3, 16, n_frames=10) == 144
    assert context_frames(CachePolicy.window(2), 10) == [1, 8, 9]
    assert context_frames(CachePolicy.full_causal(), 1) == [1]


MASK_POLICIES = [CachePolicy.full_causal(), CachePolicy.full_attention(), CachePolicy.window(1),
                 CachePolicy.window(2), CachePolicy.window(5), CachePolicy.window(12)]


@pytest.mark.parametrize("policy", MASK_POLICIES, ids=str)
@pytest.mark.parametrize("n,k", [(2, 1), (3, 4), (6, 2), (9, 4), (12, 3)])
def test_attended_tokens_match_mask(policy, n, k):
    mask = frame_mask(policy, n, k)
    for t in range(2, n + 1):
        assert mask[t - 1, 0, 0].sum() == attended_token_count(policy, t, k, n_frames=n)
        assert (mask[t - 1, 0] == mask[t - 1, 0, 0]).all()


@pytest.mark.parametrize("n", [2, 5, 9])
def test_window_at_least_sequence_length_masks_like_causal(n):
    causal = frame_mask(CachePolicy.full_causal(), n, 3)
    for k in (n - 1, n, n + 4):
        assert np.array_equal(frame_mask(CachePolicy.window(k), n, 3), causal)


def test_attended_tokens_undefined_for_first_frame():
    with pytest.raises(ContractError):
        attended_token_count(CachePolicy.full_causal(), 1, 16)


def test_cache_rejects_out_of_order_frames():
    cache = KVCache(1, CachePolicy.full_causal())
    cache.append(0, 2, np.zeros((2, 4, 8)), np.zeros((2, 4, 8)))
    with pytest.raises(ContractError):
        cache.append(0, 2, np.zeros((2, 4, 8)), np.zeros((2, 4, 8)))
    assert cache.info()["tokens_per_layer"] == 4


def test_register_receives_gradient(tiny_cfg, random_frames):
    model = _model(tiny_cfg)
    tokens = encode_images(model.params, tiny_cfg, random_frames(3))
    levels = batched_forward(model.params, tiny_cfg, tokens, CachePolicy.full_causal())
    backward((levels[-1] * levels[-1]).mean())
    grad = model.params["dec.register"].grad
    assert grad is not None and np.abs(grad).max() > 0


def test_register_only_marks_first_frame(tiny_cfg, random_frames):
    model = _model(tiny_cfg)
    image = random_frames(1)[0]
    frames = np.stack([image, image])
    levels = batched_forward(model.params, tiny_cfg, encode_images(model.params, tiny_cfg, frames),
                             CachePolicy.full_causal())
    assert not np.allclose(levels[0].data[0], levels[0].data[1])


def test_finalized_session_rejects_frames(tiny_cfg, random_frames):
    session = StreamSession(_model(tiny_cfg).params, tiny_cfg, CachePolicy.full_causal())
    session.ingest_frame(random_frames(1)[0])
    assert session.finalize() == []
    with pytest.raises(SessionError):
        session.ingest_frame(random_frames(1)[0])
    with pytest.raises(SessionError):
        session.finalize()


def test_batched_needs_two_frames(tiny_cfg, random_frames):
    model = _model(tiny_cfg)
    with pytest.raises(ContractError):
        batched_forward(model.params, tiny_cfg, encode_images(model.params, tiny_cfg, random_frames(1)),
                        CachePolicy.full_causal())


def test_window_longer_than_sequence_equals_causal(tiny_cfg, random_frames):
    model = _model(tiny_cfg)
    frames = list(random_frames(5))
    causal = stream_pyramids(model.params, tiny_cfg, frames, CachePolicy.full_causal())
    wide = stream_pyramids(model.params, tiny_cfg, frames, CachePolicy.window(1000))
    for a, b in zip(causal, wide):
        assert np.array_equal(a.levels[-1], b.levels[-1])
