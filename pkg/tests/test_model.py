"""Network-level tests: attention identities, tiling, cross-track exchange,
config and checkpoint round trips."""

import numpy as np
import pytest

from bandgen.errors import (BarCountMismatch, BarIndexOutOfRange, BinOutOfVocab,
                            DataError, IdOutOfVocab)
from bandgen.features import extract_expert_features, quantize_features
from bandgen.neural import (ModelConfig, bar_similarity, dump_checkpoint,
                            dump_config, embed_conditions, embed_tokens,
                            encode_features, expand_similarity, init_params,
                            load_checkpoint, load_checkpoint_file, load_config,
                            make_config, model_forward, save_checkpoint_file,
                            se_attention, sequence_loss)
from bandgen.neural.autograd import Tensor
from bandgen.neural.model import ctt_forward, multi_head_attention
from bandgen.synth import make_song
from bandgen.tokens import TrackTokenSeqs, tokenize_song

RNG = np.random.default_rng(7)


def small_cfg(**overrides):
    kwargs = dict(d=16, heads=2, ffn=16, t_max=256, b_max=16)
    kwargs.update(overrides)
    return make_config("toy", **kwargs)


def make_pair(vocab, n_bars=4, seed=3):
    song = make_song(seed=seed, n_bars=n_bars)
    seqs = tokenize_song(song, vocab)
    grid = quantize_features(extract_expert_features(song))
    return seqs, grid


# -- configuration ----------------------------------------------------------------


def test_config_round_trip_and_presets():
    for preset in ("toy", "paper"):
        cfg = make_config(preset, seed=11)
        again = load_config(dump_config(cfg))
        assert again == cfg
    assert make_config("paper").d == 256
    assert make_config("toy").vocab_size == 282
    with pytest.raises(DataError):
        make_config("huge")
    with pytest.raises(DataError):
        ModelConfig(d=30, heads=4)
    with pytest.raises(DataError):
        ModelConfig(d_latent=12)
    with pytest.raises(DataError):
        load_config("nonsense line")
    with pytest.raises(DataError):
        load_config("mystery_key = 3")
    assert load_config("use_ctt = False").use_ctt is False
    assert load_config("use_ctt = true").use_ctt is True


# -- similarity-modulated attention ------------------------------------------------


def vanilla_causal_attention(x: np.ndarray, params: dict, name: str,
                             heads: int) -> np.ndarray:
    """Reference multi-head causal attention in plain numpy."""
    def lin(z, p):
        return z @ params[f"{name}_{p}_w"].data + params[f"{name}_{p}_b"].data

    batch, t, d = x.shape
    dh = d // heads

    def split(z):
        return z.reshape(batch, t, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = split(lin(x, "q")), split(lin(x, "k")), split(lin(x, "v"))
    scores = q @ k.transpose(0, 1, 3, 2) / float(np.sqrt(dh))
    blocked = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores = np.where(blocked, -np.inf, scores)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=-1, keepdims=True)
    merged = (attn @ v).transpose(0, 2, 1, 3).reshape(batch, t, d)
    return lin(merged, "o")


def test_se_attention_with_unit_similarity_matches_vanilla():
    cfg = small_cfg(d=32, heads=2, t_max=64)
    params = init_params(cfg)
    x = Tensor(RNG.standard_normal((3, 64, 32)))
    ones = Tensor(np.ones((3, 64, 64)))
    out = se_attention(x, ones, params, "bot0_self", cfg)
    ref = vanilla_causal_attention(x.data, params, "bot0_self", cfg.heads)
    assert np.max(np.abs(out.data - ref)) < 1e-12
    # all-ones modulation is exactly a no-op against the unmodulated path
    plain = multi_head_attention(x, x, x, params, "bot0_self", cfg.heads,
                                 causal=True, smat=None)
    assert np.array_equal(out.data, plain.data)


def test_se_attention_depends_on_similarity():
    cfg = small_cfg(d=32, heads=2, t_max=64)
    params = init_params(cfg)
    x = Tensor(RNG.standard_normal((2, 10, 32)))
    flat = se_attention(x, Tensor(np.ones((2, 10, 10))), params, "bot0_self", cfg)
    bumpy = se_attention(x, Tensor(1.0 + RNG.standard_normal((2, 10, 10))),
                         params, "bot0_self", cfg)
    assert not np.allclose(flat.data, bumpy.data)


# -- bar-to-token tiling -----------------------------------------------------------


def test_expand_similarity_exhaustive():
    for n_tracks, n_bars, t in [(1, 1, 1), (2, 3, 17), (4, 8, 64), (3, 5, 31)]:
        S = Tensor(RNG.standard_normal((n_tracks, n_bars, n_bars)))
        bidx = RNG.integers(0, n_bars, size=(n_tracks, t))
        tiled = expand_similarity(S, bidx)
        assert tiled.shape == (n_tracks, t, t)
        for i in range(n_tracks):
            for t1 in range(t):
                for t2 in range(t):
                    assert tiled.data[i, t1, t2] == S.data[i, bidx[i, t1],
                                                           bidx[i, t2]]


def test_expand_similarity_rejects_out_of_range_bar():
    S = Tensor(RNG.standard_normal((2, 4, 4)))
    with pytest.raises(BarIndexOutOfRange):
        expand_similarity(S, np.array([[0, 1, 4], [0, 0, 0]]))


def test_bar_similarity_rows_are_normalized(vocab):
    cfg = small_cfg()
    params = init_params(cfg)
    _, grid = make_pair(vocab)
    E = encode_features(embed_conditions(grid, params, cfg), params, cfg)
    S = bar_similarity(E, params, cfg)
    assert S.shape == (4, grid.n_bars, grid.n_bars)
    np.testing.assert_allclose(S.data.mean(axis=-1), 0.0, atol=1e-12)
    assert np.all(S.data.var(axis=-1) <= 1.0 + 1e-9)


# -- cross-track exchange ----------------------------------------------------------


def test_ctt_pass_through_bit_identical_over_random_inputs():
    cfg = small_cfg()
    params = init_params(cfg)
    n_tracks, t = 3, 12
    for _ in range(100):
        x = Tensor(RNG.standard_normal((n_tracks, t, cfg.d)))
        starts = np.sort(RNG.choice(t, size=4, replace=False))
        positions = [list(starts) for _ in range(n_tracks)]
        out = ctt_forward(x, positions, params, cfg)
        selected = set(starts.tolist())
        for i in range(n_tracks):
            for pos in range(t):
                if pos in selected:
                    assert not np.array_equal(out.data[i, pos], x.data[i, pos])
                else:
                    assert np.array_equal(out.data[i, pos], x.data[i, pos])


def test_ctt_instrument_permutation_equivariance():
    cfg = small_cfg()
    params = init_params(cfg)
    n_tracks, t = 4, 10
    x = Tensor(RNG.standard_normal((n_tracks, t, cfg.d)))
    positions = [[0, 3, 7]] * n_tracks
    base = ctt_forward(x, positions, params, cfg)
    for _ in range(5):
        perm = RNG.permutation(n_tracks)
        shuffled = Tensor(x.data[perm].copy())
        out = ctt_forward(shuffled, [positions[p] for p in perm], params, cfg)
        assert np.max(np.abs(out.data - base.data[perm])) < 1e-10


def test_ctt_strict_requires_equal_bar_counts():
    cfg = small_cfg()
    params = init_params(cfg)
    x = Tensor(RNG.standard_normal((2, 8, cfg.d)))
    ragged = [[0, 2, 4], [0, 2]]
    with pytest.raises(BarCountMismatch):
        ctt_forward(x, ragged, params, cfg, strict=True)
    out = ctt_forward(x, ragged, params, cfg, strict=False)
    # shared prefix (two bars) exchanged, the unmatched third passes through
    assert not np.array_equal(out.data[0, 0], x.data[0, 0])
    assert np.array_equal(out.data[0, 4], x.data[0, 4])


def test_ctt_no_bar_tokens_is_identity():
    cfg = small_cfg()
    params = init_params(cfg)
    x = Tensor(RNG.standard_normal((2, 6, cfg.d)))
    out = ctt_forward(x, [[], []], params, cfg)
    assert np.array_equal(out.data, x.data)


# -- condition and token embeddings ------------------------------------------------


def test_embed_conditions_shapes_and_vq_defaults(vocab):
    cfg = small_cfg()
    params = init_params(cfg)
    _, grid = make_pair(vocab)
    C = embed_conditions(grid, params, cfg)
    assert C.shape == (4, grid.n_bars, cfg.d)

    # a missing code grid embeds code zero everywhere
    coded = quantize_features(extract_expert_features(make_song(3, 4)))
    coded.vq_entries = [[[0] * 8 for _ in range(coded.n_bars)]
                        for _ in coded.instruments]
    C2 = embed_conditions(coded, params, cfg)
    assert np.array_equal(C.data, C2.data)
    coded.vq_entries[1][2] = [5, 0, 1, 0, 0, 0, 0, 3]
    C3 = embed_conditions(coded, params, cfg)
    assert not np.array_equal(C.data, C3.data)


def test_embed_conditions_guardrails(vocab):
    cfg = small_cfg()
    params = init_params(cfg)
    _, grid = make_pair(vocab)
    raw = extract_expert_features(make_song(3, 4))
    with pytest.raises(DataError):
        embed_conditions(raw, params, cfg)  # unbinned
    with pytest.raises(DataError):
        embed_conditions(grid, params, small_cfg(b_max=2), )
    broken = quantize_features(extract_expert_features(make_song(3, 4)))
    broken.entries[0][0]["dt"] = 999
    with pytest.raises(BinOutOfVocab):
        embed_conditions(broken, init_params(small_cfg()), small_cfg())


def test_embed_tokens_guardrails():
    cfg = small_cfg(t_max=8, b_max=4)
    params = init_params(cfg)

    def seqs_for(ids, bars):
        return TrackTokenSeqs(seqs=[ids], bar_index=[bars],
                              bar_token_positions=[[2]], instruments=["Piano"],
                              n_bars=1, lengths=[len(ids)])

    ok = seqs_for([1, 3, 9, 2], [0, 0, 0, 0])
    assert embed_tokens(ok, params, cfg).shape == (1, 4, cfg.d)
    with pytest.raises(IdOutOfVocab):
        embed_tokens(seqs_for([1, 3, 282, 2], [0, 0, 0, 0]), params, cfg)
    with pytest.raises(DataError):
        embed_tokens(seqs_for(list(range(9)), [0] * 9), params, cfg)
    with pytest.raises(BarIndexOutOfRange):
        embed_tokens(seqs_for([1, 3, 9, 2], [0, 0, 4, 4]), params, cfg)


# -- full forward ------------------------------------------------------------------


def test_initial_loss_is_near_uniform(vocab):
    cfg = small_cfg()
    params = init_params(cfg)
    seqs, grid = make_pair(vocab)
    logits = model_forward(seqs, grid, params, cfg)
    assert logits.shape == (4, seqs.length, cfg.vocab_size)
    loss, count = sequence_loss(logits, seqs)
    per_token = float(loss.data) / count
    assert abs(per_token - np.log(cfg.vocab_size)) < 0.1


def test_sequence_loss_skips_pad_targets(vocab):
    cfg = small_cfg()
    params = init_params(cfg)
    seqs, grid = make_pair(vocab)
    logits = model_forward(seqs, grid, params, cfg)
    _, count = sequence_loss(logits, seqs)
    ids = np.asarray(seqs.seqs)
    assert count == int((ids[:, 1:] != 0).sum())


def test_forward_is_deterministic(vocab):
    cfg = small_cfg()
    seqs, grid = make_pair(vocab)
    a = model_forward(seqs, grid, init_params(cfg), cfg)
    b = model_forward(seqs, grid, init_params(cfg), cfg)
    assert np.array_equal(a.data, b.data)


# -- checkpoints -------------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(vocab, tmp_path):
    cfg = small_cfg(seed=5)
    params = init_params(cfg)
    blob = dump_checkpoint(params, cfg)
    loaded, cfg2 = load_checkpoint(blob)
    assert cfg2 == cfg
    assert set(loaded) == set(params)
    for name, p in params.items():
        assert np.array_equal(loaded[name].data, p.data)
        assert loaded[name].requires_grad == p.requires_grad

    seqs, grid = make_pair(vocab)
    a = model_forward(seqs, grid, params, cfg)
    b = model_forward(seqs, grid, loaded, cfg2)
    assert np.array_equal(a.data, b.data)

    path = tmp_path / "model.ckpt"
    save_checkpoint_file(str(path), params, cfg)
    again, cfg3 = load_checkpoint_file(str(path))
    assert cfg3 == cfg
    assert np.array_equal(again["te"].data, params["te"].data)


def test_checkpoint_rejects_garbage():
    with pytest.raises(DataError):
        load_checkpoint(b"NOPE" + b"\x00" * 16)
    cfg = small_cfg()
    blob = dump_checkpoint(init_params(cfg), cfg)
    with pytest.raises(DataError):
        load_checkpoint(blob[:40])
