"""Conditional multitrack sequence model.

Stack (per forward pass):
  feature grid -> per-bar condition embeddings C -> feature encoder -> E
  E -> bar-similarity matrices S -> token-resolution tilings S~
  token ids -> token+position+bar+instrument embeddings x~
  x~ -> bottom decoders (similarity-modulated self-attention + cross-attention
  over E) -> cross-track encoder over bar-token states -> top decoders ->
  per-track linear heads -> next-token distributions.

Encoder/decoder weights are shared across tracks; only the output heads are
per-track. All arrays are float64 under the local autograd.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from ..errors import (BarCountMismatch, BarIndexOutOfRange, BinOutOfVocab,
                      DataError, IdOutOfVocab)
from ..features import (CT_SIZE, DD_SIZE, DT_SIZE, FeatureGrid, MD_SIZE,
                        MP_SIZE, MV_SIZE, ND_SIZE)
from ..tokens import PAD_ID, TrackTokenSeqs
from .autograd import (Tensor, concat, cross_entropy_logits, expand_bars,
                       layer_norm, masked_fill, ones_param, parameter,
                       put_pairs, softmax, take, take_pairs, zeros_param)

_DRUM_FEATS = ("dt", "dd")
_PITCHED_FEATS = ("nd", "mp", "md", "mv")
_FEAT_SIZES = {"dt": DT_SIZE + 1, "dd": DD_SIZE + 1, "nd": ND_SIZE + 1,
               "mp": MP_SIZE + 1, "md": MD_SIZE + 1, "mv": MV_SIZE + 1,
               "ct": CT_SIZE}
N_VQ_GROUPS = 8


@dataclass(slots=True)
class ModelConfig:
    d: int = 32
    heads: int = 2
    ffn: int = 64
    layers_enc: int = 1
    layers_bottom: int = 1
    layers_top: int = 1
    layers_ctt: int = 1
    n_tracks: int = 4
    b_max: int = 64
    t_max: int = 512
    vocab_size: int = 282
    codebook_size: int = 16
    d_latent: int = 16
    e_ct: int = 32
    e_dt: int = 8
    e_dd: int = 16
    e_nd: int = 16
    e_mp: int = 8
    e_md: int = 8
    e_mv: int = 8
    e_vq: int = 8
    use_ctt: bool = True
    lr: float = 1e-3
    lr_schedule: str = "constant"  # "constant" | "warmup"
    lr_max: float = 4e-4
    lr_min: float = 4e-5
    seed: int = 0
    preset: str = "toy"

    def __post_init__(self):
        if self.d % self.heads:
            raise DataError("model width must divide evenly across heads")
        if self.d_latent % N_VQ_GROUPS:
            raise DataError("latent width must split into 8 groups")


_PRESETS = {
    "toy": {},
    "paper": dict(d=256, heads=8, ffn=1024, layers_enc=4, layers_bottom=3,
                  layers_top=3, layers_ctt=2, codebook_size=1024, d_latent=128,
                  e_ct=256, e_dt=64, e_dd=128, e_nd=128, e_mp=64, e_md=64,
                  e_mv=64, e_vq=64, t_max=4096, lr_schedule="warmup",
                  lr=4e-4, preset="paper"),
}


def make_config(preset: str = "toy", **overrides) -> ModelConfig:
    if preset not in _PRESETS:
        raise DataError(f"unknown preset {preset!r}")
    kwargs = dict(_PRESETS[preset])
    kwargs.update(overrides)
    kwargs.setdefault("preset", preset)
    return ModelConfig(**kwargs)


def dump_config(config: ModelConfig) -> str:
    lines = []
    for f in fields(ModelConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"


def load_config(text: str) -> ModelConfig:
    kwargs = {}
    names = {f.name for f in fields(ModelConfig)}
    defaults = ModelConfig()
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise DataError(f"config: bad line {ln!r}")
        key, value = (part.strip() for part in ln.split("=", 1))
        if key not in names:
            raise DataError(f"config: unknown key {key!r}")
        current = getattr(defaults, key)
        if isinstance(current, bool):
            kwargs[key] = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            kwargs[key] = int(value)
        elif isinstance(current, float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return ModelConfig(**kwargs)


def sinusoidal_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _linear_block(params: dict, rng, name: str, n_in: int, n_out: int) -> None:
    params[f"{name}_w"] = parameter(rng, n_in, n_out)
    params[f"{name}_b"] = zeros_param(n_out)


def _ln_block(params: dict, name: str, d: int) -> None:
    params[f"{name}_g"] = ones_param(d)
    params[f"{name}_b"] = zeros_param(d)


def _attn_block(params: dict, rng, name: str, d: int) -> None:
    for proj in ("q", "k", "v", "o"):
        _linear_block(params, rng, f"{name}_{proj}", d, d)


def _encoder_layer(params: dict, rng, name: str, cfg: ModelConfig) -> None:
    _attn_block(params, rng, f"{name}_attn", cfg.d)
    _ln_block(params, f"{name}_ln1", cfg.d)
    _linear_block(params, rng, f"{name}_ffn1", cfg.d, cfg.ffn)
    _linear_block(params, rng, f"{name}_ffn2", cfg.ffn, cfg.d)
    _ln_block(params, f"{name}_ln2", cfg.d)


def _decoder_layer(params: dict, rng, name: str, cfg: ModelConfig) -> None:
    _attn_block(params, rng, f"{name}_self", cfg.d)
    _ln_block(params, f"{name}_ln1", cfg.d)
    _attn_block(params, rng, f"{name}_cross", cfg.d)
    _ln_block(params, f"{name}_ln2", cfg.d)
    _linear_block(params, rng, f"{name}_ffn1", cfg.d, cfg.ffn)
    _linear_block(params, rng, f"{name}_ffn2", cfg.ffn, cfg.d)
    _ln_block(params, f"{name}_ln3", cfg.d)


def drum_input_width(cfg: ModelConfig) -> int:
    return cfg.e_dt + cfg.e_dd + N_VQ_GROUPS * cfg.e_vq


def pitched_input_width(cfg: ModelConfig) -> int:
    return cfg.e_ct + cfg.e_nd + cfg.e_mp + cfg.e_md + cfg.e_mv + N_VQ_GROUPS * cfg.e_vq


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, Tensor] = {}

    for feat in ("ct", "dt", "dd", "nd", "mp", "md", "mv"):
        params[f"fe_{feat}"] = parameter(rng, _FEAT_SIZES[feat],
                                         getattr(cfg, f"e_{feat}"))
    params["fe_vq"] = parameter(rng, cfg.codebook_size, cfg.e_vq)
    _linear_block(params, rng, "proj_drum", drum_input_width(cfg), cfg.d)
    _linear_block(params, rng, "proj_pitched", pitched_input_width(cfg), cfg.d)

    params["te"] = parameter(rng, cfg.vocab_size, cfg.d)
    params["be"] = parameter(rng, cfg.b_max, cfg.d)
    params["ie"] = parameter(rng, cfg.n_tracks, cfg.d)
    params["pe"] = Tensor(sinusoidal_table(cfg.t_max, cfg.d))
    params["pe_bar"] = Tensor(sinusoidal_table(cfg.b_max, cfg.d))

    for l in range(cfg.layers_enc):
        _encoder_layer(params, rng, f"enc{l}", cfg)
    params["sq_w"] = parameter(rng, cfg.d, cfg.d)
    params["sk_w"] = parameter(rng, cfg.d, cfg.d)
    for l in range(cfg.layers_bottom):
        _decoder_layer(params, rng, f"bot{l}", cfg)
    for l in range(cfg.layers_ctt):
        _encoder_layer(params, rng, f"ctt{l}", cfg)
    for l in range(cfg.layers_top):
        _decoder_layer(params, rng, f"top{l}", cfg)

    params["heads_w"] = parameter(rng, cfg.n_tracks, cfg.d, cfg.vocab_size)
    params["heads_b"] = zeros_param(cfg.n_tracks, cfg.vocab_size)
    return params


def trainable(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if v.requires_grad}


# -- building blocks ------------------------------------------------------------


def _linear(x: Tensor, params: dict, name: str) -> Tensor:
    return x @ params[f"{name}_w"] + params[f"{name}_b"]


def _ln_affine(x: Tensor, params: dict, name: str) -> Tensor:
    return layer_norm(x) * params[f"{name}_g"] + params[f"{name}_b"]


def _ffn(x: Tensor, params: dict, name: str) -> Tensor:
    return _linear(_linear(x, params, f"{name}_ffn1").relu(), params, f"{name}_ffn2")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor,
                         params: dict, name: str, heads: int,
                         causal: bool = False,
                         smat: Tensor | None = None) -> Tensor:
    """Batched attention over [batch, seq, d] inputs.

    With `smat` [batch, Tq, Tk], raw scores are multiplied elementwise by it
    (shared across heads) before scaling and masking.
    """
    q = _split_heads(_linear(q_in, params, f"{name}_q"), heads)
    k = _split_heads(_linear(k_in, params, f"{name}_k"), heads)
    v = _split_heads(_linear(v_in, params, f"{name}_v"), heads)
    scores = q @ k.transpose(0, 1, 3, 2)
    if smat is not None:
        b, tq, tk = smat.shape
        scores = scores * smat.reshape(b, 1, tq, tk)
    d_head = q.shape[-1]
    scores = scores / float(np.sqrt(d_head))
    if causal:
        tq, tk = scores.shape[-2], scores.shape[-1]
        blocked = np.triu(np.ones((tq, tk), dtype=bool), k=1)
        scores = masked_fill(scores, blocked, -np.inf)
    attn = softmax(scores, axis=-1)
    return _linear(_merge_heads(attn @ v), params, f"{name}_o")


def _encoder_stack(x: Tensor, params: dict, prefix: str, n_layers: int,
                   cfg: ModelConfig) -> Tensor:
    for l in range(n_layers):
        name = f"{prefix}{l}"
        a = _ln_affine(x + multi_head_attention(x, x, x, params, f"{name}_attn",
                                                cfg.heads), params, f"{name}_ln1")
        x = _ln_affine(a + _ffn(a, params, name), params, f"{name}_ln2")
    return x


# -- the network ------------------------------------------------------------------


def _cell_bins(grid: FeatureGrid, ti: int, feat: str) -> np.ndarray:
    return np.array([grid.entries[ti][b][feat] for b in range(grid.n_bars)],
                    dtype=np.int64)


def embed_conditions(grid: FeatureGrid, params: dict, cfg: ModelConfig) -> Tensor:
    """Per-track, per-bar condition vectors C [I, B, d].

    Expert segment: drum tracks concatenate DT and DD embeddings; pitched
    tracks the mean of the four beat-chord embeddings plus ND/MP/MD/MV.
    The 8 VQ-code embeddings follow; a linear map projects to width d.
    Grids without VQ codes embed code 0 throughout.
    """
    if not grid.binned:
        raise DataError("embed_conditions needs a binned grid")
    if grid.n_bars > cfg.b_max:
        raise DataError(f"{grid.n_bars} bars exceeds b_max {cfg.b_max}")
    rows: list[Tensor] = []
    try:
        for ti, inst in enumerate(grid.instruments):
            if grid.vq_entries is not None:
                codes = np.array([grid.vq_entries[ti][b] for b in range(grid.n_bars)],
                                 dtype=np.int64)
            else:
                codes = np.zeros((grid.n_bars, N_VQ_GROUPS), dtype=np.int64)
            vq = take(params["fe_vq"], codes).reshape(grid.n_bars,
                                                      N_VQ_GROUPS * cfg.e_vq)
            if inst == "Drum":
                segs = [take(params[f"fe_{f}"], _cell_bins(grid, ti, f))
                        for f in _DRUM_FEATS]
                cell = concat(segs + [vq], axis=-1)
                proj = _linear(cell, params, "proj_drum")
            else:
                cts = [take(params["fe_ct"], _cell_bins(grid, ti, f"ct{j}"))
                       for j in range(4)]
                ct = (cts[0] + cts[1] + cts[2] + cts[3]) * 0.25
                segs = [take(params[f"fe_{f}"], _cell_bins(grid, ti, f))
                        for f in _PITCHED_FEATS]
                cell = concat([ct] + segs + [vq], axis=-1)
                proj = _linear(cell, params, "proj_pitched")
            rows.append(proj.reshape(1, grid.n_bars, cfg.d))
    except IndexError as e:
        raise BinOutOfVocab(str(e)) from e
    return concat(rows, axis=0)


def encode_features(C: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    """E [I, B, d]: full self-attention over bars, bar index added as
    sinusoidal position information; weights shared across tracks."""
    B = C.shape[1]
    x = C + params["pe_bar"][:B]
    return _encoder_stack(x, params, "enc", cfg.layers_enc, cfg)


def embed_tokens(seqs: TrackTokenSeqs, params: dict, cfg: ModelConfig) -> Tensor:
    ids = np.asarray(seqs.seqs, dtype=np.int64)
    bar_idx = np.asarray(seqs.bar_index, dtype=np.int64)
    if ids.size and ids.max() >= cfg.vocab_size:
        raise IdOutOfVocab(f"token id {ids.max()} >= vocab {cfg.vocab_size}")
    if ids.shape[1] > cfg.t_max:
        raise DataError(f"sequence length {ids.shape[1]} exceeds t_max {cfg.t_max}")
    if bar_idx.size and bar_idx.max() >= cfg.b_max:
        raise BarIndexOutOfRange(f"bar {bar_idx.max()} >= b_max {cfg.b_max}")
    I, T = ids.shape
    x = take(params["te"], ids)
    x = x + params["pe"][:T]
    x = x + take(params["be"], bar_idx)
    x = x + take(params["ie"], np.arange(I)).reshape(I, 1, cfg.d)
    return x


def bar_similarity(E: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    """S [I, B, B] = row-normalized attention map over bars: softmax of the
    scaled Q K^T scores, then per-row zero-mean unit-variance normalization."""
    q = E @ params["sq_w"]
    k = E @ params["sk_w"]
    scores = (q @ k.transpose(0, 2, 1)) / float(np.sqrt(cfg.d))
    return layer_norm(softmax(scores, axis=-1))


def expand_similarity(S: Tensor, bar_index: np.ndarray) -> Tensor:
    """S~ [I, T, T] tiling bar-level scores over token positions."""
    bar_index = np.asarray(bar_index, dtype=np.int64)
    if bar_index.size and bar_index.max() >= S.shape[-1]:
        raise BarIndexOutOfRange(
            f"bar index {bar_index.max()} >= {S.shape[-1]} bars")
    return expand_bars(S, bar_index)


def se_attention(x: Tensor, smat: Tensor, params: dict, name: str,
                 cfg: ModelConfig) -> Tensor:
    """Causal self-attention with scores modulated by the tiled similarity."""
    return multi_head_attention(x, x, x, params, name, cfg.heads,
                                causal=True, smat=smat)


def _decoder_stack(x: Tensor, E: Tensor, smat: Tensor, params: dict,
                   prefix: str, n_layers: int, cfg: ModelConfig) -> Tensor:
    for l in range(n_layers):
        name = f"{prefix}{l}"
        a = _ln_affine(x + se_attention(x, smat, params, f"{name}_self", cfg),
                       params, f"{name}_ln1")
        b = _ln_affine(a + multi_head_attention(a, E, E, params, f"{name}_cross",
                                                cfg.heads), params, f"{name}_ln2")
        x = _ln_affine(b + _ffn(b, params, name), params, f"{name}_ln3")
    return x


def bottom_decode(x: Tensor, E: Tensor, smat: Tensor, params: dict,
                  cfg: ModelConfig) -> Tensor:
    return _decoder_stack(x, E, smat, params, "bot", cfg.layers_bottom, cfg)


def top_decode(x: Tensor, E: Tensor, smat: Tensor, params: dict,
               cfg: ModelConfig) -> Tensor:
    return _decoder_stack(x, E, smat, params, "top", cfg.layers_top, cfg)


def ctt_forward(x: Tensor, bar_token_positions: list[list[int]], params: dict,
                cfg: ModelConfig, strict: bool = True) -> Tensor:
    """Encode bar-token states across tracks; every other position passes
    through bit-identically.

    In strict mode all tracks must expose the same number of bar tokens;
    otherwise the shared prefix (min count) is exchanged.
    """
    counts = [len(p) for p in bar_token_positions]
    if strict and len(set(counts)) > 1:
        raise BarCountMismatch(f"bar token counts differ: {counts}")
    B = min(counts) if counts else 0
    if B == 0:
        return x
    I = x.shape[0]
    idx0 = np.repeat(np.arange(I), B)
    idx1 = np.concatenate([np.asarray(p[:B], dtype=np.int64)
                           for p in bar_token_positions])
    gathered = take_pairs(x, idx0, idx1)          # [I*B, d]
    seq = gathered.reshape(I, B, cfg.d).transpose(1, 0, 2)  # [B, I, d]
    encoded = _encoder_stack(seq, params, "ctt", cfg.layers_ctt, cfg)
    updates = encoded.transpose(1, 0, 2).reshape(I * B, cfg.d)
    return put_pairs(x, idx0, idx1, updates)


def project_logits(O: Tensor, params: dict) -> Tensor:
    """Raw per-track logits [I, T, V]; softmax for the probability form."""
    return O @ params["heads_w"] + params["heads_b"].reshape(
        params["heads_b"].shape[0], 1, params["heads_b"].shape[1])


def project_probs(O: Tensor, params: dict) -> Tensor:
    return softmax(project_logits(O, params), axis=-1)


def model_forward(seqs: TrackTokenSeqs, grid: FeatureGrid, params: dict,
                  cfg: ModelConfig, strict_bars: bool = True) -> Tensor:
    """Full stack to logits [I, T, V]."""
    C = embed_conditions(grid, params, cfg)
    E = encode_features(C, params, cfg)
    S = bar_similarity(E, params, cfg)
    bar_idx = np.asarray(seqs.bar_index, dtype=np.int64)
    smat = expand_similarity(S, bar_idx)
    x = embed_tokens(seqs, params, cfg)
    O = bottom_decode(x, E, smat, params, cfg)
    if cfg.use_ctt:
        O = ctt_forward(O, seqs.bar_token_positions, params, cfg,
                        strict=strict_bars)
    O = top_decode(O, E, smat, params, cfg)
    return project_logits(O, params)


def sequence_loss(logits: Tensor, seqs: TrackTokenSeqs) -> tuple[Tensor, int]:
    """Summed next-token cross-entropy over non-PAD targets; returns the
    loss tensor and the number of counted positions."""
    ids = np.asarray(seqs.seqs, dtype=np.int64)
    I, T = ids.shape
    V = logits.shape[-1]
    pred = logits[:, :T - 1, :].reshape((I * (T - 1), V))
    targets = ids[:, 1:].reshape(-1)
    mask = targets != PAD_ID
    return cross_entropy_logits(pred, targets, mask)


def loss_from_probs(probs: np.ndarray, targets: np.ndarray,
                    mask: np.ndarray) -> float:
    """Audit-path loss on explicit probability rows (no gradient)."""
    rows = np.arange(len(targets))
    p = probs[rows, targets]
    m = np.asarray(mask, dtype=bool)
    with np.errstate(divide="ignore"):
        logs = np.where(m, -np.log(np.maximum(p, 0.0)), 0.0)
    return float(logs.sum())


def clone_config(cfg: ModelConfig, **overrides) -> ModelConfig:
    return replace(cfg, **overrides)
