"""Learned per-bar features via a grouped vector-quantized autoencoder.

Each (track, bar) token sub-sequence is pooled to a latent z_e, split into
8 contiguous groups, and each group snapped to its nearest codebook row.
The 8 row indices are the bar's learned feature codes. A positional decoder
reconstructs the sub-sequence from the quantized latent; training minimizes
reconstruction cross-entropy plus the usual codebook and commitment terms.
"""

from __future__ import annotations

import numpy as np

from ..errors import EmptyCodebook
from ..tokens import EOS_ID, PAD_ID, TrackTokenSeqs
from .autograd import (Tensor, cross_entropy_logits, parameter,
                       straight_through, take, zeros_param)
from .model import ModelConfig, N_VQ_GROUPS, sinusoidal_table
from .optim import Adam

MAX_BAR_TOKENS = 96
COMMITMENT_WEIGHT = 0.25


def quantize_vectors(z_e: np.ndarray, codebook: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Nearest codebook row per group (squared Euclidean, ties to the lower
    index). z_e: [N, d_l] or [d_l]; codebook: [K, d_l/8].
    Returns (codes [N, 8], z_q [N, d_l]) with the batch axis squeezed back
    off for single-vector input."""
    single = z_e.ndim == 1
    z = np.atleast_2d(np.asarray(z_e, dtype=np.float64))
    if codebook.shape[0] == 0:
        raise EmptyCodebook("codebook has no rows")
    n, d_l = z.shape
    g = d_l // N_VQ_GROUPS
    groups = z.reshape(n, N_VQ_GROUPS, g)
    # [N, 8, K] squared distances
    diff = groups[:, :, None, :] - codebook[None, None, :, :]
    dists = (diff * diff).sum(axis=-1)
    codes = dists.argmin(axis=-1)
    z_q = codebook[codes].reshape(n, d_l)
    if single:
        return codes[0], z_q[0]
    return codes, z_q


def vq_quantize(z_e, codebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-code lookup that accepts tensors or plain arrays."""
    z = z_e.data if isinstance(z_e, Tensor) else z_e
    cb = codebook.data if isinstance(codebook, Tensor) else codebook
    return quantize_vectors(z, cb)


def vq_layer(z_e: Tensor, codebook: Tensor
             ) -> tuple[np.ndarray, Tensor, Tensor, Tensor]:
    """Differentiable quantization: straight-through output plus the
    codebook and commitment loss terms."""
    codes, _ = quantize_vectors(z_e.data, codebook.data)
    n, d_l = z_e.shape
    g = d_l // N_VQ_GROUPS
    rows = take(codebook, codes)                      # [N, 8, g], grads -> codebook
    # forward value exactly z_q, backward gradient copied to z_e
    st = straight_through(z_e, rows.data.reshape(n, d_l))
    groups_const = z_e.detach().reshape(n, N_VQ_GROUPS, g)
    diff_cb = rows - groups_const
    codebook_loss = (diff_cb * diff_cb).sum()
    diff_commit = z_e.reshape(n, N_VQ_GROUPS, g) - rows.detach()
    commit_loss = (diff_commit * diff_commit).sum()
    return codes, st, codebook_loss, commit_loss


def bar_units(seqs: TrackTokenSeqs) -> list[list[list[int]]]:
    """Token id runs per (track, bar): from each bar token up to the next."""
    out: list[list[list[int]]] = []
    for ti, ids in enumerate(seqs.seqs):
        length = seqs.lengths[ti]
        marks = seqs.bar_token_positions[ti]
        units: list[list[int]] = []
        for j, k in enumerate(marks):
            end = marks[j + 1] if j + 1 < len(marks) else length
            unit = [tid for tid in ids[k:end] if tid != PAD_ID]
            if unit and unit[-1] == EOS_ID:  # track frame, not bar content
                unit = unit[:-1]
            units.append(unit[:MAX_BAR_TOKENS])
        out.append(units)
    return out


def init_vq_params(cfg: ModelConfig) -> dict[str, Tensor]:
    rng = np.random.default_rng(cfg.seed + 17)
    d_l = cfg.d_latent
    hidden = 4 * d_l
    params: dict[str, Tensor] = {
        "vq_te": parameter(rng, cfg.vocab_size, d_l),
        "vq_pe": Tensor(sinusoidal_table(MAX_BAR_TOKENS, d_l)),
        "vq_enc1_w": parameter(rng, d_l, hidden),
        "vq_enc1_b": zeros_param(hidden),
        "vq_enc2_w": parameter(rng, hidden, d_l),
        "vq_enc2_b": zeros_param(d_l),
        "vq_codebook": parameter(rng, cfg.codebook_size, d_l // N_VQ_GROUPS,
                                 scale=0.5),
        "vq_dec1_w": parameter(rng, d_l, hidden),
        "vq_dec1_b": zeros_param(hidden),
        "vq_dec_pe": Tensor(sinusoidal_table(MAX_BAR_TOKENS, hidden)),
        "vq_out_w": parameter(rng, hidden, cfg.vocab_size),
        "vq_out_b": zeros_param(cfg.vocab_size),
    }
    return params


def _pad_units(units: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max((len(u) for u in units), default=1)
    width = max(width, 1)
    ids = np.full((len(units), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(units), width), dtype=np.float64)
    for j, u in enumerate(units):
        ids[j, :len(u)] = u
        mask[j, :len(u)] = 1.0
    return ids, mask


def encode_units(ids: np.ndarray, mask: np.ndarray,
                 params: dict[str, Tensor]) -> Tensor:
    """Mean-pool embedded tokens (with positions) and project to z_e."""
    n, width = ids.shape
    emb = take(params["vq_te"], ids) + params["vq_pe"][:width]
    m = Tensor(mask[:, :, None])
    inv_counts = Tensor(1.0 / np.maximum(mask.sum(axis=1), 1.0)[:, None])
    pooled = (emb * m).sum(axis=1) * inv_counts
    h = (pooled @ params["vq_enc1_w"] + params["vq_enc1_b"]).relu()
    return h @ params["vq_enc2_w"] + params["vq_enc2_b"]


def decode_units(st: Tensor, width: int, params: dict[str, Tensor]) -> Tensor:
    """Per-position token logits [N, width, V] from the quantized latent."""
    h = (st @ params["vq_dec1_w"] + params["vq_dec1_b"])
    n = h.shape[0]
    hidden = h.shape[1]
    pos = (h.reshape(n, 1, hidden) + params["vq_dec_pe"][:width]).relu()
    return pos @ params["vq_out_w"] + params["vq_out_b"]


def vqvae_batch_loss(ids: np.ndarray, mask: np.ndarray,
                     params: dict[str, Tensor]) -> tuple[Tensor, int]:
    z_e = encode_units(ids, mask, params)
    codes, st, cb_loss, commit = vq_layer(z_e, params["vq_codebook"])
    logits = decode_units(st, ids.shape[1], params)
    n, width = ids.shape
    flat = logits.reshape(n * width, logits.shape[-1])
    recon, count = cross_entropy_logits(flat, ids.reshape(-1),
                                        mask.reshape(-1) > 0)
    total = recon + cb_loss + commit * COMMITMENT_WEIGHT
    return total, count


def train_vqvae(corpus: list[TrackTokenSeqs], cfg: ModelConfig,
                steps: int = 200, batch_size: int = 256,
                log=None) -> tuple[dict[str, Tensor], list[float]]:
    """Fit the autoencoder on all bar units of the corpus; returns the
    parameters and the per-step mean reconstruction-objective trace."""
    units: list[list[int]] = []
    for seqs in corpus:
        for track_units in bar_units(seqs):
            units.extend(track_units)
    units = [u for u in units if u]
    if not units:
        units = [[PAD_ID]]
    params = init_vq_params(cfg)
    opt = Adam(params, lr=1e-3, beta1=0.9, beta2=0.99)
    rng = np.random.default_rng(cfg.seed + 23)
    history: list[float] = []
    for step in range(steps):
        if len(units) > batch_size:
            pick = rng.choice(len(units), size=batch_size, replace=False)
            batch = [units[i] for i in pick]
        else:
            batch = units
        ids, mask = _pad_units(batch)
        loss, count = vqvae_batch_loss(ids, mask, params)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.data) / max(1, count))
        if log and step % 20 == 0:
            log(f"vqvae step {step}: loss/token {history[-1]:.4f}")
    return params, history


def assign_codes(corpus: list[TrackTokenSeqs], params: dict[str, Tensor]
                 ) -> list[list[list[tuple[int, ...]]]]:
    """Deterministic 8-code tuples per (song, track, bar)."""
    out = []
    for seqs in corpus:
        song_codes: list[list[tuple[int, ...]]] = []
        for track_units in bar_units(seqs):
            if not track_units:
                song_codes.append([])
                continue
            ids, mask = _pad_units(track_units)
            z_e = encode_units(ids, mask, params)
            codes, _ = quantize_vectors(z_e.data, params["vq_codebook"].data)
            song_codes.append([tuple(int(c) for c in row) for row in codes])
        out.append(song_codes)
    return out
