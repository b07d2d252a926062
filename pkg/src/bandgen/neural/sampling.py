"""Conditioned autoregressive generation with top-k sampling.

Tracks are generated in lockstep, each seeded with [Instrument, BOS]. Every
sampled id comes from the renormalized top-k of that track's next-token
distribution (k = 2% of the vocabulary, at least 1). A track halts when a
sampled bar token would push it past the reference bar count (the token is
dropped and EOS emitted), on a sampled EOS, or at the length cap; halted
tracks pad. Output sequences are grammar-repaired so decoding always
succeeds, and every sampling step is recorded in an audit log.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..bpe import BpeModel, bpe_decode
from ..errors import DegenerateVocab
from ..features import FeatureGrid
from ..tokens import BOS_ID, EOS_ID, TrackTokenSeqs, Vocab, build_track_seqs
from .autograd import Tensor
from .model import ModelConfig, model_forward


def top_k_count(vocab_size: int, k_frac: float = 0.02) -> int:
    return max(1, int(vocab_size * k_frac + 0.5))


@dataclass(frozen=True, slots=True)
class SampleEvent:
    track: int
    step: int
    emitted: int
    top_ids: tuple[int, ...]  # empty for rule-forced terminators
    sampled: bool


@dataclass(slots=True)
class GenerationResult:
    seqs: TrackTokenSeqs          # repaired, base-vocabulary ids
    raw_lists: list[list[int]]    # ids as sampled (may contain merged ids)
    audit: list[SampleEvent]
    repairs: int
    wall_seconds: float
    tokens_generated: int


def _topk_sample(probs: np.ndarray, k: int, rng: np.random.Generator
                 ) -> tuple[int, tuple[int, ...]]:
    order = np.argsort(-probs, kind="stable")
    top = order[:k]
    weights = probs[top]
    total = weights.sum()
    if total <= 0:
        weights = np.full(len(top), 1.0 / len(top))
    else:
        weights = weights / total
    choice = int(rng.choice(top, p=weights))
    return choice, tuple(int(t) for t in top)


def generate(grid: FeatureGrid, params: dict[str, Tensor], cfg: ModelConfig,
             vocab: Vocab, bpe_model: BpeModel | None = None, seed: int = 0,
             k_frac: float = 0.02, t_max: int | None = None) -> GenerationResult:
    if cfg.vocab_size < 3:
        raise DegenerateVocab(f"vocab of {cfg.vocab_size} cannot be sampled")
    t_max = min(t_max or cfg.t_max, cfg.t_max)
    k = top_k_count(cfg.vocab_size, k_frac)
    rng = np.random.default_rng(seed)
    b_ref = grid.n_bars
    bar_ids = {vocab.id_of("BarNormal", 0), vocab.id_of("BarEmpty", 0)}

    lists = [[vocab.id_of("Instrument", inst), BOS_ID] for inst in grid.instruments]
    finished = [False] * len(lists)
    bars = [0] * len(lists)
    audit: list[SampleEvent] = []
    emitted = 0
    step = 0

    start = time.perf_counter()
    while not all(finished) and max(len(ids) for ids in lists) < t_max:
        seqs = build_track_seqs([list(ids) for ids in lists], vocab)
        logits = model_forward(seqs, grid, params, cfg, strict_bars=False)
        for ti, ids in enumerate(lists):
            if finished[ti]:
                continue
            row = logits.data[ti, len(ids) - 1]
            row = row - row.max()
            probs = np.exp(row)
            probs /= probs.sum()
            choice, top = _topk_sample(probs, k, rng)
            if choice in bar_ids and bars[ti] + 1 > b_ref:
                # the bar that would exceed the reference stops the track
                ids.append(EOS_ID)
                audit.append(SampleEvent(ti, step, EOS_ID, (), sampled=False))
                finished[ti] = True
            else:
                if choice in bar_ids:
                    bars[ti] += 1
                ids.append(choice)
                audit.append(SampleEvent(ti, step, choice, top, sampled=True))
                if choice == EOS_ID:
                    finished[ti] = True
            emitted += 1
        step += 1
    for ti, ids in enumerate(lists):
        if not finished[ti]:
            ids.append(EOS_ID)
            audit.append(SampleEvent(ti, step, EOS_ID, (), sampled=False))
            emitted += 1
    wall = time.perf_counter() - start

    repaired: list[list[int]] = []
    repairs = 0
    for ti, ids in enumerate(lists):
        base = bpe_decode(ids, bpe_model) if bpe_model is not None else list(ids)
        fixed, n = repair_track_ids(base, b_ref, vocab)
        repaired.append(fixed)
        repairs += n
    seqs = build_track_seqs(repaired, vocab)
    return GenerationResult(seqs, lists, audit, repairs, wall, emitted)


def repair_track_ids(ids: list[int], b_ref: int, vocab: Vocab
                     ) -> tuple[list[int], int]:
    """Make a sampled id list decodable: orphan or out-of-place tokens are
    dropped, missing bars are filled with BarEmpty, and EOS is enforced.
    Returns the repaired list and how many edits were made."""
    repairs = 0
    if ids and vocab.spec_of(ids[0]).kind == "Instrument":
        first = ids[0]
    else:
        first = vocab.id_of("Instrument", "Piano")
        repairs += 1
    if len(ids) < 2:
        return [first, BOS_ID,
                *([vocab.id_of("BarEmpty", 0)] * b_ref), EOS_ID], repairs + 1
    out = [first, BOS_ID]
    repairs += 0 if ids[1] == BOS_ID else 1
    is_drum = vocab.spec_of(first).value == "Drum"
    bars = 0
    position = None
    last_pos = -1
    i = 2
    while i < len(ids):
        tid = ids[i]
        spec = vocab.spec_of(tid)
        kind = spec.kind
        if kind in ("BarNormal", "BarEmpty"):
            if bars >= b_ref:
                repairs += 1
            else:
                out.append(tid)
                bars += 1
                position = None
                last_pos = -1
        elif kind == "Position":
            p = int(spec.value)
            if bars == 0 or p < last_pos:
                repairs += 1
            else:
                out.append(tid)
                position = p
                last_pos = p
        elif kind == "Pitch":
            if (not is_drum and position is not None and i + 2 < len(ids)
                    and vocab.spec_of(ids[i + 1]).kind == "Duration"
                    and vocab.spec_of(ids[i + 2]).kind == "Velocity"):
                out.extend(ids[i:i + 3])
                i += 2
            else:
                repairs += 1
        elif kind == "PitchDrum":
            if is_drum and position is not None:
                out.append(tid)
            else:
                repairs += 1
        elif kind == "EOS":
            break
        else:  # stray Duration/Velocity/Instrument/BOS/PAD
            if kind != "PAD":
                repairs += 1
        i += 1
    while bars < b_ref:
        out.append(vocab.id_of("BarEmpty", 0))
        bars += 1
        repairs += 1
    out.append(EOS_ID)
    return out, repairs
