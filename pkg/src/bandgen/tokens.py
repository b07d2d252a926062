"""Track-parallel token representation of songs.

Each track becomes its own sequence: Instrument, BOS, then per bar either
BarEmpty or BarNormal followed by (Position, note tokens...) groups, then
EOS and PAD up to the longest track. Non-drum notes take a Pitch, Duration,
Velocity triplet; drum notes a single PitchDrum token.

A single-sequence interleaved form (tokenize_remi_plus) is kept for length
statistics only.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .errors import (DataError, EmptyCorpus, InvalidGrid, MalformedSequence,
                     NoteOutOfRange)
from .score import (DRUM_DURATION, DRUM_VELOCITY, INSTRUMENTS, TICKS_PER_BAR,
                    Note, Song, Track, sorted_unique_notes)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2

NOTE_KINDS = frozenset({"Pitch", "PitchDrum", "Duration", "Velocity"})
METRIC_KINDS = frozenset({"Instrument", "BarNormal", "BarEmpty", "Position", "BOS", "EOS"})

# 31 percussion keys: GM 35-59 plus a folded low-range group
DRUM_KEYS = tuple(sorted(set(range(35, 60)) | {25, 26, 27, 28, 29, 31}))

DEFAULT_POSITION_GRID = 4
DEFAULT_DURATION_MESH = tuple(
    list(range(4, 49, 4)) + list(range(60, 193, 12)) + list(range(216, 385, 24)))

VELOCITY_BINS = 32


def velocity_bin(velocity: int) -> int:
    return min(velocity // 4, VELOCITY_BINS - 1)


def velocity_decode(bin_idx: int) -> int:
    return 4 * bin_idx + 2


def snap_to_mesh(duration: int, mesh: tuple[int, ...]) -> int:
    """Nearest mesh value; equidistant ties take the smaller one."""
    i = bisect.bisect_left(mesh, duration)
    if i == 0:
        return mesh[0]
    if i == len(mesh):
        return mesh[-1]
    lo, hi = mesh[i - 1], mesh[i]
    return lo if duration - lo <= hi - duration else hi


@dataclass(frozen=True, slots=True)
class TokenSpec:
    kind: str
    value: str  # payload rendered as text; numeric for all kinds but Instrument


class Vocab:
    """Dense token-id table. Ids 0/1/2 are PAD/BOS/EOS."""

    def __init__(self, position_grid: int, duration_mesh: tuple[int, ...]):
        if position_grid <= 0 or TICKS_PER_BAR % position_grid:
            raise InvalidGrid(f"grid {position_grid} does not divide {TICKS_PER_BAR}")
        mesh = tuple(duration_mesh)
        if not mesh or list(mesh) != sorted(set(mesh)) or mesh[-1] > 2 * TICKS_PER_BAR:
            raise DataError("duration mesh must be ascending, unique, max <= 384")
        self.position_grid = position_grid
        self.duration_mesh = mesh
        self.drum_keys = DRUM_KEYS

        specs = [TokenSpec("PAD", "0"), TokenSpec("BOS", "0"), TokenSpec("EOS", "0")]
        specs += [TokenSpec("Instrument", name) for name in INSTRUMENTS]
        specs += [TokenSpec("BarNormal", "0"), TokenSpec("BarEmpty", "0")]
        specs += [TokenSpec("Position", str(p))
                  for p in range(0, TICKS_PER_BAR, position_grid)]
        specs += [TokenSpec("Pitch", str(p)) for p in range(128)]
        specs += [TokenSpec("PitchDrum", str(k)) for k in self.drum_keys]
        specs += [TokenSpec("Duration", str(d)) for d in mesh]
        specs += [TokenSpec("Velocity", str(b)) for b in range(VELOCITY_BINS)]
        self.specs = tuple(specs)
        self.index = {(s.kind, s.value): i for i, s in enumerate(specs)}
        self.size = len(specs)
        self._note_mask = tuple(s.kind in NOTE_KINDS for s in specs)
        # nearest listed drum key per raw pitch, ties to the lower key
        self._drum_map = tuple(
            min(self.drum_keys, key=lambda k: (abs(k - p), k)) for p in range(128))

    def id_of(self, kind: str, value) -> int:
        try:
            return self.index[(kind, str(value))]
        except KeyError:
            raise DataError(f"no token {kind}:{value}") from None

    def spec_of(self, token_id: int) -> TokenSpec:
        if not 0 <= token_id < self.size:
            raise DataError(f"token id {token_id} out of vocab")
        return self.specs[token_id]

    def is_note_id(self, token_id: int) -> bool:
        return 0 <= token_id < self.size and self._note_mask[token_id]

    def kind_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.specs:
            counts[s.kind] = counts.get(s.kind, 0) + 1
        return counts

    def snap_position(self, tick_in_bar: int) -> int:
        g = self.position_grid
        pos = int(tick_in_bar / g + 0.5) * g
        return min(pos, TICKS_PER_BAR - g)

    def snap_duration(self, duration: int) -> int:
        return snap_to_mesh(duration, self.duration_mesh)

    def drum_key(self, pitch: int) -> int:
        return self._drum_map[min(max(pitch, 0), 127)]


def build_vocab(position_grid: int = DEFAULT_POSITION_GRID,
                duration_mesh: tuple[int, ...] = DEFAULT_DURATION_MESH) -> Vocab:
    return Vocab(position_grid, duration_mesh)


@dataclass(slots=True)
class TrackTokenSeqs:
    """Parallel per-track id sequences padded to a common length T."""
    seqs: list[list[int]]
    bar_index: list[list[int]]            # bar number per position, per track
    bar_token_positions: list[list[int]]  # indices of Bar* tokens, per track
    instruments: list[str]
    n_bars: int
    lengths: list[int]                    # unpadded lengths

    @property
    def n_tracks(self) -> int:
        return len(self.seqs)

    @property
    def length(self) -> int:
        return len(self.seqs[0]) if self.seqs else 0


def _bar_notes(track: Track, n_bars: int) -> list[list[Note]]:
    bars: list[list[Note]] = [[] for _ in range(n_bars)]
    for n in track.notes:
        b = n.onset // TICKS_PER_BAR
        if n.onset < 0 or b >= n_bars:
            raise NoteOutOfRange(f"onset {n.onset} outside {n_bars} bars")
        bars[b].append(n)
    return bars


def _note_group_ids(notes: list[Note], is_drum: bool, vocab: Vocab) -> list[int]:
    """Token ids for one onset-position group, duplicates dropped."""
    ids: list[int] = []
    seen: set[int] = set()
    for n in sorted(notes, key=lambda n: (n.pitch, n.duration, n.velocity)):
        if is_drum:
            key = vocab.drum_key(n.pitch)
            if key in seen:
                continue
            seen.add(key)
            ids.append(vocab.id_of("PitchDrum", key))
        else:
            if n.pitch in seen:
                continue
            seen.add(n.pitch)
            ids.append(vocab.id_of("Pitch", n.pitch))
            ids.append(vocab.id_of("Duration", vocab.snap_duration(n.duration)))
            ids.append(vocab.id_of("Velocity", velocity_bin(n.velocity)))
    return ids


def _track_body_ids(track: Track, n_bars: int, vocab: Vocab) -> list[int]:
    """Bar groups only (no framing tokens)."""
    is_drum = track.instrument == "Drum"
    ids: list[int] = []
    for notes in _bar_notes(track, n_bars):
        if not notes:
            ids.append(vocab.id_of("BarEmpty", 0))
            continue
        ids.append(vocab.id_of("BarNormal", 0))
        groups: dict[int, list[Note]] = {}
        for n in notes:
            groups.setdefault(vocab.snap_position(n.onset % TICKS_PER_BAR), []).append(n)
        for pos in sorted(groups):
            ids.append(vocab.id_of("Position", pos))
            ids.extend(_note_group_ids(groups[pos], is_drum, vocab))
    return ids


def tokenize_song(song: Song, vocab: Vocab) -> TrackTokenSeqs:
    lists = []
    for t in song.tracks:
        ids = [vocab.id_of("Instrument", t.instrument), BOS_ID]
        ids += _track_body_ids(t, song.n_bars, vocab)
        ids.append(EOS_ID)
        lists.append(ids)
    return build_track_seqs(lists, vocab)


def build_track_seqs(lists: list[list[int]], vocab) -> TrackTokenSeqs:
    """Assemble padded parallel sequences from raw id lists.

    Bar indices: framing tokens before the first bar token map to bar 0;
    every other position belongs to the most recent bar token. Works over
    extended (BPE) vocabularies: ids >= vocab.size are treated as note runs.
    """
    lengths = [len(ids) for ids in lists]
    width = max(lengths, default=0)
    seqs, bar_index, bar_positions, instruments = [], [], [], []
    for ids in lists:
        inst = "?"
        if ids and 3 <= ids[0] < 3 + len(INSTRUMENTS):
            inst = vocab.spec_of(ids[0]).value
        bars: list[int] = []
        bidx: list[int] = []
        current = 0
        for k, tid in enumerate(ids):
            if tid < vocab.size:
                kind = vocab.spec_of(tid).kind
                if kind in ("BarNormal", "BarEmpty"):
                    bars.append(k)
                    current = len(bars) - 1
            bidx.append(current)
        padded = ids + [PAD_ID] * (width - len(ids))
        bidx += [current] * (width - len(ids))
        seqs.append(padded)
        bar_index.append(bidx)
        bar_positions.append(bars)
        instruments.append(inst)
    n_bars = max((len(b) for b in bar_positions), default=0)
    return TrackTokenSeqs(seqs, bar_index, bar_positions, instruments, n_bars, lengths)


def detokenize(seqs: TrackTokenSeqs, vocab: Vocab) -> Song:
    tracks: list[Track] = []
    n_bars = 0
    for ti, ids in enumerate(seqs.seqs):
        if not ids or vocab.spec_of(ids[0]).kind != "Instrument":
            raise MalformedSequence("expected Instrument token", ti, 0)
        inst = vocab.spec_of(ids[0]).value
        if len(ids) < 2 or ids[1] != BOS_ID:
            raise MalformedSequence("expected BOS token", ti, 1)
        is_drum = inst == "Drum"
        notes: list[Note] = []
        bar = -1
        position: int | None = None
        k = 2
        def fail(msg: str, at: int):
            raise MalformedSequence(msg, ti, at)
        while k < len(ids):
            spec = vocab.spec_of(ids[k])
            kind = spec.kind
            if kind in ("BarNormal", "BarEmpty"):
                bar += 1
                position = None
            elif kind == "Position":
                if bar < 0:
                    fail("Position before any Bar", k)
                position = int(spec.value)
            elif kind == "PitchDrum":
                if position is None:
                    fail("drum token before any Position", k)
                if not is_drum:
                    fail("PitchDrum on a pitched track", k)
                notes.append(Note(int(spec.value), bar * TICKS_PER_BAR + position,
                                  DRUM_DURATION, DRUM_VELOCITY))
            elif kind == "Pitch":
                if position is None:
                    fail("note token before any Position", k)
                if is_drum:
                    fail("Pitch on a drum track", k)
                if (k + 2 >= len(ids)
                        or vocab.spec_of(ids[k + 1]).kind != "Duration"
                        or vocab.spec_of(ids[k + 2]).kind != "Velocity"):
                    fail("Pitch without Duration+Velocity", k)
                dur = int(vocab.spec_of(ids[k + 1]).value)
                vel = velocity_decode(int(vocab.spec_of(ids[k + 2]).value))
                notes.append(Note(int(spec.value), bar * TICKS_PER_BAR + position, dur, vel))
                k += 2
            elif kind == "EOS":
                k += 1
                break
            elif kind in ("Duration", "Velocity", "Instrument", "BOS", "PAD"):
                fail(f"unexpected {kind} token", k)
            k += 1
        for j in range(k, len(ids)):
            if ids[j] != PAD_ID:
                raise MalformedSequence("content after EOS", ti, j)
        tracks.append(Track(inst, sorted_unique_notes(notes), is_melody=inst == "SquareSynth"))
        n_bars = max(n_bars, bar + 1)
    return Song(tracks, n_bars)


def snap_song(song: Song, vocab: Vocab) -> Song:
    """The tokenizer's quantization as a Song->Song map: onsets to the
    position grid, durations to the mesh, velocities to bin midpoints.
    detokenize(tokenize_song(s)) == snap_song(s) for well-formed songs."""
    tracks = []
    for t in song.tracks:
        notes = []
        for n in t.notes:
            bar, tick = divmod(n.onset, TICKS_PER_BAR)
            onset = bar * TICKS_PER_BAR + vocab.snap_position(tick)
            if t.instrument == "Drum":
                notes.append(Note(vocab.drum_key(n.pitch), onset,
                                  DRUM_DURATION, DRUM_VELOCITY))
            else:
                notes.append(Note(n.pitch, onset, vocab.snap_duration(n.duration),
                                  velocity_decode(velocity_bin(n.velocity))))
        tracks.append(Track(t.instrument, sorted_unique_notes(notes),
                            t.program, t.name, t.is_melody))
    return Song(tracks, song.n_bars, song.resolution)


def tokenize_remi_plus(song: Song, vocab: Vocab) -> list[int]:
    """Single interleaved sequence: Bar, Position, then per note either
    Instrument+Pitch+Duration+Velocity or Instrument+PitchDrum."""
    per_bar: list[dict[int, list[tuple[int, int, Note]]]] = [
        {} for _ in range(song.n_bars)]
    for ti, t in enumerate(song.tracks):
        for b, notes in enumerate(_bar_notes(t, song.n_bars)):
            for n in notes:
                pos = vocab.snap_position(n.onset % TICKS_PER_BAR)
                per_bar[b].setdefault(pos, []).append((ti, n.pitch, n))
    ids = [BOS_ID]
    for b, groups in enumerate(per_bar):
        ids.append(vocab.id_of("BarNormal", 0))
        for pos in sorted(groups):
            ids.append(vocab.id_of("Position", pos))
            for ti, _, n in sorted(groups[pos], key=lambda x: (x[0], x[1])):
                inst = song.tracks[ti].instrument
                ids.append(vocab.id_of("Instrument", inst))
                if inst == "Drum":
                    ids.append(vocab.id_of("PitchDrum", vocab.drum_key(n.pitch)))
                else:
                    ids.append(vocab.id_of("Pitch", n.pitch))
                    ids.append(vocab.id_of("Duration", vocab.snap_duration(n.duration)))
                    ids.append(vocab.id_of("Velocity", velocity_bin(n.velocity)))
    ids.append(EOS_ID)
    return ids


@dataclass(frozen=True, slots=True)
class TokStats:
    voc_size: int
    tok_per_beat: float
    tok_per_note: float
    avg_len: float
    n_songs: int


def corpus_stats(corpus: list, note_counts: list[int], beat_counts: list[int],
                 voc_size: int) -> TokStats:
    """Token statistics over a corpus of TrackTokenSeqs or flat id lists.

    For parallel sequences, a song's length is its longest track (unpadded)
    and its token count sums all tracks without padding.
    """
    if not corpus:
        raise EmptyCorpus("no corpus entries")
    if len(corpus) != len(note_counts) or len(corpus) != len(beat_counts):
        raise DataError("corpus and count lists differ in length")
    total_tokens = 0
    total_len = 0
    for entry in corpus:
        if isinstance(entry, TrackTokenSeqs):
            total_tokens += sum(entry.lengths)
            total_len += max(entry.lengths, default=0)
        else:
            total_tokens += len(entry)
            total_len += len(entry)
    return TokStats(voc_size,
                    total_tokens / max(1, sum(beat_counts)),
                    total_tokens / max(1, sum(note_counts)),
                    total_len / len(corpus),
                    len(corpus))


# -- corpus / vocab files ------------------------------------------------------


def dump_token_corpus(entries: list[tuple[str, list[list[int]]]]) -> str:
    lines = []
    for song_id, tracks in entries:
        lines.append(f"#SONG {song_id}")
        for ids in tracks:
            lines.append(" ".join(str(i) for i in ids))
    return "\n".join(lines) + "\n"


def load_token_corpus(text: str) -> list[tuple[str, list[list[int]]]]:
    entries: list[tuple[str, list[list[int]]]] = []
    for ln in text.splitlines():
        if not ln.strip():
            continue
        if ln.startswith("#SONG"):
            parts = ln.split(None, 1)
            entries.append((parts[1] if len(parts) > 1 else "", []))
        else:
            if not entries:
                raise DataError("token corpus: ids before any #SONG header")
            entries[-1][1].append([int(x) for x in ln.split()])
    return entries


def dump_vocab(vocab: Vocab) -> str:
    return "\n".join(f"{i} {s.kind}:{s.value}" for i, s in enumerate(vocab.specs)) + "\n"


def load_vocab(text: str) -> Vocab:
    positions: list[int] = []
    mesh: list[int] = []
    count = 0
    for ln in text.splitlines():
        if not ln.strip():
            continue
        idx, spec = ln.split(None, 1)
        kind, value = spec.split(":", 1)
        if int(idx) != count:
            raise DataError("vocab file: ids not dense")
        count += 1
        if kind == "Position":
            positions.append(int(value))
        elif kind == "Duration":
            mesh.append(int(value))
    if not positions:
        raise DataError("vocab file: no Position tokens")
    grid = TICKS_PER_BAR // len(positions)
    vocab = Vocab(grid, tuple(mesh))
    if vocab.size != count:
        raise DataError("vocab file does not match the canonical layout")
    return vocab
