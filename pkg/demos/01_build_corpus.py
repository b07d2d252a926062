"""From raw MIDI to a training-ready corpus of windowed songs.

Walks the whole preprocessing chain on synthetic material: write a song to
a real MIDI file, parse it back, quantize to the 48-ticks-per-quarter grid,
compress instruments to the six supported classes, apply the corpus filter,
split into fixed-size windows, and dedupe.
"""

import tempfile
from pathlib import Path

from bandgen.midi import load_midi_file, save_midi_file
from bandgen.score import (compress_instruments, dedupe_corpus, filter_song,
                           quantize_song, split_windows)
from bandgen.synth import make_song

# a 40-bar four-track band arrangement (drums, piano, bass, melody)
song = make_song(seed=42, n_bars=40)
print(f"synthetic song: {len(song.tracks)} tracks, {song.n_bars} bars, "
      f"{song.note_count()} notes")

# round-trip through an actual .mid file on disk
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.mid"
    save_midi_file(song, str(path))
    print(f"wrote {path.stat().st_size} bytes of standard MIDI")
    parsed = load_midi_file(str(path))
print(f"parsed back: {len(parsed.tracks)} tracks, resolution "
      f"{parsed.resolution} ticks/quarter, {parsed.note_count()} notes")

# quantize onto the canonical grid, then normalize instruments
quantized = quantize_song(parsed)
compressed = compress_instruments(quantized)
print("instruments after compression:",
      [t.instrument for t in compressed.tracks])

# the corpus filter demands 4+ tracks, >16 bars, >512 notes, few empty bars
verdict = filter_song(compressed)
print(f"filter verdict: accepted={verdict.accepted} reasons={verdict.reasons}")

# split into 16-bar windows with stride 8, then drop duplicate windows
windows = split_windows(compressed, min_bars=16, max_bars=16, stride=8)
unique = dedupe_corpus(windows)
print(f"{len(windows)} windows of 16 bars, {len(unique)} after dedupe")
for i, w in enumerate(unique[:3]):
    print(f"  window {i}: {w.n_bars} bars, {w.note_count()} notes")
