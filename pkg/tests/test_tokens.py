"""Track-parallel tokenizer: vocabulary layout, snapping, round trips."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandgen.errors import (DataError, EmptyCorpus, InvalidGrid,
                            MalformedSequence, NoteOutOfRange)
from bandgen.score import Note, Song, Track
from bandgen.synth import make_song
from bandgen.tokens import (BOS_ID, DEFAULT_DURATION_MESH, EOS_ID, PAD_ID,
                            build_track_seqs, build_vocab, corpus_stats,
                            detokenize, dump_token_corpus, dump_vocab,
                            load_token_corpus, load_vocab, snap_song,
                            snap_to_mesh, tokenize_remi_plus, tokenize_song,
                            velocity_bin, velocity_decode)


def test_vocab_layout_is_frozen(vocab):
    assert vocab.size == 282
    assert vocab.kind_counts() == {
        "PAD": 1, "BOS": 1, "EOS": 1, "Instrument": 6, "BarNormal": 1,
        "BarEmpty": 1, "Position": 48, "Pitch": 128, "PitchDrum": 31,
        "Duration": 32, "Velocity": 32,
    }
    assert vocab.id_of("Instrument", "Drum") == 3
    assert vocab.id_of("Instrument", "SquareSynth") == 8
    assert vocab.id_of("BarNormal", 0) == 9
    assert vocab.id_of("BarEmpty", 0) == 10
    assert vocab.id_of("Position", 0) == 11
    assert vocab.id_of("Position", 188) == 58
    assert vocab.id_of("Pitch", 0) == 59
    assert vocab.id_of("Pitch", 127) == 186
    assert vocab.id_of("PitchDrum", 25) == 187
    assert vocab.id_of("Duration", 4) == 218
    assert vocab.id_of("Duration", 384) == 249
    assert vocab.id_of("Velocity", 0) == 250
    assert vocab.id_of("Velocity", 31) == 281


def test_duration_mesh_layout():
    mesh = DEFAULT_DURATION_MESH
    assert len(mesh) == 32
    assert mesh[:12] == tuple(range(4, 49, 4))
    assert mesh[12:24] == tuple(range(60, 193, 12))
    assert mesh[24:] == tuple(range(216, 385, 24))


def test_velocity_bins():
    assert velocity_bin(64) == 16
    assert velocity_decode(16) == 66
    assert velocity_bin(127) == 31
    assert velocity_bin(1) == 0
    assert velocity_decode(velocity_bin(2)) == 2
    # decode always lands back in the same bin
    for b in range(32):
        assert velocity_bin(velocity_decode(b)) == b


def test_snap_to_mesh():
    mesh = DEFAULT_DURATION_MESH
    assert snap_to_mesh(1, mesh) == 4
    assert snap_to_mesh(48, mesh) == 48
    assert snap_to_mesh(50, mesh) == 48
    assert snap_to_mesh(54, mesh) == 48   # equidistant tie -> smaller
    assert snap_to_mesh(55, mesh) == 60
    assert snap_to_mesh(204, mesh) == 192  # tie again
    assert snap_to_mesh(205, mesh) == 216
    assert snap_to_mesh(1000, mesh) == 384


def test_snap_position(vocab):
    assert vocab.snap_position(0) == 0
    assert vocab.snap_position(1) == 0
    assert vocab.snap_position(2) == 4   # half-up
    assert vocab.snap_position(190) == 188  # clamped to last slot


def test_drum_key_folding(vocab):
    assert vocab.drum_key(36) == 36
    assert vocab.drum_key(30) == 29  # tie between 29 and 31 -> lower
    assert vocab.drum_key(33) == 31  # tie between 31 and 35 -> lower
    assert vocab.drum_key(0) == 25
    assert vocab.drum_key(127) == 59


def test_invalid_grid_and_mesh():
    with pytest.raises(InvalidGrid):
        build_vocab(position_grid=5)
    with pytest.raises(DataError):
        build_vocab(duration_mesh=(8, 4))
    with pytest.raises(DataError):
        build_vocab(duration_mesh=(4, 999))


def test_track_sequence_structure(vocab):
    song = Song([
        Track("Drum", [Note(36, 0, 24, 64)]),
        Track("Piano", [Note(60, 192, 48, 90)]),
    ], 2)
    seqs = tokenize_song(song, vocab)
    drum, piano = seqs.seqs[0], seqs.seqs[1]
    assert drum[:2] == [vocab.id_of("Instrument", "Drum"), BOS_ID]
    assert [vocab.spec_of(i).kind for i in drum[2:seqs.lengths[0]]] == [
        "BarNormal", "Position", "PitchDrum", "BarEmpty", "EOS"]
    assert [vocab.spec_of(i).kind for i in piano[2:seqs.lengths[1]]] == [
        "BarEmpty", "BarNormal", "Position", "Pitch", "Duration", "Velocity",
        "EOS"]
    # both sequences padded to a common width
    assert len(drum) == len(piano)
    assert piano[seqs.lengths[1]:] == [PAD_ID] * (len(piano) - seqs.lengths[1])


def test_bar_index_and_positions(vocab):
    song = Song([Track("Piano", [Note(60, 0, 24, 90), Note(62, 192, 24, 90)])], 2)
    seqs = tokenize_song(song, vocab)
    bars = seqs.bar_token_positions[0]
    assert len(bars) == 2
    bidx = seqs.bar_index[0]
    assert bidx[0] == bidx[1] == 0          # framing maps to bar 0
    assert bidx[bars[1]] == 1
    assert all(bidx[k] == 1 for k in range(bars[1], seqs.lengths[0]))


def test_same_position_notes_share_one_position_token(vocab):
    song = Song([Track("Piano", [Note(60, 0, 24, 90), Note(64, 0, 24, 90)])], 1)
    seqs = tokenize_song(song, vocab)
    kinds = [vocab.spec_of(i).kind for i in seqs.seqs[0][:seqs.lengths[0]]]
    assert kinds.count("Position") == 1
    assert kinds.count("Pitch") == 2


def test_tokenize_rejects_out_of_range_notes(vocab):
    song = Song([Track("Piano", [Note(60, 500, 24, 90)])], 1)
    with pytest.raises(NoteOutOfRange):
        tokenize_song(song, vocab)


def test_round_trip_equals_snap(vocab):
    # off-grid onsets, off-mesh durations, odd velocities, exotic drum pitches
    song = Song([
        Track("Drum", [Note(30, 2, 99, 120), Note(36, 50, 24, 64)]),
        Track("Piano", [Note(60, 1, 55, 91), Note(64, 241, 204, 17)]),
        Track("SquareSynth", [Note(72, 100, 13, 77)]),
    ], 2)
    back = detokenize(tokenize_song(song, vocab), vocab)
    snap = snap_song(song, vocab)
    for a, b in zip(back.tracks, snap.tracks):
        assert a.notes == b.notes
    assert back.n_bars == snap.n_bars


def test_round_trip_is_identity_on_snapped_corpus(vocab, micro_corpus):
    for song in micro_corpus[:6]:
        back = detokenize(tokenize_song(song, vocab), vocab)
        for a, b in zip(back.tracks, song.tracks):
            assert a.notes == b.notes


def test_detokenize_error_positions(vocab):
    inst = vocab.id_of("Instrument", "Piano")
    pos0 = vocab.id_of("Position", 0)
    bar = vocab.id_of("BarNormal", 0)
    pitch = vocab.id_of("Pitch", 60)
    dur = vocab.id_of("Duration", 24)
    vel = vocab.id_of("Velocity", 16)

    def err(ids, track=0):
        seqs = build_track_seqs([ids], vocab)
        with pytest.raises(MalformedSequence) as e:
            detokenize(seqs, vocab)
        return e.value

    assert err([pos0]).index == 0                 # missing Instrument
    assert err([inst, pos0]).index == 1           # missing BOS
    e = err([inst, BOS_ID, pos0])                 # Position before Bar
    assert (e.track, e.index) == (0, 2)
    assert err([inst, BOS_ID, bar, pitch, dur, vel]).index == 3  # no Position
    assert err([inst, BOS_ID, bar, pos0, pitch, dur]).index == 4  # orphan Pitch
    assert err([inst, BOS_ID, bar, pos0, dur]).index == 4  # stray Duration
    e = err([inst, BOS_ID, bar, EOS_ID, bar])     # content after EOS
    assert e.index == 4
    drum_tok = vocab.id_of("PitchDrum", 36)
    assert err([inst, BOS_ID, bar, pos0, drum_tok]).index == 4  # drum on pitched


def test_remi_plus_structure(vocab):
    song = Song([
        Track("Drum", [Note(36, 0, 24, 64)]),
        Track("Piano", [Note(60, 0, 48, 90)]),
    ], 1)
    ids = tokenize_remi_plus(song, vocab)
    kinds = [vocab.spec_of(i).kind for i in ids]
    assert kinds == ["BOS", "BarNormal", "Position", "Instrument", "PitchDrum",
                     "Instrument", "Pitch", "Duration", "Velocity", "EOS"]
    # track order breaks the tie at one position
    assert vocab.spec_of(ids[3]).value == "Drum"
    assert vocab.spec_of(ids[5]).value == "Piano"


def test_remi_plus_is_longer_than_max_track(vocab, micro_corpus):
    for song in micro_corpus[:4]:
        flat = len(tokenize_remi_plus(song, vocab))
        per_track = max(tokenize_song(song, vocab).lengths)
        assert flat > per_track


def test_corpus_stats(vocab):
    song = make_song(2, n_bars=20)
    seqs = tokenize_song(song, vocab)
    stats = corpus_stats([seqs], [song.note_count()], [song.n_bars * 4],
                         vocab.size)
    assert stats.voc_size == 282
    assert stats.n_songs == 1
    assert stats.avg_len == max(seqs.lengths)
    assert stats.tok_per_beat == pytest.approx(sum(seqs.lengths) / 80)
    assert stats.tok_per_note == pytest.approx(
        sum(seqs.lengths) / song.note_count())
    with pytest.raises(EmptyCorpus):
        corpus_stats([], [], [], vocab.size)


def test_token_corpus_file_round_trip(vocab):
    song = make_song(3, n_bars=20)
    seqs = tokenize_song(song, vocab)
    text = dump_token_corpus([("song3", seqs.seqs)])
    loaded = load_token_corpus(text)
    assert loaded == [("song3", seqs.seqs)]
    assert dump_token_corpus(loaded) == text


def test_vocab_file_round_trip(vocab):
    text = dump_vocab(vocab)
    v2 = load_vocab(text)
    assert v2.size == vocab.size
    assert v2.specs == vocab.specs
    assert v2.position_grid == vocab.position_grid
    assert v2.duration_mesh == vocab.duration_mesh
    assert dump_vocab(v2) == text


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 127), st.integers(0, 383),
                          st.integers(1, 400), st.integers(1, 127)),
                min_size=1, max_size=30))
def test_round_trip_matches_snap_property(raw):
    vocab = build_vocab()
    notes = [Note(p, o, d, v) for p, o, d, v in raw]
    song = Song([Track("Piano", notes), Track("Drum", list(notes))], 2)
    back = detokenize(tokenize_song(song, vocab), vocab)
    snap = snap_song(song, vocab)
    for a, b in zip(back.tracks, snap.tracks):
        assert a.notes == b.notes
