"""Standard MIDI File reader/writer against hand-assembled byte fixtures."""

import struct

import pytest

from bandgen.errors import MalformedMidi, UnsupportedTimeSignature
from bandgen.midi import parse_midi, write_midi
from bandgen.score import Note, quantize_song
from bandgen.synth import make_song


def chunk(tag: bytes, body: bytes) -> bytes:
    return tag + struct.pack(">I", len(body)) + body


def header(fmt=1, ntrks=2, division=48) -> bytes:
    return chunk(b"MThd", struct.pack(">HHH", fmt, ntrks, division))


CONDUCTOR = chunk(b"MTrk", bytes([
    0x00, 0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08,   # 4/4
    0x00, 0xFF, 0x2F, 0x00,
]))


def test_parse_hand_assembled_file():
    body = bytes([
        0x00, 0xC0, 0x21,          # program 33 (Bass), channel 0
        0x00, 0x90, 0x28, 0x64,    # on  pitch 40 vel 100
        0x30, 0x28, 0x00,          # +48: running-status vel-0 off
        0x00, 0x2A, 0x50,          # on  pitch 42 vel 80
        0x60, 0x2A, 0x00,          # +96: off
        0x00, 0xFF, 0x2F, 0x00,
    ])
    song = parse_midi(header() + CONDUCTOR + chunk(b"MTrk", body))
    assert len(song.tracks) == 1
    t = song.tracks[0]
    assert t.instrument == "Bass" and t.program == 33
    assert t.notes == [Note(40, 0, 48, 100), Note(42, 48, 96, 80)]
    assert song.n_bars == 1
    assert song.resolution == 48


def test_parse_channel_10_is_drums_and_splits_channels():
    body = bytes([
        0x00, 0x99, 0x24, 0x64,    # drum hit, channel 9
        0x00, 0x90, 0x3C, 0x40,    # piano note, channel 0
        0x30, 0x89, 0x24, 0x40,    # drum off (running status not used)
        0x00, 0x80, 0x3C, 0x40,
        0x00, 0xFF, 0x2F, 0x00,
    ])
    song = parse_midi(header() + CONDUCTOR + chunk(b"MTrk", body))
    by_inst = {t.instrument: t for t in song.tracks}
    assert set(by_inst) == {"Drum", "Piano"}
    assert by_inst["Drum"].notes == [Note(36, 0, 48, 100)]
    assert by_inst["Piano"].notes == [Note(60, 0, 48, 64)]


def test_parse_melody_name_selects_square_synth():
    name = b"Lead Melody"
    body = bytes([0x00, 0xFF, 0x03, len(name)]) + name + bytes([
        0x00, 0xC0, 0x50,          # program 80 would map to Strings
        0x00, 0x90, 0x48, 0x64,
        0x30, 0x80, 0x48, 0x00,
        0x00, 0xFF, 0x2F, 0x00,
    ])
    song = parse_midi(header() + CONDUCTOR + chunk(b"MTrk", body))
    assert song.tracks[0].instrument == "SquareSynth"
    assert song.tracks[0].is_melody


def test_parse_closes_dangling_note_at_track_end():
    body = bytes([
        0x00, 0x90, 0x3C, 0x40,
        0x18, 0xFF, 0x2F, 0x00,    # end of track 24 ticks later, no off
    ])
    song = parse_midi(header() + CONDUCTOR + chunk(b"MTrk", body))
    assert song.tracks[0].notes == [Note(60, 0, 24, 64)]


def test_parse_fifo_for_stacked_identical_pitches():
    body = bytes([
        0x00, 0x90, 0x3C, 0x40,    # first on
        0x10, 0x90, 0x3C, 0x40,    # second on, same pitch, +16
        0x10, 0x80, 0x3C, 0x00,    # first off at +32
        0x20, 0x80, 0x3C, 0x00,    # second off at +64
        0x00, 0xFF, 0x2F, 0x00,
    ])
    song = parse_midi(header() + CONDUCTOR + chunk(b"MTrk", body))
    assert song.tracks[0].notes == [Note(60, 0, 32, 64), Note(60, 16, 48, 64)]


def test_parse_rejects_non_44_meter():
    bad = chunk(b"MTrk", bytes([
        0x00, 0xFF, 0x58, 0x04, 0x03, 0x02, 0x18, 0x08,  # 3/4
        0x00, 0xFF, 0x2F, 0x00,
    ]))
    with pytest.raises(UnsupportedTimeSignature):
        parse_midi(header(ntrks=1) + bad)


def test_parse_rejects_malformed_files():
    with pytest.raises(MalformedMidi):
        parse_midi(b"RIFF" + b"\x00" * 20)              # wrong magic
    with pytest.raises(MalformedMidi):
        parse_midi(header()[:8])                        # truncated
    with pytest.raises(MalformedMidi):
        parse_midi(chunk(b"MThd", struct.pack(">HHH", 2, 1, 48)))  # format 2
    smpte = chunk(b"MThd", struct.pack(">HHh", 1, 1, -25 * 256))
    with pytest.raises(MalformedMidi):
        parse_midi(smpte + CONDUCTOR)


def test_parse_rejects_overlong_varlen():
    body = bytes([0xFF, 0xFF, 0xFF, 0xFF, 0x7F,  # 5-byte delta
                  0xFF, 0x2F, 0x00])
    with pytest.raises(MalformedMidi):
        parse_midi(header(ntrks=1) + chunk(b"MTrk", body))


def test_write_parse_round_trip():
    song = make_song(11)
    back = quantize_song(parse_midi(write_midi(song)))
    assert back.n_bars == song.n_bars
    assert [t.instrument for t in back.tracks] == [t.instrument
                                                   for t in song.tracks]
    for a, b in zip(back.tracks, song.tracks):
        assert a.notes == b.notes


def test_write_is_deterministic():
    song = make_song(5)
    assert write_midi(song) == write_midi(song)
