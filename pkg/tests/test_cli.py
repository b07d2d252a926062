"""End-to-end command-line pipeline on a synthetic MIDI corpus."""

import json
import os
import shutil

import pytest

from bandgen.cli import is_test_song, main
from bandgen.midi import load_midi_file, save_midi_file
from bandgen.synth import make_song
from bandgen.tokens import load_token_corpus, load_vocab


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Run the whole pipeline once; tests inspect the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    midi_dir = root / "midis"
    midi_dir.mkdir()
    for i in range(3):
        save_midi_file(make_song(seed=20 + i, n_bars=40),
                       str(midi_dir / f"s{i}.mid"))

    songs = root / "songs"
    assert main(["preprocess", "--in", str(midi_dir), "--out", str(songs),
                 "--min-bars", "4", "--max-bars", "4", "--stride", "8"]) == 0

    tokens = root / "tokens.txt"
    vocab_file = root / "vocab.txt"
    assert main(["tokenize", "--in", str(songs), "--out", str(tokens),
                 "--vocab", str(vocab_file)]) == 0

    merges = root / "merges.txt"
    assert main(["bpe-train", "--corpus", str(tokens), "--vocab",
                 str(vocab_file), "--vocab-size", "312",
                 "--out", str(merges)]) == 0

    feats = root / "features.txt"
    assert main(["features", "--in", str(songs), "--out", str(feats)]) == 0

    ckpt = root / "model.ckpt"
    assert main(["train", "--tokens", str(tokens), "--vocab", str(vocab_file),
                 "--features", str(feats), "--out", str(ckpt),
                 "--steps", "2", "--vq-steps", "2", "--seed", "0"]) == 0

    ref_mid = root / "ref.mid"
    save_midi_file(make_song(seed=99, n_bars=2), str(ref_mid))
    out_mid = root / "cover.mid"
    assert main(["generate", "--checkpoint", str(ckpt), "--vocab",
                 str(vocab_file), "--reference", str(ref_mid),
                 "--out", str(out_mid), "--seed", "1", "--no-filter"]) == 0

    refs = root / "refs"
    covs = root / "covs"
    refs.mkdir()
    covs.mkdir()
    for i in range(2):
        p = refs / f"p{i}.mid"
        save_midi_file(make_song(seed=40 + i, n_bars=2), str(p))
        shutil.copy(p, covs / p.name)
    report = root / "report.csv"
    assert main(["evaluate", "--ref", str(refs), "--cov", str(covs),
                 "--out", str(report)]) == 0

    return root


def test_preprocess_writes_windows_and_manifest(work):
    songs = work / "songs"
    names = sorted(os.listdir(songs))
    windows = [n for n in names if n.endswith(".song")]
    assert len(windows) >= 9
    assert all("_w" in n for n in windows)
    manifest = json.loads((songs / "preprocess.manifest.json").read_text())
    assert manifest["command"] == "preprocess"
    assert manifest["songs_kept"] == 3
    assert manifest["windows"] == len(windows)


def test_no_temp_files_left_anywhere(work):
    for dirpath, _, filenames in os.walk(work):
        for name in filenames:
            assert not name.startswith(".tmp-"), os.path.join(dirpath, name)


def test_tokenize_outputs_round_trip(work):
    corpus = load_token_corpus((work / "tokens.txt").read_text())
    vocab = load_vocab((work / "vocab.txt").read_text())
    assert vocab.size == 282
    assert len(corpus) >= 9
    for name, tracks in corpus:
        assert len(tracks) == 4
        assert all(t < vocab.size for ids in tracks for t in ids)


def test_bpe_manifest_reports_merges(work):
    manifest = json.loads((work / "merges.txt.manifest.json").read_text())
    assert manifest["vocab_size"] == 312
    assert manifest["merges"] == 30


def test_train_manifest_and_checkpoint(work):
    from bandgen.neural import load_checkpoint_file
    params, cfg = load_checkpoint_file(str(work / "model.ckpt"))
    assert cfg.vocab_size == 282  # trained without --merges
    assert "vq_codebook" in params and "te" in params
    manifest = json.loads((work / "model.ckpt.manifest.json").read_text())
    assert manifest["seed"] == 0
    assert manifest["steps"] == 2
    assert manifest["final_loss_per_token"] > 0


def test_generate_outputs(work):
    out = work / "cover.mid"
    song = load_midi_file(str(out))
    assert song.tracks
    tokens_text = (out.with_suffix(".mid.tokens.txt")).read_text()
    assert tokens_text.startswith("#SONG")
    manifest = json.loads((work / "cover.mid.manifest.json").read_text())
    assert manifest["bars"] == 2
    assert manifest["tokens_generated"] > 0


def test_evaluate_report_is_perfect_for_copies(work):
    lines = (work / "report.csv").read_text().splitlines()
    assert lines[0].startswith("pair,")
    assert len(lines) == 4
    assert lines[-1].startswith("MEAN,")
    header = lines[0].split(",")
    mean = dict(zip(header, lines[-1].split(",")))
    assert float(mean["nde"]) == 0.0
    assert float(mean["oap"]) == 1.0
    assert float(mean["ca"]) == 1.0


def test_rerun_is_byte_identical(work, tmp_path):
    tokens2 = tmp_path / "tokens2.txt"
    vocab2 = tmp_path / "vocab2.txt"
    assert main(["tokenize", "--in", str(work / "songs"), "--out",
                 str(tokens2), "--vocab", str(vocab2)]) == 0
    assert tokens2.read_bytes() == (work / "tokens.txt").read_bytes()
    assert vocab2.read_bytes() == (work / "vocab.txt").read_bytes()


def test_stats_table(work, capsys):
    assert main(["stats", "--in", str(work / "songs"),
                 "--reps", "remi_track,remi_plus,remi_track_bpe",
                 "--merges", str(work / "merges.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[:2] == ["representation", "voc"]
    assert len(out) == 4
    assert out[1].split()[0] == "remi_track"
    assert out[3].split()[1] == "312"


def test_stats_bpe_without_merges_is_usage_error(work):
    assert main(["stats", "--in", str(work / "songs"),
                 "--reps", "remi_track_bpe"]) == 1


def test_stats_unknown_representation(work):
    assert main(["stats", "--in", str(work / "songs"),
                 "--reps", "remi_weird"]) == 1


# -- error paths -------------------------------------------------------------------


def test_missing_input_dir_is_usage_error(tmp_path):
    assert main(["preprocess", "--in", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "out")]) == 1


def test_empty_song_dir_is_usage_error(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["tokenize", "--in", str(empty), "--out",
                 str(tmp_path / "t.txt"), "--vocab",
                 str(tmp_path / "v.txt")]) == 1


def test_bad_jobs_value(tmp_path):
    assert main(["preprocess", "--in", str(tmp_path), "--out",
                 str(tmp_path / "o"), "--jobs", "0"]) == 1


def test_garbage_corpus_is_data_error(tmp_path, work):
    bad = tmp_path / "bad.txt"
    bad.write_text("not a corpus\n")
    assert main(["bpe-train", "--corpus", str(bad), "--vocab",
                 str(work / "vocab.txt"), "--vocab-size", "300",
                 "--out", str(tmp_path / "m.txt")]) == 2


def test_mismatched_corpora_is_data_error(tmp_path, work):
    feats = tmp_path / "wrong.txt"
    text = (work / "features.txt").read_text()
    feats.write_text(text.replace("#SONG ", "#SONG renamed_", 1))
    assert main(["train", "--tokens", str(work / "tokens.txt"),
                 "--vocab", str(work / "vocab.txt"), "--features", str(feats),
                 "--out", str(tmp_path / "m.ckpt"), "--steps", "1",
                 "--vq-steps", "1"]) == 2


def test_generate_vocab_mismatch_is_data_error(tmp_path, work):
    assert main(["generate", "--checkpoint", str(work / "model.ckpt"),
                 "--vocab", str(work / "vocab.txt"),
                 "--merges", str(work / "merges.txt"),
                 "--reference", str(work / "ref.mid"),
                 "--out", str(tmp_path / "x.mid")]) == 2


def test_generate_filter_rejects_short_reference(tmp_path, work):
    assert main(["generate", "--checkpoint", str(work / "model.ckpt"),
                 "--vocab", str(work / "vocab.txt"),
                 "--reference", str(work / "ref.mid"),
                 "--out", str(tmp_path / "x.mid")]) == 2


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    capsys.readouterr()


def test_help_and_version_exit_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["--version"]) == 0
    capsys.readouterr()


def test_is_test_song_split_is_stable_and_sparse():
    ids = [f"song_{i}_w{j}" for i in range(200) for j in range(5)]
    flags = [is_test_song(s) for s in ids]
    assert flags == [is_test_song(s) for s in ids]
    frac = sum(flags) / len(flags)
    assert 0.05 < frac < 0.15
