import json
import math
import os

import numpy as np
import pytest

import gesticulate as g

DATA = os.environ.get("GEST_TEST_DATA", os.path.join(os.path.dirname(__file__), "..", "data"))

TINY = """seed = 5
synth.clips = 8
synth.seconds = 5
synth.test_clips = 2
rvq.codebook_size = 8
rvq.latent_channels = 8
rvq.hidden_channels = 8
rvq.depth = 2
rvq.downsample = 4
rvq.attn_layers = 1
rvq.attn_heads = 2
rvq.total_steps = 20
rvq.batch_sequences = 2
rvq.batch_frames = 32
audio.codebook_size = 4
audio.depth = 1
audio.steps = 20
lm.layers = 1
lm.heads = 2
lm.width = 16
lm.context = 512
lm.epochs = 1
lm.sft_epochs = 1
metrics.ae_steps = 20
"""


def test_bvh_round_trip():
    clip = g.read_bvh(os.path.join(DATA, "two_joint.bvh"))
    again = g.parse_bvh(clip.to_bvh())
    assert again.frame_count == clip.frame_count
    assert again.joint_names == clip.joint_names
    assert again.to_bvh() == clip.to_bvh()


def test_features_shape_and_inverse():
    clip = g.read_bvh(os.path.join(DATA, "two_joint.bvh"))
    feats = g.clip_to_features(clip)
    assert feats.shape[0] == clip.frame_count
    back = g.features_to_clip(feats, clip)
    assert np.allclose(g.clip_to_features(back), feats, atol=1e-9)


def test_parse_error_is_reported():
    with pytest.raises(g.GestError, match="parse"):
        g.parse_bvh("HIERARCHY\nnonsense")


def test_frechet_closed_form():
    d = g.frechet_distance(np.array([0.0]), np.array([[1.0]]), np.array([1.0]), np.array([[4.0]]))
    assert d == pytest.approx(2.0, abs=1e-8)


def test_beat_align_and_detection():
    assert g.beat_align([0.5, 1.0], [0.5, 1.0]) == 1.0
    assert g.beat_align([1.1], [1.0], 0.1) == pytest.approx(math.exp(-0.5), abs=1e-9)
    samples = g.click_track(4.0, 16000.0, 0.5, 0.25, 1)
    beats = g.detect_beats(samples, 16000.0)
    assert len(beats) == 8
    assert np.allclose(np.diff(beats), 0.5, atol=0.03)


def test_quantize_residual_example():
    codes, quantized, residual = g.quantize_residual(
        np.array([[4.9]]), [np.array([[0.0], [4.0]]), np.array([[0.0], [1.0]])]
    )
    assert codes.tolist() == [[1, 1]]
    assert quantized[0, 0] == 5.0
    assert residual[0, 0] == pytest.approx(-0.1)


def test_config_hash_changes_with_values():
    c = g.RunConfig.parse("seed = 1\n")
    h = c.hash()
    c.set("rvq.depth", "3")
    assert c.get("rvq.depth") == "3"
    assert c.hash() != h and len(h) == 16


def test_pipeline_end_to_end(tmp_path):
    c = g.RunConfig.parse(TINY)
    corpus = tmp_path / "corpus"
    g.synth(c, str(corpus))
    manifest = str(corpus / "manifest.jsonl")
    g.train_rvq(c, manifest, str(tmp_path / "rvq.json"))
    g.train_audio_vq(c, manifest, str(tmp_path / "audio.json"))
    g.tokenize(c, manifest, str(tmp_path / "rvq.json"), str(tmp_path / "audio.json"), str(tmp_path / "tokens.jsonl"))
    losses = g.train_lm(c, str(tmp_path / "tokens.jsonl"), "pretrain", out=str(tmp_path / "pre.json"))
    assert len(losses) == 1 and math.isfinite(losses[0])
    g.train_lm(c, str(tmp_path / "tokens.jsonl"), "sft", init=str(tmp_path / "pre.json"), out=str(tmp_path / "sft.json"))

    rvq = g.RvqModel.load(str(tmp_path / "rvq.json"))
    entries = [json.loads(line) for line in open(manifest)]
    clip = g.read_bvh(str(corpus / entries[0]["bvh_path"]))
    codes = rvq.tokenize(clip)
    assert codes.shape[1] == rvq.depth
    assert codes.min() >= 0 and codes.max() < rvq.codebook_size

    gen = tmp_path / "gen"
    for e in entries:
        if e["split"] != "test":
            continue
        out = str(gen / (e["id"] + ".bvh"))
        g.generate(c, str(tmp_path / "sft.json"), str(tmp_path / "rvq.json"), str(tmp_path / "audio.json"),
                   str(corpus / e["wav_path"]), e.get("prompt"), out)
        assert g.read_bvh(out).frame_count > 1
    # Scoring the ground truth against itself gives a deterministic report.
    report = g.evaluate_report(c, manifest, str(corpus))
    assert report["fgd"] == pytest.approx(0.0, abs=1e-6)
    assert 0.0 <= report["beat_align"] <= 1.0
    assert report["clips"] == 2
    assert report["config_hash"] == c.hash()
