import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from roadlayout.cli import main
from roadlayout.crf import Labeling
from roadlayout.metrics import semantic_conflicts, temporal_changes
from roadlayout.probability import bin_specs
from roadlayout.renderer import PALETTE
from roadlayout.sampler import PriorConfig, sample_batch
from roadlayout.schema import read_scenes, serialize, validate

from cli_runs import command_manifests, run_ok


@pytest.fixture(scope="module")
def cooc_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cooc") / "cooc.json"
    run_ok("cooc", "--n", 2000, "--seed", 3, "--out", path)
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    run_ok("generate", "--n", 12, "--seed", 1, "--out", out)
    return out


def test_generate_is_deterministic_and_matches_api(tmp_path, dataset):
    run_ok("generate", "--n", 12, "--seed", 1, "--out", tmp_path)
    a = (tmp_path / "params.jsonl").read_bytes()
    assert a == (dataset / "params.jsonl").read_bytes()
    expected = "".join(serialize(s) + "\n" for s in sample_batch(PriorConfig(), 1, 12))
    assert a.decode() == expected


def test_generate_many_all_valid(tmp_path):
    run_ok("generate", "--n", 10000, "--seed", 2, "--out", tmp_path)
    scenes = read_scenes(tmp_path / "params.jsonl")
    assert len(scenes) == 10000
    assert all(validate(s).feasible for s in scenes)


def test_render_flag_writes_palette_pngs(tmp_path):
    run_ok("generate", "--n", 4, "--seed", 5, "--out", tmp_path, "--render")
    pngs = sorted((tmp_path / "renders").glob("*.png"))
    assert len(pngs) == 4
    flat = [c for rgb in PALETTE for c in rgb]
    for p in pngs:
        with Image.open(p) as img:
            assert img.getpalette()[: len(flat)] == flat


def test_threads_do_not_change_output(tmp_path, monkeypatch, dataset):
    monkeypatch.setenv("ROADLAYOUT_THREADS", "2")
    run_ok("render", "--params", dataset / "params.jsonl", "--out", tmp_path / "r2", "--raw")
    monkeypatch.setenv("ROADLAYOUT_THREADS", "1")
    run_ok("render", "--params", dataset / "params.jsonl", "--out", tmp_path / "r1", "--raw")
    a = sorted((tmp_path / "r1").glob("*.bevr"))
    b = sorted((tmp_path / "r2").glob("*.bevr"))
    assert len(a) == 12 and [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_noiseless_corrupt_then_infer_recovers_gt(tmp_path, dataset, cooc_file):
    pred = tmp_path / "pred.jsonl"
    run_ok("corrupt", "--params", dataset / "params.jsonl", "--seed", 4, "--out", pred,
           "--epsilon", 0, "--jitter", 0)
    out = tmp_path / "out.jsonl"
    run_ok("infer", "--pred", pred, "--out", out, "--cooc", cooc_file)
    gts = read_scenes(dataset / "params.jsonl")
    got = read_scenes(out)
    specs = bin_specs()
    for g, o in zip(gts, got):
        assert Labeling.from_params(o) == Labeling.from_params(g)
        for a, b, spec in zip(g.continuous, o.continuous, specs):
            if a is not None and spec.low + 3 * spec.sigma < a < spec.high - 3 * spec.sigma:
                assert abs(a - b) <= spec.width / 2
    diag = json.loads((tmp_path / "out.jsonl.diagnostics.json").read_text())
    assert diag["mode"] == "single" and len(diag["frames"]) == 12


def test_infer_output_has_no_conflicts(tmp_path, dataset, cooc_file):
    pred = tmp_path / "pred.jsonl"
    run_ok("corrupt", "--params", dataset / "params.jsonl", "--seed", 8, "--out", pred,
           "--epsilon", 0.3)
    out = tmp_path / "out.jsonl"
    run_ok("infer", "--pred", pred, "--out", out, "--cooc", cooc_file)
    assert all(semantic_conflicts(s) == 0 for s in read_scenes(out))


def test_temporal_mode_is_steadier(tmp_path, dataset, cooc_file):
    seq_dir = tmp_path / "seqs"
    run_ok("corrupt", "--params", dataset / "params.jsonl", "--seed", 6, "--out", seq_dir,
           "--frames", 5)
    singles, temporals = [], []
    for seq in sorted(seq_dir.glob("seq_*.jsonl"))[:4]:
        for mode, sink in (("single", singles), ("temporal", temporals)):
            out = tmp_path / f"{seq.stem}.{mode}.jsonl"
            run_ok("infer", "--pred", seq, "--out", out, "--mode", mode, "--cooc", cooc_file)
            sink.append(temporal_changes(read_scenes(out)))
    assert np.mean(temporals) <= np.mean(singles)


def test_eval_perfect(tmp_path, dataset, capsys):
    params = dataset / "params.jsonl"
    report = tmp_path / "report.json"
    run_ok("eval", "--pred", params, "--gt", params, "--format", "json", "--out", report)
    doc = json.loads(capsys.readouterr().out)
    assert (doc["accu_binary"], doc["accu_multiclass"], doc["mse"], doc["iou"]) == (1.0, 1.0, 0.0, 1.0)
    assert json.loads(report.read_text()) == doc


def test_eval_text_and_mask(tmp_path, dataset, capsys):
    params = dataset / "params.jsonl"
    mask = tmp_path / "mask.jsonl"
    mask.write_text(json.dumps({"curvature": False}) + "\n")
    run_ok("eval", "--pred", params, "--gt", params, "--mask", mask)
    assert "Accu-Bi" in capsys.readouterr().out


def test_consistency_constant_sequence(tmp_path, dataset, capsys):
    scene = (dataset / "params.jsonl").read_text().splitlines()[0]
    seq = tmp_path / "seq.jsonl"
    seq.write_text((scene + "\n") * 5)
    run_ok("consistency", seq, "--format", "json")
    doc = json.loads(capsys.readouterr().out)
    assert doc["temporal_changes"] == 0.0 and doc["semantic_conflicts"] == 0.0


def test_malformed_line_reports_line_number(tmp_path, dataset, capsys):
    bad = tmp_path / "bad.jsonl"
    lines = (dataset / "params.jsonl").read_text().splitlines()[:2]
    bad.write_text("\n".join(lines + ["{oops"]) + "\n")
    assert main(["render", "--params", str(bad), "--out", str(tmp_path / "r")]) == 1
    assert "line 3" in capsys.readouterr().err


def test_bad_arguments_exit_nonzero(tmp_path, capsys):
    assert main(["generate", "--n", "0", "--seed", "1", "--out", str(tmp_path)]) == 1
    cfg = tmp_path / "c.toml"
    cfg.write_text("[crf]\nbogus = 1\n")
    assert main(["generate", "--n", "1", "--seed", "1", "--out", str(tmp_path),
                 "--config", str(cfg)]) == 1
    assert main(["replay", str(tmp_path / "missing.json")]) == 1


def test_config_file_changes_prior(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[prior]\nside_road_left = 1.0\n")
    run_ok("generate", "--n", 20, "--seed", 1, "--out", tmp_path / "g", "--config", cfg)
    assert all(s.get("side_road_left") for s in read_scenes(tmp_path / "g" / "params.jsonl"))
    manifest = json.loads((tmp_path / "g" / "manifest.json").read_text())
    assert manifest["config"]["prior"]["side_road_left"] == 1.0


def test_every_command_replays_byte_identically(tmp_path, cooc_file):
    for manifest in command_manifests(tmp_path, cooc_file):
        doc = json.loads(manifest.read_text())
        before = {p: Path(p).read_bytes() for p in doc["outputs"]}
        assert doc["outputs"] and doc["config"] and "version" in doc
        assert main(["replay", str(manifest)]) == 0
        assert {p: Path(p).read_bytes() for p in doc["outputs"]} == before


def test_replay_detects_tampering(tmp_path, dataset):
    run_ok("generate", "--n", 3, "--seed", 9, "--out", tmp_path)
    manifest = tmp_path / "manifest.json"
    doc = json.loads(manifest.read_text())
    doc["args"]["seed"] = 10
    manifest.write_text(json.dumps(doc))
    assert main(["replay", str(manifest)]) == 1
