"""Shared CLI drivers for the command-line and acceptance tests."""

from pathlib import Path

from roadlayout.cli import main


def run_ok(*argv):
    assert main([str(a) for a in argv]) == 0


def command_manifests(tmp: Path, cooc_file: Path) -> list[Path]:
    """Run every file-writing command once; return their manifests."""
    gen = tmp / "gen"
    run_ok("generate", "--n", 5, "--seed", 11, "--out", gen, "--render")
    params = gen / "params.jsonl"
    run_ok("render", "--params", params, "--out", tmp / "raw", "--raw")
    run_ok("corrupt", "--params", params, "--seed", 2, "--out", tmp / "pred.jsonl")
    run_ok("corrupt", "--params", params, "--seed", 2, "--out", tmp / "seqs", "--frames", 3)
    run_ok("cooc", "--n", 500, "--seed", 1, "--out", tmp / "cooc.json")
    run_ok("infer", "--pred", tmp / "pred.jsonl", "--out", tmp / "single.jsonl",
           "--cooc", cooc_file)
    run_ok("infer", "--pred", tmp / "seqs" / "seq_000000.jsonl", "--out", tmp / "temp.jsonl",
           "--mode", "temporal", "--cooc", cooc_file)
    run_ok("eval", "--pred", tmp / "single.jsonl", "--gt", params, "--out", tmp / "eval.json")
    run_ok("consistency", tmp / "temp.jsonl", "--out", tmp / "cons.json")
    return [
        gen / "manifest.json",
        tmp / "raw" / "manifest.json",
        tmp / "pred.jsonl.manifest.json",
        tmp / "seqs" / "manifest.json",
        tmp / "cooc.json.manifest.json",
        tmp / "single.jsonl.manifest.json",
        tmp / "temp.jsonl.manifest.json",
        tmp / "eval.json.manifest.json",
        tmp / "cons.json.manifest.json",
    ]
