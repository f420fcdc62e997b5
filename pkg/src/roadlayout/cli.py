"""Command-line entry point: ``roadlayout <command> ...``.

Every command that writes files also writes a run manifest (arguments,
resolved configuration, input and output hashes). ``roadlayout replay``
re-runs a command from its manifest and checks the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import functools
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Callable, Sequence

from roadlayout import __version__
from roadlayout.crf import (
    EnergyWeights,
    Labeling,
    build_energy,
    read_predictions,
    write_predictions,
)
from roadlayout.errors import ConfigError, ParseError, RoadLayoutError
from roadlayout.inference.minimize import DEFAULT_RESTARTS, optimize_frame, optimize_sequence
from roadlayout.losses import annotation_mask
from roadlayout.metrics import consistency, evaluate
from roadlayout.noisy_oracle import NoiseConfig, corrupt, corrupt_sequence
from roadlayout.probability import bin_specs
from roadlayout.renderer import RenderConfig, render, to_raw, write_png
from roadlayout.rng import split
from roadlayout.sampler import (
    CONFIG_SECTIONS,
    CooccurrenceTables,
    PriorConfig,
    estimate_cooccurrence,
    sample_batch,
    sample_scene,
)
from roadlayout.schema import read_scenes, write_scenes

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

THREADS_ENV = "ROADLAYOUT_THREADS"
MANIFEST_NAME = "manifest.json"
DEFAULT_COOC_SAMPLES = 10_000
DEFAULT_COOC_SEED = 0

CRF_KEYS = {"penalty", "lambda_disc", "lambda_cont", "truncation", "cooccurrence"}
RUN_KEYS = {"restarts", "cooc_samples", "cooc_seed"}


# -- configuration ------------------------------------------------------------


def load_config(path) -> dict:
    """Read a TOML run config with optional ``prior``, ``noise``, ``crf``, ``render`` tables."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    extra = sorted(set(doc) - CONFIG_SECTIONS)
    if extra:
        raise ConfigError(f"unexpected config sections: {', '.join(extra)}")
    return doc


def resolve_config(args, doc: dict) -> dict:
    """Fully expanded configuration snapshot used by a command."""
    prior = PriorConfig.from_mapping(doc.get("prior", {}))
    noise_doc = dict(doc.get("noise", {}))
    for key in ("epsilon", "jitter", "temperature"):
        if getattr(args, key, None) is not None:
            noise_doc[key] = getattr(args, key)
    noise_doc.setdefault("seed", 0)
    noise = NoiseConfig.from_mapping(noise_doc)
    crf = dict(doc.get("crf", {}))
    unknown = set(crf) - CRF_KEYS - RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown crf keys: {', '.join(sorted(unknown))}")
    weights = EnergyWeights(**{k: v for k, v in crf.items() if k in CRF_KEYS})
    render_doc = dict(doc.get("render", {}))
    try:
        render_cfg = RenderConfig(**render_doc)
    except TypeError as exc:
        raise ConfigError(f"bad render config: {exc}") from exc
    return {
        "prior": prior.to_dict(),
        "noise": noise.to_dict(),
        "crf": {
            **{k: getattr(weights, k) for k in sorted(CRF_KEYS)},
            "restarts": int(crf.get("restarts", DEFAULT_RESTARTS)),
            "cooc_samples": int(crf.get("cooc_samples", DEFAULT_COOC_SAMPLES)),
            "cooc_seed": int(crf.get("cooc_seed", DEFAULT_COOC_SEED)),
        },
        "render": {
            "height": render_cfg.height,
            "width": render_cfg.width,
            "meters_per_pixel": render_cfg.meters_per_pixel,
        },
    }


def _prior(cfg) -> PriorConfig:
    return PriorConfig.from_mapping(cfg["prior"])


def _weights(cfg) -> EnergyWeights:
    return EnergyWeights(**{k: cfg["crf"][k] for k in CRF_KEYS})


def _render_cfg(cfg) -> RenderConfig:
    return RenderConfig(**cfg["render"])


# -- helpers ------------------------------------------------------------------


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Map in input order, over up to ``ROADLAYOUT_THREADS`` worker processes."""
    workers = min(_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


# -- commands -----------------------------------------------------------------
# each returns (inputs, outputs, manifest path or None)


def _render_one(job):
    scene, path, cfg, raw = job
    view = render(scene, cfg)
    if raw:
        Path(path).write_bytes(to_raw(view))
    else:
        write_png(view, path)
    return path


def _render_all(scenes, out_dir: Path, cfg: RenderConfig, raw: bool) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".bevr" if raw else ".png"
    jobs = [(s, out_dir / f"{i:06d}{ext}", cfg, raw) for i, s in enumerate(scenes)]
    return [Path(p) for p in parallel_map(_render_one, jobs)]


def cmd_generate(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prior = _prior(cfg)
    seeds = [split(args.seed, i) for i in range(args.n)]
    scenes = parallel_map(functools.partial(sample_scene, prior), seeds)
    params = out / "params.jsonl"
    write_scenes(params, scenes)
    outputs = [params]
    if args.render:
        outputs += _render_all(scenes, out / "renders", _render_cfg(cfg), args.raw)
    return [], outputs, out / MANIFEST_NAME


def cmd_render(args, cfg):
    scenes = read_scenes(args.params)
    out = Path(args.out)
    outputs = _render_all(scenes, out, _render_cfg(cfg), args.raw)
    return [Path(args.params)], outputs, out / MANIFEST_NAME


def cmd_corrupt(args, cfg):
    scenes = read_scenes(args.params)
    noise = NoiseConfig.from_mapping({**cfg["noise"], "seed": args.seed})
    out = Path(args.out)
    if args.frames == 1:
        preds = [corrupt(s, noise, split(args.seed, i)) for i, s in enumerate(scenes)]
        out.parent.mkdir(parents=True, exist_ok=True)
        write_predictions(out, preds)
        return [Path(args.params)], [out], _sidecar(out, ".manifest.json")
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i, s in enumerate(scenes):
        path = out / f"seq_{i:06d}.jsonl"
        write_predictions(path, corrupt_sequence(s, args.frames, noise, split(args.seed, i)))
        outputs.append(path)
    return [Path(args.params)], outputs, out / MANIFEST_NAME


def _cooccurrence(args, cfg) -> tuple[CooccurrenceTables, list[Path]]:
    if args.cooc:
        try:
            with open(args.cooc, encoding="utf-8") as fh:
                return CooccurrenceTables.from_dict(json.load(fh)), [Path(args.cooc)]
        except (json.JSONDecodeError, KeyError) as exc:
            raise ParseError(f"bad co-occurrence file {args.cooc}: {exc}") from exc
    c = cfg["crf"]
    batch = sample_batch(_prior(cfg), c["cooc_seed"], c["cooc_samples"])
    return estimate_cooccurrence(batch), []


def cmd_cooc(args, cfg):
    batch = sample_batch(_prior(cfg), args.seed, args.n)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(out, estimate_cooccurrence(batch).to_dict())
    return [], [out], _sidecar(out, ".manifest.json")


def _infer_frame(job):
    pred, cooc, weights, restarts, seed = job
    r = optimize_frame(build_energy(pred, cooc, weights=weights), restarts=restarts, seed=seed)
    return r.labeling.values, r.to_dict()


def cmd_infer(args, cfg):
    preds = read_predictions(args.pred)
    if not preds:
        raise ParseError(f"{args.pred} contains no predictions")
    cooc, cooc_inputs = _cooccurrence(args, cfg)
    weights = _weights(cfg)
    restarts = cfg["crf"]["restarts"]
    specs = bin_specs()
    if args.mode == "single":
        jobs = [(p, cooc, weights, restarts, args.seed) for p in preds]
        results = parallel_map(_infer_frame, jobs)
        labelings = [Labeling(v) for v, _ in results]
        diagnostics = {"mode": "single", "frames": [d for _, d in results]}
    else:
        model = build_energy(preds, cooc, weights=weights)
        r = optimize_sequence(model, restarts=restarts, seed=args.seed)
        labelings = list(r.labelings)
        diagnostics = {"mode": "temporal", "sequence": r.to_dict(), "frames": len(preds)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scenes(out, [lab.to_params(specs, p) for lab, p in zip(labelings, preds)])
    diag = _sidecar(out, ".diagnostics.json")
    _dump_json(diag, diagnostics)
    return [Path(args.pred)] + cooc_inputs, [out, diag], _sidecar(out, ".manifest.json")


def _read_masks(path, n: int):
    if path is None:
        return None
    masks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                masks.append(annotation_mask(json.loads(line)))
            except (json.JSONDecodeError, RoadLayoutError, TypeError) as exc:
                raise ParseError(f"bad mask record: {exc}", line=lineno) from exc
    if len(masks) == 1:
        return masks * n
    if len(masks) != n:
        raise ParseError(f"mask file has {len(masks)} records for {n} samples")
    return masks


def _emit_report(report, args):
    outputs = []
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _dump_json(out, report.to_dict())
        outputs.append(out)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.to_text())
    manifest = _sidecar(Path(args.out), ".manifest.json") if args.out else None
    return outputs, manifest


def cmd_eval(args, cfg):
    preds = read_scenes(args.pred)
    gts = read_scenes(args.gt)
    if len(preds) != len(gts):
        raise ParseError(f"{len(preds)} predictions but {len(gts)} ground-truth scenes")
    masks = _read_masks(args.mask, len(preds))
    report = evaluate(preds, gts, masks, _render_cfg(cfg))
    outputs, manifest = _emit_report(report, args)
    inputs = [Path(args.pred), Path(args.gt)] + ([Path(args.mask)] if args.mask else [])
    return inputs, outputs, manifest


def cmd_consistency(args, cfg):
    sequences = [read_scenes(p) for p in args.sequences]
    report = consistency(sequences)
    outputs, manifest = _emit_report(report, args)
    return [Path(p) for p in args.sequences], outputs, manifest


COMMANDS = {
    "generate": cmd_generate,
    "render": cmd_render,
    "corrupt": cmd_corrupt,
    "cooc": cmd_cooc,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "consistency": cmd_consistency,
}


# -- manifests ----------------------------------------------------------------


def run(args, snapshot: dict | None = None) -> dict | None:
    """Execute a parsed command; returns the manifest written (if any)."""
    cfg = snapshot if snapshot is not None else resolve_config(
        args, load_config(getattr(args, "config", None))
    )
    start = time.perf_counter()
    inputs, outputs, manifest_path = COMMANDS[args.command](args, cfg)
    duration = time.perf_counter() - start
    if manifest_path is None:
        return None
    manifest = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "duration_s": round(duration, 6),
    }
    _dump_json(manifest_path, manifest)
    return manifest


def cmd_replay(args) -> int:
    try:
        with open(args.manifest, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {args.manifest}: {exc}") from exc
    if manifest.get("command") not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {manifest.get('command')!r}")
    replay_args = argparse.Namespace(**manifest["args"])
    run(replay_args, snapshot=manifest["config"])
    mismatched = []
    for path, digest in manifest["outputs"].items():
        if not Path(path).exists() or _sha256(path) != digest:
            mismatched.append(path)
    if mismatched:
        for path in mismatched:
            print(f"differs: {path}", file=sys.stderr)
        return 1
    print(f"reproduced {len(manifest['outputs'])} output(s) of {manifest['command']}")
    return 0


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadlayout", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="TOML run config (prior/noise/crf/render tables)")
        return p

    p = with_config(sub.add_parser("generate", help="sample scenes from the prior"))
    p.add_argument("--n", type=int, required=True, help="number of scenes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--render", action="store_true", help="also write one render per scene")
    p.add_argument("--raw", action="store_true", help="write BEVR raw renders instead of PNG")

    p = with_config(sub.add_parser("render", help="render scene parameters"))
    p.add_argument("--params", required=True, help="scene JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--raw", action="store_true", help="write BEVR raw renders instead of PNG")

    p = with_config(sub.add_parser("corrupt", help="noisy predictions from ground truth"))
    p.add_argument("--params", required=True, help="ground-truth scene JSONL")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="prediction JSONL, or a directory when --frames > 1")
    p.add_argument("--frames", type=int, default=1, help="frames per static-scene sequence")
    p.add_argument("--epsilon", type=float, help="flip rate (overrides the config)")
    p.add_argument("--jitter", type=float, help="value noise as a fraction of range")
    p.add_argument("--temperature", type=float, help="lane-count softmax temperature")

    p = with_config(sub.add_parser("cooc", help="estimate binary co-occurrence tables"))
    p.add_argument("--n", type=int, default=DEFAULT_COOC_SAMPLES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output JSON")

    p = with_config(sub.add_parser("infer", help="CRF inference on prediction JSONL"))
    p.add_argument("--pred", required=True, help="prediction JSONL")
    p.add_argument("--out", required=True, help="labeled scene JSONL")
    p.add_argument("--mode", choices=("single", "temporal"), default="single")
    p.add_argument("--cooc", help="co-occurrence JSON (default: estimated from the prior)")
    p.add_argument("--seed", type=int, default=0, help="seed for restart perturbations")

    p = with_config(sub.add_parser("eval", help="accuracy, MSE, IoU and conflicts"))
    p.add_argument("--pred", required=True, help="predicted scene JSONL")
    p.add_argument("--gt", required=True, help="ground-truth scene JSONL")
    p.add_argument("--mask", help="annotation mask JSONL (one record, or one per sample)")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--format", choices=("json", "text"), default="text")

    p = with_config(sub.add_parser("consistency", help="semantic and temporal consistency"))
    p.add_argument("sequences", nargs="+", help="scene JSONL files, one sequence each")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--format", choices=("json", "text"), default="text")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    return parser


def _check(args) -> None:
    for name in ("n", "frames"):
        if getattr(args, name, 1) < 1:
            raise ConfigError(f"--{name} must be at least 1")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        _check(args)
        run(args)
        return 0
    except (RoadLayoutError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
