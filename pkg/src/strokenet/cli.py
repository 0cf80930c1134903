"""Command-line front door: generate, train, eval, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every artifact-producing command writes a single run_manifest.json into its
output directory, last, so a failed run never leaves a manifest behind. The
manifest carries wall-clock timestamps; all other artifacts are byte-identical
across reruns of the same invocation.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, ImageDraw

from .config import AppConfig, load_config
from .synth import generate_dataset
from .train import (ABLATIONS, CheckpointMismatch, LoadedSample, TrainConfig,
                    TrainingDiverged, checkpoint_digest, evaluate_model,
                    load_checkpoint, load_samples, run_inference, train)


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


def _fmt6(x) -> str:
    return f"{float(x):.6f}"


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, command: str, config: str,
                   seed: Optional[int], started: str, **extra) -> Path:
    manifest = {"command": command, "config": config, "seed": seed,
                "git": _git_describe(), "out_dir": str(out_dir),
                "started": started, "finished": _utcnow()}
    manifest.update(extra)
    path = Path(out_dir) / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_app(config_arg: str) -> AppConfig:
    try:
        return load_config(config_arg)
    except (FileNotFoundError, ValueError, configparser.Error) as exc:
        raise UsageError(str(exc)) from exc


def _load_data(data_arg: str) -> List[LoadedSample]:
    try:
        samples = load_samples(data_arg)
    except (FileNotFoundError, NotADirectoryError) as exc:
        raise UsageError(str(exc)) from exc
    if not samples:
        raise UsageError(f"no samples found under {data_arg}")
    return samples


def _write_metrics(path: Path, metrics: dict) -> None:
    # fixed 6-decimal floats so reruns are byte-identical
    path.write_text(
        "{\n"
        f'  "precision": {_fmt6(metrics["precision"])},\n'
        f'  "recall": {_fmt6(metrics["recall"])},\n'
        f'  "hmean": {_fmt6(metrics["hmean"])}\n'
        "}\n")


def _write_detections(path: Path, detections: List[dict]) -> None:
    lines = ["["]
    for i, rec in enumerate(detections):
        dets = []
        for d in rec["detections"]:
            pts = ", ".join(f"[{_fmt6(x)}, {_fmt6(y)}]"
                            for x, y in d["polygon"])
            dets.append(f'{{"polygon": [{pts}], "score": {_fmt6(d["score"])}}}')
        sep = "," if i < len(detections) - 1 else ""
        lines.append(f'  {{"image": {json.dumps(rec["image"])}, '
                     f'"detections": [{", ".join(dets)}]}}{sep}')
    lines.append("]")
    path.write_text("\n".join(lines) + "\n")


def _write_overlays(dir_path: Path, model, samples: Sequence[LoadedSample],
                    cfg: TrainConfig) -> int:
    """Predicted polygons over the image next to the stroke-map panel."""
    dir_path.mkdir(parents=True, exist_ok=True)
    for s in samples:
        instances, stroke = run_inference(model, s.image, cfg)
        img = Image.fromarray(s.image).convert("RGB")
        draw = ImageDraw.Draw(img)
        for inst in instances:
            pts = [(float(x), float(y)) for x, y in inst.polygon]
            draw.line(pts + [pts[0]], fill=(255, 40, 40), width=1)
        panel = Image.fromarray(
            (np.clip(stroke, 0.0, 1.0) * 255).astype(np.uint8)).convert("RGB")
        combo = Image.new("RGB", (img.width + panel.width,
                                  max(img.height, panel.height)), (0, 0, 0))
        combo.paste(img, (0, 0))
        combo.paste(panel, (img.width, 0))
        combo.save(dir_path / (Path(s.path).stem + "_overlay.png"))
    return len(samples)


def _write_ablation_figure(path: Path, rows: List[Tuple[str, dict]]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    labels = [name for name, _ in rows]
    values = [m["hmean"] for _, m in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.0))
    ax.bar(labels, values, color="#4878a8")
    ax.set_ylabel("hmean")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("ablation sweep")
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def cmd_generate(args) -> int:
    started = _utcnow()
    app = _load_app(args.config)
    if args.count < 1:
        raise UsageError("--count must be positive")
    out = Path(args.out)
    generate_dataset([app.generate], args.count, out, base_seed=args.seed)
    write_manifest(out, "generate", app.source, args.seed, started,
                   count=args.count)
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_train(args) -> int:
    started = _utcnow()
    app = _load_app(args.config)
    samples = _load_data(args.data)
    out = Path(args.out)
    result = train(samples, app.train, ablation=args.ablation, out_dir=out)
    digest = checkpoint_digest(result.checkpoint)
    write_manifest(out, "train", app.source, app.train.seed, started,
                   ablation=args.ablation, steps=len(result.log),
                   final_loss=_fmt6(result.log[-1]["total"]),
                   checkpoint_digest=digest)
    print(f"checkpoint {result.checkpoint_path} digest {digest}")
    return 0


def cmd_eval(args) -> int:
    started = _utcnow()
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    model, cfg, _ = load_checkpoint(ckpt_path)
    samples = _load_data(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics, detections = evaluate_model(model, samples, cfg)
    _write_metrics(out / "metrics.json", metrics)
    _write_detections(out / "detections.json", detections)
    n_overlays = _write_overlays(out / "overlays", model, samples[:8], cfg)
    write_manifest(out, "eval", str(ckpt_path), None, started,
                   data=str(args.data), images=len(samples),
                   overlays=n_overlays, matched=metrics["matched"],
                   predictions=metrics["predictions"],
                   ground_truth=metrics["ground_truth"])
    print(f"precision={_fmt6(metrics['precision'])} "
          f"recall={_fmt6(metrics['recall'])} "
          f"hmean={_fmt6(metrics['hmean'])}")
    return 0


def cmd_ablate(args) -> int:
    started = _utcnow()
    app = _load_app("easy")
    samples = _load_data(args.data)
    if len(samples) < 2:
        raise UsageError("ablation sweep needs at least 2 samples")
    n_eval = max(1, len(samples) // 6)
    train_s, eval_s = samples[:-n_eval], samples[-n_eval:]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows: List[Tuple[str, dict]] = []
    for ablation in ABLATIONS:
        result = train(train_s, app.train, ablation=ablation,
                       out_dir=out / ablation)
        model, cfg, _ = load_checkpoint(result.checkpoint_path)
        metrics, _ = evaluate_model(model, eval_s, cfg)
        rows.append((ablation, metrics))
        print(f"{ablation}: hmean={_fmt6(metrics['hmean'])}")
    csv_lines = ["ablation,recall,precision,hmean"]
    for name, m in rows:
        csv_lines.append(f"{name},{_fmt6(m['recall'])},"
                         f"{_fmt6(m['precision'])},{_fmt6(m['hmean'])}")
    (out / "ablation_results.csv").write_text("\n".join(csv_lines) + "\n")
    _write_ablation_figure(out / "ablation_results.png", rows)
    write_manifest(out, "ablate", app.source, app.train.seed, started,
                   rows=len(rows), train_images=len(train_s),
                   eval_images=n_eval)
    by_name = dict(rows)
    print(f"full hmean={_fmt6(by_name['full']['hmean'])} vs "
          f"tlp hmean={_fmt6(by_name['tlp']['hmean'])}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strokenet",
        description="stroke-assisted scene-text detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic dataset")
    g.add_argument("--config", required=True,
                   help="preset name (easy/desk/paper) or INI path")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a detector on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--ablation", choices=list(ABLATIONS), default="full")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run inference and score a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run the four-row ablation sweep")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return parser


def _apply_thread_cap() -> None:
    raw = os.environ.get("STROKENET_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(
            f"STROKENET_THREADS must be a positive integer, got {raw!r}")
    torch.set_num_threads(n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except CheckpointMismatch as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
