"""Desk-scale training, checkpointing and end-to-end inference.

The model is assembled per ablation: TLP is backbone plus text head, SLP adds
the stroke branch, TG* adds text-level graph reasoning, FULL adds stroke-level
aggregation on top. Losses are evaluated in float64 (the model itself runs
float32) so logged components sum to the logged total.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image
from skimage.measure import label as cc_label
from torch import nn

from .geometry import GeometryMaps, TextAnnotation, make_geometry_maps
from .graphs import HeteroGraph, attach_stroke_nodes, build_local_graph
from .grouping import TextInstance, evaluate, group_bfs, order_min_path, \
    reconstruct_boundary
from .hrgn import Hrgn, loss_linkage
from .losses import LossWeights, loss_sapn, loss_stroke
from .proposals import Proposal, boundary_filter, extract_text_proposals, nms, \
    shrink_to_stroke_proposals
from .sapn import Backbone, FeatureMap, HeadOutput, StrokeCuesFilter, \
    TextFeatureDistiller, TextHead, head_to_geometry_maps
from .synth import load_dataset

log = logging.getLogger(__name__)

ABLATIONS = ("tlp", "tlp_slp", "tlp_tg", "full")
CHECKPOINT_FORMAT = "strokenet-checkpoint-v1"


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the last good state."""

    def __init__(self, message: str, checkpoint: dict,
                 checkpoint_path: Optional[Path] = None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.checkpoint_path = checkpoint_path


class CheckpointMismatch(RuntimeError):
    pass


@dataclass
class TrainConfig:
    input_size: int = 128
    batch_size: int = 8
    steps: int = 200
    lr: float = 1e-4
    phase2_steps: int = 0          # disabled by default at desk scale
    phase2_lr: float = 0.03
    phase2_decay: float = 0.5
    phase2_decay_every: int = 100
    flip_prob: float = 0.5
    seed: int = 0
    shrink_ratio: float = 0.3
    end_trim: float = 0.5
    grad_clip: float = 5.0
    lambda_link: float = 1.0
    score_thresh: float = 0.5
    link_thresh: float = 0.5
    nms_iou: float = 0.3
    stroke_shrink: float = 0.5
    stroke_keep: float = 0.5
    eval_iou: float = 0.5
    max_stroke_crops: int = 4
    max_stroke_regions: int = 8
    max_pivots: int = 16
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("input_size", "batch_size", "steps", "phase2_decay_every",
                     "max_stroke_crops", "max_stroke_regions", "max_pivots"):
            if getattr(self, name) <= 0 and not (name == "steps" and self.steps == 0):
                raise ValueError(f"{name} must be positive")
        if self.phase2_steps < 0:
            raise ValueError("phase2_steps must be >= 0")
        for name in ("lr", "phase2_lr", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.phase2_decay < 1.0:
            raise ValueError("phase2_decay must lie in (0, 1)")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        for name in ("score_thresh", "link_thresh", "nms_iou", "stroke_keep",
                     "eval_iou"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0.0 < self.stroke_shrink < 1.0:
            raise ValueError("stroke_shrink must lie in (0, 1)")
        if not 0.0 <= self.shrink_ratio < 0.5:
            raise ValueError("shrink_ratio must lie in [0, 0.5)")
        if not 0.0 <= self.end_trim <= 1.0:
            raise ValueError("end_trim must lie in [0, 1]")
        if self.lambda_link < 0:
            raise ValueError("lambda_link must be non-negative")
        if self.input_size % 4 != 0:
            raise ValueError("input_size must be divisible by the stride 4")
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)


class StrokeNetModel(nn.Module):
    """Ablation-gated container; absent sub-systems own no parameters."""

    def __init__(self, ablation: str = "full", channels: int = 32,
                 content_dim: int = 32, grid: int = 4):
        super().__init__()
        if ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablation!r}, "
                             f"expected one of {ABLATIONS}")
        self.ablation = ablation
        self.channels = channels
        self.backbone = Backbone(out_channels=channels)
        self.head = TextHead(in_channels=channels)
        if self.has_stroke:
            self.tfd = TextFeatureDistiller(in_channels=channels, width=channels)
            self.scf = StrokeCuesFilter(cue_channels=channels)
        if self.has_graphs:
            self.hrgn = Hrgn(feature_channels=channels, content_dim=content_dim,
                             grid=grid)

    @property
    def has_stroke(self) -> bool:
        return self.ablation in ("tlp_slp", "full")

    @property
    def has_graphs(self) -> bool:
        return self.ablation in ("tlp_tg", "full")

    @property
    def graph_strokes(self) -> bool:
        # stroke-level aggregation requires both the stroke branch and graphs
        return self.ablation == "full"

    def forward(self, images: torch.Tensor) -> Tuple[HeadOutput, FeatureMap]:
        features = self.backbone(images)
        return self.head(features), features

    def stroke_crop(self, features: FeatureMap, image: torch.Tensor,
                    ota: Tuple[int, int, int, int]):
        rough = self.tfd(features, ota)
        x0, y0 = int(round(ota[0])), int(round(ota[1]))
        img = image if image.dim() == 3 else image[0]
        h, w = rough.planes.shape[-2:]
        rgb = img[:, y0:y0 + h, x0:x0 + w]
        return self.scf(rough, rgb)

    def stroke_map_full(self, features: FeatureMap, image: torch.Tensor,
                        otas: Sequence[Tuple[int, int, int, int]]) -> torch.Tensor:
        img = image if image.dim() == 3 else image[0]
        h, w = img.shape[-2:]
        full = torch.zeros(h, w, dtype=img.dtype, device=img.device)
        for ota in otas:
            crop = self.stroke_crop(features, image, ota)
            x0, y0 = int(round(ota[0])), int(round(ota[1]))
            ch, cw = crop.values.shape[-2:]
            y1, x1 = min(y0 + ch, h), min(x0 + cw, w)
            region = crop.values[:y1 - y0, :x1 - x0]
            full[y0:y1, x0:x1] = torch.maximum(full[y0:y1, x0:x1], region)
        return full


def build_model(ablation: str, seed: Optional[int] = None) -> StrokeNetModel:
    if seed is not None:
        torch.manual_seed(seed)
    return StrokeNetModel(ablation)


def arch_payload(cfg: TrainConfig, ablation: str) -> dict:
    return {"ablation": ablation, "channels": 32, "content_dim": 32,
            "grid": 4, "input_size": cfg.input_size}


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_checkpoint(model: StrokeNetModel, cfg: TrainConfig, step: int) -> dict:
    payload = arch_payload(cfg, model.ablation)
    return {
        "format": CHECKPOINT_FORMAT,
        "ablation": model.ablation,
        "arch": payload,
        "config_hash": config_hash(payload),
        "train_config": dataclasses.asdict(cfg),
        "loss_weights": dataclasses.asdict(cfg.loss_weights),
        "step": step,
        "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
    }


def save_checkpoint(ckpt: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, path)
    return path


def load_checkpoint(path) -> Tuple[StrokeNetModel, TrainConfig, dict]:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatch(
            f"unrecognized checkpoint format {ckpt.get('format')!r}")
    expected = config_hash(ckpt["arch"])
    stored = ckpt["config_hash"]
    if stored != expected:
        raise CheckpointMismatch(
            f"checkpoint config hash {stored} does not match the hash of its "
            f"architecture payload {expected}")
    cfg = TrainConfig(**ckpt["train_config"])
    model = StrokeNetModel(ckpt["ablation"], channels=ckpt["arch"]["channels"],
                           content_dim=ckpt["arch"]["content_dim"],
                           grid=ckpt["arch"]["grid"])
    model.load_state_dict(ckpt["state"])
    model.eval()
    return model, cfg, ckpt


def checkpoint_digest(ckpt: dict) -> str:
    """Content hash over parameter names, shapes and bytes plus metadata."""
    h = hashlib.sha256()
    meta = {"ablation": ckpt["ablation"], "config_hash": ckpt["config_hash"],
            "step": ckpt["step"]}
    h.update(json.dumps(meta, sort_keys=True).encode())
    for name in sorted(ckpt["state"]):
        t = ckpt["state"][name]
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class LoadedSample:
    image: np.ndarray                 # (H, W, 3) uint8
    stroke: np.ndarray                # (H, W) float64 in [0, 1]
    annotations: List[TextAnnotation]
    path: str


def load_samples(root) -> List[LoadedSample]:
    root = Path(root)
    samples = []
    for rec in load_dataset(root):
        image = np.asarray(Image.open(root / rec["image"]).convert("RGB"))
        mask = np.asarray(Image.open(root / rec["mask"])) > 127
        anns = [TextAnnotation(np.asarray(inst["polygon"], dtype=np.float64),
                               inst["word"])
                for inst in rec["instances"]]
        samples.append(LoadedSample(image=image, stroke=mask.astype(np.float64),
                                    annotations=anns, path=rec["image"]))
    return samples


def flip_annotation(polygon: np.ndarray, width: float) -> np.ndarray:
    """Mirror a polygon in x, keeping the reading direction canonical.

    Each half is reversed so the first half still traces the top edge in
    writing order after the mirror.
    """
    k = len(polygon) // 2
    out = np.vstack([polygon[:k][::-1], polygon[k:][::-1]]).astype(np.float64)
    out[:, 0] = width - out[:, 0]
    return out


def flip_sample(s: LoadedSample) -> LoadedSample:
    w = s.image.shape[1]
    anns = [TextAnnotation(flip_annotation(a.polygon, w), a.word)
            for a in s.annotations]
    return LoadedSample(image=np.ascontiguousarray(s.image[:, ::-1]),
                        stroke=np.ascontiguousarray(s.stroke[:, ::-1]),
                        annotations=anns, path=s.path)


def to_input_tensor(image: np.ndarray) -> torch.Tensor:
    arr = np.ascontiguousarray(image, dtype=np.float32) / 255.0 - 0.5
    return torch.from_numpy(arr).permute(2, 0, 1)


def geometry_targets(annotations: Sequence[TextAnnotation], input_size: int,
                     stride: int = 4, shrink_ratio: float = 0.3,
                     end_trim: float = 0.5) -> GeometryMaps:
    """Ground-truth maps on the stride-4 grid; heights in image pixels.

    A small end_trim keeps a nonzero center band on narrow instances
    (single characters) whose length is below their height.
    """
    fside = input_size // stride
    scaled = [TextAnnotation(a.polygon / stride, a.word) for a in annotations]
    maps = make_geometry_maps(scaled, (fside, fside), shrink_ratio=shrink_ratio,
                              end_trim=end_trim)
    return GeometryMaps(ta=maps.ta, tca=maps.tca,
                        h1=maps.h1 * stride, h2=maps.h2 * stride,
                        sin_theta=maps.sin_theta, cos_theta=maps.cos_theta,
                        height=maps.height * stride, valid_mask=maps.valid_mask,
                        instance_ids=maps.instance_ids)


def _scale_proposal(p: Proposal, s: float) -> Proposal:
    return replace(p, center=(p.center[0] * s, p.center[1] * s),
                   h1=p.h1 * s, h2=p.h2 * s, width=p.width * s)


def _teacher_proposals(gt_maps: GeometryMaps,
                       stride: int) -> Tuple[List[Proposal], List[int]]:
    """Proposals re-extracted from GT maps plus per-proposal instance labels.

    Heights inside gt_maps are already in image pixels; the extractor reads
    the feature-grid TA/TCA planes, so the resulting centers/widths get
    scaled back to image coordinates while heights stay as stored.
    """
    ta = gt_maps.ta.astype(np.float64)
    tca = gt_maps.tca.astype(np.float64)
    grid_maps = GeometryMaps(ta=ta, tca=tca, h1=gt_maps.h1 / stride,
                             h2=gt_maps.h2 / stride, sin_theta=gt_maps.sin_theta,
                             cos_theta=gt_maps.cos_theta,
                             height=gt_maps.height / stride,
                             valid_mask=gt_maps.ta, instance_ids=gt_maps.instance_ids)
    props = extract_text_proposals(grid_maps)
    labels = cc_label((tca >= 0.5) & (ta >= 0.5), connectivity=2)
    comp_instance: Dict[int, int] = {}
    for comp_id in range(1, labels.max() + 1):
        ids = gt_maps.instance_ids[labels == comp_id]
        ids = ids[ids > 0]
        comp_instance[comp_id] = int(np.bincount(ids).argmax()) if ids.size else 0
    inst_labels = [comp_instance.get(p.component, 0) for p in props]
    scaled = [_scale_proposal(p, stride) for p in props]
    return scaled, inst_labels


def _instance_otas(annotations: Sequence[TextAnnotation], width: int,
                   height: int, limit: int) -> List[Tuple[int, int, int, int]]:
    otas = []
    for ann in annotations[:limit]:
        x0 = max(int(math.floor(ann.polygon[:, 0].min())), 0)
        y0 = max(int(math.floor(ann.polygon[:, 1].min())), 0)
        x1 = min(int(math.ceil(ann.polygon[:, 0].max())), width)
        y1 = min(int(math.ceil(ann.polygon[:, 1].max())), height)
        if x1 - x0 >= 2 and y1 - y0 >= 2:
            otas.append((x0, y0, x1, y1))
    return otas


def _stroke_crop_losses(model: StrokeNetModel, feat_single: FeatureMap,
                        image: torch.Tensor, sample: LoadedSample,
                        cfg: TrainConfig, w: LossWeights):
    """Per-instance stroke-map losses against the exact generator mask."""
    h_img, w_img = sample.stroke.shape
    mses, ssims = [], []
    for ota in _instance_otas(sample.annotations, w_img, h_img,
                              cfg.max_stroke_crops):
        pred = model.stroke_crop(feat_single, image, ota).values.double()
        x0, y0, x1, y1 = ota
        gt = torch.from_numpy(sample.stroke[y0:y1, x0:x1])
        _, parts = loss_stroke(pred, gt, w)
        mses.append(parts["mse"])
        ssims.append(parts["ssim"])
    if not mses:
        zero = feat_single.planes.sum().double() * 0.0
        return zero, zero
    return torch.stack(mses).mean(), torch.stack(ssims).mean()


def _linkage_loss(model: StrokeNetModel, feat_single: FeatureMap,
                  sample: LoadedSample, gt_maps: GeometryMaps,
                  cfg: TrainConfig) -> torch.Tensor:
    """Teacher-forced linkage loss over local graphs of GT proposals."""
    props, inst_labels = _teacher_proposals(gt_maps, stride=4)
    zero = feat_single.planes.sum().double() * 0.0
    if len(props) < 2:
        return zero
    stroke_props: List[Proposal] = []
    if model.graph_strokes:
        stroke_props = shrink_to_stroke_proposals(
            props, sample.stroke, cfg.stroke_shrink, cfg.stroke_keep)
    losses = []
    for pivot in range(min(len(props), cfg.max_pivots)):
        g = build_local_graph(pivot, props)
        hetero = attach_stroke_nodes(g, props, stroke_props)
        node_props = [props[j] for j in g.nodes]
        origin = props[pivot].center
        text_feats = model.hrgn.node_features(node_props, feat_single, origin)
        stroke_feats = None
        if model.graph_strokes and stroke_props:
            raw = model.hrgn.node_features(stroke_props, feat_single, origin)
            centers = np.array([sp.center for sp in stroke_props])
            stroke_feats = model.hrgn.update_strokes(raw, centers)
        fused = model.hrgn.reason(hetero, text_feats, stroke_feats,
                                  use_strokes=model.graph_strokes)
        p_rows = model.hrgn.linkage(hetero, fused).double()
        pivot_label = inst_labels[pivot]
        labels = torch.tensor(
            [1.0 if pivot_label > 0 and inst_labels[j] == pivot_label else 0.0
             for j in g.nodes], dtype=torch.float64)
        losses.append(loss_linkage(p_rows, labels))
    return torch.stack(losses).mean() if losses else zero


@dataclass
class TrainResult:
    checkpoint: dict
    log: List[dict]
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None


def _write_log(records: List[dict], path: Path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def train(data: Union[str, Path, Sequence[LoadedSample]], cfg: TrainConfig,
          ablation: str = "full",
          out_dir: Optional[Union[str, Path]] = None) -> TrainResult:
    """Phase-1 adaptive training (plus optional SGD phase 2) with JSONL log.

    A non-finite loss aborts with the last good checkpoint attached to the
    raised TrainingDiverged (and written to disk when out_dir is given).
    """
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    samples = load_samples(data) if isinstance(data, (str, Path)) else list(data)
    if not samples:
        raise ValueError("dataset is empty")
    for s in samples:
        if s.image.shape[:2] != (cfg.input_size, cfg.input_size):
            raise ValueError(
                f"sample {s.path} is {s.image.shape[1]}x{s.image.shape[0]}, "
                f"config expects {cfg.input_size}x{cfg.input_size}")

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    model = build_model(ablation, seed=cfg.seed)
    model.train()
    # keep every parameter in the grad-clip norm whether or not its branch
    # contributed this step, so the clip factor is float-order stable
    for p in model.parameters():
        p.grad = torch.zeros_like(p)
    rng = np.random.default_rng(cfg.seed)
    w = cfg.loss_weights
    records: List[dict] = []
    last_good = make_checkpoint(model, cfg, step=0)

    phases = [("adam", torch.optim.Adam(model.parameters(), lr=cfg.lr),
               cfg.steps)]
    if cfg.phase2_steps > 0:
        phases.append(("sgd", torch.optim.SGD(model.parameters(),
                                              lr=cfg.phase2_lr),
                       cfg.phase2_steps))

    global_step = 0
    for phase_name, opt, n_steps in phases:
        for phase_step in range(n_steps):
            if phase_name == "sgd":
                lr = cfg.phase2_lr * cfg.phase2_decay ** (
                    phase_step // cfg.phase2_decay_every)
                for group in opt.param_groups:
                    group["lr"] = lr
            else:
                lr = cfg.lr

            idx = rng.integers(0, len(samples), size=cfg.batch_size)
            flips = rng.random(cfg.batch_size) < cfg.flip_prob
            batch = [flip_sample(samples[i]) if f else samples[i]
                     for i, f in zip(idx, flips)]

            images = torch.stack([to_input_tensor(s.image) for s in batch])
            targets = [geometry_targets(s.annotations, cfg.input_size,
                                        shrink_ratio=cfg.shrink_ratio,
                                        end_trim=cfg.end_trim)
                       for s in batch]
            gt_ta = torch.from_numpy(
                np.stack([t.ta for t in targets]).astype(np.int64))
            gt_tca = torch.from_numpy(
                np.stack([t.tca for t in targets]).astype(np.int64))
            gt_h1 = torch.from_numpy(np.stack([t.h1 for t in targets]))
            gt_h2 = torch.from_numpy(np.stack([t.h2 for t in targets]))
            gt_sin = torch.from_numpy(np.stack([t.sin_theta for t in targets]))
            gt_cos = torch.from_numpy(np.stack([t.cos_theta for t in targets]))

            head, feats = model(images)
            sapn_total, parts = loss_sapn(
                head.ta_logits.double(), head.tca_logits.double(),
                head.h1.double(), head.h2.double(),
                head.sin.double(), head.cos.double(),
                gt_ta, gt_tca, gt_h1, gt_h2, gt_sin, gt_cos, w=w)
            total = sapn_total

            zero = images.sum().double() * 0.0
            mse, ssim = zero, zero
            if model.has_stroke:
                mse_terms, ssim_terms = [], []
                for b, s in enumerate(batch):
                    fm = FeatureMap(feats.planes[b], feats.stride)
                    m, sm = _stroke_crop_losses(model, fm, images[b], s, cfg, w)
                    mse_terms.append(m)
                    ssim_terms.append(sm)
                mse = torch.stack(mse_terms).mean()
                ssim = torch.stack(ssim_terms).mean()
                total = total + w.l4 * mse + w.l5 * ssim

            link = zero
            if model.has_graphs:
                link_terms = []
                for b, s in enumerate(batch):
                    fm = FeatureMap(feats.planes[b], feats.stride)
                    link_terms.append(_linkage_loss(model, fm, s, targets[b],
                                                    cfg))
                link = torch.stack(link_terms).mean()
                total = total + cfg.lambda_link * link

            if not bool(torch.isfinite(total)):
                ckpt_path = None
                if out_path is not None:
                    ckpt_path = save_checkpoint(last_good,
                                                out_path / "checkpoint_lastgood.pt")
                    _write_log(records, out_path / "train_log.jsonl")
                raise TrainingDiverged(
                    f"non-finite loss at step {global_step} "
                    f"(phase {phase_name}); last good checkpoint is from step "
                    f"{last_good['step']}", last_good, ckpt_path)

            opt.zero_grad(set_to_none=False)
            total.backward()
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()

            def _flt(t: torch.Tensor) -> float:
                return float(t.detach())

            records.append({
                "step": global_step, "phase": phase_name, "lr": lr,
                "total": _flt(total), "ta": _flt(parts["ta"]),
                "tca": _flt(parts["tca"]), "sin": _flt(parts["sin"]),
                "cos": _flt(parts["cos"]), "h": _flt(parts["h"]),
                "mse": _flt(mse), "ssim": _flt(ssim), "link": _flt(link),
            })
            global_step += 1
            last_good = make_checkpoint(model, cfg, step=global_step)

    model.eval()
    ckpt = make_checkpoint(model, cfg, step=global_step)
    ckpt_path = log_path = None
    if out_path is not None:
        ckpt_path = save_checkpoint(ckpt, out_path / "checkpoint.pt")
        log_path = out_path / "train_log.jsonl"
        _write_log(records, log_path)
    return TrainResult(checkpoint=ckpt, log=records,
                       checkpoint_path=ckpt_path, log_path=log_path)


def _stroke_map(model: StrokeNetModel, feat_single: FeatureMap,
                image: torch.Tensor, maps: GeometryMaps,
                cfg: TrainConfig) -> np.ndarray:
    h_img, w_img = maps.ta.shape
    if not model.has_stroke:
        return np.zeros((h_img, w_img), dtype=np.float64)
    regions = cc_label(maps.ta >= cfg.score_thresh, connectivity=2)
    boxes = []
    for comp_id in range(1, regions.max() + 1):
        rows, cols = np.nonzero(regions == comp_id)
        if rows.size < 4:
            continue
        ota = (int(cols.min()), int(rows.min()),
               int(cols.max()) + 1, int(rows.max()) + 1)
        if ota[2] - ota[0] >= 2 and ota[3] - ota[1] >= 2:
            boxes.append((-rows.size, ota))
    boxes.sort()
    otas = [ota for _, ota in boxes[:cfg.max_stroke_regions]]
    if not otas:
        return np.zeros((h_img, w_img), dtype=np.float64)
    full = model.stroke_map_full(feat_single, image, otas)
    return full.detach().cpu().numpy().astype(np.float64)


def _link_probabilities(model: StrokeNetModel, feat_single: FeatureMap,
                        props: List[Proposal], stroke_props: List[Proposal],
                        cfg: TrainConfig) -> Dict[Tuple[int, int], float]:
    """P(linked) for every evaluated pivot -> hop-1 neighbor direction."""
    directed: Dict[Tuple[int, int], float] = {}
    for pivot in range(len(props)):
        g = build_local_graph(pivot, props)
        hetero = attach_stroke_nodes(g, props, stroke_props)
        node_props = [props[j] for j in g.nodes]
        origin = props[pivot].center
        text_feats = model.hrgn.node_features(node_props, feat_single, origin)
        stroke_feats = None
        if model.graph_strokes and stroke_props:
            raw = model.hrgn.node_features(stroke_props, feat_single, origin)
            centers = np.array([sp.center for sp in stroke_props])
            stroke_feats = model.hrgn.update_strokes(raw, centers)
        fused = model.hrgn.reason(hetero, text_feats, stroke_feats,
                                  use_strokes=model.graph_strokes)
        p_rows = model.hrgn.linkage(hetero, fused)
        for local in g.hop1:
            directed[(pivot, g.nodes[local])] = float(p_rows[local, 1])
    return directed


def _accept_links(directed: Dict[Tuple[int, int], float],
                  thresh: float) -> Tuple[List[Tuple[int, int]],
                                          Dict[Tuple[int, int], float]]:
    """Undirected links accepted by the AND rule over available directions."""
    accepted = []
    confidence = {}
    seen = set()
    for (i, j) in directed:
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        fwd = directed.get((key[0], key[1]))
        bwd = directed.get((key[1], key[0]))
        votes = [v for v in (fwd, bwd) if v is not None]
        if votes and all(v >= thresh for v in votes):
            accepted.append(key)
            confidence[key] = float(np.mean(votes))
    return accepted, confidence


def _colinear_link(pi: Proposal, pj: Proposal) -> bool:
    """Linked proposals must share a text line, not sit on parallel ones.

    The center offset perpendicular to the local writing direction stays
    under half the mean height for nodes of the same instance; stacked
    instances start at exactly that bound.
    """
    ui = np.array([pi.cos, pi.sin])
    uj = np.array([pj.cos, pj.sin])
    if float(ui @ uj) < 0:
        uj = -uj
    u = ui + uj
    n = float(np.hypot(*u))
    if n < 1e-9:
        return True
    u /= n
    normal = np.array([-u[1], u[0]])
    delta = np.array([pj.center[0] - pi.center[0],
                      pj.center[1] - pi.center[1]])
    h_mean = 0.5 * ((pi.h1 + pi.h2) + (pj.h1 + pj.h2))
    return abs(float(delta @ normal)) <= 0.5 * h_mean


def run_inference(model: StrokeNetModel, image: np.ndarray,
                  cfg: TrainConfig) -> Tuple[List[TextInstance], np.ndarray]:
    """Full pipeline on one image: heads, proposals, graphs, grouping."""
    h_img, w_img = image.shape[:2]
    x = to_input_tensor(image)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            head, feats = model(x[None])
            maps = head_to_geometry_maps(head, (w_img, h_img),
                                         ta_thresh=cfg.score_thresh)
            feat_single = FeatureMap(feats.planes[0], feats.stride)
            stroke_map = _stroke_map(model, feat_single, x, maps, cfg)
            props = extract_text_proposals(maps, cfg.score_thresh,
                                           cfg.score_thresh)
            props = boundary_filter(props, (w_img, h_img))
            props = nms(props, cfg.nms_iou)
            if not props:
                return [], stroke_map

            if model.has_graphs:
                stroke_props = []
                if model.graph_strokes:
                    stroke_props = shrink_to_stroke_proposals(
                        props, stroke_map, cfg.stroke_shrink, cfg.stroke_keep)
                directed = _link_probabilities(model, feat_single, props,
                                               stroke_props, cfg)
                links, confidence = _accept_links(directed, cfg.link_thresh)
                links = [(a, b) for a, b in links
                         if _colinear_link(props[a], props[b])]
                components = group_bfs(len(props), links)
            else:
                by_comp: Dict[int, List[int]] = {}
                for i, p in enumerate(props):
                    by_comp.setdefault(p.component, []).append(i)
                components = [sorted(v)
                              for _, v in sorted(by_comp.items())]
                confidence = {}
    finally:
        if was_training:
            model.train()

    instances = []
    for comp in components:
        sub = [props[k] for k in comp]
        order = order_min_path(sub)
        ordered = [sub[o] for o in order]
        polygon = reconstruct_boundary(ordered)
        if len(polygon) < 4:
            log.warning("degenerate boundary for a %d-node component, dropped",
                        len(comp))
            continue
        inner = [confidence[(min(a, b), max(a, b))]
                 for a in comp for b in comp
                 if a < b and (a, b) in confidence]
        if inner:
            score = float(np.mean(inner))
        else:
            score = float(np.mean([p.score for p in sub]))
        instances.append(TextInstance(ordered_nodes=ordered, polygon=polygon,
                                      score=score))
    return instances, stroke_map


def evaluate_model(model: StrokeNetModel, samples: Sequence[LoadedSample],
                   cfg: TrainConfig) -> Tuple[dict, List[dict]]:
    """Dataset-level precision/recall/hmean plus per-image detections."""
    matched = n_pred = n_gt = 0
    detections = []
    for s in samples:
        instances, _ = run_inference(model, s.image, cfg)
        preds = [inst.polygon for inst in instances]
        gts = [a.polygon for a in s.annotations]
        report = evaluate(preds, gts, iou_thresh=cfg.eval_iou)
        matched += len(report.matches)
        n_pred += len(preds)
        n_gt += len(gts)
        detections.append({
            "image": s.path,
            "detections": [
                {"polygon": [[round(float(px), 6), round(float(py), 6)]
                             for px, py in inst.polygon],
                 "score": round(inst.score, 6)}
                for inst in instances
            ],
        })
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_gt if n_gt else 0.0
    hmean = 2 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    metrics = {"precision": round(precision, 6), "recall": round(recall, 6),
               "hmean": round(hmean, 6), "matched": matched,
               "predictions": n_pred, "ground_truth": n_gt}
    return metrics, detections
