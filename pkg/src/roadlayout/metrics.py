"""Evaluation measures for predicted scene attributes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from roadlayout.crf import Labeling
from roadlayout.errors import ConfigError, SchemaMismatchError
from roadlayout.losses import annotation_mask
from roadlayout.probability import BinSpec
from roadlayout.renderer import CLASS_NAMES, NUM_CLASSES, RenderConfig, render
from roadlayout.schema import AttributeSchema, SceneParams, default_schema, validate

FOREGROUND = tuple(range(1, NUM_CLASSES))
# squared normalized error charged when an active attribute is predicted absent
MISSING_VALUE_ERROR = 1.0


def _aligned(preds, gts) -> None:
    if len(preds) != len(gts):
        raise SchemaMismatchError(f"{len(preds)} predictions for {len(gts)} ground-truth scenes")
    if not preds:
        raise ValueError("cannot evaluate an empty batch")


def accu_binary(preds: Sequence[SceneParams], gts: Sequence[SceneParams]) -> float:
    """Fraction of correct flags per sample, averaged over samples."""
    _aligned(preds, gts)
    return float(
        np.mean([np.mean(np.equal(p.binary, g.binary)) for p, g in zip(preds, gts)])
    )


def accu_multiclass(preds: Sequence[SceneParams], gts: Sequence[SceneParams]) -> float:
    """Fraction of correct lane counts per sample, averaged over samples."""
    _aligned(preds, gts)
    return float(
        np.mean([np.mean(np.equal(p.multiclass, g.multiclass)) for p, g in zip(preds, gts)])
    )


def squared_errors(pred: SceneParams, gt: SceneParams, schema: AttributeSchema | None = None):
    """Range-normalized squared errors of the attributes active in ``gt``."""
    schema = schema or default_schema()
    out = []
    for attr, p, g in zip(schema.continuous, pred.continuous, gt.continuous):
        if g is None:
            continue
        if p is None:
            out.append(MISSING_VALUE_ERROR)
        else:
            out.append(((p - g) / attr.span) ** 2)
    return out


def mse_regression(
    preds: Sequence[SceneParams], gts: Sequence[SceneParams], schema: AttributeSchema | None = None
) -> float:
    """Mean squared error over every (sample, attribute) pair active in the ground truth.

    Values are mapped to [0, 1] by each attribute's range first. An active
    attribute predicted as absent costs :data:`MISSING_VALUE_ERROR`.
    Returns 0 when no attribute is active anywhere.
    """
    _aligned(preds, gts)
    errs = [e for p, g in zip(preds, gts) for e in squared_errors(p, g, schema)]
    return float(np.mean(errs)) if errs else 0.0


@dataclass(frozen=True)
class IoUResult:
    """Mean IoU over foreground classes present in either render.

    ``per_class`` maps class name to IoU, or ``None`` when the class is
    absent from both renders.
    """

    mean: float
    per_class: dict[str, float | None]


def augment(pred: SceneParams, gt: SceneParams, annotated) -> SceneParams:
    """Ground truth where annotated, prediction elsewhere."""
    flags = annotation_mask(annotated)
    p, g = pred.to_dict(), gt.to_dict()
    return SceneParams.from_dict({n: g[n] if m else p[n] for (n, m) in zip(p, flags)})


def class_iou(a: np.ndarray, b: np.ndarray) -> dict[int, float | None]:
    out = {}
    for c in FOREGROUND:
        in_a, in_b = a == c, b == c
        union = int(np.count_nonzero(in_a | in_b))
        out[c] = None if union == 0 else int(np.count_nonzero(in_a & in_b)) / union
    return out


def rendered_iou(
    pred: SceneParams,
    gt: SceneParams,
    annotated: Mapping[str, bool] | Sequence[bool] | None = None,
    cfg: RenderConfig | None = None,
) -> IoUResult:
    """IoU between the renders of ``pred`` and the prediction-augmented ground truth.

    Raises:
        FeasibilityError: either scene is infeasible after augmentation.
    """
    cfg = cfg or RenderConfig()
    target = augment(pred, gt, annotated)
    a = render(pred, cfg).classes
    b = render(target, cfg).classes
    per = class_iou(a, b)
    present = [v for v in per.values() if v is not None]
    mean = float(np.mean(present)) if present else 1.0
    return IoUResult(mean, {CLASS_NAMES[c]: v for c, v in per.items()})


def semantic_conflicts(params: SceneParams | Labeling, specs: Sequence[BinSpec] | None = None) -> int:
    """Number of violated feasibility rules."""
    if isinstance(params, Labeling):
        params = params.to_params(specs)
    return len(validate(params))


def mean_semantic_conflicts(batch: Sequence[SceneParams | Labeling], specs=None) -> float:
    if not batch:
        raise ValueError("cannot evaluate an empty batch")
    return float(np.mean([semantic_conflicts(p, specs) for p in batch]))


def temporal_changes(
    sequence: Sequence[SceneParams | Labeling], specs: Sequence[BinSpec] | None = None
) -> float:
    """Label changes between consecutive frames, averaged over attributes.

    Continuous attributes are compared by bin index.
    """
    if len(sequence) < 2:
        raise ConfigError("temporal changes need at least two frames")
    rows = [
        s.values if isinstance(s, Labeling) else Labeling.from_params(s, specs).values
        for s in sequence
    ]
    a = np.asarray(rows)
    return float(np.count_nonzero(a[1:] != a[:-1], axis=0).mean())


@dataclass
class MetricsReport:
    """Aggregated metrics; fields that were not measured stay ``None``."""

    accu_binary: float | None = None
    accu_multiclass: float | None = None
    mse: float | None = None
    iou: float | None = None
    iou_per_class: dict[str, float | None] = field(default_factory=dict)
    semantic_conflicts: float | None = None
    temporal_changes: float | None = None
    n_samples: int = 0
    n_iou_samples: int = 0
    n_sequences: int = 0

    def to_dict(self) -> dict:
        return {
            "accu_binary": self.accu_binary,
            "accu_multiclass": self.accu_multiclass,
            "mse": self.mse,
            "iou": self.iou,
            "iou_per_class": dict(self.iou_per_class),
            "semantic_conflicts": self.semantic_conflicts,
            "temporal_changes": self.temporal_changes,
            "n_samples": self.n_samples,
            "n_iou_samples": self.n_iou_samples,
            "n_sequences": self.n_sequences,
        }

    def to_text(self) -> str:
        """Fixed-width table; arrows mark whether higher or lower is better."""
        cols = [
            ("Accu-Bi ↑", self.accu_binary),
            ("Accu-Mc ↑", self.accu_multiclass),
            ("MSE ↓", self.mse),
            ("IoU ↑", self.iou),
            ("seman. ↓", self.semantic_conflicts),
            ("temp. ↓", self.temporal_changes),
        ]
        cols = [(h, v) for h, v in cols if v is not None]
        width = max(10, *(len(h) + 2 for h, _ in cols)) if cols else 10
        head = "".join(h.rjust(width) for h, _ in cols)
        row = "".join(f"{v:.4f}".rjust(width) for _, v in cols)
        lines = [head, row]
        if self.iou_per_class:
            lines.append("")
            for name, v in self.iou_per_class.items():
                lines.append(f"  IoU {name:<14}" + ("n/a" if v is None else f"{v:.4f}"))
        lines.append("")
        lines.append(f"  samples: {self.n_samples}  (IoU over {self.n_iou_samples})")
        if self.n_sequences:
            lines.append(f"  sequences: {self.n_sequences}")
        return "\n".join(lines)


def evaluate(
    preds: Sequence[SceneParams],
    gts: Sequence[SceneParams],
    masks: Sequence | None = None,
    cfg: RenderConfig | None = None,
) -> MetricsReport:
    """Accuracy, MSE, rendered IoU and semantic conflicts of a prediction batch.

    Accuracy and MSE use annotated attributes only when ``masks`` is given.
    Samples whose prediction (or augmented target) is infeasible cannot be
    rendered; they are left out of the IoU mean and ``n_iou_samples`` counts
    the rest.
    """
    _aligned(preds, gts)
    masks = list(masks) if masks is not None else [None] * len(preds)
    if len(masks) != len(preds):
        raise SchemaMismatchError("one mask per sample is required")
    schema = default_schema()
    nb, nm = schema.n_binary, schema.n_multiclass

    bi, mc, errs = [], [], []
    for p, g, m in zip(preds, gts, masks):
        flags = annotation_mask(m)
        b = [x == y for x, y, f in zip(p.binary, g.binary, flags[:nb]) if f]
        c = [x == y for x, y, f in zip(p.multiclass, g.multiclass, flags[nb:nb + nm]) if f]
        if b:
            bi.append(np.mean(b))
        if c:
            mc.append(np.mean(c))
        cont_flags = flags[nb + nm:]
        masked_gt = SceneParams(
            g.binary, g.multiclass,
            tuple(v if f else None for v, f in zip(g.continuous, cont_flags)),
        )
        errs.extend(squared_errors(p, masked_gt, schema))

    ious, per_class = [], {CLASS_NAMES[c]: [] for c in FOREGROUND}
    for p, g, m in zip(preds, gts, masks):
        if validate(p).violations or validate(augment(p, g, m)).violations:
            continue
        r = rendered_iou(p, g, m, cfg)
        ious.append(r.mean)
        for name, v in r.per_class.items():
            if v is not None:
                per_class[name].append(v)
    return MetricsReport(
        accu_binary=float(np.mean(bi)) if bi else None,
        accu_multiclass=float(np.mean(mc)) if mc else None,
        mse=float(np.mean(errs)) if errs else 0.0,
        iou=float(np.mean(ious)) if ious else None,
        iou_per_class={k: (float(np.mean(v)) if v else None) for k, v in per_class.items()},
        semantic_conflicts=mean_semantic_conflicts(preds),
        n_samples=len(preds),
        n_iou_samples=len(ious),
    )


def consistency(sequences: Sequence[Sequence[SceneParams | Labeling]], specs=None) -> MetricsReport:
    """Semantic conflicts per frame and temporal changes per sequence, both averaged."""
    if not sequences:
        raise ValueError("cannot evaluate an empty set of sequences")
    frames = [f for s in sequences for f in s]
    return MetricsReport(
        semantic_conflicts=mean_semantic_conflicts(frames, specs),
        temporal_changes=float(np.mean([temporal_changes(s, specs) for s in sequences])),
        n_samples=len(frames),
        n_sequences=len(sequences),
    )
