"""Quantitative QC: Dice overlap, single-atlas label propagation, batch reports."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .brain_extraction import BrainMaskSource, extract_brain
from .errors import BothEmpty, GridMismatch
from .geometry import reorient_to_canonical
from .volume import BinaryMask, Volume, check_same_grid


@dataclass
class LabelVolume:
    """Nonnegative integer labels on a grid; 0 is background."""

    data: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.affine = np.asarray(self.affine, dtype=np.float64)

    @property
    def dims(self):
        return self.data.shape


@dataclass
class DiceReport:
    per_item: list  # (id, dsc or None, flagged, error)
    mean: float
    std: float
    n: int
    threshold: float
    failed: list = field(default_factory=list)

    @property
    def flagged(self) -> list:
        return [item[0] for item in self.per_item if item[2]]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "mean": self.mean,
                "std": self.std,
                "std_kind": "population",
                "threshold": self.threshold,
                "items": [
                    {"id": i, "dice": d, "flagged": f, "error": e}
                    for i, d, f, e in self.per_item
                ],
                "failed": self.failed,
            },
            indent=2,
        )

    def to_table(self) -> str:
        rows = [("id", "dice", "status")]
        for i, d, f, e in self.per_item:
            status = "FAILED" if e else ("FLAGGED" if f else "ok")
            rows.append((str(i), "-" if d is None else f"{d:.6f}", status))
        rows.append(("mean", f"{self.mean:.6f}", f"n={self.n}"))
        rows.append(("std", f"{self.std:.6f}", ""))
        widths = [max(len(r[c]) for r in rows) for c in range(3)]
        return "\n".join(
            "  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows
        )


def dice(a: BinaryMask, b: BinaryMask) -> float:
    check_same_grid(a, b)
    na, nb = a.count(), b.count()
    if na == 0 and nb == 0:
        raise BothEmpty("dice undefined for two empty masks")
    inter = int((a.data & b.data).sum())
    return 2.0 * inter / (na + nb)


def multilabel_dice(a: LabelVolume, b: LabelVolume) -> dict[int, float]:
    """Per-label binary Dice over nonzero labels present in either volume."""
    if a.dims != b.dims or not np.allclose(a.affine, b.affine, atol=1e-6):
        raise GridMismatch("label volumes on different grids")
    labels = np.union1d(np.unique(a.data), np.unique(b.data))
    out = {}
    for lab in labels:
        if lab == 0:
            continue
        am = a.data == lab
        bm = b.data == lab
        denom = int(am.sum()) + int(bm.sum())
        out[int(lab)] = 2.0 * int((am & bm).sum()) / denom
    return out


def propagate_labels(
    atlas_labels: LabelVolume,
    atlas_to_subject: np.ndarray,
    subject_dims,
    subject_affine,
) -> LabelVolume:
    """Nearest-neighbor propagation of atlas labels onto the subject grid."""
    src = Volume(atlas_labels.data, atlas_labels.affine, background=0)
    out = geometry.resample(
        src,
        tuple(subject_dims),
        subject_affine,
        geometry.invert(np.asarray(atlas_to_subject)),
        interp="nearest",
    )
    return LabelVolume(out.data, out.affine)


def qc_report(
    items,
    brain_source: BrainMaskSource | None = None,
    threshold: float = 0.99,
) -> DiceReport:
    """For each (id, original Volume, defaced Volume), re-extract brain masks
    on both and Dice them. Per-item errors are recorded, not fatal."""
    if not items:
        raise ValueError("qc_report requires at least one item")
    source = brain_source or BrainMaskSource("fallback")
    per_item = []
    failed = []
    values = []
    for item_id, original, defaced in items:
        try:
            ca, _ = reorient_to_canonical(original)
            cb, _ = reorient_to_canonical(defaced)
            ma = extract_brain(ca, source)
            mb = extract_brain(cb, source)
            d = dice(ma, mb)
            per_item.append((item_id, d, d < threshold, None))
            values.append(d)
        except Exception as e:
            per_item.append((item_id, None, True, str(e)))
            failed.append(item_id)
    if values:
        mean = float(np.mean(values))
        std = float(np.std(values))  # population std (divisor n)
    else:
        mean, std = float("nan"), float("nan")
    return DiceReport(per_item, mean, std, len(values), threshold, failed)
