"""End-to-end brain-safe defacing and the QuickShear geometric baseline.

Face-mask semantics throughout: 1 = keep, 0 = remove. The brain-safe
guarantee comes from unioning the registered keep-mask with the dilated
subject brain mask before any voxel is touched, so a bad registration can
never delete brain tissue.
"""

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import geometry
from .registration import RegistrationConfig, register_affine
from .brain_extraction import BrainMaskSource, extract_brain, fallback_extract, otsu_threshold
from .errors import (
    DegenerateHull,
    EmptyMask,
    StageError,
    TemplatePackError,
)
from .morphology import apply_mask, dilate, union
from .volume import BinaryMask, Volume, check_same_grid


@dataclass
class TemplatePack:
    """Skull-stripped registration template plus its keep-mask (1 = keep)."""

    template: Volume
    keep_mask: BinaryMask

    def validate(self) -> None:
        check_same_grid(self.template, self.keep_mask)
        fg = self.template.data > 0
        if np.any(fg & ~self.keep_mask.data):
            raise TemplatePackError(
                "keep-mask marks template tissue for removal"
            )


@dataclass
class DefaceConfig:
    margin_mm: float = 7.0
    threshold: float = 0.0
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    # Test/diagnostic hook: skip stage 6 and use this subject->template map.
    transform_override: np.ndarray | None = None


@dataclass
class DefaceResult:
    defaced: Volume
    brain_safe_mask: BinaryMask
    transform: np.ndarray
    provenance: dict


def _stage(n: int):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(n, exc) from exc
            return False

    return _Ctx()


def template_checksum(pack: TemplatePack) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(pack.template.data).tobytes())
    h.update(np.ascontiguousarray(pack.keep_mask.data).tobytes())
    return h.hexdigest()


def deface(
    input_volume: Volume,
    pack: TemplatePack,
    brain_source: BrainMaskSource,
    config: DefaceConfig | None = None,
) -> DefaceResult:
    """Run the nine-stage pipeline; output stays on the input's native grid."""
    config = config or DefaceConfig()
    pack.validate()
    t0 = time.time()

    with _stage(1):
        canon, perm = geometry.reorient_to_canonical(input_volume)
    with _stage(2):
        brain = extract_brain(canon, brain_source, config.threshold)
    with _stage(4):
        dilated = dilate(brain, config.margin_mm)
    with _stage(5):
        loose = apply_mask(canon, dilated)

    diagnostics: dict = {}
    if config.transform_override is not None:
        transform = np.asarray(config.transform_override, dtype=np.float64)
        diagnostics["transform_override"] = True
    else:
        with _stage(6):
            transform, diagnostics = register_affine(
                pack.template, loose, config.registration
            )

    with _stage(7):
        keep_vol = geometry.resample(
            pack.keep_mask.to_volume(),
            canon.dims,
            canon.affine,
            transform,  # subject-world -> template-world pullback
            interp="nearest",
        )
        keep_reg = BinaryMask(keep_vol.data > 0, canon.affine.copy())
    with _stage(8):
        safe_canon = union(keep_reg, dilated)
    with _stage(9):
        safe_native = BinaryMask(
            geometry.undo_reorientation(safe_canon.data, perm),
            input_volume.affine.copy(),
        )
        defaced = apply_mask(input_volume, safe_native)

    provenance = {
        "tool": "defacepipe",
        "version": __version__,
        "template_sha256": template_checksum(pack),
        "margin_mm": config.margin_mm,
        "threshold": config.threshold,
        "brain_source": brain_source.kind,
        "registration": diagnostics,
        "reorientation": {"perm": list(perm.perm), "flips": list(perm.flips)},
        "removed_voxels": int((~safe_native.data).sum()),
        "timing": {
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0)),
            "elapsed_s": round(time.time() - t0, 3),
        },
    }
    return DefaceResult(defaced, safe_native, transform, provenance)


# ---------------------------------------------------------------------------
# QuickShear baseline


def convex_hull_2d(points) -> list[tuple[float, float]]:
    """Strict convex hull (Andrew monotone chain), counter-clockwise."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) < 3:
        raise DegenerateHull("fewer than 3 distinct points")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) > 1 and cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateHull("all points collinear")
    return hull


def _shear_plane(brain: BinaryMask, buffer_mm: float):
    """Hull-derived face plane in the (anterior, superior) mm plane of the
    mid-sagittal slice; offset so no brain voxel (in any slice) is cut."""
    xs = np.flatnonzero(brain.data.any(axis=(1, 2)))
    if len(xs) == 0:
        raise EmptyMask("empty brain mask")
    mid = int((xs[0] + xs[-1]) // 2)
    sl = brain.data[mid]
    pts_vox = np.argwhere(sl)
    sp = brain.spacing
    pts = pts_vox * sp[1:3]
    hull = convex_hull_2d(pts)

    # Outward normal per CCW edge; pick the edge facing anterior-inferior.
    target = np.array([1.0, -1.0]) / np.sqrt(2.0)
    best, best_score = None, -np.inf
    m = len(hull)
    for i in range(m):
        a = np.array(hull[i])
        b = np.array(hull[(i + 1) % m])
        e = b - a
        normal = np.array([e[1], -e[0]])
        normal /= np.linalg.norm(normal)
        score = float(normal @ target)
        if score > best_score:
            best, best_score = normal, score
    normal = best

    all_pts = np.argwhere(brain.data)[:, 1:3] * sp[1:3]
    offset = float((all_pts @ normal).max()) + buffer_mm
    return normal, offset


def quickshear(input_volume: Volume, brain: BinaryMask, buffer_mm: float = 5.0) -> Volume:
    """Zero everything on the face side of the hull-derived plane.

    The plane is offset outward past every brain voxel, so brain tissue is
    never removed.
    """
    check_same_grid(input_volume, brain)
    if not brain.data.any():
        raise EmptyMask("empty brain mask")
    canon_vol, perm = geometry.reorient_to_canonical(input_volume)
    canon_brain = BinaryMask(perm.apply(brain.data), canon_vol.affine.copy())

    normal, offset = _shear_plane(canon_brain, buffer_mm)
    sp = canon_brain.spacing
    ny, nz = canon_brain.dims[1], canon_brain.dims[2]
    yy, zz = np.meshgrid(
        np.arange(ny) * sp[1], np.arange(nz) * sp[2], indexing="ij"
    )
    face_side = (normal[0] * yy + normal[1] * zz) > offset
    keep = BinaryMask(
        np.broadcast_to(~face_side, canon_brain.dims), canon_vol.affine.copy()
    )
    out_canon = apply_mask(canon_vol, keep)
    return Volume(
        geometry.undo_reorientation(out_canon.data, perm),
        input_volume.affine.copy(),
        input_volume.background,
    )


# ---------------------------------------------------------------------------
# Template pack generation


def make_template_pack(
    head: Volume,
    brain_source: BrainMaskSource | None = None,
    buffer_mm: float = 5.0,
    face_dilate_mm: float = 3.0,
) -> TemplatePack:
    """Build a TemplatePack from a skull-containing (or already stripped)
    template: tight-stripped template + a keep-mask that removes head tissue
    on the face side of the template brain's shear plane.

    For a brain-only input the face region is empty and the keep-mask is
    all ones.
    """
    canon, _ = geometry.reorient_to_canonical(head)
    if brain_source is None or brain_source.kind == "fallback":
        brain = fallback_extract(canon)
    else:
        brain = extract_brain(canon, brain_source)

    stripped = apply_mask(canon, brain)
    normal, offset = _shear_plane(brain, buffer_mm)

    sp = canon.spacing
    ny, nz = canon.dims[1], canon.dims[2]
    yy, zz = np.meshgrid(
        np.arange(ny) * sp[1], np.arange(nz) * sp[2], indexing="ij"
    )
    face_side = np.broadcast_to(
        (normal[0] * yy + normal[1] * zz) > offset, canon.dims
    )

    head_fg = canon.data > otsu_threshold(canon.data) * 0.25
    face_tissue = BinaryMask(face_side & head_fg, canon.affine.copy())
    if face_tissue.data.any() and face_dilate_mm > 0:
        face_tissue = dilate(face_tissue, face_dilate_mm)
    # Dilation may creep back across the plane; never remove brain.
    removal = face_tissue.data & ~brain.data

    pack = TemplatePack(
        template=stripped,
        keep_mask=BinaryMask(~removal, canon.affine.copy()),
    )
    pack.validate()
    return pack
