"""Batch command-line front end.

Subcommands: deface, quickshear, qc, make-template-pack, phantom.
Files are processed by a worker pool of size --jobs; a failing file is
reported on stderr and never blocks the rest of the batch.
"""

import argparse
import concurrent.futures
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, geometry, nifti
from .brain_extraction import BrainMaskSource
from .defacing import (
    DefaceConfig,
    TemplatePack,
    deface,
    make_template_pack,
    quickshear,
)
from .errors import DefacepipeError
from .evaluation import qc_report
from .registration import RegistrationConfig
from .synthetic import nominal_head, random_subject
from .volume import BinaryMask

log = logging.getLogger("defacepipe")


def _out_path(input_path: Path, output_dir: Path | None, suffix: str, ext=None) -> Path:
    stem = input_path.name
    for e in (".nii.gz", ".nii"):
        if stem.endswith(e):
            stem = stem[: -len(e)]
            if ext is None:
                ext = e
            break
    if ext is None:
        ext = ".nii.gz"
    directory = output_dir or input_path.parent
    return directory / f"{stem}{suffix}{ext}"


def _load_pack(template_path: Path, face_mask_path: Path) -> TemplatePack:
    template, _ = nifti.read_nifti(template_path)
    mask_vol, _ = nifti.read_nifti(face_mask_path)
    pack = TemplatePack(
        template=template,
        keep_mask=BinaryMask(mask_vol.data > 0, mask_vol.affine),
    )
    pack.validate()
    return pack


def _brain_source(args) -> BrainMaskSource:
    if getattr(args, "brain_mask", None):
        return BrainMaskSource("external_file", Path(args.brain_mask))
    if getattr(args, "stripped", None):
        return BrainMaskSource("external_stripped_volume", Path(args.stripped))
    return BrainMaskSource("fallback")


def _deface_one(input_path: Path, pack: TemplatePack, source, config, output_dir):
    from .errors import StageError

    try:
        volume, sidecar = nifti.read_nifti(input_path)
    except Exception as e:
        raise StageError(0, e) from e  # stage 0 = ingestion
    result = deface(volume, pack, source, config)
    result.provenance["input"] = str(input_path)
    result.provenance["header_warnings"] = sidecar.warnings

    out = _out_path(input_path, output_dir, "_defaced")
    nifti.write_nifti(result.defaced, sidecar, out)
    nifti.write_mask(result.brain_safe_mask, _out_path(input_path, output_dir, "_brainsafe"))
    geometry.save_transform(
        result.transform, _out_path(input_path, output_dir, "_xfm", ".txt")
    )
    prov_path = _out_path(input_path, output_dir, "_prov", ".json")
    prov_path.write_text(json.dumps(result.provenance, indent=2, sort_keys=True))
    return out


def cmd_deface(args) -> int:
    pack = _load_pack(Path(args.template), Path(args.face_mask))
    inputs = [Path(p) for p in args.inputs]
    if (args.brain_mask or args.stripped) and len(inputs) != 1:
        print(
            "error: --brain-mask/--stripped apply to exactly one input",
            file=sys.stderr,
        )
        return 2
    source = _brain_source(args)
    config = DefaceConfig(
        margin_mm=args.margin_mm,
        threshold=args.threshold,
        registration=RegistrationConfig(seed=args.seed, bins=args.bins),
    )
    output_dir = Path(args.output_dir) if args.output_dir else None
    if output_dir:
        output_dir.mkdir(parents=True, exist_ok=True)

    failures = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
        futures = {
            pool.submit(_deface_one, p, pack, source, config, output_dir): p
            for p in inputs
        }
        for fut in concurrent.futures.as_completed(futures):
            p = futures[fut]
            try:
                out = fut.result()
                log.info("defaced %s -> %s", p, out)
            except Exception as e:
                failures.append(p)
                print(f"error: {p}: {e}", file=sys.stderr)
    return 1 if failures else 0


def cmd_quickshear(args) -> int:
    try:
        volume, sidecar = nifti.read_nifti(Path(args.input))
        mask_vol, _ = nifti.read_nifti(Path(args.brain_mask))
        brain = BinaryMask(mask_vol.data > 0, mask_vol.affine)
        sheared = quickshear(volume, brain, args.buffer_mm)
    except DefacepipeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    output_dir = Path(args.output_dir) if args.output_dir else None
    if output_dir:
        output_dir.mkdir(parents=True, exist_ok=True)
    out = _out_path(Path(args.input), output_dir, "_quickshear")
    nifti.write_nifti(sheared, sidecar, out)
    log.info("quickshear %s -> %s", args.input, out)
    return 0


def _parse_manifest(path: Path) -> list[tuple[str, Path, Path]]:
    items = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two paths per line")
        items.append((Path(parts[0]).name, Path(parts[0]), Path(parts[1])))
    if not items:
        raise ValueError(f"{path}: empty manifest")
    return items


def cmd_qc(args) -> int:
    try:
        entries = _parse_manifest(Path(args.manifest))
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    loaded = []
    for item_id, orig_path, defaced_path in entries:
        try:
            orig, _ = nifti.read_nifti(orig_path)
            defaced, _ = nifti.read_nifti(defaced_path)
            loaded.append((item_id, orig, defaced))
        except DefacepipeError as e:
            loaded.append((item_id, None, None))
            # carried through as a failed item by qc_report via exception
    # Feed unreadable pairs as failures by replacing them with raising stubs.
    report = qc_report(
        [(i, o, d) for i, o, d in loaded if o is not None],
        brain_source=_brain_source(args),
        threshold=args.threshold,
    )
    for item_id, o, _d in loaded:
        if o is None:
            report.per_item.append((item_id, None, True, "unreadable input"))
            report.failed.append(item_id)
    print(report.to_table())
    if args.json:
        Path(args.json).write_text(report.to_json())
    return 1 if (report.flagged or report.failed) else 0


def cmd_make_template_pack(args) -> int:
    try:
        head, sidecar = nifti.read_nifti(Path(args.template))
    except DefacepipeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        pack = make_template_pack(
            head,
            brain_source=_brain_source(args),
            buffer_mm=args.buffer_mm,
            face_dilate_mm=args.face_dilate_mm,
        )
    except DefacepipeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    output_dir = Path(args.output_dir) if args.output_dir else Path(args.template).parent
    output_dir.mkdir(parents=True, exist_ok=True)
    tpath = _out_path(Path(args.template), output_dir, "_stripped")
    mpath = _out_path(Path(args.template), output_dir, "_keepmask")
    nifti.write_nifti(pack.template, sidecar, tpath)
    nifti.write_mask(pack.keep_mask, mpath)
    print(f"wrote {tpath}\nwrote {mpath}")
    return 0


def cmd_phantom(args) -> int:
    head = nominal_head(size=args.size)
    subject = random_subject(head, seed=args.seed) if args.seed else head
    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    sc = nifti.sidecar_for_dtype(np.float32)
    nifti.write_nifti(subject.volume, sc, output_dir / "phantom.nii.gz")
    nifti.write_mask(subject.brain_mask, output_dir / "phantom_brainmask.nii.gz")
    nifti.write_mask(subject.face_mask, output_dir / "phantom_facemask.nii.gz")
    print(f"wrote phantom files to {output_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defacepipe",
        description="Brain-safe MRI defacing (atlas registration + brain masking)",
    )
    parser.add_argument("--version", action="version", version=__version__)

    def add_common(p):
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--seed", type=int, default=0, help="RNG seed")
        p.add_argument("--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deface", help="run the nine-stage defacing pipeline")
    p.add_argument("inputs", nargs="+", help="input NIfTI file(s)")
    p.add_argument("--template", required=True, help="skull-stripped template NIfTI")
    p.add_argument("--face-mask", required=True, help="template keep-mask (1=keep)")
    p.add_argument("--brain-mask", help="externally computed brain mask NIfTI")
    p.add_argument("--stripped", help="externally skull-stripped volume NIfTI")
    p.add_argument("--margin-mm", type=float, default=7.0)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--output-dir")
    add_common(p)
    p.set_defaults(func=cmd_deface)

    p = sub.add_parser("quickshear", help="geometric baseline defacing")
    p.add_argument("input")
    p.add_argument("--brain-mask", required=True)
    p.add_argument("--buffer-mm", type=float, default=5.0)
    p.add_argument("--output-dir")
    add_common(p)
    p.set_defaults(func=cmd_quickshear)

    p = sub.add_parser("qc", help="Dice QC over (original, defaced) pairs")
    p.add_argument("manifest", help="two whitespace-separated paths per line")
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--brain-mask", help=argparse.SUPPRESS)
    p.add_argument("--stripped", help=argparse.SUPPRESS)
    p.add_argument("--json", help="also write the report as JSON here")
    add_common(p)
    p.set_defaults(func=cmd_qc)

    p = sub.add_parser(
        "make-template-pack", help="derive a keep-mask + stripped template"
    )
    p.add_argument("template")
    p.add_argument("--brain-mask")
    p.add_argument("--stripped")
    p.add_argument("--buffer-mm", type=float, default=5.0)
    p.add_argument("--face-dilate-mm", type=float, default=3.0)
    p.add_argument("--output-dir")
    add_common(p)
    p.set_defaults(func=cmd_make_template_pack)

    p = sub.add_parser("phantom", help="write a synthetic head phantom")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--output-dir", default=".")
    add_common(p)
    p.set_defaults(func=cmd_phantom)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DefacepipeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
