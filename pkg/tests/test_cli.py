"""Exit codes, output artifacts, and batch behavior of the command line."""

import json

import numpy as np
import pytest

from defacepipe import nifti, synthetic
from defacepipe.cli import main
from defacepipe.morphology import apply_mask
from defacepipe.volume import Volume


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Phantom subject plus template pack files on disk."""
    root = tmp_path_factory.mktemp("cli")
    head = synthetic.nominal_head()
    from defacepipe.defacing import make_template_pack

    pack = make_template_pack(head.volume)
    sc = nifti.sidecar_for_dtype(np.float32)
    nifti.write_nifti(pack.template, sc, root / "template.nii.gz")
    nifti.write_mask(pack.keep_mask, root / "template_keep.nii.gz")

    subject = synthetic.random_subject(head, seed=4)
    nifti.write_nifti(subject.volume, sc, root / "subj.nii.gz")
    nifti.write_mask(subject.brain_mask, root / "subj_brain.nii.gz")
    nifti.write_mask(subject.face_mask, root / "subj_face.nii.gz")
    return root, head, subject


def _deface_args(root, out, inputs, extra=()):
    return [
        "deface",
        *inputs,
        "--template", str(root / "template.nii.gz"),
        "--face-mask", str(root / "template_keep.nii.gz"),
        "--output-dir", str(out),
        *extra,
    ]


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_no_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_deface_writes_four_artifacts(workspace, tmp_path):
    root, head, subject = workspace
    out = tmp_path / "out"
    code = main(_deface_args(
        root, out, [str(root / "subj.nii.gz")],
        extra=["--brain-mask", str(root / "subj_brain.nii.gz")],
    ))
    assert code == 0
    for suffix in ("_defaced.nii.gz", "_brainsafe.nii.gz", "_xfm.txt", "_prov.json"):
        assert (out / f"subj{suffix}").exists()

    defaced, _ = nifti.read_nifti(out / "subj_defaced.nii.gz")
    assert np.all(defaced.data[subject.face_mask.data] == 0)
    np.testing.assert_array_equal(
        defaced.data[subject.brain_mask.data],
        subject.volume.data[subject.brain_mask.data],
    )
    prov = json.loads((out / "subj_prov.json").read_text())
    assert prov["brain_source"] == "external_file"
    assert prov["registration"]["levels"]


def test_deface_brain_mask_with_many_inputs_exits_2(workspace, tmp_path, capsys):
    root, _head, _subject = workspace
    code = main(_deface_args(
        root, tmp_path,
        [str(root / "subj.nii.gz"), str(root / "subj.nii.gz")],
        extra=["--brain-mask", str(root / "subj_brain.nii.gz")],
    ))
    assert code == 2
    assert "exactly one input" in capsys.readouterr().err


def test_deface_unreadable_input_continues_batch(workspace, tmp_path, capsys):
    root, _head, _subject = workspace
    bogus = tmp_path / "bogus.nii"
    bogus.write_bytes(b"nope")
    out = tmp_path / "out"
    code = main(_deface_args(
        root, out, [str(root / "subj.nii.gz"), str(bogus)]
    ))
    assert code == 1
    assert (out / "subj_defaced.nii.gz").exists()  # good file still processed
    err = capsys.readouterr().err
    assert "bogus.nii" in err and "stage 0" in err


def test_quickshear_command(workspace, tmp_path):
    root, _head, subject = workspace
    out = tmp_path / "qs"
    code = main([
        "quickshear", str(root / "subj.nii.gz"),
        "--brain-mask", str(root / "subj_brain.nii.gz"),
        "--output-dir", str(out),
    ])
    assert code == 0
    sheared, _ = nifti.read_nifti(out / "subj_quickshear.nii.gz")
    np.testing.assert_array_equal(
        sheared.data[subject.brain_mask.data],
        subject.volume.data[subject.brain_mask.data],
    )


def test_quickshear_missing_mask_exits_2(workspace):
    root, _head, _subject = workspace
    with pytest.raises(SystemExit) as exc:
        main(["quickshear", str(root / "subj.nii.gz")])
    assert exc.value.code == 2


def test_quickshear_degenerate_mask_exits_1(workspace, tmp_path, capsys):
    root, _head, subject = workspace
    from defacepipe.volume import BinaryMask

    line = np.zeros(subject.volume.dims, bool)
    line[30, 30, :] = True
    nifti.write_mask(BinaryMask(line, subject.volume.affine), tmp_path / "line.nii")
    code = main([
        "quickshear", str(root / "subj.nii.gz"),
        "--brain-mask", str(tmp_path / "line.nii"),
        "--output-dir", str(tmp_path),
    ])
    assert code == 1
    assert "collinear" in capsys.readouterr().err


def test_qc_identical_pairs_exit_0(workspace, tmp_path, capsys):
    root, _head, _subject = workspace
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(
        f"# original  defaced\n{root / 'subj.nii.gz'}  {root / 'subj.nii.gz'}\n"
    )
    code = main(["qc", str(manifest), "--json", str(tmp_path / "report.json")])
    assert code == 0
    out = capsys.readouterr().out
    assert "1.000000" in out
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["mean"] == 1.0


def test_qc_corrupted_pair_exit_1(workspace, tmp_path):
    root, head, _subject = workspace
    corrupted = Volume(head.volume.data.copy(), head.volume.affine)
    corrupted.data[32:, 30:, 38:] = 0.0
    nifti.write_nifti(
        corrupted, nifti.sidecar_for_dtype(np.float32), tmp_path / "bad.nii.gz"
    )
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(f"{root / 'subj.nii.gz'} {tmp_path / 'bad.nii.gz'}\n")
    assert main(["qc", str(manifest)]) == 1


def test_qc_empty_manifest_exit_2(tmp_path, capsys):
    manifest = tmp_path / "empty.txt"
    manifest.write_text("# nothing but comments\n\n")
    assert main(["qc", str(manifest)]) == 2
    assert "empty manifest" in capsys.readouterr().err


def test_qc_malformed_manifest_exit_2(tmp_path):
    manifest = tmp_path / "bad.txt"
    manifest.write_text("only_one_path\n")
    assert main(["qc", str(manifest)]) == 2


def test_make_template_pack_brain_only_all_ones(workspace, tmp_path):
    root, head, _subject = workspace
    from defacepipe.brain_extraction import fallback_extract

    stripped = apply_mask(head.volume, fallback_extract(head.volume))
    nifti.write_nifti(
        stripped, nifti.sidecar_for_dtype(np.float32), tmp_path / "brainonly.nii.gz"
    )
    code = main([
        "make-template-pack", str(tmp_path / "brainonly.nii.gz"),
        "--output-dir", str(tmp_path),
    ])
    assert code == 0
    keep, _ = nifti.read_nifti(tmp_path / "brainonly_keepmask.nii.gz")
    assert np.all(keep.data == 1)


def test_make_template_pack_head_removes_face(workspace, tmp_path):
    root, head, _subject = workspace
    nifti.write_nifti(
        head.volume, nifti.sidecar_for_dtype(np.float32), tmp_path / "head.nii.gz"
    )
    code = main([
        "make-template-pack", str(tmp_path / "head.nii.gz"),
        "--output-dir", str(tmp_path),
    ])
    assert code == 0
    keep, _ = nifti.read_nifti(tmp_path / "head_keepmask.nii.gz")
    assert (keep.data == 0).sum() > 0
    assert np.all(keep.data[head.brain_mask.data] == 1)


def test_make_template_pack_2d_input_exit_2(tmp_path, capsys):
    import struct

    from test_nifti import build_nifti_bytes

    raw = bytearray(build_nifti_bytes(np.zeros((4, 4, 1), dtype=np.float32)))
    struct.pack_into("<8h", raw, 40, 2, 4, 4, 1, 1, 1, 1, 1)
    path = tmp_path / "flat.nii"
    path.write_bytes(raw)
    assert main(["make-template-pack", str(path)]) == 2


def test_phantom_command(tmp_path):
    code = main(["phantom", "--size", "32", "--output-dir", str(tmp_path)])
    assert code == 0
    vol, _ = nifti.read_nifti(tmp_path / "phantom.nii.gz")
    assert vol.dims == (32, 32, 32)
    mask, _ = nifti.read_nifti(tmp_path / "phantom_brainmask.nii.gz")
    assert set(np.unique(mask.data)).issubset({0, 1})


def test_jobs_parallel_matches_serial(workspace, tmp_path):
    root, head, _subject = workspace
    sc = nifti.sidecar_for_dtype(np.float32)
    inputs = []
    for seed in (11, 12):
        s = synthetic.random_subject(head, seed=seed)
        p = tmp_path / f"s{seed}.nii.gz"
        nifti.write_nifti(s.volume, sc, p)
        inputs.append(str(p))
    out1 = tmp_path / "serial"
    out2 = tmp_path / "parallel"
    assert main(_deface_args(root, out1, inputs, extra=["--jobs", "1"])) == 0
    assert main(_deface_args(root, out2, inputs, extra=["--jobs", "2"])) == 0
    for seed in (11, 12):
        a = (out1 / f"s{seed}_defaced.nii.gz").read_bytes()
        b = (out2 / f"s{seed}_defaced.nii.gz").read_bytes()
        assert a == b
