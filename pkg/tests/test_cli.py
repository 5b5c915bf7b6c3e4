import numpy as np
import pytest

from mipcore import cli
from mipcore.io import (
    KIND_LABEL, MipContainer, format_phantom_spec, read_mip_container, read_nifti, read_report,
    write_mip_container, write_nifti,
)
from mipcore.metrics import segmentation_scores
from mipcore.phantom import ORGAN, TUMOR, PhantomSpec, SphereSpec, generate
from mipcore.volume import VolumeKind

from suite import PHANTOMS


def write_case(tmp_path, spec, name="case"):
    d = tmp_path / name
    d.mkdir()
    pet, lab = generate(spec)
    write_nifti(pet, d / "pet.nii.gz")
    write_nifti(lab, d / "labels.nii.gz")
    return d / "pet.nii.gz", d / "labels.nii.gz"


def run_project(tmp_path, spec, n=4, out="proj", extra=()):
    pet, lab = write_case(tmp_path, spec, name=out + "_in")
    out_dir = tmp_path / out
    code = cli.main(["project", "--pet", str(pet), "--labels", str(lab), "--n", str(n),
                     "--out", str(out_dir), *extra])
    assert code == 0
    return out_dir, lab


def run_correct(out_dir, lab, dest, extra=()):
    return cli.main([
        "correct", "--intensity", str(out_dir / cli.INTENSITY_FILE),
        "--provenance", str(out_dir / cli.PROVENANCE_FILE),
        "--label-mips", str(out_dir / cli.LABELS_FILE), "--labels", str(lab),
        "--out", str(dest), *extra,
    ])


@pytest.mark.parametrize("n, delta", [(16, "11.25"), (48, "3.75")])
def test_project_counts(tmp_path, capsys, n, delta):
    out_dir, _ = run_project(tmp_path, PHANTOMS["no_occlusion"], n=n)
    line = capsys.readouterr().out
    assert f"n={n} " in line and f"delta_theta={delta} " in line
    for name in (cli.INTENSITY_FILE, cli.PROVENANCE_FILE, cli.LABELS_FILE):
        c = read_mip_container(out_dir / name)
        assert len(c.angles) == n and c.angles[1] == float(delta)


def test_missing_input_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.nii.gz"
    assert cli.main(["project", "--pet", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_manifest(tmp_path):
    pet, lab = write_case(tmp_path, PHANTOMS["partial"])
    manifest = tmp_path / "cases.txt"
    manifest.write_text(f"# cases\nA {pet} {lab}\nB {pet}\n")
    assert cli.main(["project", "--manifest", str(manifest), "--n", "2", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "A" / cli.LABELS_FILE).exists()
    assert (tmp_path / "o" / "B" / cli.INTENSITY_FILE).exists()
    assert not (tmp_path / "o" / "B" / cli.LABELS_FILE).exists()


def test_correct_no_occluder(tmp_path):
    out_dir, lab = run_project(tmp_path, PHANTOMS["no_occlusion"], extra=["--interp", "nearest"])
    assert run_correct(out_dir, lab, tmp_path / "c") == 0
    before = read_mip_container(out_dir / cli.LABELS_FILE).data
    after = read_mip_container(tmp_path / "c" / cli.CORRECTED_FILE).data
    assert np.array_equal(before, after)
    meta, _ = read_report(tmp_path / "c" / cli.CORRECTION_REPORT)
    assert meta["tumors_excluded"] == "0" and meta["tumors_total"] == "1"


def test_correct_enclosed_excluded(tmp_path):
    out_dir, lab = run_project(tmp_path, PHANTOMS["enclosed"], extra=["--interp", "nearest"])
    assert run_correct(out_dir, lab, tmp_path / "c") == 0
    meta, rows = read_report(tmp_path / "c" / cli.CORRECTION_REPORT)
    assert float(meta["tumor_excluded_fraction"]) == 1.0
    assert float(meta["volume_excluded_fraction"]) == 1.0
    assert not read_mip_container(tmp_path / "c" / cli.CORRECTED_FILE).data.any()


def test_threshold_echoed(tmp_path):
    out_dir, lab = run_project(tmp_path, PHANTOMS["partial"])
    assert run_correct(out_dir, lab, tmp_path / "c", ["--origin-threshold", "0.5", "--ring-radius", "2"]) == 0
    meta, _ = read_report(tmp_path / "c" / cli.CORRECTION_REPORT)
    assert meta["config.origin_threshold"] == "0.5"
    assert meta["config.contrast_ring_radius_px"] == "2"
    assert "version" in meta


def test_correct_geometry_mismatch(tmp_path, capsys):
    out_dir, lab = run_project(tmp_path, PHANTOMS["partial"])
    other, _ = run_project(tmp_path, PHANTOMS["partial"], n=2, out="other")
    code = cli.main([
        "correct", "--intensity", str(out_dir / cli.INTENSITY_FILE),
        "--provenance", str(out_dir / cli.PROVENANCE_FILE),
        "--label-mips", str(other / cli.LABELS_FILE), "--labels", str(lab),
        "--out", str(tmp_path / "c"),
    ])
    assert code == 1 and "angle" in capsys.readouterr().err
    assert not (tmp_path / "c" / cli.CORRECTED_FILE).exists()


def test_partial_outputs_removed(tmp_path):
    # the report write fails after the corrected container has been written
    out_dir, lab = run_project(tmp_path, PHANTOMS["partial"])
    dest = tmp_path / "c"
    (dest / cli.CORRECTION_REPORT).mkdir(parents=True)
    assert run_correct(out_dir, lab, dest) == 1
    assert not (dest / cli.CORRECTED_FILE).exists()


def _label_container(path, data, angles):
    write_mip_container(MipContainer(KIND_LABEL, angles, data.astype(np.uint8)), path)


def test_metrics_identity_and_empty(tmp_path, rng):
    truth = rng.random((3, 10, 12)) > 0.6
    angles = (0.0, 60.0, 120.0)
    _label_container(tmp_path / "t.mips", truth, angles)
    assert cli.main(["metrics", "--pred", str(tmp_path / "t.mips"), "--truth", str(tmp_path / "t.mips"),
                     "--out", str(tmp_path / "same")]) == 0
    meta, rows = read_report(tmp_path / "same" / cli.SCORES_FILE)
    assert [(r["dice"], r["iou"], r["hausdorff"]) for r in rows] == [("1", "1", "0")] * 3
    assert meta["dice_mean"] == "1" and meta["hausdorff_units"] == "pixels"

    _label_container(tmp_path / "e.mips", np.zeros_like(truth), angles)
    assert cli.main(["metrics", "--pred", str(tmp_path / "e.mips"), "--truth", str(tmp_path / "t.mips"),
                     "--out", str(tmp_path / "empty")]) == 0
    meta, rows = read_report(tmp_path / "empty" / cli.SCORES_FILE)
    assert all(r["dice"] == "0" and r["hausdorff"] == "" and r["hd_undefined_flag"] == "1" for r in rows)
    assert meta["hausdorff_mean"] == "" and meta["hausdorff_undefined_count"] == "3"


def test_metrics_match_module(tmp_path, rng):
    truth = rng.random((2, 9, 9)) > 0.5
    pred = rng.random((2, 9, 9)) > 0.5
    _label_container(tmp_path / "t.mips", truth, (0.0, 90.0))
    _label_container(tmp_path / "p.mips", pred, (0.0, 90.0))
    rows = cli.score_stacks(read_mip_container(tmp_path / "p.mips"), read_mip_container(tmp_path / "t.mips"))
    for k, r in enumerate(rows):
        s = segmentation_scores(pred[k], truth[k])
        assert (r.dice, r.iou, r.hausdorff) == (s.dice, s.iou, s.hausdorff)


SPEC = PhantomSpec((12, 12, 8), [SphereSpec((6, 3, 4), 2.5, 9.0, ORGAN), SphereSpec((6, 8, 4), 2, 4.0, TUMOR)],
                   background_intensity=0.5, noise_sigma=0.1, seed=3)


def test_phantom_round_trip_and_determinism(tmp_path):
    spec_path = tmp_path / "spec.txt"
    spec_path.write_text(format_phantom_spec(SPEC))
    assert cli.main(["phantom", str(spec_path), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["phantom", str(spec_path), "--out", str(tmp_path / "b")]) == 0
    for name in ("pet.nii.gz", "labels.nii.gz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    pet, lab = generate(SPEC)
    assert np.array_equal(read_nifti(tmp_path / "a" / "pet.nii.gz").data, pet.data)
    assert np.array_equal(read_nifti(tmp_path / "a" / "labels.nii.gz", VolumeKind.LABEL).data, lab.data)
    assert cli.main(["phantom", str(spec_path), "--seed", "4", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "pet.nii.gz").read_bytes() != (tmp_path / "a" / "pet.nii.gz").read_bytes()


def test_phantom_bad_line(tmp_path, capsys):
    spec_path = tmp_path / "spec.txt"
    spec_path.write_text("dims = 8 8 8\nsphere = tumor 1 2 3\n")
    assert cli.main(["phantom", str(spec_path), "--out", str(tmp_path / "a")]) == 1
    assert "line 2:" in capsys.readouterr().err


def test_sweep(tmp_path):
    spec_path = tmp_path / "spec.txt"
    spec_path.write_text(format_phantom_spec(PHANTOMS["partial"]))
    assert cli.main(["sweep", "--phantom", str(spec_path), "--n-list", "2,4,8", "--repeats", "1",
                     "--out", str(tmp_path / "s")]) == 0
    meta, rows = read_report(tmp_path / "s" / cli.SWEEP_FILE)
    assert [r["n"] for r in rows] == ["2", "4", "8"]
    assert [float(r["delta_theta"]) for r in rows] == [90.0, 45.0, 22.5]
    assert list(rows[0]) == cli.SWEEP_COLUMNS and "config.origin_threshold" in meta
    sizes = [int(r["bytes"]) for r in rows]
    assert sizes == sorted(sizes)

    assert cli.main(["sweep", "--phantom", str(spec_path), "--n-list", "4", "--repeats", "1",
                     "--out", str(tmp_path / "one")]) == 0
    assert len(read_report(tmp_path / "one" / cli.SWEEP_FILE)[1]) == 1


def test_sweep_rejects_duplicates(tmp_path, capsys):
    assert cli.main(["sweep", "--phantom", "x", "--n-list", "16,16", "--out", str(tmp_path)]) == 1
    assert "duplicate" in capsys.readouterr().err
