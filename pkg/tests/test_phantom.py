import math
import warnings

import numpy as np
import pytest

from mipcore.errors import InvalidParameterError
from mipcore.phantom import (
    BACKGROUND, ORGAN, OUT_OF_FIELD, TUMOR, PhantomSpec, SphereSpec, generate, oracle_annotation,
    oracle_visibility, tumor_won_mask,
)
from mipcore.projection import angular_plan, project_labels, project_stack
from suite import PHANTOMS


def test_empty_phantom():
    pet, lab = generate(PhantomSpec((5, 6, 7), background_intensity=0.8))
    assert pet.dims == (5, 6, 7)
    assert np.all(pet.data == np.float32(0.8)) and not lab.data.any()


def test_sphere_voxel_count():
    spec = PhantomSpec((21, 21, 21), [SphereSpec((10, 10, 10), 5, 3.0)])
    _, lab = generate(spec)
    expected = 4 / 3 * math.pi * 5 ** 3
    assert abs(int(lab.data.sum()) - expected) <= 0.02 * expected


def test_deterministic_with_noise():
    spec = PhantomSpec((8, 9, 10), [SphereSpec((4, 4, 4), 3, 3.0)], noise_sigma=0.2, seed=42)
    a, _ = generate(spec)
    b, _ = generate(spec)
    assert a.data.tobytes() == b.data.tobytes()
    c, _ = generate(PhantomSpec((8, 9, 10), spec.spheres, noise_sigma=0.2, seed=43))
    assert a.data.tobytes() != c.data.tobytes()


def test_overlap_resolves_by_max_and_labels_tumor():
    spec = PhantomSpec((9, 9, 9), [SphereSpec((4, 4, 4), 3, 8.0, ORGAN), SphereSpec((4, 4, 4), 1, 5.0, TUMOR)])
    pet, lab = generate(spec)
    assert pet.data[4, 4, 4] == 8.0 and lab.data[4, 4, 4] == 1


def test_sphere_outside_warns():
    with pytest.warns(UserWarning):
        generate(PhantomSpec((4, 4, 4), [SphereSpec((40, 40, 40), 2, 1.0)]))


def test_background_must_be_below_spheres():
    with pytest.raises(InvalidParameterError):
        PhantomSpec((4, 4, 4), [SphereSpec((1, 1, 1), 1, 1.0)], background_intensity=2.0)


@pytest.mark.parametrize("kw", [dict(radius=0), dict(intensity=-1), dict(kind="bone")])
def test_invalid_sphere(kw):
    args = dict(center=(0, 0, 0), radius=1, intensity=1, kind=TUMOR)
    args.update(kw)
    with pytest.raises(InvalidParameterError):
        SphereSpec(**args)


def test_oracle_rejects_noise():
    spec = PhantomSpec((4, 4, 4), noise_sigma=0.1)
    with pytest.raises(InvalidParameterError):
        oracle_visibility(spec, 0.0)


def test_oracle_single_tumor():
    spec = PhantomSpec((16, 16, 8), [SphereSpec((8, 8, 4), 3, 5.0)], background_intensity=1.0)
    for angle in (0.0, 30.0, 90.0):
        w = oracle_visibility(spec, angle)
        assert np.array_equal(w == 1, oracle_annotation(spec, angle))
        assert set(np.unique(w)) <= {OUT_OF_FIELD, BACKGROUND, 1}


def test_oracle_front_occluder():
    spec = PHANTOMS["full_front"]  # organ (id 1) in front of tumor (id 2) along y
    disk = oracle_annotation(spec, 0.0)
    assert disk.any()
    assert np.all(oracle_visibility(spec, 0.0)[disk] == 1)
    side = oracle_annotation(spec, 90.0)
    assert np.all(oracle_visibility(spec, 90.0)[side] == 2)


def test_oracle_dim_organ():
    spec = PHANTOMS["dim_organ"]
    for angle in (0.0, 45.0, 90.0):
        disk = oracle_annotation(spec, angle)
        assert np.all(oracle_visibility(spec, angle)[disk] == 2)


@pytest.mark.parametrize("name", sorted(PHANTOMS))
def test_provenance_classifies_like_oracle(name):
    spec = PHANTOMS[name]
    pet, lab = generate(spec)
    plan = angular_plan(4)
    stack = project_stack(pet, plan, "nearest")
    labels = project_labels(lab, plan)
    for k, angle in enumerate(plan.angles):
        w = oracle_visibility(spec, angle)
        prov = stack.provenance[k].data
        np.testing.assert_array_equal(prov[..., 0] < 0, w == OUT_OF_FIELD)
        won = lab.data[prov[..., 2], prov[..., 1], prov[..., 0]].astype(bool) & (prov[..., 0] >= 0)
        np.testing.assert_array_equal(won, tumor_won_mask(spec, w))
        np.testing.assert_array_equal(labels.images[k].data.astype(bool), oracle_annotation(spec, angle))
