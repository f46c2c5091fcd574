import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfedic.synth import (
    SpecklePattern,
    StarLike,
    Sinusoid,
    Translation,
    add_noise,
    field_from_params,
    generate_speckle,
    ground_truth,
    preset,
    render_pair,
    warp_render,
    write_truth,
)


def brute_pattern(pattern, x, y):
    d2 = (x[..., None] - pattern.centers[:, 0]) ** 2 + (y[..., None] - pattern.centers[:, 1]) ** 2
    return pattern.background + np.sum(pattern.amplitudes * np.exp(-0.5 * d2 / pattern.radii**2), axis=-1)


def test_pattern_matches_dense_sum():
    pattern, _ = generate_speckle((60, 40), seed=4)
    pts = np.random.default_rng(0).uniform([-3, -3], [63, 43], size=(500, 2))
    fast = pattern.evaluate(pts[:, 0], pts[:, 1])
    # the 6-sigma truncation drops terms below amplitude * exp(-18)
    np.testing.assert_allclose(fast, brute_pattern(pattern, pts[:, 0], pts[:, 1]), atol=1e-6)


def test_same_seed_bit_identical():
    a = generate_speckle((50, 30), seed=11)[1]
    b = generate_speckle((50, 30), seed=11)[1]
    c = generate_speckle((50, 30), seed=12)[1]
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_warp_exactness():
    pattern, _ = generate_speckle((40, 30), seed=2)
    field = Sinusoid(0.3, 0.2)
    g = warp_render(pattern, field, 40, 30)
    yy, xx = np.mgrid[0:30, 0:40].astype(float)
    u, v = field.displacement(xx, yy)
    assert np.array_equal(g, np.clip(pattern.evaluate(xx - u, yy - v), 0, 1))


def test_zero_field_reproduces_reference():
    pattern, ref = generate_speckle((40, 30), seed=2)
    assert np.array_equal(warp_render(pattern, Translation(0.0, 0.0), 40, 30), ref)


def test_speckle_statistics():
    _, img = generate_speckle((200, 200), seed=0)
    assert 0 <= img.min() and img.max() <= 1
    assert img.std() > 0.15  # well-contrasted
    with pytest.raises(ValueError):
        generate_speckle((20, 20), radius_range=(0.5, 1.0))
    with pytest.raises(ValueError):
        SpecklePattern(np.zeros((0, 2)), np.zeros(0), np.zeros(0))


def test_noise_statistics_and_determinism():
    img = np.full((300, 300), 0.5)
    n1 = add_noise(img, 0.02, seed=5)
    assert np.array_equal(n1, add_noise(img, 0.02, seed=5))
    assert np.std(n1 - img) == pytest.approx(0.02, rel=0.03)
    assert abs(np.mean(n1 - img)) < 1e-3
    assert np.array_equal(add_noise(img, 0.0), img)
    with pytest.raises(ValueError):
        add_noise(img, -1.0)


@given(st.floats(0.01, 1.0), st.floats(0.01, 0.5), st.floats(0, 500), st.floats(0, 500))
def test_sinusoid_strain_is_derivative(a, w, x, y):
    f = Sinusoid(a, w)
    e = 1e-6
    du = (f.displacement(x + e, y)[0] - f.displacement(x - e, y)[0]) / (2 * e)
    assert f.strain(x, y)[0] == pytest.approx(du, abs=1e-7)


@given(st.floats(20, 1020), st.floats(20, 220))
def test_star_strain_is_derivative(x, y):
    f = preset("star-like").deformation
    e = 1e-5
    dvdy = (f.displacement(x, y + e)[1] - f.displacement(x, y - e)[1]) / (2 * e)
    dvdx = (f.displacement(x + e, y)[1] - f.displacement(x - e, y)[1]) / (2 * e)
    _, eyy, exy = f.strain(x, y)
    assert eyy == pytest.approx(dvdy, abs=1e-6)
    assert exy == pytest.approx(0.5 * dvdx, abs=1e-6)


def test_star_centre_row_is_constant():
    f = StarLike(0.1, 10, 200, 20, 1020, 120)
    x = np.linspace(20, 1020, 50)
    u, v = f.displacement(x, np.full_like(x, 120.0))
    np.testing.assert_allclose(v, 0.1)
    np.testing.assert_allclose(u, 0.0)
    assert f.period(20) == 10 and f.period(1020) == 200


def test_presets():
    p = preset("example1")
    assert (p.width, p.height, p.deformation.amplitude, p.deformation.frequency) == (500, 500, 0.05, 0.05)
    assert p.zoi[2:] == (400, 400)
    assert preset("example2").deformation.frequency == 0.2
    with pytest.raises(ValueError):
        preset("nope")


def test_truth_sidecar_roundtrip(tmp_path):
    p = preset("example2")
    doc = write_truth(tmp_path / "t.json", p, 3)
    back = json.loads((tmp_path / "t.json").read_text())
    assert back == doc and back["deformation"]["w"] == 0.2 and back["seed"] == 3
    field = field_from_params(back["deformation"])
    pts = np.array([[100.0, 50.0], [250.5, 3.0]])
    np.testing.assert_allclose(ground_truth(field, pts)["u"], p.deformation.displacement(pts[:, 0], pts[:, 1])[0])
    star = preset("star-like").deformation
    assert field_from_params(star.params()) == star


def test_render_pair_noise_independent():
    p = preset("translation")
    _, ref, deformed = render_pair(p, 0)
    assert ref.shape == (240, 240)
    _, ref2, _ = render_pair(p, 0)
    assert np.array_equal(ref, ref2)
