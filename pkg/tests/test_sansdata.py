import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from prsans.core import ContractViolation, DetectorImage
from prsans.sansdata import (FormFactorModel, ScatteringGeometry, acquisition_pairs,
                             azimuthal_average, q_map, sans_corpus, simulate_acquisition,
                             sphere_amplitude, synth_clean_pattern)


def q_by_hand(geom, row, col):
    """Q of one pixel with scalar math calls, no shared code with q_map."""
    dx = (col - geom.beam_center[0]) * geom.pixel_pitch
    dy = (row - geom.beam_center[1]) * geom.pixel_pitch
    two_theta = math.atan(math.sqrt(dx * dx + dy * dy) / geom.sample_detector_distance)
    return 4 * math.pi * math.sin(two_theta / 2) / geom.wavelength


def first_sphere_zero():
    return optimize.brentq(lambda u: math.tan(u) - u, 4.0, 4.6)


def test_q_zero_at_beam_center():
    g = ScatteringGeometry(width=9, height=9, beam_center=(4, 4))
    assert q_map(g)[4, 4] == 0.0


def test_edge_q_inside_instrument_range():
    q = q_map(ScatteringGeometry())
    assert 0.003 < q.max() < 0.8


def test_q_matches_independent_trig():
    g = ScatteringGeometry(width=40, height=30, beam_center=(17.3, 11.8), pixel_pitch=7e-3)
    q = q_map(g)
    rng = np.random.default_rng(0)
    for _ in range(200):
        i, j = int(rng.integers(0, 30)), int(rng.integers(0, 40))
        want = q_by_hand(g, i, j)
        if want > 0:
            assert abs(q[i, j] - want) <= 1e-12 * want


def test_q_radially_symmetric():
    g = ScatteringGeometry(width=33, height=33, beam_center=(16, 16))
    q = q_map(g)
    np.testing.assert_allclose(q, q[::-1, :], rtol=1e-12)
    np.testing.assert_allclose(q, q[:, ::-1], rtol=1e-12)
    np.testing.assert_allclose(q, q.T, rtol=1e-12)


def test_geometry_invariants():
    with pytest.raises(ContractViolation):
        ScatteringGeometry(wavelength=0)
    with pytest.raises(ContractViolation):
        ScatteringGeometry(beam_center=(1e4, 0))
    g = ScatteringGeometry(width=8, height=6)
    assert g.beam_center == (3.5, 2.5)
    assert ScatteringGeometry.from_dict(json.loads(g.to_json())) == g


def test_flat_model_is_constant():
    img = synth_clean_pattern(FormFactorModel("flat"), ScatteringGeometry(width=12, height=10))
    assert np.all(img.data == 1.0)


def test_sphere_limit_at_zero_q():
    m = FormFactorModel("sphere", radius=50, scale=3.0, background=0.5)
    img = synth_clean_pattern(m, ScatteringGeometry(width=9, height=9, beam_center=(4, 4)))
    assert img.data[4, 4] == pytest.approx(3.5, abs=1e-12)
    assert sphere_amplitude(np.array([1e-3]))[0] == pytest.approx(1.0, abs=1e-6)


def test_sphere_amplitude_series_is_continuous():
    u = np.array([0.00999999, 0.01000001])
    a = sphere_amplitude(u)
    exact = 3 * (np.sin(u) - u * np.cos(u)) / u**3
    np.testing.assert_allclose(a, exact, atol=1e-9)


def test_sphere_first_zero():
    u0 = first_sphere_zero()
    assert u0 == pytest.approx(4.4934, abs=1e-4)
    m = FormFactorModel("sphere", radius=50.0)
    assert m.form_factor(np.array([u0 / 50.0]))[0] < 1e-20
    assert u0 / 50 == pytest.approx(0.0899, abs=1e-4)


def test_model_invariants():
    for kw in ({"radius": 0}, {"scale": 0}, {"background": -1}, {"kind": "cube"}):
        with pytest.raises(ContractViolation):
            FormFactorModel(**kw)


def test_guinier_porod_is_continuous_at_junction():
    m = FormFactorModel("guinier_porod", rg=40.0, porod_exponent=3.0)
    q1 = np.sqrt(1.5 * 3.0) / 40.0
    a, b = m.form_factor(np.array([q1 * (1 - 1e-9), q1 * (1 + 1e-9)]))
    assert a == pytest.approx(b, rel=1e-6)


# --------------------------------------------------------------------------
# Acquisition


def small_clean(seed=0):
    rng = np.random.default_rng(seed)
    return DetectorImage(rng.uniform(0.2, 1.0, (16, 16)))


def test_long_exposure_converges():
    clean = small_clean()
    out = simulate_acquisition(clean, 1e6, 1.0, seed=1)
    assert np.linalg.norm(out.data - clean.data) / np.linalg.norm(clean.data) < 0.01


def test_poisson_mean_preservation():
    clean = small_clean(2)
    flux = 5.0
    reps = np.array([simulate_acquisition(clean, 1.0, flux, seed=s).data for s in range(1000)])
    z = (reps.mean(axis=0) - clean.data) / np.sqrt(clean.data / flux / 1000)
    # 3 standard errors per pixel: about 0.3% of 256 pixels may exceed it by chance
    assert np.mean(np.abs(z) < 3) >= 0.99
    assert abs(z.mean()) * np.sqrt(z.size) < 3


def test_variance_ratio_matches_exposure_ratio():
    clean = DetectorImage(np.full((32, 32), 0.5))
    flux = 50.0
    low = np.array([simulate_acquisition(clean, 1.0, flux, seed=s).data for s in range(400)])
    high = np.array([simulate_acquisition(clean, 12.0, flux, seed=10_000 + s).data for s in range(400)])
    ratio = low.var(axis=0).mean() / high.var(axis=0).mean()
    assert abs(ratio - 12) <= 0.15 * 12


def test_acquisition_reproducible_and_independent():
    clean = synth_clean_pattern(FormFactorModel("flat"), ScatteringGeometry())
    a = simulate_acquisition(clean, 1.0, 100.0, seed=7)
    b = simulate_acquisition(clean, 1.0, 100.0, seed=7)
    c = simulate_acquisition(clean, 1.0, 100.0, seed=8)
    assert a.data.tobytes() == b.data.tobytes()
    r = np.corrcoef((a.data - 1).ravel(), (c.data - 1).ravel())[0, 1]
    assert abs(r) < 0.05


def test_awgn_mode_variance():
    clean = DetectorImage(np.zeros((128, 128)))
    out = simulate_acquisition(clean, 4.0, mode="awgn", awgn_sigma=0.2, seed=0)
    assert out.data.std() == pytest.approx(0.1, rel=0.02)


def test_acquisition_preconditions():
    with pytest.raises(ContractViolation):
        simulate_acquisition(small_clean(), 0.0)
    with pytest.raises(ContractViolation):
        simulate_acquisition(small_clean(), 1.0, flux_scale=-1)


# --------------------------------------------------------------------------
# Reduction


@pytest.mark.parametrize("binning", ["linear", "log"])
def test_uniform_image_gives_flat_curve(binning):
    g = ScatteringGeometry(width=40, height=40, beam_center=(20, 20))
    img = DetectorImage(np.full((40, 40), 2.5), beam_center=g.beam_center)
    curve = azimuthal_average(img, g, 20, binning)
    np.testing.assert_allclose(curve.intensity[curve.valid], 2.5, rtol=1e-14)
    assert np.all(np.diff(curve.q_bins) > 0)
    expected = 40 * 40 - (1 if binning == "log" else 0)
    assert curve.pixel_count.sum() == expected


def test_smooth_profile_within_intra_bin_bound():
    g = ScatteringGeometry(width=128, height=128)
    q = q_map(g)
    f = lambda t: np.exp(-((t / 0.05) ** 2))
    fprime_max = np.sqrt(2 / np.e) / 0.05
    img = DetectorImage(f(q), beam_center=g.beam_center)
    curve = azimuthal_average(img, g, 40, "linear")
    width = np.diff(curve.edges)
    ok = curve.valid
    assert np.all(np.abs(curve.intensity[ok] - f(curve.q_bins[ok])) <= fprime_max * width[ok])


def test_quadrant_mask_changes_only_counts():
    g = ScatteringGeometry(width=64, height=64, beam_center=(31.5, 31.5))
    img = synth_clean_pattern(FormFactorModel("sphere", radius=120), g)
    mask = np.ones((64, 64), bool)
    mask[:32, :32] = False
    masked = DetectorImage(img.data, img.beam_center, mask)
    a = azimuthal_average(img, g, 30)
    b = azimuthal_average(masked, g, 30, q_range=(a.edges[0], a.edges[-1]))
    both = a.valid & b.valid
    assert np.max(np.abs(a.intensity[both] - b.intensity[both])) <= 1e-12
    assert b.pixel_count.sum() < a.pixel_count.sum()


def test_empty_bins_flagged_not_filled():
    g = ScatteringGeometry(width=6, height=6)
    img = DetectorImage(np.ones((6, 6)), beam_center=g.beam_center)
    curve = azimuthal_average(img, g, 50, "linear")
    assert (~curve.valid).any()
    assert np.all(curve.intensity[~curve.valid] == 0)
    assert curve.to_csv().splitlines()[0] == "q,intensity,pixel_count"


def test_reduction_preconditions():
    g = ScatteringGeometry(width=6, height=6)
    img = DetectorImage(np.ones((6, 6)))
    with pytest.raises(ContractViolation):
        azimuthal_average(img, g, 1)
    with pytest.raises(ContractViolation):
        azimuthal_average(img, g, 10, "cubic")
    with pytest.raises(ContractViolation):
        azimuthal_average(DetectorImage(np.ones((5, 6))), g, 10)


@given(st.integers(0, 1000))
def test_corpus_is_peak_normalised_and_seeded(seed):
    a = sans_corpus(2, 24, seed)
    b = sans_corpus(2, 24, seed)
    for x, y in zip(a, b):
        assert x.data.max() == pytest.approx(1.0) and x.data.min() >= 0
        assert np.array_equal(x.data, y.data)


def test_acquisition_pairs_exposure_ordering():
    clean = sans_corpus(3, 32, 0)
    pairs = acquisition_pairs(clean, 160.0, 12.0, 1)
    for c, (lo, hi) in zip(clean, pairs):
        assert np.linalg.norm(hi.data - c.data) < np.linalg.norm(lo.data - c.data)
