import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtransport import grid as gr
from qtransport.errors import ContractError, RealityError


def test_grid_validation():
    for bad in [(0, 8, 1.0), (4, 8, 1.0), (1, 7, 1.0), (1, 8, 0.0), (3, 256, 1.0)]:
        with pytest.raises(ContractError):
            gr.ConfigurationGrid(*bad)


@pytest.mark.parametrize("dim,n,L", [(1, 8, np.pi), (2, 16, 3.0), (3, 8, 1.5)])
def test_grid_invariants(dim, n, L):
    g = gr.ConfigurationGrid(dim, n, L)
    assert g.cell_volume * g.size == pytest.approx((2 * L) ** dim, rel=1e-14)
    freqs = np.sort(g.frequency_list())
    unpaired = [f for f in freqs if not np.any(np.isclose(freqs, -f, atol=1e-12))]
    assert len(unpaired) == 1 and unpaired[0] == pytest.approx(-np.pi * n / (2 * L))
    assert g.points().shape == (g.size, dim)


def test_integrate_examples():
    g = gr.ConfigurationGrid(1, 8, np.pi)
    assert gr.integrate(g, np.ones(8)) == pytest.approx(2 * np.pi, abs=1e-14)
    assert abs(gr.integrate(g, np.sin(g.axis))) < 1e-14
    g2 = gr.ConfigurationGrid(1, 256, 10.0)
    assert gr.integrate(g2, np.exp(-g2.axis ** 2 / 2) / np.sqrt(2 * np.pi)) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ContractError):
        gr.integrate(g2, np.ones(10))


def test_derivative_examples():
    g = gr.ConfigurationGrid(1, 64, np.pi)
    assert np.max(np.abs(gr.derivative(g, np.full(64, 3.0), 0))) < 1e-14
    assert np.max(np.abs(gr.derivative(g, np.sin(g.axis), 0) - np.cos(g.axis))) < 1e-12
    g2 = gr.ConfigurationGrid(1, 256, 10.0)
    x = g2.axis
    assert np.max(np.abs(gr.derivative(g2, np.exp(-x ** 2), 0) + 2 * x * np.exp(-x ** 2))) < 1e-8
    with pytest.raises(ContractError):
        gr.derivative(g, np.sin(g.axis), 1)


def test_derivative_2d_and_batch(rng):
    g = gr.ConfigurationGrid(2, 32, np.pi)
    x, y = g.coords()
    f = np.sin(x) * np.cos(2 * y)
    assert np.max(np.abs(gr.derivative(g, f, 1) + 2 * np.sin(x) * np.sin(2 * y))) < 1e-12
    batch = np.stack([f, 2 * f])
    d = gr.derivative(g, batch, 0)
    assert np.allclose(d[1], 2 * gr.derivative(g, f, 0), atol=1e-13)
    c = gr.derivative(g, f + 1j * f, 0)
    assert np.allclose(c, (1 + 1j) * gr.derivative(g, f, 0), atol=1e-13)


def test_derivative_real_and_antisymmetric(rng):
    g = gr.ConfigurationGrid(2, 16, 2.0)
    a, b = rng.normal(size=g.shape), rng.normal(size=g.shape)
    for ax in range(2):
        da = gr.derivative(g, a, ax)
        assert np.isrealobj(da)
        lhs = gr.inner(g, a, gr.derivative(g, b, ax))
        rhs = -gr.inner(g, da, b)
        assert abs(lhs - rhs) < 1e-12 * max(1, abs(lhs))


def test_fourier_constant_and_gaussian():
    L = 5.0
    g = gr.ConfigurationGrid(1, 64, L)
    psi = gr.fourier_forward(g, np.full(64, (2 * L) ** -0.5))
    assert psi[0] == pytest.approx((2 * L) ** 0.5, abs=1e-13)
    assert np.max(np.abs(psi[1:])) < 1e-13
    g2 = gr.ConfigurationGrid(1, 256, 12.0)
    s = 0.8
    q = np.exp(-g2.axis ** 2 / (2 * s ** 2))
    psi = gr.fourier_forward(g2, q)
    for m in [0, 1, 3, 7, 12]:
        gam = g2.frequencies[m]
        exact = s * np.sqrt(2 * np.pi) * np.exp(-s ** 2 * gam ** 2 / 2)
        assert psi[m] == pytest.approx(exact, abs=1e-12)
        assert psi[m].real > 0


def test_reality_constraint_and_round_trip(rng):
    g = gr.ConfigurationGrid(2, 16, 3.0)
    q = rng.normal(size=g.shape)
    q /= np.sqrt(gr.integrate(g, q ** 2))
    psi = gr.fourier_forward(g, q)
    assert gr.constraint_defect(g, psi) < 1e-13
    assert np.max(np.abs(gr.fourier_inverse(g, psi) - q)) < 1e-12
    assert g.dual_weight * np.sum(np.abs(psi) ** 2) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(RealityError):
        gr.fourier_inverse(g, psi + 0.1j)


def test_shift_theorem():
    g = gr.ConfigurationGrid(1, 64, 4.0)
    q = np.exp(-g.axis ** 2)
    a = 5 * g.spacing
    shifted = gr.fourier_inverse(g, gr.fourier_forward(g, q) * np.exp(-1j * g.frequencies * a))
    assert np.max(np.abs(shifted - np.roll(q, 5))) < 1e-12


def test_inverse_cosine_sum():
    g = gr.ConfigurationGrid(1, 32, np.pi)
    psi = np.zeros(32, dtype=complex)
    modes = {1: (0.7, 0.3), 2: (0.4, -1.1), 5: (0.2, 2.0)}
    for m, (amp, delta) in modes.items():
        psi[m] = amp * np.exp(1j * delta)
        psi[-m] = np.conj(psi[m])
    q = gr.fourier_inverse(g, psi)
    x = g.axis
    # integral over gamma is (1/2L) sum, each pair contributes 2|psi| cos(sigma gamma + delta)
    expected = sum(2 * amp * np.cos(x * m + d) for m, (amp, d) in modes.items()) / (2 * np.pi)
    assert np.max(np.abs(q - expected)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.sampled_from([4, 6, 8]), st.floats(0.5, 5.0), st.integers(0, 2 ** 31))
def test_parseval(dim, n, L, seed):
    g = gr.ConfigurationGrid(dim, n, L)
    q = np.random.default_rng(seed).normal(size=g.shape)
    psi = gr.fourier_forward(g, q)
    assert g.dual_weight * np.sum(np.abs(psi) ** 2) == pytest.approx(gr.integrate(g, q ** 2), rel=1e-12)


def test_interpolation_exact_for_band_limited():
    g = gr.ConfigurationGrid(2, 32, np.pi)
    x, y = g.coords()
    f = np.sin(x) * np.cos(3 * y) + 0.5
    pts = np.random.default_rng(0).uniform(-np.pi, np.pi, size=(50, 2))
    exact = np.sin(pts[:, 0]) * np.cos(3 * pts[:, 1]) + 0.5
    assert np.max(np.abs(gr.interpolate(g, f, pts) - exact)) < 1e-12


def test_snapshot_round_trip(tmp_path, rng):
    g = gr.ConfigurationGrid(2, 8, 2.5)
    for vals in (rng.normal(size=g.shape), rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)):
        path = tmp_path / "s.qts"
        gr.write_snapshot(path, g, vals, basis="sigma", time=0.25, meta={"seed": 3})
        g2, v2, header = gr.read_snapshot(path)
        assert g2 == g and np.array_equal(v2, vals)
        assert header["time"] == 0.25 and header["meta"]["seed"] == 3


def test_csv_export(tmp_path):
    g = gr.ConfigurationGrid(1, 4, 1.0)
    gr.export_csv(tmp_path / "q.csv", g, np.array([0.1, 0.2, 0.3, 1 / 3]), ["seed=1"])
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "# seed=1" and lines[1] == "sigma1,value"
    assert float(lines[-1].split(",")[1]) == 1 / 3
    with pytest.raises(ContractError):
        gr.export_csv(tmp_path / "x.csv", gr.ConfigurationGrid(3, 2, 1.0), np.zeros(8))
