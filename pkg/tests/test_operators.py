import numpy as np
import pytest

from qtransport import grid as gr
from qtransport import model as mdl
from qtransport import operators as op
from qtransport import wavefunction as wf
from qtransport.errors import BudgetError, ContractError, DegenerateError, NotApplicableError

BUILTINS = [mdl.constant([1.0, -0.5]), mdl.linear(1.0, 2), mdl.rotation(1.0), mdl.anharmonic(0.5)]


def _norm(g, v):
    return float(np.sqrt(g.cell_volume * np.sum(np.abs(v) ** 2)))


def test_linearity(rng):
    g = gr.ConfigurationGrid(2, 16, 4.0)
    h = op.hamiltonian(mdl.anharmonic(0.5), g)
    a, b = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape), rng.normal(size=g.shape)
    al, be = 0.3 - 1.2j, 2.0
    assert np.max(np.abs(h(al * a + be * b) - al * h(a) - be * h(b))) < 1e-12 * np.max(np.abs(h(a)))


def test_sigma_op_examples():
    g = gr.ConfigurationGrid(1, 256, 10.0)
    s = op.sigma_op(g, 0)
    u = wf.uniform(g)
    assert np.allclose(s(u.values), g.axis * u.values)
    assert abs(op.expectation(wf.gaussian(g, 0.0, 1.0), s)) < 1e-12
    assert op.expectation(wf.gaussian(g, 1.5, 1.0), s) == pytest.approx(1.5, abs=1e-8)
    with pytest.raises(ContractError):
        op.sigma_op(g, 1)


def test_gamma_op_examples(rng):
    g = gr.ConfigurationGrid(1, 256, 10.0)
    q = wf.gaussian(g, 0.0, 1.0)
    assert abs(op.expectation(q, op.gamma_op(g, 0))) < 1e-12
    assert op.expectation(q, op.gamma_squared_op(g)) == pytest.approx(0.25, abs=1e-8)
    g2 = gr.ConfigurationGrid(2, 32, 5.0)
    q2 = wf.RealWaveFunction(g2, wf.random_smooth_state(g2, rng))
    assert abs(op.expectation(q2, op.gamma_op(g2, 1))) < 1e-12
    k0 = g.frequencies[5]
    plane = np.exp(1j * k0 * g.axis)
    assert np.max(np.abs(op.gamma_op(g, 0)(plane) - k0 * plane)) < 1e-11


def test_canonical_commutator(rng):
    g = gr.ConfigurationGrid(2, 64, 8.0)
    v = wf.random_smooth_state(g, rng)
    for k in range(2):
        for l in range(2):
            c = op.commutator(op.sigma_op(g, k), op.gamma_op(g, l))(v)
            target = 1j * v if k == l else 0 * v
            assert np.max(np.abs(c - target)) < 1e-9
    assert np.max(np.abs(op.commutator(op.sigma_op(g, 0), op.sigma_op(g, 1))(v))) < 1e-14


@pytest.mark.parametrize("f", BUILTINS, ids=lambda f: f.name)
def test_hermiticity(f, rng):
    g = gr.ConfigurationGrid(2, 32, 6.0)
    noise = [(rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape),
              rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)) for _ in range(20)]
    for o in (op.hamiltonian(f, g), op.angular_momentum(g)):
        assert op.hermiticity_defect(o, noise) < 1e-10
    # H^2 amplifies white noise by ~|F|^2 gamma_max^2, so use unit band-limited states
    smooth = [(wf.random_smooth_state(g, rng, complex_valued=True),
               wf.random_smooth_state(g, rng, complex_valued=True)) for _ in range(20)]
    assert op.hermiticity_defect(op.hamiltonian_squared_explicit(f, g), smooth) < 1e-10


def test_hamiltonian_is_imaginary_on_real_input(rng):
    g = gr.ConfigurationGrid(2, 16, 4.0)
    v = rng.normal(size=g.shape)
    hv = op.hamiltonian(mdl.anharmonic(0.5), g)(v)
    assert np.max(np.abs(hv.real)) == 0.0


def test_constant_model_hamiltonian_is_gamma():
    g = gr.ConfigurationGrid(1, 64, np.pi)
    h = op.hamiltonian(mdl.constant(1.0), g)
    v = np.exp(-g.axis ** 2) * np.cos(3 * g.axis)
    assert np.max(np.abs(h(v) - op.gamma_op(g, 0)(v))) < 1e-13
    h2 = op.hamiltonian_squared_explicit(mdl.constant(1.0), g)
    assert np.max(np.abs(h2(v) - op.gamma_squared_op(g)(v))) < 1e-11
    s = op.spectrum(h, k=10)
    # the zeroed Nyquist mode adds a second null vector
    assert np.allclose(np.sort(s.eigenvalues), [-4, -3, -2, -1, 0, 0, 1, 2, 3, 4], atol=1e-10)


def test_rotation_hamiltonian_on_m1_harmonic():
    g = gr.ConfigurationGrid(2, 64, 8.0)
    x, y = g.coords()
    # a radial window commutes with L3 and keeps the sample band limited
    v = (x + 1j * y) * np.exp(-(x ** 2 + y ** 2) / 2)
    hv = op.hamiltonian(mdl.rotation(1.0), g)(v)
    inner = x ** 2 + y ** 2 < 4.0 ** 2
    assert np.max(np.abs(hv + v)[inner]) < 1e-10


@pytest.mark.parametrize("f", BUILTINS, ids=lambda f: f.name)
def test_explicit_square_matches_composition(f, rng):
    g = gr.ConfigurationGrid(2, 64, 8.0)
    h = op.hamiltonian(f, g)
    h2 = op.hamiltonian_squared_explicit(f, g)
    for _ in range(20):
        v = wf.random_smooth_state(g, rng)
        ref = h(h(v))
        assert _norm(g, h2(v) - ref) < 1e-8 * max(_norm(g, ref), 1e-300) + 1e-12


def test_explicit_square_quadrature_form(rng):
    g = gr.ConfigurationGrid(2, 64, 8.0)
    f = mdl.anharmonic(0.5)
    q = wf.RealWaveFunction(g, wf.random_smooth_state(g, rng))
    pts = g.points()
    force = f.force_at(pts).T.reshape((2,) + g.shape)
    div = f.divergence_at(pts).reshape(g.shape)
    integrand = sum(force[k] * gr.derivative(g, q.values, k) for k in range(2)) + 0.5 * div * q.values
    direct = gr.integrate(g, integrand ** 2)
    val = op.expectation(q, op.hamiltonian_squared_explicit(f, g))
    assert val == pytest.approx(direct, rel=1e-8)


def test_explicit_square_without_hessian():
    f = mdl.ForceField.from_callable(1, lambda s: np.sin(s), name="sine")
    g = gr.ConfigurationGrid(1, 32, np.pi)
    assert f.hessian is None
    with pytest.raises(NotApplicableError):
        op.hamiltonian_squared_explicit(f, g, fallback=False)
    h2 = op.hamiltonian_squared_explicit(f, g)
    v = np.exp(-g.axis ** 2)
    h = op.hamiltonian(f, g)
    assert np.max(np.abs(h2(v) - h(h(v)))) < 1e-12


def test_heisenberg_derivative(rng):
    g = gr.ConfigurationGrid(1, 128, 8.0)
    h = op.hamiltonian(mdl.linear(1.0, 1), g)
    d = op.heisenberg_derivative(h, op.sigma_op(g, 0))
    for _ in range(5):
        v = wf.random_smooth_state(g, rng)
        assert np.max(np.abs(d(v) + g.axis * v)) < 1e-9
    v = wf.random_smooth_state(g, rng)
    assert np.max(np.abs(op.heisenberg_derivative(h, h)(v))) < 1e-12


@pytest.mark.parametrize("f,nonzero", [(mdl.rotation(1.0), False), (mdl.anharmonic(0.5), True)],
                         ids=["rotation", "anharmonic"])
def test_heisenberg_derivative_matches_finite_difference(f, nonzero):
    from qtransport.evolution import unitary_step
    g = gr.ConfigurationGrid(2, 64, 8.0)
    h = op.hamiltonian(f, g)
    q = wf.gaussian(g, [1.0, 0.5], [[0.3, 0.1], [0.1, 0.6]])
    g2 = op.gamma_squared_op(g)
    dt = 1e-3
    qp, qm = unitary_step(h, q, dt), unitary_step(h, q, -dt)
    fd = (op.expectation(qp, g2) - op.expectation(qm, g2)) / (2 * dt)
    exact = op.expectation(q, op.heisenberg_derivative(h, g2))
    # gamma^2 is rotation invariant, so only the anharmonic flow changes the roughness
    assert (abs(exact) > 1e-2) == nonzero
    assert fd == pytest.approx(exact, abs=1e-5)


def test_symmetry_generators(rng):
    g = gr.ConfigurationGrid(2, 64, 8.0)
    l3 = op.angular_momentum(g, 3)
    q = wf.RealWaveFunction(g, wf.random_smooth_state(g, rng))
    assert abs(op.expectation(q, l3)) < 1e-12
    so2 = op.symmetry_generator((mdl.SO2, np.zeros(2)), g)
    v = wf.random_smooth_state(g, rng)
    assert np.max(np.abs(so2(v) - l3(v))) < 1e-13
    x, y = g.coords()
    direct = -1j * (x * gr.derivative(g, v, 1) - y * gr.derivative(g, v, 0))
    assert np.max(np.abs(l3(v) - direct)) < 1e-10
    g1 = gr.ConfigurationGrid(1, 32, 3.0)
    shift = op.symmetry_generator((np.zeros((1, 1)), np.ones(1)), g1)
    v1 = np.exp(-g1.axis ** 2)
    assert np.array_equal(shift(v1), op.gamma_op(g1, 0)(v1))
    c = op.commutator(l3, op.hamiltonian(mdl.rotation(1.0), g))
    assert np.max(np.abs(c(v))) < 1e-10


def test_generator_with_trace_is_hermitian(rng):
    g = gr.ConfigurationGrid(2, 16, 4.0)
    dil = op.symmetry_generator((np.eye(2), np.zeros(2)), g)
    pairs = [(rng.normal(size=g.shape), rng.normal(size=g.shape)) for _ in range(10)]
    assert op.hermiticity_defect(dil, pairs) < 1e-10


def test_angular_momentum_dimensions():
    with pytest.raises(NotApplicableError):
        op.angular_momentum(gr.ConfigurationGrid(1, 8, 1.0))
    g3 = gr.ConfigurationGrid(3, 16, 4.0)
    x, y, z = g3.coords()
    v = np.exp(-(x ** 2 + 2 * y ** 2 + 3 * z ** 2)) * (1 + x)
    l1 = op.angular_momentum(g3, 1)
    direct = -1j * (y * gr.derivative(g3, v, 2) - z * gr.derivative(g3, v, 1))
    assert np.max(np.abs(l1(v) - direct)) < 1e-8


def test_expectation_rules(rng):
    g = gr.ConfigurationGrid(1, 256, 10.0)
    q = wf.gaussian(g, 0.0, 1.0)
    assert op.expectation(q, op.identity_op(g)) == pytest.approx(1.0, abs=1e-14)
    assert abs(op.expectation(q, op.hamiltonian(mdl.linear(1.0, 1), g))) < 1e-12
    s2 = op.multiplication_op(g, g.axis ** 2)
    val = op.expectation(q, s2)
    assert val == pytest.approx(1.0, abs=1e-8)
    assert abs(val - gr.integrate(g, g.axis ** 2 * q.values ** 2)) < 1e-12
    psi = wf.to_complex(q)
    for o in (s2, op.gamma_squared_op(g), op.hamiltonian_squared_explicit(mdl.linear(1.0, 1), g)):
        assert op.expectation(psi, o) == pytest.approx(op.expectation(q, o), abs=1e-10)
        assert op.expectation(psi, op.to_gamma_basis(o)) == pytest.approx(op.expectation(q, o), abs=1e-10)


def test_gamma_multiplier_matches_gamma_squared():
    g = gr.ConfigurationGrid(1, 128, 8.0)
    q = wf.gaussian(g, 0.5, 0.7)
    gm = op.gamma_multiplier(g, g.frequencies ** 2)
    assert op.expectation(q, gm) == pytest.approx(op.expectation(q, op.gamma_squared_op(g)), rel=1e-10)


def test_variance_nonnegative(rng):
    g = gr.ConfigurationGrid(1, 128, 8.0)
    q = wf.gaussian(g, 0.0, 1.0)
    assert op.variance(q, op.sigma_op(g, 0)) == pytest.approx(1.0, abs=1e-8)
    assert op.variance(q, op.gamma_op(g, 0)) == pytest.approx(0.25, abs=1e-8)


def test_spectrum_rotation(rotation_spectrum64):
    s = rotation_spectrum64
    assert s.pairing_defect < 1e-10
    assert np.max(s.residuals) < 1e-8
    for m in (0, 1, -1, 2, -2):
        assert np.min(np.abs(s.all_eigenvalues - m)) < 1e-3
    # radially symmetric states are static: a large kernel precedes |E| = 1
    assert np.sum(np.abs(s.all_eigenvalues) < 1e-8) > 40
    # generator labels: on the rotation model H = -L3
    for e, l in zip(s.eigenvalues, s.generator_values):
        if abs(e) > 0.5 and abs(e - round(e)) < 1e-3:
            assert l == pytest.approx(-e, abs=1e-3)


def test_spectrum_anharmonic_pairs():
    g = gr.ConfigurationGrid(2, 24, 6.0)
    s = op.spectrum(op.hamiltonian(mdl.anharmonic(0.5), g), k=30)
    assert s.pairing_defect < 1e-10
    assert np.max(s.residuals) < 1e-8
    assert np.all(np.diff(np.abs(s.eigenvalues)) >= -1e-8)
    phi = s.eigenvectors[0]
    assert np.allclose(np.abs(phi) * np.exp(1j * s.phases[0]), phi)


def test_real_eigenvectors_are_static():
    g = gr.ConfigurationGrid(2, 16, 6.0)
    s = op.spectrum(op.hamiltonian(mdl.anharmonic(0.5), g), k=60)
    for e, v in zip(s.eigenvalues, s.eigenvectors):
        # rotate the global phase so that v is as real as possible
        z = np.sum(v ** 2)
        r = v * np.exp(-0.5j * np.angle(z)) if abs(z) > 0 else v
        if np.max(np.abs(r.imag)) < 1e-8 * np.max(np.abs(r)):
            assert abs(e) < 1e-8


def test_spectrum_budget():
    g = gr.ConfigurationGrid(2, 128, 8.0)
    with pytest.raises(BudgetError):
        op.spectrum(op.hamiltonian(mdl.rotation(1.0), g))


def test_periodic_state(rotation_spectrum64):
    s = rotation_spectrum64
    g = s.grid
    n = int(np.argmin(np.abs(s.eigenvalues - 1.0)))
    e = s.eigenvalues[n]
    q0 = op.periodic_state(s, n, 0.0)
    assert q0.norm() == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(q0.values, np.real(np.sqrt(2) * s.eigenvectors[n]))
    h2 = op.hamiltonian_squared_explicit(mdl.rotation(1.0), g)
    assert _norm(g, h2(q0.values) - e ** 2 * q0.values) < 1e-7
    qt = op.periodic_state(s, n, 0.37)
    qp = op.periodic_state(s, n, 0.37 + 2 * np.pi / e)
    assert np.max(np.abs(qt.values ** 2 - qp.values ** 2)) < 1e-10
    zero = int(np.argmin(np.abs(s.eigenvalues)))
    with pytest.raises(DegenerateError):
        op.periodic_state(s, zero, 0.0)


def test_operator_algebra_and_dense():
    g = gr.ConfigurationGrid(1, 16, 2.0)
    a, b = op.sigma_op(g, 0), op.gamma_op(g, 0)
    v = np.exp(-g.axis ** 2)
    assert np.allclose((a + b)(v), a(v) + b(v))
    assert np.allclose((a - b * 2)(v), a(v) - 2 * b(v))
    assert np.allclose((a @ b)(v), a(b(v)))
    m = b.dense()
    assert np.allclose(m, m.conj().T, atol=1e-12)
    with pytest.raises(ContractError):
        _ = a + op.sigma_op(gr.ConfigurationGrid(1, 8, 2.0), 0)
