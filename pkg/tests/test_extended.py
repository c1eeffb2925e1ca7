import itertools

import numpy as np
import pytest

from qtransport import automaton as au
from qtransport import extended as ex
from qtransport import model as mdl
from qtransport.errors import BudgetError, ConsistencyError, ContractError
from qtransport.evolution import jacobian_factor


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_resolution_of_identity():
    for m in (2, 3, 4, 7, 12):
        assert ex.CyclicSpace(m).resolution_defect() < 1e-13


def test_free_action_is_real():
    sp = ex.CyclicSpace(4, 3)
    free = ex.CycleForce.free(sp)
    s_m = ex.action_sm(sp, [0, 1, 3, 2], [1, -2, 0, 1], free)
    sig = sp.sigma[[0, 1, 3, 2]]
    g = np.array([1, -2, 0, 1])
    assert s_m == pytest.approx(-np.sum(sig[1:] * np.diff(g)), abs=1e-14)
    assert s_m.imag == 0.0


def test_constant_gamma_path_telescopes():
    sp = ex.CyclicSpace(5, 3, 0.3)
    force = ex.CycleForce.from_force_field(sp, mdl.ForceField.from_callable(1, lambda s: 0.5 * np.sin(s)))
    path = [0, 2, 4, 1]
    s_m = ex.action_sm(sp, path, [2, 2, 2, 2], force)
    expected = -np.sum(force.displacement[path[1:]] * 2) - np.sum(force.eps_delta()[path[1:]])
    assert s_m == pytest.approx(expected, abs=1e-14)
    assert s_m.imag != 0.0


def test_delta_matches_jacobian_factor():
    f = mdl.ForceField.from_callable(1, lambda s: 0.5 * np.sin(s))
    sp = ex.CyclicSpace(7, 1, 0.2)
    force = ex.CycleForce.from_force_field(sp, f)
    jf = jacobian_factor(f, sp.sigma[:, None], 0.2)
    assert np.max(np.abs(np.abs(np.exp(-1j * force.eps_delta())) - jf)) < 1e-12


@pytest.mark.parametrize("case", ["permutation", "sampled"])
def test_gamma_sum_reproduces_step_product(case, rng):
    if case == "permutation":
        sp = ex.CyclicSpace(4, 3)
        force = ex.CycleForce.from_permutation(sp, [2, 0, 3, 1])
    else:
        sp = ex.CyclicSpace(5, 2, 0.4)
        force = ex.CycleForce.from_force_field(sp, mdl.ForceField.from_callable(1, lambda s: 0.5 * np.sin(s)))
    s = ex.step_matrix_cycle(force)
    t = sp.horizon
    for path in list(itertools.product(range(sp.modulus), repeat=t + 1))[:40]:
        amp = ex.gamma_summed_amplitude(sp, path, force)
        prod = np.prod([s[b, a] for a, b in zip(path[:-1], path[1:])])
        assert abs(amp - prod) < 1e-10


def test_permutation_step_matrix_is_unique_jump():
    sp = ex.CyclicSpace(4, 3)
    a = au.DiscreteAutomaton.from_permutation([2, 0, 3, 1])
    s = ex.step_matrix_cycle(ex.CycleForce.from_permutation(sp, a))
    assert np.max(np.abs(s - au.step_matrix(a))) < 1e-13


def test_triangle_m4_t3(rng):
    sp = ex.CyclicSpace(4, 3)
    a = au.DiscreteAutomaton.from_permutation([2, 0, 3, 1])
    force = ex.CycleForce.from_permutation(sp, a)
    q = au.DiscreteWaveFunction(_unit(rng.normal(size=4)))
    w = ex.extended_weight(sp, q.values, force)
    assert w.dense is not None and w.dense.shape == (4,) * 9
    assert abs(w.total() - 1) < 1e-10
    marg = ex.marginal_sigma(w)
    ref = au.dense_overall_weights(a, q, 3)
    assert np.max(np.abs(marg - ref)) < 1e-10
    assert np.min(marg) >= -1e-10
    chain = ex.gamma_chain(sp, q.values, w.q_f, force)
    assert np.max(np.abs(ex.marginal_gamma(w) - chain)) < 1e-10
    assert abs(chain.sum() - 1) < 1e-10


def test_marginal_sigma_free_and_shift():
    sp = ex.CyclicSpace(3, 1)
    q = _unit([0.3, -0.5, 0.8])
    w = ex.extended_weight(sp, q, ex.CycleForce.free(sp))
    marg = ex.marginal_sigma(w)
    assert np.max(np.abs(marg - np.diag(q * w.q_f))) < 1e-12
    sp = ex.CyclicSpace(3, 2)
    q = au.DiscreteWaveFunction(np.array([np.sqrt(0.5), -np.sqrt(0.3), np.sqrt(0.2)]))
    w = ex.extended_weight(sp, q.values, ex.CycleForce.from_permutation(sp, [1, 2, 0]))
    marg = ex.marginal_sigma(w)
    for start, p in zip(range(3), (0.5, 0.3, 0.2)):
        assert marg[start, (start + 1) % 3, (start + 2) % 3] == pytest.approx(p, abs=1e-12)
    assert marg.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.count_nonzero(np.abs(marg) > 1e-12) == 3


def test_negative_control_without_delta(rng):
    sp = ex.CyclicSpace(5, 3, 0.5)
    f = mdl.ForceField.from_callable(1, lambda s: 0.5 * np.sin(s))
    force = ex.CycleForce.from_force_field(sp, f)
    q = _unit(1.0 + 0.3 * np.cos(sp.sigma))
    assert abs(ex.extended_weight(sp, q, force, include_delta=False).total() - 1) > 1e-3
    # with the Jacobian term the chain is an exact trigonometric regrid, unitary only up to aliasing
    free = ex.extended_weight(sp, q, ex.CycleForce.free(sp), include_delta=False)
    assert abs(free.total() - 1) < 1e-12


def test_sampled_force_unitarity_improves_with_m():
    f = mdl.ForceField.from_callable(1, lambda s: 0.5 * np.sin(s))
    defects = []
    for m in (5, 9, 15):
        sp = ex.CyclicSpace(m, 3, 0.5)
        q = _unit(1.0 + 0.3 * np.cos(sp.sigma))
        w = ex.extended_weight(sp, q, ex.CycleForce.from_force_field(sp, f), dense=False)
        defects.append(abs(w.total() - 1))
    assert defects[0] > defects[1] > defects[2]
    assert defects[2] < 1e-6


def test_from_force_field_needs_odd_modulus():
    with pytest.raises(ContractError):
        ex.CycleForce.from_force_field(ex.CyclicSpace(4), mdl.linear(1.0, 1))


def test_dense_budget():
    sp = ex.CyclicSpace(6, 3)
    q = _unit(np.ones(6))
    w = ex.extended_weight(sp, q, ex.CycleForce.free(sp))
    assert w.dense is None and abs(w.total() - 1) < 1e-12
    with pytest.raises(BudgetError):
        ex.extended_weight(sp, q, ex.CycleForce.free(sp), dense=True)
    with pytest.raises(BudgetError):
        ex.marginal_sigma(w)


def test_marginal_sigma_flags_imaginary_residue():
    sp = ex.CyclicSpace(5, 1, 0.5)
    force = ex.CycleForce.from_force_field(sp, mdl.ForceField.from_callable(1, lambda s: 0.5 * np.sin(s)))
    q = _unit(1.0 + 0.3 * np.cos(sp.sigma))
    w = ex.extended_weight(sp, q, force)
    w.dense = w.dense * np.exp(0.01j)
    with pytest.raises(ConsistencyError):
        ex.marginal_sigma(w)


def test_extended_wave_function_probabilities(rng):
    sp = ex.CyclicSpace(6)
    q = _unit(rng.normal(size=6))
    phi = ex.ExtendedWaveFunction.from_real(sp, q)
    assert phi.factorization_defect(q) == 0.0
    p = phi.probabilities()
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.max(np.abs(phi.marginal_q() - q)) < 1e-14


def test_extended_step_examples(rng):
    sp = ex.CyclicSpace(4, 3)
    q = _unit(rng.normal(size=4))
    free = ex.CycleForce.free(sp)
    phi1 = ex.extended_step(ex.ExtendedWaveFunction.from_real(sp, q), free)
    assert ex.extended_sandwich(phi1, q) == pytest.approx(1.0, abs=1e-12)

    a = au.DiscreteAutomaton.from_permutation([2, 0, 3, 1])
    force = ex.CycleForce.from_permutation(sp, a)
    phi = ex.ExtendedWaveFunction.from_real(sp, q)
    for k in range(1, 4):
        phi = ex.extended_step(phi, force)
        dq = au.evolve_discrete(a, au.DiscreteWaveFunction(q), k).values
        assert np.max(np.abs(phi.marginal_q() - dq)) < 1e-12
        assert phi.factorization_defect(dq) < 1e-12
    w = ex.extended_weight(sp, q, force)
    assert ex.extended_sandwich(phi, w.q_f) == pytest.approx(w.total(), abs=1e-10)

    twice = ex.extended_step(ex.extended_step(ex.ExtendedWaveFunction.from_real(sp, q), force), force)
    composed = ex.CycleForce.from_permutation(sp, a.compose(a))
    once = ex.extended_step(ex.ExtendedWaveFunction.from_real(sp, q), composed)
    assert np.max(np.abs(twice.values - once.values)) < 1e-12


def test_joint_functionals_match_operator_insertions(rng):
    sp = ex.CyclicSpace(4, 3)
    force = ex.CycleForce.from_permutation(sp, [1, 3, 0, 2])
    q = _unit(rng.normal(size=4))
    w = ex.extended_weight(sp, q, force)
    cases = [
        [(1, "sigma", rng.normal(size=4))],
        [(0, "gamma", sp.gamma.astype(float) ** 2)],
        [(1, "sigma", rng.normal(size=4)), (2, "gamma", rng.normal(size=4))],
        [(0, "sigma", rng.normal(size=4)), (0, "gamma", rng.normal(size=4)), (3, "sigma", rng.normal(size=4))],
    ]
    for factors in cases:
        a = ex.joint_expectation(w, factors)
        b = ex.chain_expectation(sp, q, w.q_f, force, factors)
        assert abs(a - b) < 1e-12


def test_continuum_action_closed_paths():
    t = np.linspace(0, 2 * np.pi, 2001)
    dt = t[1] - t[0]
    s = np.stack([np.cos(t), np.sin(2 * t)], axis=1)
    g = np.stack([np.sin(t) + 0.2, np.cos(3 * t)], axis=1)
    res = ex.continuum_action(mdl.anharmonic(0.5), s, g, dt)
    assert res["closed"] and res["boundary"] == 0.0
    assert abs(res["direct"] - res["by_parts"]) < 1e-10


def test_continuum_action_gamma_zero():
    t = np.linspace(0, 1, 501)
    s = np.stack([np.cos(t), np.sin(t) * 0.5], axis=1)
    res = ex.continuum_action(mdl.rotation(1.0), s, np.zeros_like(s), t[1] - t[0])
    assert abs(res["direct"]) < 1e-14
    lin = ex.continuum_action(mdl.linear(1.0, 1), t[:, None] * 0.3, np.zeros((len(t), 1)), t[1] - t[0])
    # the Jacobian term -sum eps Delta tends to +(i/2) int div F = -i/2 for div F = -1
    assert lin["direct"] == pytest.approx(-0.5j, abs=1e-12)
    eps = 1e-3
    tt = np.linspace(0, 1, 1001)
    disc = ex.field_action(mdl.linear(1.0, 1), 0.3 * tt[:, None], np.zeros((1001, 1)), eps)
    assert disc == pytest.approx(-0.5j, abs=1e-3)


def test_continuum_action_open_paths_boundary():
    t = np.linspace(0, 1, 4001)
    dt = t[1] - t[0]
    s = (np.sin(3 * t) + 0.3)[:, None]
    g = np.cos(2 * t)[:, None]
    res = ex.continuum_action(mdl.linear(1.0, 1), s, g, dt)
    assert not res["closed"]
    assert abs(res["direct"] - (res["by_parts"] + res["boundary"])) < 1e-6


def test_discrete_action_converges_first_order():
    f = mdl.linear(1.0, 1)

    def path(t):
        return (np.sin(3 * t) + 0.3)[:, None], np.cos(2 * t)[:, None]

    fine = np.linspace(0, 1, 20001)
    ref = ex.continuum_action(f, *path(fine), fine[1] - fine[0])["direct"]
    errs = []
    for n in (50, 100, 200, 400):
        tt = np.linspace(0, 1, n + 1)
        errs.append(abs(ex.field_action(f, *path(tt), 1.0 / n) - ref))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(r == pytest.approx(2.0, rel=0.05) for r in ratios), ratios


def test_action_length_mismatch():
    sp = ex.CyclicSpace(3, 2)
    with pytest.raises(ContractError):
        ex.action_sm(sp, [0, 1], [0, 1, 2], ex.CycleForce.free(sp))
    with pytest.raises(ContractError):
        ex.continuum_action(mdl.linear(1.0, 1), np.zeros((5, 1)), np.zeros((4, 1)), 0.1)
