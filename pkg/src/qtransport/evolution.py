"""Time stepping of classical wave functions.

Schemes
-------
unitary_midpoint       implicit midpoint (Cayley) integration of dq/dt = G q, G = -iH
step_operator_sigma    discrete step q'(s) = sqrt(det(1 - eps J(s))) q(s - eps F(s))
step_operator_gamma    the same step conjugated into the Fourier basis
symmetric_alternating  alternates the step above with its time-reversed partner
rk4                    explicit RK4 on dq/dt = G q (speed comparisons only)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import grid as gr
from .errors import (ContractError, ConvergenceError, InvertibilityError, NumericalError,
                     QTransportError, RealityError)
from .grid import ConfigurationGrid
from .model import ForceField
from .operators import GridOperator, expectation, hamiltonian
from .wavefunction import ComplexWaveFunction, RealWaveFunction, WaveFunction

log = logging.getLogger(__name__)

SCHEMES = ("unitary_midpoint", "step_operator_sigma", "step_operator_gamma",
           "symmetric_alternating", "rk4")
CFL_LIMIT = 0.5
DET_GUARD = 0.1
DRIFT_RENORM = 1e-8
DRIFT_ESCALATE = 1e-6
EDGE_TOL = 1e-8
PULLBACK_TOL = 1e-12
PULLBACK_MAXITER = 50


# continuum integrator ------------------------------------------------------

def _real_generator(h: GridOperator):
    gen = h.meta.get("generator")
    if gen is not None:
        return gen
    if h.real_form is not None and h.phase == -1j:
        return lambda v: -h.real_form(v)
    return None


def _cayley_real(gen, q: np.ndarray, eps: float, tol: float, maxiter: int) -> np.ndarray:
    """Solve (1 - eps G/2) x = (1 + eps G/2) q for real q."""
    half = 0.5 * eps
    b = q + half * gen(q)
    x = b + half * gen(b)
    scale = max(np.sqrt(np.sum(q ** 2)), 1e-300)
    for _ in range(maxiter):
        x_new = b + half * gen(x)
        inc = np.sqrt(np.sum((x_new - x) ** 2)) / scale
        x = x_new
        if inc < tol:
            return x
        if not np.isfinite(inc):
            break
    log.info("Cayley fixed point did not converge; falling back to GMRES")
    n = q.size
    shape = q.shape
    op = spla.LinearOperator((n, n), matvec=lambda v: v - half * gen(v.reshape(shape)).ravel(),
                             dtype=float)
    sol, info = spla.gmres(op, b.ravel(), x0=x.ravel(), rtol=tol, atol=0.0, maxiter=200)
    if info != 0:
        raise ConvergenceError(f"Cayley inner solve failed (gmres info={info})")
    return sol.reshape(shape)


def _cayley_complex(h: GridOperator, v: np.ndarray, eps: float, tol: float, maxiter: int):
    """Generic (1 + i eps H/2) x = (1 - i eps H/2) v for operators without a real form."""
    half = 0.5j * eps
    b = v - half * h(v)
    x = b.copy()
    scale = max(np.sqrt(np.sum(np.abs(v) ** 2)), 1e-300)
    for _ in range(maxiter):
        x_new = b - half * h(x)
        inc = np.sqrt(np.sum(np.abs(x_new - x) ** 2)) / scale
        x = x_new
        if inc < tol:
            return x
    raise ConvergenceError("Cayley inner iteration did not converge")


def unitary_step(h: GridOperator, state, eps: float, tol: float = 1e-12, maxiter: int = 100):
    """One implicit-midpoint step psi <- (1 - i eps H/2)(1 + i eps H/2)^-1 psi.

    Real states stay real: with G = -iH real the step is the real rotation
    (1 - eps G/2)^-1 (1 + eps G/2).
    """
    g = h.grid
    gen = _real_generator(h)
    if isinstance(state, RealWaveFunction):
        if gen is None:
            raise ContractError("operator has no real generator; cannot step a real state")
        return state.with_values(_cayley_real(gen, state.values, eps, tol, maxiter), state.time + eps)
    if isinstance(state, ComplexWaveFunction):
        v = gr.fourier_inverse_complex(g, state.values)
        v = _step_array(h, gen, v, eps, tol, maxiter)
        return state.with_values(gr.fourier_forward(g, v), state.time + eps)
    return _step_array(h, gen, g.check_field(state), eps, tol, maxiter)


def _step_array(h, gen, v, eps, tol, maxiter):
    if gen is None:
        return _cayley_complex(h, np.asarray(v, dtype=complex), eps, tol, maxiter)
    if np.iscomplexobj(v):
        return (_cayley_real(gen, v.real, eps, tol, maxiter)
                + 1j * _cayley_real(gen, v.imag, eps, tol, maxiter))
    return _cayley_real(gen, v, eps, tol, maxiter)


def rk4_step(h: GridOperator, q: RealWaveFunction, eps: float) -> RealWaveFunction:
    gen = _real_generator(h)
    v = q.values
    k1 = gen(v)
    k2 = gen(v + 0.5 * eps * k1)
    k3 = gen(v + 0.5 * eps * k2)
    k4 = gen(v + eps * k3)
    return q.with_values(v + eps / 6 * (k1 + 2 * k2 + 2 * k3 + k4), q.time + eps)


# discrete step operator ----------------------------------------------------

def jacobian_factor(f: ForceField, sigma, eps: float):
    """sqrt(det(1 - eps dF/dsigma)) at sigma; the rescaling factor 1 + eps N."""
    det = np.linalg.det(np.eye(f.dim) - eps * f.jacobian_at(sigma))
    if np.any(det <= 0):
        raise InvertibilityError(
            f"det(1 - eps dF/dsigma) = {np.min(det):.3e} <= 0: step size {eps:g} too large "
            "for an invertible update")
    return np.sqrt(det)


def solve_implicit(f: ForceField, target, c: float, tol: float = PULLBACK_TOL,
                   maxiter: int = PULLBACK_MAXITER) -> np.ndarray:
    """Solve x + c F(x) = target pointwise: fixed point iteration, Newton for stragglers."""
    target = np.atleast_2d(np.asarray(target, dtype=float))
    x = target - c * f.force_at(target)
    for _ in range(maxiter):
        x_new = target - c * f.force_at(x)
        done = np.max(np.abs(x_new - x)) < tol
        x = x_new
        if done:
            return x
    eye = np.eye(f.dim)
    for _ in range(maxiter):
        res = x + c * f.force_at(x) - target
        if np.max(np.abs(res)) < tol:
            return x
        jac = eye + c * f.jacobian_at(x)
        x = x - np.linalg.solve(jac, res[..., None])[..., 0]
    res = np.max(np.abs(x + c * f.force_at(x) - target))
    if res < 1e3 * tol:
        return x
    raise ConvergenceError(f"implicit update did not converge (residual {res:.3e})")


def forward_map(f: ForceField, sigma, eps: float) -> np.ndarray:
    """Automaton update sigma(t+eps) = sigma(t) + eps F(sigma(t+eps)), solved for sigma(t+eps)."""
    return solve_implicit(f, sigma, -eps)


class SigmaStepper:
    """Precomputed pullback kernels and factors for one (model, grid, eps, kind).

    kind "A": q'(s) = sqrt(det(1 - eps J(s))) q(s - eps F(s))      (F at the destination)
    kind "B": q'(s) = det(1 + eps J(p))^-1/2 q(p), p + eps F(p) = s (F at the origin)
    A_{+eps}^-1 = B_{-eps} and B_{+eps}^-1 = A_{-eps}.
    """

    def __init__(self, f: ForceField, g: ConfigurationGrid, eps: float, kind: str = "A"):
        if f.dim != g.dim:
            raise ContractError(f"model dim {f.dim} != grid dim {g.dim}")
        if kind not in ("A", "B"):
            raise ContractError("kind must be 'A' or 'B'")
        self.grid, self.eps, self.kind = g, eps, kind
        pts = g.points()
        if kind == "A":
            pull = pts - eps * f.force_at(pts)
            det = np.linalg.det(np.eye(g.dim) - eps * f.jacobian_at(pts))
            if np.any(det <= 0):
                raise InvertibilityError(f"det(1 - eps J) = {det.min():.3e} <= 0 for eps = {eps:g}")
            factor = np.sqrt(det)
        else:
            pull = solve_implicit(f, pts, eps)
            det = np.linalg.det(np.eye(g.dim) + eps * f.jacobian_at(pull))
            if np.any(det <= 0):
                raise InvertibilityError(f"det(1 + eps J) = {det.min():.3e} <= 0 for eps = {eps:g}")
            factor = 1.0 / np.sqrt(det)
        self.outside = int(np.sum(np.any(np.abs(pull) > g.L, axis=1)))
        self.factor = factor.reshape(g.shape)
        self.min_det = float(det.min())
        self.kernels = gr.interpolation_kernels(g, pull)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return self.factor * gr.interpolate(self.grid, q, kernels=self.kernels).reshape(self.grid.shape)


def _edge_warning(g, values, warnings: list | None, t):
    edge = gr.edge_amplitude(g, values)
    if edge > EDGE_TOL:
        msg = (f"t={t:.6g}: wave function amplitude {edge:.2e} at the box edge; pullback "
               "points outside the box use the periodic continuation")
        if warnings is not None and msg not in warnings:
            warnings.append(msg)
        log.warning(msg)


def step_operator_sigma(f: ForceField, state: RealWaveFunction, eps: float,
                        stepper: SigmaStepper | None = None,
                        warnings: list | None = None) -> RealWaveFunction:
    """One discrete step of the real wave function (kind A)."""
    stepper = stepper or SigmaStepper(f, state.grid, eps, "A")
    _edge_warning(state.grid, state.values, warnings, state.time)
    return state.with_values(stepper(state.values), state.time + stepper.eps)


def step_operator_b(f: ForceField, state: RealWaveFunction, eps: float,
                    stepper: SigmaStepper | None = None) -> RealWaveFunction:
    """The partner step (kind B), the inverse of kind A run with -eps."""
    stepper = stepper or SigmaStepper(f, state.grid, eps, "B")
    return state.with_values(stepper(state.values), state.time + stepper.eps)


def step_operator_gamma(f: ForceField, psi: ComplexWaveFunction, eps: float,
                        stepper: SigmaStepper | None = None, tol: float = 1e-10) -> ComplexWaveFunction:
    """Fourier-basis step: forward transform . sigma step . inverse transform."""
    g = psi.grid
    defect = psi.constraint_defect()
    if defect > tol:
        raise RealityError(f"input violates psi(-gamma) = conj(psi(gamma)) by {defect:.3e}")
    stepper = stepper or SigmaStepper(f, g, eps, "A")
    q = gr.fourier_inverse(g, psi.values, tol)
    return psi.with_values(gr.fourier_forward(g, stepper(q)), psi.time + stepper.eps)


# plans and records ---------------------------------------------------------

@dataclass
class EvolutionPlan:
    model: ForceField
    grid: ConfigurationGrid
    step_size: float
    num_steps: int
    scheme: str = "unitary_midpoint"
    monitors: list = field(default_factory=list)
    monitor_every: int = 1
    snapshot_every: int = 0
    snapshot_steps: tuple = ()
    renormalize: bool = False
    reverse: bool = False
    solver_tol: float = 1e-12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if not self.step_size > 0:
            raise ContractError("step size must be positive")
        if self.num_steps < 0:
            raise ContractError("num_steps must be >= 0")
        if self.model.dim != self.grid.dim:
            raise ContractError(f"model dim {self.model.dim} != grid dim {self.grid.dim}")
        pts = self.grid.points()
        fmax = float(np.max(np.linalg.norm(self.model.force_at(pts), axis=1)))
        cfl = self.step_size * fmax * self.grid.n / (2 * self.grid.L)
        if cfl >= CFL_LIMIT:
            bound = CFL_LIMIT * 2 * self.grid.L / (self.grid.n * fmax)
            raise InvertibilityError(
                f"CFL number eps*max|F|*n/(2L) = {cfl:.3g} >= {CFL_LIMIT}; "
                f"use eps < {bound:.3g} or a coarser grid")
        self.cfl = cfl
        if self.scheme in ("step_operator_sigma", "step_operator_gamma", "symmetric_alternating"):
            eye = np.eye(self.grid.dim)
            jac = self.model.jacobian_at(pts)
            dets = [np.linalg.det(eye - self.step_size * jac)]
            if self.scheme == "symmetric_alternating":
                dets.append(np.linalg.det(eye + self.step_size * jac))
            worst = min(float(d.min()) for d in dets)
            if worst <= DET_GUARD:
                raise InvertibilityError(
                    f"min det(1 -/+ eps dF/dsigma) = {worst:.3g} <= {DET_GUARD}: the step is "
                    "(nearly) non-invertible; reduce eps")

    @property
    def hamiltonian(self) -> GridOperator:
        if not hasattr(self, "_h"):
            self._h = hamiltonian(self.model, self.grid)
        return self._h


@dataclass
class EvolutionRecord:
    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    monitor_times: list = field(default_factory=list)
    monitor_values: dict = field(default_factory=dict)
    constraint_defects: list = field(default_factory=list)
    final_state: WaveFunction | None = None
    warnings: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (step, time, values)
    escalated: bool = False
    steps_done: int = 0

    @property
    def max_norm_drift(self) -> float:
        return float(np.max(np.abs(np.asarray(self.norms) - 1.0))) if self.norms else 0.0


class EvolutionAborted(QTransportError):
    def __init__(self, message: str, record: EvolutionRecord):
        super().__init__(message)
        self.record = record


def _schedule(plan: EvolutionPlan):
    """Per-step (kind, signed eps) for the discrete schemes."""
    eps, n = plan.step_size, plan.num_steps
    if plan.scheme == "symmetric_alternating":
        if not plan.reverse:
            return [("A" if k % 2 == 0 else "B", eps) for k in range(n)]
        return [("B" if (n - 1 - j) % 2 == 0 else "A", -eps) for j in range(n)]
    return [("A", -eps if plan.reverse else eps)] * n


def evolve(plan: EvolutionPlan, initial: WaveFunction) -> EvolutionRecord:
    g = plan.grid
    if initial.grid != g:
        raise ContractError("initial state lives on a different grid")
    if plan.scheme == "step_operator_gamma":
        if not isinstance(initial, ComplexWaveFunction):
            raise ContractError("step_operator_gamma evolves a complex (gamma-basis) wave function")
    elif not isinstance(initial, RealWaveFunction):
        raise ContractError(f"{plan.scheme} evolves a real wave function")
    rec = EvolutionRecord()
    for m in plan.monitors:
        rec.monitor_values[m.label] = []
    n0 = initial.norm()
    if abs(n0 - 1) > 1e-8:
        rec.warnings.append(f"initial norm {n0!r} differs from 1")
    steppers: dict = {}
    state = initial
    sign = -1.0 if plan.reverse else 1.0

    def observe(k, s):
        rec.times.append(s.time)
        nrm = s.norm()
        rec.norms.append(nrm)
        if not np.isfinite(nrm) or not np.all(np.isfinite(s.values)):
            raise NumericalError(f"non-finite wave function at step {k}")
        if k % plan.monitor_every == 0 or k == plan.num_steps:
            rec.monitor_times.append(s.time)
            for m in plan.monitors:
                rec.monitor_values[m.label].append(expectation(s, m))
            psi = s.values if isinstance(s, ComplexWaveFunction) else gr.fourier_forward(g, s.values)
            rec.constraint_defects.append(gr.constraint_defect(g, psi))
        if (plan.snapshot_every and k % plan.snapshot_every == 0) or k in plan.snapshot_steps:
            rec.snapshots.append((k, s.time, np.array(s.values)))
        return nrm

    try:
        observe(0, state)
        sched = None if plan.scheme in ("unitary_midpoint", "rk4") else _schedule(plan)
        for k in range(1, plan.num_steps + 1):
            if plan.scheme == "unitary_midpoint":
                state = unitary_step(plan.hamiltonian, state, sign * plan.step_size, plan.solver_tol)
            elif plan.scheme == "rk4":
                state = rk4_step(plan.hamiltonian, state, sign * plan.step_size)
            else:
                kind, eps = sched[k - 1]
                key = (kind, eps)
                if key not in steppers:
                    steppers[key] = SigmaStepper(plan.model, g, eps, kind)
                if plan.scheme == "step_operator_gamma":
                    state = step_operator_gamma(plan.model, state, eps, steppers[key])
                else:
                    if k == 1:
                        _edge_warning(g, state.values, rec.warnings, state.time)
                    state = state.with_values(steppers[key](state.values), state.time + eps)
            nrm = observe(k, state)
            rec.steps_done = k
            drift = abs(nrm - 1.0)
            if drift > DRIFT_ESCALATE and not rec.escalated:
                rec.escalated = True
                rec.warnings.append(f"step {k}: norm drift {drift:.3e} exceeds {DRIFT_ESCALATE:g}")
            if plan.renormalize and drift > DRIFT_RENORM:
                state = state.with_values(state.values / np.sqrt(nrm))
                msg = f"renormalized (drift above {DRIFT_RENORM:g})"
                if msg not in rec.warnings:
                    rec.warnings.append(msg)
            if drift > 1e6:
                raise NumericalError(f"norm blew up to {nrm:.3e} at step {k}")
    except (NumericalError, ConvergenceError, InvertibilityError, RealityError) as exc:
        rec.final_state = state
        rec.escalated = True
        rec.warnings.append(f"aborted: {exc}")
        raise EvolutionAborted(str(exc), rec) from exc
    rec.final_state = state
    return rec


# diagnostics ---------------------------------------------------------------

def generator_defect(f: ForceField, q: RealWaveFunction, eps: float) -> float:
    """|| (S_eps q - q)/eps - G q ||: the discrete step's deviation from the continuum law."""
    g = q.grid
    h = hamiltonian(f, g)
    stepped = SigmaStepper(f, g, eps, "A")(q.values)
    r = (stepped - q.values) / eps - h.meta["generator"](q.values)
    return float(np.sqrt(g.cell_volume * np.sum(r ** 2)))


def probability_rhs(f: ForceField, g: ConfigurationGrid):
    """dw/dt = -sum_k d_k (F_k w) in conservative (flux) form."""
    pts = g.points()
    comps = [c.reshape(g.shape) for c in f.force_at(pts).T]

    def rhs(w):
        return -sum(gr.derivative(g, fk * w, k) for k, fk in enumerate(comps))

    return rhs


def transport_probability(f: ForceField, g: ConfigurationGrid, w, eps: float, steps: int) -> np.ndarray:
    """Evolve a probability density with its own conservative transport law (RK4)."""
    rhs = probability_rhs(f, g)
    w = np.asarray(g.check_field(w), dtype=float)
    for _ in range(steps):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * eps * k1)
        k3 = rhs(w + 0.5 * eps * k2)
        k4 = rhs(w + eps * k3)
        w = w + eps / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return w
