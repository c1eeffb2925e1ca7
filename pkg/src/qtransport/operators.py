"""Operator algebra on grid wave functions.

Most operators here are a complex phase times a *real* linear map
(sigma-hat and H^2 are real, gamma-hat, H and the symmetry generators are
-i times a real antisymmetric map). ``GridOperator`` keeps that factorized
form so real wave functions can be processed in real arithmetic; anything
that does not factor falls back to a generic complex action.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import grid as gr
from .errors import BudgetError, ContractError, DegenerateError, NotApplicableError, NumericalError
from .grid import ConfigurationGrid
from .model import SO2, ForceField
from .wavefunction import ComplexWaveFunction, RealWaveFunction, WaveFunction

log = logging.getLogger(__name__)

DENSE_CAP = 4096


@dataclass(frozen=True, eq=False)
class GridOperator:
    grid: ConfigurationGrid
    real_form: Callable[[np.ndarray], np.ndarray] | None = None
    phase: complex = 1.0
    hermitian: bool = False
    label: str = ""
    action_fn: Callable[[np.ndarray], np.ndarray] | None = None
    basis: str = "sigma"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.real_form is None and self.action_fn is None:
            raise ContractError("operator needs a real form or an action")

    def __call__(self, v) -> np.ndarray:
        v = self.grid.check_field(v)
        if self.real_form is None:
            return self.action_fn(v)
        if np.iscomplexobj(v):
            out = self.real_form(v.real) + 1j * self.real_form(v.imag)
        else:
            out = self.real_form(v)
        if self.phase == 1:
            return out
        return self.phase * out

    apply = __call__

    # algebra ---------------------------------------------------------------
    def _check(self, other):
        if not isinstance(other, GridOperator):
            return NotImplemented
        if other.grid != self.grid or other.basis != self.basis:
            raise ContractError("operators live on different grids or bases")
        return None

    def __matmul__(self, other: "GridOperator") -> "GridOperator":
        self._check(other)
        label = f"{self.label}*{other.label}"
        if self.real_form is not None and other.real_form is not None:
            ra, rb = self.real_form, other.real_form
            return GridOperator(self.grid, lambda v: ra(rb(v)), self.phase * other.phase,
                                False, label, basis=self.basis)
        return GridOperator(self.grid, None, 1.0, False, label,
                            action_fn=lambda v: self(other(v)), basis=self.basis)

    def __add__(self, other: "GridOperator") -> "GridOperator":
        self._check(other)
        herm = self.hermitian and other.hermitian
        label = f"({self.label}+{other.label})"
        if self.real_form is not None and other.real_form is not None:
            ratio = other.phase / self.phase
            if ratio.imag == 0 if isinstance(ratio, complex) else True:
                ratio = float(np.real(ratio))
                ra, rb = self.real_form, other.real_form
                return GridOperator(self.grid, lambda v: ra(v) + ratio * rb(v), self.phase,
                                    herm, label, basis=self.basis)
        return GridOperator(self.grid, None, 1.0, herm, label,
                            action_fn=lambda v: self(v) + other(v), basis=self.basis)

    def __mul__(self, scalar) -> "GridOperator":
        scalar = complex(scalar)
        herm = self.hermitian and scalar.imag == 0
        if self.real_form is not None:
            return GridOperator(self.grid, self.real_form, self.phase * scalar, herm,
                                f"{scalar}*{self.label}", basis=self.basis)
        return GridOperator(self.grid, None, 1.0, herm, f"{scalar}*{self.label}",
                            action_fn=lambda v: scalar * self(v), basis=self.basis)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    # dense realization -----------------------------------------------------
    def dense_real_form(self, cap: int = DENSE_CAP) -> np.ndarray:
        """Matrix of the real map R (operator = phase * R)."""
        if self.real_form is None:
            raise NotApplicableError(f"{self.label} has no real form")
        return _matrix_of(self.grid, self.real_form, cap, float)

    def dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        if self.real_form is not None:
            return self.phase * self.dense_real_form(cap)
        return _matrix_of(self.grid, self.__call__, cap, complex)


def _matrix_of(g: ConfigurationGrid, fn, cap: int, dtype, chunk: int = 512) -> np.ndarray:
    n = g.size
    if n > cap:
        raise BudgetError(f"dense realization needs n^dim <= {cap}, grid has {n}")
    mat = np.empty((n, n), dtype=dtype)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        basis = np.zeros((stop - start, n), dtype=dtype)
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        cols = fn(basis.reshape((stop - start,) + g.shape))
        mat[:, start:stop] = np.asarray(cols).reshape(stop - start, n).T
    return mat


def hermiticity_defect(op: GridOperator, pairs) -> float:
    """max |<a, A b> - <A a, b>| over (a, b) pairs, grid inner product."""
    g = op.grid
    worst = 0.0
    for a, b in pairs:
        d = gr.inner(g, a, op(b)) - gr.inner(g, op(a), b)
        worst = max(worst, abs(d))
    return worst


# elementary operators ------------------------------------------------------

def identity_op(g: ConfigurationGrid) -> GridOperator:
    return GridOperator(g, lambda v: v, 1.0, True, "1")


def multiplication_op(g: ConfigurationGrid, values, label: str = "A(sigma)") -> GridOperator:
    """Diagonal operator of a real classical observable A(sigma)."""
    vals = np.asarray(g.check_field(values), dtype=float)
    return GridOperator(g, lambda v: vals * v, 1.0, True, label, meta={"diagonal": vals})


def sigma_op(g: ConfigurationGrid, axis: int) -> GridOperator:
    g._check_axis(axis)
    return multiplication_op(g, np.broadcast_to(g.coord(axis), g.shape), f"sigma{axis + 1}")


def gamma_op(g: ConfigurationGrid, axis: int) -> GridOperator:
    """gamma-hat = -i d/dsigma (spectral)."""
    g._check_axis(axis)
    return GridOperator(g, lambda v: gr.derivative(g, v, axis), -1j, True, f"gamma{axis + 1}")


def gamma_squared_op(g: ConfigurationGrid, axis: int | None = None) -> GridOperator:
    """Sum over axes (or one axis) of gamma-hat^2 = -d^2, composed from the same derivative."""
    axes = range(g.dim) if axis is None else [axis]

    def real_form(v):
        return -sum(gr.derivative(g, gr.derivative(g, v, ax), ax) for ax in axes)

    label = "gamma^2" if axis is None else f"gamma{axis + 1}^2"
    return GridOperator(g, real_form, 1.0, True, label)


def _anticommutator_form(g: ConfigurationGrid, vec: list[np.ndarray]) -> Callable:
    """Real map v -> 1/2 sum_k (V_k d_k v + d_k (V_k v)).

    When V_k does not vary along axis k the two orderings coincide exactly on
    the grid and only one derivative is taken.
    """
    terms = []
    for k, vk in enumerate(vec):
        vk = np.asarray(vk, dtype=float)
        if not np.any(vk):
            continue
        commutes = bool(np.all(np.ptp(vk, axis=k) == 0))
        terms.append((k, vk, commutes))

    def real_form(v):
        out = np.zeros(np.broadcast_shapes(np.shape(v), g.shape))
        for k, vk, commutes in terms:
            if commutes:
                out += vk * gr.derivative(g, v, k)
            else:
                both = gr.derivative(g, np.stack([v, vk * v]), k)
                out += 0.5 * (vk * both[0] + both[1])
        return out

    return real_form


def _grid_force(f: ForceField, g: ConfigurationGrid):
    if f.dim != g.dim:
        raise ContractError(f"model dim {f.dim} != grid dim {g.dim}")
    pts = g.points()
    force = f.force_at(pts)
    return [force[:, k].reshape(g.shape) for k in range(g.dim)], pts


def hamiltonian(f: ForceField, g: ConfigurationGrid) -> GridOperator:
    """H = 1/2 {F(sigma-hat), gamma-hat} = -i (F d + 1/2 div F) in symmetric (exactly hermitian) form.

    ``meta['generator']`` is the real map G = -iH with dq/dt = G q.
    """
    comps, pts = _grid_force(f, g)
    real_form = _anticommutator_form(g, comps)

    def generator(v):
        return -real_form(v)

    div = f.divergence_at(pts).reshape(g.shape)
    return GridOperator(g, real_form, -1j, True, "H",
                        meta={"generator": generator, "force": comps, "divergence": div,
                              "model": f.name})


def hamiltonian_squared_explicit(f: ForceField, g: ConfigurationGrid,
                                 fallback: bool = True) -> GridOperator:
    """Expanded second-order form of H^2 built from F and its second derivatives.

    -[F_k F_l d_k d_l + d_l(F_k F_l) d_k + c] is applied in the equivalent
    divergence form -[d_l (F_k F_l d_k) + c], c = 1/4 (div F)^2 + 1/2 F.grad(div F),
    which is exactly symmetric under the grid inner product.
    """
    if f.hessian is None:
        if not fallback:
            raise NotApplicableError(f"model {f.name!r} has no second derivatives and fallback is off")
        log.info("H2 for %s: no second derivatives, using spectral composition H*H", f.name)
        h = hamiltonian(f, g)
        op = h @ h
        return GridOperator(g, op.real_form, op.phase.real, True, "H2",
                            meta={"form": "composition"})
    comps, pts = _grid_force(f, g)
    force = f.force_at(pts)
    div = f.divergence_at(pts)
    grad_div = np.einsum("pllk->pk", f.hessian_at(pts))
    c = (0.25 * div ** 2 + 0.5 * np.einsum("pk,pk->p", force, grad_div)).reshape(g.shape)
    d = g.dim

    def real_form(v):
        first = [gr.derivative(g, v, k) for k in range(d)]
        out = c * v
        for l in range(d):
            flux = sum(comps[k] * comps[l] * first[k] for k in range(d))
            if np.any(flux):
                out = out + gr.derivative(g, flux, l)
        return -out

    return GridOperator(g, real_form, 1.0, True, "H2", meta={"form": "explicit"})


def symmetry_generator(gen, g: ConfigurationGrid) -> GridOperator:
    """L = 1/2 {B sigma + C, gamma-hat} = -i (B sigma + C) . d - (i/2) tr(B)."""
    b, c = gen
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if b.shape != (g.dim, g.dim) or c.shape != (g.dim,):
        raise ContractError(f"generator must be ({g.dim},{g.dim}) and ({g.dim},)")
    tr = float(np.trace(b))
    if tr != 0:
        log.info("generator with tr(B) = %g: including the -(i/2) tr(B) measure term", tr)
    coords = [np.broadcast_to(g.coord(k), g.shape) for k in range(g.dim)]
    vec = [sum(b[j, k] * coords[k] for k in range(g.dim)) + c[j] for j in range(g.dim)]
    vec = [np.broadcast_to(np.asarray(v, dtype=float), g.shape) for v in vec]
    return GridOperator(g, _anticommutator_form(g, vec), -1j, True, "L",
                        meta={"B": b, "C": c, "trace": tr})


def angular_momentum(g: ConfigurationGrid, i: int = 3) -> GridOperator:
    """L_i = -i eps_ijk sigma_j d_k (dim 2: only i = 3)."""
    if g.dim == 2:
        if i != 3:
            raise ContractError("in two dimensions only L3 exists")
        op = symmetry_generator((SO2, np.zeros(2)), g)
    elif g.dim == 3:
        if i not in (1, 2, 3):
            raise ContractError("angular momentum index must be 1, 2 or 3")
        b = np.zeros((3, 3))
        for j in range(3):
            for k in range(3):
                b[k, j] = _levi_civita(i - 1, j, k)
        op = symmetry_generator((b, np.zeros(3)), g)
    else:
        raise NotApplicableError("angular momentum needs dim >= 2")
    return GridOperator(g, op.real_form, op.phase, True, f"L{i}", meta=op.meta)


def _levi_civita(i, j, k):
    return float(np.linalg.det(np.eye(3)[[i, j, k]]))


def commutator(a: GridOperator, b: GridOperator) -> GridOperator:
    out = a @ b - b @ a
    return GridOperator(out.grid, out.real_form, out.phase, False, f"[{a.label},{b.label}]",
                        out.action_fn, out.basis)


def heisenberg_derivative(h: GridOperator, a: GridOperator) -> GridOperator:
    """Operator of d<A>/dt: i [H, A]."""
    out = commutator(h, a) * 1j
    herm = h.hermitian and a.hermitian
    return GridOperator(out.grid, out.real_form, out.phase, herm, f"d/dt {a.label}",
                        out.action_fn, out.basis)


def to_gamma_basis(a: GridOperator) -> GridOperator:
    """The same operator acting on psi(gamma) arrays."""
    if a.basis == "gamma":
        return a
    g = a.grid

    def action(psi):
        return gr.fourier_forward(g, a(gr.fourier_inverse_complex(g, psi)))

    return GridOperator(g, None, 1.0, a.hermitian, a.label, action_fn=action, basis="gamma")


def gamma_multiplier(g: ConfigurationGrid, values, label="g(gamma)") -> GridOperator:
    """Diagonal operator in the gamma basis (values in FFT slot order)."""
    vals = np.asarray(g.check_field(values))
    return GridOperator(g, None, 1.0, bool(np.isrealobj(vals)), label,
                        action_fn=lambda psi: vals * psi, basis="gamma")


# expectation values --------------------------------------------------------

def expectation(state: WaveFunction, a: GridOperator, herm_tol: float = 1e-10):
    """<A> = <state, A state> with the measure of the state's basis."""
    g = state.grid
    if g != a.grid:
        raise ContractError("state and operator live on different grids")
    if isinstance(state, RealWaveFunction):
        v, weight = state.values, g.cell_volume
        if a.basis == "gamma":
            log.debug("expectation: transforming real state to the gamma basis for %s", a.label)
            v, weight = gr.fourier_forward(g, v), g.dual_weight
    else:
        v, weight = state.values, g.dual_weight
        if a.basis == "sigma":
            log.debug("expectation: transforming gamma-basis state to sigma basis for %s", a.label)
            v, weight = gr.fourier_inverse_complex(g, v), g.cell_volume
    val = weight * np.vdot(v.ravel(), np.asarray(a(v)).ravel())
    if not np.isfinite(val):
        raise NumericalError(f"non-finite expectation value for {a.label}")
    if a.hermitian:
        if abs(val.imag) > herm_tol * max(1.0, abs(val.real)):
            log.warning("expectation of hermitian %s has imaginary part %.3e", a.label, val.imag)
        return float(val.real)
    return complex(val)


def variance(state: WaveFunction, a: GridOperator) -> float:
    """<(A - <A>)^2> computed as a squared norm, so it is never negative."""
    mean = expectation(state, a)
    v = state.values
    r = np.asarray(a(v)) - mean * v
    weight = state.grid.cell_volume if isinstance(state, RealWaveFunction) else state.grid.dual_weight
    if a.basis == "gamma" and isinstance(state, RealWaveFunction) or (
            a.basis == "sigma" and isinstance(state, ComplexWaveFunction)):
        raise ContractError("variance needs state and operator in the same basis")
    return float(weight * np.sum(np.abs(r) ** 2))


# spectrum ------------------------------------------------------------------

@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (k, *grid.shape), unit norm under the grid measure
    residuals: np.ndarray
    all_eigenvalues: np.ndarray
    pairing_defect: float
    grid: ConfigurationGrid
    generator_values: np.ndarray | None = None

    @property
    def phases(self) -> np.ndarray:
        """alpha_n(sigma) with phi_n = |phi_n| exp(i alpha_n)."""
        return np.angle(self.eigenvectors)


def _skew_eig(a: np.ndarray):
    """Eigen-decomposition machinery for H = -iA, A real antisymmetric.

    A = Q T Q^T with T skew tridiagonal (real Householder); -iT is unitarily
    similar to a real symmetric tridiagonal with zero diagonal and
    off-diagonal |b|.
    """
    t, q = sla.hessenberg(a, calc_q=True)
    b = np.diag(t, -1).copy()
    s = np.where(b < 0, -1.0, 1.0)
    d = np.ones(len(a), dtype=complex)
    d[1:] = np.cumprod(-1j * s)
    return q, np.abs(b), d


def spectrum(h: GridOperator, k: int = 20, generator: GridOperator | None = None,
             degeneracy_tol: float = 1e-8) -> SpectrumResult:
    """Dense diagonalization (n^dim <= 4096); k eigenpairs with smallest |E|."""
    g = h.grid
    n = g.size
    if n > DENSE_CAP:
        raise BudgetError(f"dense spectrum needs n^dim <= {DENSE_CAP}; grid has {n}")
    k = min(k, n)
    if h.real_form is not None and h.phase == -1j:
        a = h.dense_real_form()
        a = 0.5 * (a - a.T)
        q, off, d = _skew_eig(a)
        evals = sla.eigh_tridiagonal(np.zeros(n), off, eigvals_only=True)
        order = np.argsort(np.abs(evals), kind="stable")[:k]
        lo, hi = int(order.min()), int(order.max())
        sel_vals, sel_vecs = sla.eigh_tridiagonal(np.zeros(n), off, select="i",
                                                  select_range=(lo, hi))
        vecs = q @ (d[:, None] * sel_vecs)
        keep = [i - lo for i in order]
        vals, vecs = sel_vals[keep], vecs[:, keep]
    else:
        mat = h.dense()
        mat = 0.5 * (mat + mat.conj().T)
        evals, allvecs = sla.eigh(mat)
        order = np.argsort(np.abs(evals), kind="stable")[:k]
        vals, vecs = evals[order], allvecs[:, order]
    vecs = vecs / np.sqrt(g.cell_volume * np.sum(np.abs(vecs) ** 2, axis=0))
    vecs = vecs.T.reshape((k,) + g.shape)
    vals, vecs, gen_vals = _resolve_degeneracies(g, vals, vecs, generator, degeneracy_tol)
    res = np.array([np.sqrt(g.cell_volume * np.sum(np.abs(h(v) - e * v) ** 2))
                    for e, v in zip(vals, vecs)])
    srt = np.sort(evals)
    pairing = float(np.max(np.abs(srt + srt[::-1])))
    return SpectrumResult(vals, vecs, res, srt, pairing, g, gen_vals)


def _resolve_degeneracies(g, vals, vecs, generator, tol):
    """Rotate within degenerate E blocks to diagonalize the generator, then <sigma^2>."""
    r2 = sum(np.broadcast_to(g.coord(ax), g.shape) ** 2 for ax in range(g.dim))
    r2_op = multiplication_op(g, r2, "sigma^2")
    order = np.lexsort((np.abs(vals), np.round(np.abs(vals) / max(tol, 1e-300))))
    vals, vecs = vals[order], vecs[order]
    gen_vals = np.full(len(vals), np.nan) if generator is not None else None
    start = 0
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and abs(vals[stop] - vals[start]) < tol * max(1.0, abs(vals[start])):
            stop += 1
        block = vecs[start:stop]
        if stop - start > 1:
            ops = ([generator] if generator is not None else []) + [r2_op]
            block = _diagonalize_block(g, block, ops, tol)
            vecs[start:stop] = block
        if generator is not None:
            for i in range(start, stop):
                gen_vals[i] = np.real(gr.inner(g, vecs[i], generator(vecs[i])))
        start = stop
    return vals, vecs, gen_vals


def _diagonalize_block(g, block, ops, tol):
    if not ops or len(block) == 1:
        return block
    op, rest = ops[0], ops[1:]
    flat = block.reshape(len(block), -1)
    applied = np.stack([np.asarray(op(v)).ravel() for v in block])
    m = g.cell_volume * flat.conj() @ applied.T
    m = 0.5 * (m + m.conj().T)
    w, u = np.linalg.eigh(m)
    new = (u.T @ flat).reshape(block.shape)
    out = new.copy()
    start = 0
    while start < len(w):
        stop = start + 1
        while stop < len(w) and abs(w[stop] - w[start]) < tol * max(1.0, abs(w[start])):
            stop += 1
        if stop - start > 1:
            out[start:stop] = _diagonalize_block(g, new[start:stop], rest, tol)
        start = stop
    return out


def periodic_state(s: SpectrumResult, n: int, t: float) -> RealWaveFunction:
    """q_n(t) = Re(phi_n exp(-i E_n t)) with ||phi_n||^2 = 2, so ||q_n|| = 1."""
    e = float(s.eigenvalues[n])
    if abs(e) < 1e-12:
        raise DegenerateError("static eigenstate (E = 0) has no periodic evolution; use Re(phi_0)")
    phi = np.sqrt(2.0) * s.eigenvectors[n]
    return RealWaveFunction(s.grid, np.real(phi * np.exp(-1j * e * t)), t)
