"""Deterministic transport laws d(sigma)/dt = F(sigma).

A ``ForceField`` bundles F with its Jacobian (and optionally second
derivatives), time-reversal metadata and declared continuous symmetries.
All callables are vectorized over a leading batch axis: they take points
of shape ``(P, dim)`` and return ``(P, dim)``, ``(P, dim, dim)`` or
``(P, dim, dim, dim)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NotApplicableError

log = logging.getLogger(__name__)

FD_STEP = 1e-5

Generator = tuple[np.ndarray, np.ndarray]


def finite_difference_jacobian(force: Callable, points: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences, J[p, k, l] = dF_k/dsigma_l at points[p]."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts, dim = points.shape
    jac = np.empty((npts, dim, dim))
    for l in range(dim):
        shift = np.zeros(dim)
        shift[l] = h
        jac[:, :, l] = (force(points + shift) - force(points - shift)) / (2 * h)
    return jac


def _fd_hessian(jacobian: Callable, points: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    npts, dim = points.shape
    hess = np.empty((npts, dim, dim, dim))
    for m in range(dim):
        shift = np.zeros(dim)
        shift[m] = h
        hess[:, :, :, m] = (jacobian(points + shift) - jacobian(points - shift)) / (2 * h)
    return hess


@dataclass(frozen=True, eq=False)
class ForceField:
    dim: int
    force: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    # hessian[p, k, l, m] = d^2 F_k / dsigma_l dsigma_m
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    time_reversal: np.ndarray | None = None
    generators: tuple[Generator, ...] = ()
    name: str = "custom"
    params: dict = field(default_factory=dict)
    jacobian_source: str = "analytic"

    def __post_init__(self):
        if self.dim < 1:
            raise ContractError(f"dim must be positive, got {self.dim}")
        if self.time_reversal is not None:
            a = np.asarray(self.time_reversal, dtype=float)
            if a.shape != (self.dim, self.dim):
                raise ContractError(f"time_reversal must be {self.dim}x{self.dim}")
            if not np.array_equal(a @ a, np.eye(self.dim)):
                raise ContractError("time_reversal must be an involution, A_T^2 = 1")
            object.__setattr__(self, "time_reversal", a)
        gens = []
        for b, c in self.generators:
            b = np.asarray(b, dtype=float).reshape(self.dim, self.dim)
            c = np.asarray(c, dtype=float).reshape(self.dim)
            gens.append((b, c))
        object.__setattr__(self, "generators", tuple(gens))

    @classmethod
    def from_callable(cls, dim, force, jacobian=None, hessian=None, **kwargs) -> "ForceField":
        """User model; without ``jacobian`` a central-difference fallback is used and flagged."""
        source = "analytic"
        if jacobian is None:
            source = "finite-difference"
            log.warning("force field %r uses a finite-difference Jacobian (h=%g)",
                        kwargs.get("name", "custom"), FD_STEP)

            def jacobian(points, _f=force):
                return finite_difference_jacobian(_f, points)
        return cls(dim=dim, force=force, jacobian=jacobian, hessian=hessian,
                   jacobian_source=source, **kwargs)

    # vectorized evaluation -------------------------------------------------
    def _points(self, sigma) -> tuple[np.ndarray, bool]:
        pts = np.asarray(sigma, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ContractError(
                f"configuration has shape {np.shape(sigma)}, expected (..., {self.dim})")
        return pts, single

    def force_at(self, sigma) -> np.ndarray:
        pts, single = self._points(sigma)
        out = np.asarray(self.force(pts), dtype=float).reshape(len(pts), self.dim)
        return out[0] if single else out

    def jacobian_at(self, sigma) -> np.ndarray:
        pts, single = self._points(sigma)
        out = np.asarray(self.jacobian(pts), dtype=float).reshape(len(pts), self.dim, self.dim)
        return out[0] if single else out

    def divergence_at(self, sigma) -> np.ndarray:
        # same code path as the Jacobian, so div == trace(J) exactly
        return np.trace(self.jacobian_at(sigma), axis1=-2, axis2=-1)

    def hessian_at(self, sigma, fallback: bool = True) -> np.ndarray:
        pts, single = self._points(sigma)
        if self.hessian is not None:
            out = np.asarray(self.hessian(pts), dtype=float)
        elif fallback:
            out = _fd_hessian(self.jacobian_at, pts)
        else:
            raise NotApplicableError(f"force field {self.name!r} has no second derivatives")
        out = out.reshape(len(pts), self.dim, self.dim, self.dim)
        return out[0] if single else out


# spec-level operations -----------------------------------------------------

def eval_force(f: ForceField, sigma) -> np.ndarray:
    return f.force_at(sigma)


def eval_divergence(f: ForceField, sigma):
    div = f.divergence_at(sigma)
    return float(div) if np.ndim(div) == 0 else div


def check_time_reversal(f: ForceField, samples) -> float:
    """max over samples of |F(A_T s) + A_T F(s)|; zero iff the law is time-reversal invariant."""
    if f.time_reversal is None:
        raise NotApplicableError(f"force field {f.name!r} declares no time reversal A_T")
    pts, _ = f._points(samples)
    if len(pts) == 0:
        raise ContractError("samples must be nonempty")
    a = f.time_reversal
    res = f.force_at(pts @ a.T) + f.force_at(pts) @ a.T
    return float(np.max(np.linalg.norm(res, axis=1)))


def symmetry_residual(f: ForceField, generator: Generator, samples) -> float:
    """Max norm of the Lie bracket J_F (B s + C) - B F(s) over samples."""
    b, c = generator
    pts, _ = f._points(samples)
    v = pts @ b.T + c
    res = np.einsum("pkl,pl->pk", f.jacobian_at(pts), v) - f.force_at(pts) @ b.T
    return float(np.max(np.linalg.norm(res, axis=1)))


def check_symmetry_generator(f: ForceField, gen_index: int, samples) -> float:
    if not f.generators:
        raise NotApplicableError(f"force field {f.name!r} declares no symmetry generators")
    if not 0 <= gen_index < len(f.generators):
        raise ContractError(f"generator index {gen_index} out of range")
    return symmetry_residual(f, f.generators[gen_index], samples)


def jacobian_consistency(f: ForceField, samples, h: float = FD_STEP) -> float:
    """Max relative deviation between the declared Jacobian and central differences."""
    pts, _ = f._points(samples)
    fd = finite_difference_jacobian(f.force_at, pts, h)
    an = f.jacobian_at(pts)
    scale = max(1.0, float(np.max(np.abs(an))))
    return float(np.max(np.abs(fd - an)) / scale)


# built-in catalog ----------------------------------------------------------

SO2 = np.array([[0.0, -1.0], [1.0, 0.0]])  # B for L3 = -i(s1 d2 - s2 d1)


def constant(c=1.0) -> ForceField:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dim = len(c)

    def force(p):
        return np.broadcast_to(c, p.shape).copy()

    def jac(p):
        return np.zeros((len(p), dim, dim))

    def hess(p):
        return np.zeros((len(p), dim, dim, dim))

    gens = tuple((np.zeros((dim, dim)), np.eye(dim)[k]) for k in range(dim))
    return ForceField(dim, force, jac, hess, time_reversal=-np.eye(dim), generators=gens,
                      name="constant", params={"c": c.tolist()})


def linear(lam=1.0, dim: int = 1) -> ForceField:
    """Relaxation F = -lam * sigma. Dilations are its only declared symmetry."""

    def force(p):
        return -lam * p

    def jac(p):
        return np.broadcast_to(-lam * np.eye(dim), (len(p), dim, dim)).copy()

    def hess(p):
        return np.zeros((len(p), dim, dim, dim))

    return ForceField(dim, force, jac, hess, generators=((np.eye(dim), np.zeros(dim)),),
                      name="linear", params={"lam": lam})


def rotation(omega=1.0) -> ForceField:
    """F = (omega s2, -omega s1): clockwise rigid rotation, H = -omega L3."""
    a = np.array([[0.0, omega], [-omega, 0.0]])

    def force(p):
        return p @ a.T

    def jac(p):
        return np.broadcast_to(a, (len(p), 2, 2)).copy()

    def hess(p):
        return np.zeros((len(p), 2, 2, 2))

    return ForceField(2, force, jac, hess, time_reversal=np.diag([1.0, -1.0]),
                      generators=((SO2, np.zeros(2)),), name="rotation",
                      params={"omega": omega})


def anharmonic(g=1.0) -> ForceField:
    """F = (dV/ds2, -dV/ds1) with V = g/4 (s1^2 + s2^2)^2; divergence free, SO(2) symmetric."""

    def force(p):
        r2 = np.sum(p * p, axis=1)
        return g * np.stack([r2 * p[:, 1], -r2 * p[:, 0]], axis=1)

    def jac(p):
        x, y = p[:, 0], p[:, 1]
        r2 = x * x + y * y
        out = np.empty((len(p), 2, 2))
        out[:, 0, 0] = 2 * x * y
        out[:, 0, 1] = r2 + 2 * y * y
        out[:, 1, 0] = -(r2 + 2 * x * x)
        out[:, 1, 1] = -2 * x * y
        return g * out

    def hess(p):
        x, y = p[:, 0], p[:, 1]
        out = np.empty((len(p), 2, 2, 2))
        out[:, 0, 0, 0] = 2 * y
        out[:, 0, 0, 1] = out[:, 0, 1, 0] = 2 * x
        out[:, 0, 1, 1] = 6 * y
        out[:, 1, 0, 0] = -6 * x
        out[:, 1, 0, 1] = out[:, 1, 1, 0] = -2 * y
        out[:, 1, 1, 1] = -2 * x
        return g * out

    return ForceField(2, force, jac, hess, time_reversal=np.diag([1.0, -1.0]),
                      generators=((SO2, np.zeros(2)),), name="anharmonic", params={"g": g})


@dataclass(frozen=True)
class PolynomialTerm:
    component: int
    coeff: float
    powers: tuple[int, ...]


def polynomial(dim: int, terms: Sequence[PolynomialTerm | dict], time_reversal=None,
               generators=()) -> ForceField:
    """F_k = sum over terms of coeff * prod_j sigma_j ** powers_j, with exact derivatives."""
    parsed = []
    for t in terms:
        if isinstance(t, dict):
            t = PolynomialTerm(int(t["component"]), float(t["coeff"]), tuple(t["powers"]))
        if not 0 <= t.component < dim or len(t.powers) != dim or min(t.powers) < 0:
            raise ContractError(f"bad polynomial term {t}")
        parsed.append(t)

    def monomial(p, powers):
        return np.prod([p[:, j] ** e for j, e in enumerate(powers)], axis=0)

    def d_powers(powers, j):
        if powers[j] == 0:
            return 0.0, None
        new = list(powers)
        new[j] -= 1
        return float(powers[j]), tuple(new)

    def force(p):
        out = np.zeros((len(p), dim))
        for t in parsed:
            out[:, t.component] += t.coeff * monomial(p, t.powers)
        return out

    def jac(p):
        out = np.zeros((len(p), dim, dim))
        for t in parsed:
            for l in range(dim):
                fac, pw = d_powers(t.powers, l)
                if pw is not None:
                    out[:, t.component, l] += t.coeff * fac * monomial(p, pw)
        return out

    def hess(p):
        out = np.zeros((len(p), dim, dim, dim))
        for t in parsed:
            for l in range(dim):
                f1, pw1 = d_powers(t.powers, l)
                if pw1 is None:
                    continue
                for m in range(dim):
                    f2, pw2 = d_powers(pw1, m)
                    if pw2 is not None:
                        out[:, t.component, l, m] += t.coeff * f1 * f2 * monomial(p, pw2)
        return out

    return ForceField(dim, force, jac, hess, time_reversal=time_reversal,
                      generators=tuple(generators), name="polynomial",
                      params={"terms": [t.__dict__ for t in parsed]})


BUILTINS: dict[str, Callable[..., ForceField]] = {
    "constant": constant,
    "linear": linear,
    "rotation": rotation,
    "anharmonic": anharmonic,
}


def builtin(name: str, **params) -> ForceField:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ContractError(f"unknown built-in model {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)
