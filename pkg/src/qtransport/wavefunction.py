"""Real (sigma-basis) and complex (gamma-basis) classical wave functions."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import grid as gr
from .errors import ContractError, DegenerateError, DomainError
from .grid import ConfigurationGrid

log = logging.getLogger(__name__)

NORM_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class RealWaveFunction:
    grid: ConfigurationGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.grid.check_field(self.values), dtype=float)
        object.__setattr__(self, "values", vals)

    @property
    def probability(self) -> np.ndarray:
        return self.values ** 2

    def norm(self) -> float:
        return float(self.grid.cell_volume * np.sum(self.values ** 2))

    def with_values(self, values, time=None) -> "RealWaveFunction":
        return RealWaveFunction(self.grid, values, self.time if time is None else time)


@dataclass(frozen=True, eq=False)
class ComplexWaveFunction:
    """psi(gamma) in FFT slot order. ``constrained`` marks a classical (real-equivalent) state."""
    grid: ConfigurationGrid
    values: np.ndarray
    time: float = 0.0
    constrained: bool = True

    def __post_init__(self):
        vals = np.asarray(self.grid.check_field(self.values), dtype=complex)
        object.__setattr__(self, "values", vals)

    def norm(self) -> float:
        return float(self.grid.dual_weight * np.sum(np.abs(self.values) ** 2))

    def constraint_defect(self) -> float:
        return gr.constraint_defect(self.grid, self.values)

    def with_values(self, values, time=None) -> "ComplexWaveFunction":
        return ComplexWaveFunction(self.grid, values, self.time if time is None else time,
                                   self.constrained)


WaveFunction = RealWaveFunction | ComplexWaveFunction


def from_probability(g: ConfigurationGrid, w, signs=None, time: float = 0.0) -> RealWaveFunction:
    """q = sign * sqrt(w / Z_w); the default sign is +1 everywhere."""
    w = np.asarray(g.check_field(w), dtype=float)
    if np.any(w < 0):
        raise DomainError(f"probability has negative entries (min {w.min():.3e})")
    z = gr.integrate(g, w)
    if not z > 0:
        raise DegenerateError("probability integrates to zero")
    q = np.sqrt(w / z)
    if signs is not None:
        s = np.asarray(g.check_field(signs), dtype=float)
        if not np.all(np.abs(s) == 1):
            raise DomainError("sign mask entries must be +1 or -1")
        q = q * s
    return RealWaveFunction(g, q, time)


def to_probability(q: RealWaveFunction) -> np.ndarray:
    return q.values ** 2


def normalized(state: WaveFunction) -> WaveFunction:
    n = state.norm()
    if not n > 0:
        raise DegenerateError("cannot normalize a zero wave function")
    return state.with_values(state.values / np.sqrt(n))


def to_complex(q: RealWaveFunction) -> ComplexWaveFunction:
    return ComplexWaveFunction(q.grid, gr.fourier_forward(q.grid, q.values), q.time, True)


def to_real(psi: ComplexWaveFunction, tol: float = 1e-10) -> RealWaveFunction:
    return RealWaveFunction(psi.grid, gr.fourier_inverse(psi.grid, psi.values, tol), psi.time)


def project_constraint(psi_tilde: ComplexWaveFunction) -> ComplexWaveFunction:
    """psi = (psi_tilde(gamma) + conj(psi_tilde(-gamma))) / 2, renormalized to unit norm."""
    g = psi_tilde.grid
    v = 0.5 * (psi_tilde.values + np.conj(gr.mirror(g, psi_tilde.values)))
    norm = g.dual_weight * np.sum(np.abs(v) ** 2)
    if norm < 1e-12:
        raise DegenerateError("projection annihilates the state (purely anti-real input)")
    return ComplexWaveFunction(g, v / np.sqrt(norm), psi_tilde.time, True)


def overlap(a: WaveFunction, b: WaveFunction) -> complex | float:
    """q^T q' (measure weighted) in the sigma basis, psi^dagger psi' in the gamma basis."""
    if type(a) is not type(b):
        raise ContractError("overlap needs two wave functions in the same basis")
    if a.grid != b.grid:
        raise ContractError("overlap needs wave functions on the same grid")
    if isinstance(a, RealWaveFunction):
        return float(a.grid.cell_volume * np.dot(a.values.ravel(), b.values.ravel()))
    return complex(a.grid.dual_weight * np.vdot(a.values.ravel(), b.values.ravel()))


# initial-state families ----------------------------------------------------

def uniform(g: ConfigurationGrid) -> RealWaveFunction:
    return from_probability(g, np.ones(g.shape))


def gaussian_density(g: ConfigurationGrid, mean, cov) -> np.ndarray:
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (g.dim,))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov * np.eye(g.dim)
    elif cov.ndim == 1:
        cov = np.diag(cov)
    if cov.shape != (g.dim, g.dim):
        raise ContractError(f"covariance must be {g.dim}x{g.dim}")
    prec = np.linalg.inv(cov)
    d = g.points() - mean
    expo = -0.5 * np.einsum("pi,ij,pj->p", d, prec, d)
    norm = 1.0 / np.sqrt((2 * np.pi) ** g.dim * np.linalg.det(cov))
    return (norm * np.exp(expo)).reshape(g.shape)


def gaussian(g: ConfigurationGrid, mean=0.0, cov=1.0, signs=None) -> RealWaveFunction:
    """q = sqrt of a normal density (then renormalized on the grid)."""
    return from_probability(g, gaussian_density(g, mean, cov), signs)


def mixture(g: ConfigurationGrid, weights, means, covs, signs=None) -> RealWaveFunction:
    w = sum(wt * gaussian_density(g, m, c) for wt, m, c in zip(weights, means, covs))
    return from_probability(g, w, signs)


def random_smooth_state(g: ConfigurationGrid, rng: np.random.Generator, n_bumps: int = 3,
                        complex_valued: bool = False) -> np.ndarray:
    """Random unit-norm test state: a few Gaussian bumps well inside the box.

    Bumps have width L/10 and centres within |sigma| < L/4, so the state is
    band limited to well below the top quarter of modes for n >= 32 and
    decays below ~1e-12 at the box edge.
    """
    width = g.L / 10
    out = np.zeros(g.shape, dtype=complex if complex_valued else float)
    coords = g.coords()
    for _ in range(n_bumps):
        c = rng.uniform(-g.L / 4, g.L / 4, size=g.dim)
        amp = rng.normal()
        if complex_valued:
            amp = amp + 1j * rng.normal()
        r2 = sum((x - ci) ** 2 for x, ci in zip(coords, c))
        out += amp * np.exp(-r2 / (2 * width ** 2))
    return out / np.sqrt(g.cell_volume * np.sum(np.abs(out) ** 2))
