"""Observable catalog, conservation monitoring and uncertainty products."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import grid as gr
from .errors import ConsistencyError, ContractError, NotApplicableError
from .grid import ConfigurationGrid
from .model import ForceField
from .operators import (GridOperator, angular_momentum, commutator, expectation, gamma_op,
                        gamma_squared_op, hamiltonian, hamiltonian_squared_explicit,
                        multiplication_op, sigma_op, symmetry_generator)
from .wavefunction import RealWaveFunction, WaveFunction, random_smooth_state

log = logging.getLogger(__name__)

STATISTICAL = ("gamma", "gamma2", "H", "H2", "L", "gen")
DIAGNOSTIC_ONLY = ("gamma", "H")
HINT_TOL = 1e-8


@dataclass
class ObservableSpec:
    kind: str  # classical | statistical | custom
    label: str
    name: str = ""
    axis: int | None = None
    function: Callable | None = None
    operator: GridOperator | None = None
    conserved_hint: bool = False

    def __post_init__(self):
        if self.kind not in ("classical", "statistical", "custom"):
            raise ContractError(f"unknown observable kind {self.kind!r}")
        if self.kind == "statistical" and self.name not in STATISTICAL:
            raise ContractError(f"unknown statistical observable {self.name!r}; "
                                f"choose from {', '.join(STATISTICAL)}")
        if self.kind == "classical" and self.function is None:
            raise ContractError("classical observable needs a function of sigma")
        if self.kind == "custom" and self.operator is None:
            raise ContractError("custom observable needs an operator")

    @property
    def diagnostic_only(self) -> bool:
        return self.kind == "statistical" and self.name in DIAGNOSTIC_ONLY


_NAME = re.compile(r"^(sigma2|sigma|gamma2|gamma|r2|H2|H|L|gen)(?::?(\d+))?$")


def parse_observable(text: str, conserved: bool = False) -> ObservableSpec:
    """Names: sigma:k, sigma2:k, r2, gamma:k, gamma2, H, H2, L3 (L1, L2 in 3D), gen:i. Axes are 1-based."""
    text = text.strip()
    m = _NAME.match(text)
    if not m:
        raise ContractError(f"unknown observable {text!r}")
    base, idx = m.group(1), m.group(2)
    k = int(idx) if idx is not None else None
    if base in ("sigma", "sigma2", "gamma", "gen", "L") and k is None:
        raise ContractError(f"observable {base!r} needs an index, e.g. {base}:1")
    if base == "sigma":
        return ObservableSpec("classical", text, "sigma", k - 1,
                              function=lambda pts, a=k - 1: pts[:, a], conserved_hint=conserved)
    if base == "sigma2":
        return ObservableSpec("classical", text, "sigma2", k - 1,
                              function=lambda pts, a=k - 1: pts[:, a] ** 2, conserved_hint=conserved)
    if base == "r2":
        return ObservableSpec("classical", text, "r2",
                              function=lambda pts: np.sum(pts ** 2, axis=1), conserved_hint=conserved)
    if base == "gamma":
        return ObservableSpec("statistical", text, "gamma", k - 1, conserved_hint=conserved)
    if base in ("gamma2", "H", "H2"):
        return ObservableSpec("statistical", text, base, conserved_hint=conserved)
    if base == "L":
        return ObservableSpec("statistical", text, "L", k, conserved_hint=conserved)
    return ObservableSpec("statistical", text, "gen", k - 1, conserved_hint=conserved)


def build_operator(spec: ObservableSpec, model: ForceField, g: ConfigurationGrid,
                   rng: np.random.Generator | None = None, check_states: int = 10) -> GridOperator:
    if model.dim != g.dim:
        raise ContractError(f"model dim {model.dim} != grid dim {g.dim}")
    if spec.axis is not None and spec.name not in ("L", "gen") and not 0 <= spec.axis < g.dim:
        raise ContractError(f"observable {spec.label!r} refers to axis {spec.axis + 1} of a {g.dim}-d grid")
    if spec.kind == "custom":
        op = spec.operator
    elif spec.kind == "classical":
        if spec.name == "sigma":
            op = sigma_op(g, spec.axis)
        else:
            vals = np.asarray(spec.function(g.points()), dtype=float).reshape(g.shape)
            op = multiplication_op(g, vals, spec.label)
    elif spec.name == "gamma":
        op = gamma_op(g, spec.axis)
    elif spec.name == "gamma2":
        op = gamma_squared_op(g)
    elif spec.name == "H":
        op = hamiltonian(model, g)
    elif spec.name == "H2":
        op = hamiltonian_squared_explicit(model, g)
    elif spec.name == "L":
        if g.dim < 2:
            raise NotApplicableError(f"{spec.label} is undefined for a {g.dim}-d configuration space")
        op = angular_momentum(g, spec.axis)
    else:
        if not 0 <= spec.axis < len(model.generators):
            raise NotApplicableError(f"model {model.name!r} declares {len(model.generators)} generators")
        op = symmetry_generator(model.generators[spec.axis], g)
    op = GridOperator(op.grid, op.real_form, op.phase, op.hermitian, spec.label, op.action_fn,
                      op.basis, dict(op.meta, diagnostic_only=spec.diagnostic_only))
    if spec.conserved_hint:
        res = commutator_residual(op, hamiltonian(model, g), rng or np.random.default_rng(0), check_states)
        op.meta["hint_residual"] = res
        op.meta["hint_verified"] = res < HINT_TOL
        if res >= HINT_TOL:
            log.warning("%s declared conserved but ||[A,H]v|| = %.3e", spec.label, res)
    return op


def commutator_residual(a: GridOperator, h: GridOperator, rng: np.random.Generator, count: int = 10) -> float:
    """max ||[A, H] v|| over random smooth unit states."""
    c = commutator(a, h)
    g = a.grid
    worst = 0.0
    for _ in range(count):
        v = random_smooth_state(g, rng)
        r = c(v)
        worst = max(worst, float(np.sqrt(g.cell_volume * np.sum(np.abs(r) ** 2))))
    return worst


@dataclass
class ConservationReport:
    label: str
    times: list
    values: list
    max_drift: float
    relative: bool
    tolerance: float
    verdict: str
    diagnostic_only: bool = False

    def as_dict(self) -> dict:
        return {"label": self.label, "max_drift": self.max_drift, "relative": self.relative,
                "tolerance": self.tolerance, "verdict": self.verdict,
                "initial": self.values[0] if self.values else None,
                "diagnostic_only": self.diagnostic_only}


def default_tolerance(num_steps: int, eps: float) -> float:
    """Relative 1e-6 at 1e4 steps of 1e-3, scaled linearly with num_steps * eps^2."""
    return max(1e-6 * num_steps * eps ** 2 / 1e-2, 1e-10)


def conservation_scan(record, labels, tolerance: float | None = None, eps: float | None = None,
                      zero_level: float = 1e-12) -> list[ConservationReport]:
    """Drift of monitored expectation values; relative unless the initial value is ~0."""
    reports = []
    times = list(record.monitor_times)
    steps = max(len(record.times) - 1, 1)
    if eps is None:
        eps = abs(record.times[1] - record.times[0]) if len(record.times) > 1 else 0.0
    tol = default_tolerance(steps, eps) if tolerance is None else tolerance
    for lab in labels:
        if isinstance(lab, ObservableSpec):
            lab = lab.label
        if lab not in record.monitor_values:
            raise ContractError(f"observable {lab!r} was not monitored in this run")
        vals = list(record.monitor_values[lab])
        arr = np.asarray(vals, dtype=complex)
        drift = np.abs(arr - arr[0])
        relative = abs(arr[0]) > zero_level
        md = float(np.max(drift) / abs(arr[0])) if relative else float(np.max(drift))
        verdict = "conserved" if md < tol else "not conserved"
        reports.append(ConservationReport(lab, times, vals, md, bool(relative), tol, verdict,
                                          lab in ("H",) or lab.startswith("gamma:")))
    return reports


def uncertainty_product(state: WaveFunction, a: GridOperator, b: GridOperator, tol: float = 1e-10):
    """(dA dB, 1/2 |<[A, B]>|); raises if the Robertson inequality is violated."""
    if not (a.hermitian and b.hermitian):
        raise ContractError("uncertainty product needs hermitian operators")
    if not isinstance(state, RealWaveFunction):
        raise ContractError("uncertainty product is evaluated on sigma-basis wave functions")
    g = state.grid
    v = state.values
    ma, mb = expectation(state, a), expectation(state, b)
    ra = np.asarray(a(v)) - ma * v
    rb = np.asarray(b(v)) - mb * v
    da = np.sqrt(g.cell_volume * np.sum(np.abs(ra) ** 2))
    db = np.sqrt(g.cell_volume * np.sum(np.abs(rb) ** 2))
    # <[A,B]> = <Av, Bv> - <Bv, Av> = 2i Im <Av, Bv>
    bound = abs(np.imag(gr.inner(g, np.asarray(a(v)), np.asarray(b(v)))))
    product = float(da * db)
    if product < bound - tol:
        raise ConsistencyError(f"Robertson bound violated: {product:.3e} < {bound:.3e}")
    return product, float(bound)


def kernel_basis(spectrum_result, tol: float = 1e-8) -> np.ndarray:
    """Orthonormal real basis (grid measure) of the computed kernel of H."""
    g = spectrum_result.grid
    sel = np.abs(spectrum_result.eigenvalues) < tol
    vecs = spectrum_result.eigenvectors[sel]
    if len(vecs) == 0:
        return np.zeros((0,) + g.shape)
    real = np.concatenate([vecs.real, vecs.imag]).reshape(2 * len(vecs), -1)
    u, s, _ = np.linalg.svd(real.T, full_matrices=False)
    keep = s > 1e-8 * s.max()
    return (u[:, keep].T / np.sqrt(g.cell_volume)).reshape((int(keep.sum()),) + g.shape)


def distance_to_kernel(q: RealWaveFunction, basis: np.ndarray) -> float:
    """min over static q_s in span(basis) of ||q - q_s||."""
    g = q.grid
    v = q.values.ravel()
    b = basis.reshape(len(basis), -1)
    coeff = g.cell_volume * b @ v
    r = v - coeff @ b
    return float(np.sqrt(g.cell_volume * np.sum(r ** 2)))
