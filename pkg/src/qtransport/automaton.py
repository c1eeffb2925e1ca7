"""Deterministic invertible automata on finitely many configurations.

The step matrix is a unique-jump (permutation) matrix; probabilities of
whole trajectories follow from the initial wave function alone.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetError, ContractError, DomainError, InvertibilityError
from .model import ForceField

MAX_STATES = 4096
MAX_HORIZON = 64
DENSE_MAX_STATES = 5
DENSE_MAX_HORIZON = 5


@dataclass(frozen=True, eq=False)
class DiscreteAutomaton:
    perm: tuple
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        m = len(perm)
        if m == 0:
            raise ContractError("automaton needs at least one state")
        hits = np.bincount(np.asarray(perm) % m, minlength=m) if min(perm) >= 0 else None
        if max(perm) >= m or min(perm) < 0 or np.any(hits != 1):
            dup = [i for i, c in enumerate(hits) if c != 1] if hits is not None else []
            raise InvertibilityError(f"update is not a bijection of 0..{m - 1} (targets hit != once: {dup[:8]})")
        object.__setattr__(self, "perm", perm)

    @property
    def num_states(self) -> int:
        return len(self.perm)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.perm, dtype=np.int64)

    @classmethod
    def from_permutation(cls, perm, labels=None, name="") -> "DiscreteAutomaton":
        return cls(tuple(perm), labels, name)

    @classmethod
    def from_cycles(cls, num_states: int, cycles: Sequence[Sequence[int]], name="") -> "DiscreteAutomaton":
        """Cycle notation: (a b c) maps a -> b -> c -> a; unlisted states are fixed."""
        perm = list(range(num_states))
        seen = set()
        for cyc in cycles:
            for i, s in enumerate(cyc):
                if s in seen or not 0 <= s < num_states:
                    raise ContractError(f"state {s} repeated or out of range in cycle notation")
                seen.add(s)
                perm[s] = cyc[(i + 1) % len(cyc)]
        return cls(tuple(perm), None, name)

    @classmethod
    def from_flow(cls, f: ForceField, points, eps: float, tol: float = 1e-6, name="") -> "DiscreteAutomaton":
        """Discretize the update sigma' = sigma + eps F(sigma') onto lattice points.

        Each image must land on a lattice point (within tol); colliding or
        off-lattice images are rejected.
        """
        from .evolution import forward_map

        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != f.dim:
            raise ContractError(f"lattice points must have shape (M, {f.dim})")
        images = forward_map(f, pts, eps)
        dist = np.linalg.norm(images[:, None, :] - pts[None, :, :], axis=2)
        target = np.argmin(dist, axis=1)
        off = np.min(dist, axis=1)
        if np.any(off > tol):
            bad = int(np.argmax(off))
            raise InvertibilityError(f"image of lattice point {bad} is {off[bad]:.3e} away from the lattice")
        if len(set(target.tolist())) != len(pts):
            raise InvertibilityError("flow map collides: two lattice points share an image")
        return cls(tuple(target.tolist()), pts, name or f.name)

    def cycles(self) -> list[list[int]]:
        seen, out = set(), []
        for s in range(self.num_states):
            if s in seen:
                continue
            cyc, x = [], s
            while x not in seen:
                seen.add(x)
                cyc.append(x)
                x = self.perm[x]
            out.append(cyc)
        return out

    def order(self) -> int:
        return math.lcm(*(len(c) for c in self.cycles()))

    def power(self, k: int) -> np.ndarray:
        """pi^k as an index array (k may be negative)."""
        idx = np.arange(self.num_states)
        base = self.array if k >= 0 else np.argsort(self.array)
        for _ in range(abs(k) % self.order()):
            idx = base[idx]
        return idx

    def inverse(self) -> "DiscreteAutomaton":
        return DiscreteAutomaton(tuple(np.argsort(self.array).tolist()), self.labels, self.name)

    def compose(self, other: "DiscreteAutomaton") -> "DiscreteAutomaton":
        """Apply ``self`` first, then ``other``."""
        return DiscreteAutomaton(tuple(other.array[self.array].tolist()), self.labels)


def random_automaton(num_states: int, rng: np.random.Generator) -> DiscreteAutomaton:
    return DiscreteAutomaton(tuple(rng.permutation(num_states).tolist()), name="random")


def step_matrix(a: DiscreteAutomaton) -> np.ndarray:
    """S[pi(i), i] = 1: the unique-jump matrix."""
    m = a.num_states
    s = np.zeros((m, m), dtype=np.int64)
    s[a.array, np.arange(m)] = 1
    return s


@dataclass(frozen=True, eq=False)
class DiscreteWaveFunction:
    values: np.ndarray
    time: int = 0
    probabilities_exact: tuple | None = None  # Fractions, when known exactly

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ContractError("discrete wave function must be one-dimensional")
        norm = float(np.sum(v ** 2))
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"sum q_i^2 = {norm!r}, expected 1 within 1e-12")
        object.__setattr__(self, "values", v)
        if self.probabilities_exact is not None:
            p = tuple(Fraction(x) for x in self.probabilities_exact)
            if len(p) != len(v) or sum(p) != 1:
                raise DomainError("exact probabilities must have M entries summing to 1")
            object.__setattr__(self, "probabilities_exact", p)

    @property
    def num_states(self) -> int:
        return len(self.values)

    @property
    def probabilities(self) -> np.ndarray:
        return self.values ** 2

    @classmethod
    def from_probabilities(cls, probs, signs=None, time: int = 0) -> "DiscreteWaveFunction":
        """q_i = s_i sqrt(p_i); exact mode when every p_i is a Fraction or int."""
        exact = all(isinstance(p, (Fraction, int)) for p in probs)
        if any(p < 0 for p in probs):
            raise DomainError("negative probability")
        pf = np.array([float(p) for p in probs])
        total = float(sum(Fraction(p) for p in probs)) if exact else float(pf.sum())
        if total <= 0:
            raise DomainError("probabilities sum to zero")
        q = np.sqrt(pf / total)
        if signs is not None:
            s = np.asarray(signs, dtype=float)
            if not np.all(np.abs(s) == 1):
                raise DomainError("signs must be +1 or -1")
            q = q * s
        q = q / np.sqrt(np.sum(q ** 2))
        ex = None
        if exact:
            tot = sum(Fraction(p) for p in probs)
            ex = tuple(Fraction(p) / tot for p in probs)
        return cls(q, time, ex)


def random_wave_function(num_states: int, rng: np.random.Generator, exact: bool = False,
                         denominator: int = 1000) -> DiscreteWaveFunction:
    """Random signed q; exact mode draws rational probabilities."""
    signs = rng.choice([-1.0, 1.0], size=num_states)
    if exact:
        counts = rng.integers(0, denominator, size=num_states)
        counts[rng.integers(num_states)] += 1
        return DiscreteWaveFunction.from_probabilities([Fraction(int(c)) for c in counts], signs)
    v = rng.normal(size=num_states)
    v /= np.sqrt(np.sum(v ** 2))
    return DiscreteWaveFunction(v)


def evolve_discrete(a: DiscreteAutomaton, q: DiscreteWaveFunction, steps: int) -> DiscreteWaveFunction:
    """q(t+eps, pi(i)) = q(t, i), applied ``steps`` times (negative runs backwards)."""
    if q.num_states != a.num_states:
        raise ContractError("wave function and automaton sizes differ")
    target = a.power(steps)
    vals = np.empty_like(q.values)
    vals[target] = q.values
    ex = None
    if q.probabilities_exact is not None:
        lst = [None] * q.num_states
        for i, t in enumerate(target):
            lst[t] = q.probabilities_exact[i]
        ex = tuple(lst)
    return DiscreteWaveFunction(vals, q.time + steps, ex)


@dataclass
class OverallDistribution:
    horizon: int
    trajectories: np.ndarray  # (K, T+1) state indices
    probabilities: np.ndarray
    probabilities_exact: list | None = None

    @property
    def support(self) -> list:
        probs = self.probabilities_exact or self.probabilities.tolist()
        return [(tuple(int(x) for x in tr), p) for tr, p in zip(self.trajectories, probs)]

    @property
    def partition_sum(self):
        if self.probabilities_exact is not None:
            return sum(self.probabilities_exact)
        return float(np.sum(self.probabilities))


def _check_budget(m: int, horizon: int):
    if m > MAX_STATES or horizon > MAX_HORIZON or horizon < 0:
        raise BudgetError(f"enumeration budget is M <= {MAX_STATES}, 0 <= T <= {MAX_HORIZON} "
                          f"(got M={m}, T={horizon})")


def overall_distribution(a: DiscreteAutomaton, q_in: DiscreteWaveFunction, horizon: int) -> OverallDistribution:
    """The M allowed trajectories i, pi(i), ..., pi^T(i), each with probability q_in(i)^2."""
    m = a.num_states
    _check_budget(m, horizon)
    if q_in.num_states != m:
        raise ContractError("wave function and automaton sizes differ")
    traj = np.empty((m, horizon + 1), dtype=np.int64)
    traj[:, 0] = np.arange(m)
    for t in range(horizon):
        traj[:, t + 1] = a.array[traj[:, t]]
    # boundary product q(t_f, sigma(t_f)) q(t_in, sigma(t_in)) along each allowed path
    q_f = evolve_discrete(a, q_in, horizon)
    probs = q_f.values[traj[:, -1]] * q_in.values
    exact = None
    if q_in.probabilities_exact is not None:
        exact = list(q_in.probabilities_exact)
    return OverallDistribution(horizon, traj, probs, exact)


def chain_weight(s: np.ndarray, q_in, q_f, path) -> float:
    """q_f(sigma_T) S(sigma_T, sigma_{T-1}) ... S(sigma_1, sigma_0) q_in(sigma_0)."""
    w = q_in[path[0]]
    for a, b in zip(path[:-1], path[1:]):
        w = w * s[b, a]
    return w * q_f[path[-1]]


def dense_overall_weights(a: DiscreteAutomaton, q_in: DiscreteWaveFunction, horizon: int) -> np.ndarray:
    """Step-operator product evaluated on every one of the M^(T+1) paths (debug oracle)."""
    m = a.num_states
    if m > DENSE_MAX_STATES or horizon > DENSE_MAX_HORIZON:
        raise BudgetError(f"dense path product needs M <= {DENSE_MAX_STATES} and T <= {DENSE_MAX_HORIZON}")
    s = step_matrix(a).astype(float)
    q_f = evolve_discrete(a, q_in, horizon).values
    w = q_in.values.reshape((m,) + (1,) * horizon)
    for t in range(horizon):
        shape = [1] * (horizon + 1)
        shape[t], shape[t + 1] = m, m
        w = w * s.T.reshape(shape)
    return w * q_f.reshape((1,) * horizon + (m,))


def lift(values, time: int) -> Callable:
    """Time-local observable A(sigma(t)) as a path functional."""
    vals = list(values)
    return lambda traj: vals[traj[time]]


def expectation_overall(functional: Callable, w: OverallDistribution):
    """Classical statistical rule: sum over trajectories of A[traj] p(traj)."""
    exact = w.probabilities_exact is not None
    total = Fraction(0) if exact else 0.0
    probs = w.probabilities_exact if exact else w.probabilities
    for tr, p in zip(w.trajectories, probs):
        try:
            val = functional(tuple(int(x) for x in tr))
        except (IndexError, KeyError, TypeError) as exc:
            raise ContractError(f"observable undefined on trajectory {tuple(tr)}") from exc
        if val is None:
            raise ContractError(f"observable undefined on trajectory {tuple(tr)}")
        if exact and isinstance(val, (int, Fraction)):
            total += val * p
        else:
            total = float(total) + float(val) * float(p)
            exact = False
    return total


def expectation_local(values, q: DiscreteWaveFunction):
    """Quantum rule q^T A q for a diagonal A."""
    if len(values) != q.num_states:
        raise ContractError(f"observable has {len(values)} entries, wave function {q.num_states}")
    if q.probabilities_exact is not None and all(isinstance(v, (int, Fraction)) for v in values):
        return sum(Fraction(v) * p for v, p in zip(values, q.probabilities_exact))
    a = np.asarray([float(v) for v in values])
    return float(q.values @ (a * q.values))


@dataclass
class EquivalenceReport:
    num_states: int
    horizon: int
    max_residual: float
    partition_sum: float
    min_weight: float
    sign_flip_residual: float
    exact: bool
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"num_states": self.num_states, "horizon": self.horizon,
                "max_residual": self.max_residual, "partition_sum": self.partition_sum,
                "min_weight": self.min_weight, "sign_flip_residual": self.sign_flip_residual,
                "exact": self.exact, "passed": self.passed}


def equivalence_report(a: DiscreteAutomaton, q_in: DiscreteWaveFunction, horizon: int,
                       rng: np.random.Generator, n_observables: int = 3, corrupt: bool = False,
                       tol: float = 1e-14) -> EquivalenceReport:
    """Compare the quantum rule (step-matrix evolution) with path enumeration at every t <= T.

    ``corrupt`` breaks one column of the step matrix used by the quantum rule
    (negative control).
    """
    m = a.num_states
    w = overall_distribution(a, q_in, horizon)
    s = step_matrix(a)
    if corrupt and m > 1:
        s = s.copy()
        j = int(np.argmax(s[:, 0]))
        s[:, 0] = 0
        s[(j + 1) % m, 0] = 1
    exact = q_in.probabilities_exact is not None
    observables = [rng.integers(-5, 6, size=m).tolist() for _ in range(n_observables)]
    worst = 0.0
    probs_exact = list(q_in.probabilities_exact) if exact else None
    q = q_in.values.copy()
    for t in range(horizon + 1):
        for obs in observables:
            overall = expectation_overall(lift(obs, t), w)
            if exact:
                local = sum(Fraction(int(v)) * p for v, p in zip(obs, probs_exact))
                worst = max(worst, abs(float(local - overall)) if local != overall else 0.0)
            else:
                local = float(q @ (np.asarray(obs, dtype=float) * q))
                worst = max(worst, abs(local - overall))
        if t < horizon:
            q = s @ q
            if exact:
                probs_exact = _matrix_transport(s, probs_exact)
    flips = rng.choice([-1.0, 1.0], size=m)
    flipped = DiscreteWaveFunction(q_in.values * flips, q_in.time, q_in.probabilities_exact)
    w_flip = overall_distribution(a, flipped, horizon)
    flip_res = float(np.max(np.abs(w_flip.probabilities - w.probabilities)))
    z = w.partition_sum
    zf = float(z)
    min_w = float(min(np.min(w.probabilities), np.min(w_flip.probabilities)))
    z_ok = (z == 1) if exact else abs(zf - 1) <= 1e-12
    passed = worst <= (0.0 if exact else tol) and z_ok and min_w >= 0 and flip_res == 0.0
    return EquivalenceReport(m, horizon, float(worst), zf, min_w, flip_res, exact, bool(passed))


def _matrix_transport(s, probs):
    """p'(j) = sum_i S[j, i] p(i) with exact arithmetic (S may be corrupted)."""
    out = []
    for j in range(len(probs)):
        out.append(sum((probs[i] for i in range(len(probs)) if s[j, i]), Fraction(0)))
    return out


def enumerate_paths(m: int, horizon: int):
    return itertools.product(range(m), repeat=horizon + 1)
