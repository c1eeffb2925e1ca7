"""Extended weight on joint (sigma, gamma) paths over the cyclic space Z_M.

Configurations are sigma_j = 2 pi j / M, dual variables gamma are the
symmetric integer frequencies, and int D~gamma = (1/M) sum_gamma. All
functional integrals are finite sums, so every identity holds to round-off.

Joint paths are sigma_0 .. sigma_{T+1} and gamma_0 .. gamma_T; the final
boundary wave function sits at sigma_{T+1}. Dense arrays use the chain axis
order (sigma_0, gamma_0, sigma_1, gamma_1, ..., gamma_T, sigma_{T+1}).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .automaton import DiscreteAutomaton
from .errors import BudgetError, ConsistencyError, ContractError, InvertibilityError
from .model import ForceField

DENSE_CAP = 2_000_000


@dataclass(frozen=True)
class CyclicSpace:
    modulus: int
    horizon: int = 1
    epsilon: float = 1.0

    def __post_init__(self):
        if self.modulus < 2:
            raise ContractError("cyclic space needs M >= 2")
        if self.horizon < 0:
            raise ContractError("horizon must be >= 0")

    @property
    def sigma(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.modulus) / self.modulus

    @property
    def gamma(self) -> np.ndarray:
        return np.rint(np.fft.fftfreq(self.modulus) * self.modulus)

    @property
    def fourier(self) -> np.ndarray:
        """F[gamma, sigma] = exp(-i sigma gamma); psi = F q."""
        return np.exp(-1j * np.outer(self.gamma, self.sigma))

    def resolution_defect(self) -> float:
        """max |(1/M) sum_gamma exp(i gamma (sigma - sigma')) - delta|."""
        f = self.fourier
        return float(np.max(np.abs(f.conj().T @ f / self.modulus - np.eye(self.modulus))))

    @property
    def dense_size(self) -> int:
        return self.modulus ** (2 * self.horizon + 3)


@dataclass(frozen=True, eq=False)
class CycleForce:
    """Per-state displacement d = eps F(sigma') and det(1 - eps dF/dsigma) at the destination."""
    space: CyclicSpace
    displacement: np.ndarray
    determinant: np.ndarray
    kind: str = "sampled"

    def __post_init__(self):
        m = self.space.modulus
        d = np.asarray(self.displacement, dtype=float)
        det = np.asarray(self.determinant, dtype=float)
        if d.shape != (m,) or det.shape != (m,):
            raise ContractError(f"cycle force arrays must have {m} entries")
        object.__setattr__(self, "displacement", d)
        object.__setattr__(self, "determinant", det)

    @classmethod
    def free(cls, space: CyclicSpace) -> "CycleForce":
        m = space.modulus
        return cls(space, np.zeros(m), np.ones(m), "permutation")

    @classmethod
    def from_permutation(cls, space: CyclicSpace, perm) -> "CycleForce":
        """Lattice dynamics sigma' = sigma_{pi(j)}: d(sigma') = sigma' - sigma_{pi^-1(sigma')}, det = 1."""
        a = perm if isinstance(perm, DiscreteAutomaton) else DiscreteAutomaton(tuple(perm))
        if a.num_states != space.modulus:
            raise ContractError("permutation size differs from the cycle modulus")
        inv = np.argsort(a.array)
        sig = space.sigma
        return cls(space, sig - sig[inv], np.ones(space.modulus), "permutation")

    @classmethod
    def from_force_field(cls, space: CyclicSpace, f: ForceField) -> "CycleForce":
        """Sample a one-dimensional continuum force at the embedded points.

        Off-lattice pullbacks are evaluated by trigonometric interpolation,
        which is only symmetric for odd M (no unpaired Nyquist frequency).
        """
        if f.dim != 1:
            raise ContractError("cycle forces need a one-dimensional model")
        if space.modulus % 2 == 0:
            raise ContractError("a sampled continuum force needs an odd modulus M")
        pts = space.sigma[:, None]
        eps = space.epsilon
        d = eps * f.force_at(pts)[:, 0]
        det = 1.0 - eps * f.jacobian_at(pts)[:, 0, 0]
        if np.any(det <= 0):
            raise InvertibilityError(f"det(1 - eps dF/dsigma) = {det.min():.3e} <= 0 on the cycle")
        return cls(space, d, det, "sampled")

    def eps_delta(self) -> np.ndarray:
        """eps Delta = (i/2) ln det(1 - eps dF/dsigma), per destination state."""
        if np.any(self.determinant <= 0):
            raise InvertibilityError("nonpositive Jacobian determinant inside the log")
        return 0.5j * np.log(self.determinant)


def step_matrix_cycle(force: CycleForce, include_delta: bool = True) -> np.ndarray:
    """S[j', j] = (1/M) sqrt(det_j') sum_gamma exp(i (sigma_j' - d_j' - sigma_j) gamma)."""
    sp = force.space
    sig, gam, m = sp.sigma, sp.gamma, sp.modulus
    arg = (sig - force.displacement)[:, None, None] - sig[None, :, None]
    s = np.exp(1j * arg * gam[None, None, :]).sum(axis=2) / m
    if include_delta:
        s = s * np.sqrt(force.determinant)[:, None]
    return s


def gamma_step_matrix(force: CycleForce, include_delta: bool = True) -> np.ndarray:
    """S_gamma[g', g] = (1/M) sum_sigma' exp(-i sigma' g') sqrt(det) exp(i (sigma' - d) g)."""
    sp = force.space
    sig, gam = sp.sigma, sp.gamma
    amp = np.sqrt(force.determinant) if include_delta else np.ones(sp.modulus)
    left = np.exp(-1j * np.outer(gam, sig)) * amp[None, :]
    right = np.exp(1j * np.outer(sig - force.displacement, gam))
    return left @ right / sp.modulus


def chain_evolve(force: CycleForce, q, steps: int, include_delta: bool = True) -> np.ndarray:
    s = step_matrix_cycle(force, include_delta)
    q = np.asarray(q, dtype=complex)
    for _ in range(steps):
        q = s @ q
    return q


# actions -------------------------------------------------------------------

def discrete_action(sigma_path, gamma_path, displacement, eps_delta) -> complex:
    """-sum_t [sigma_{t+1} (gamma_{t+1} - gamma_t) + d(sigma_{t+1}) gamma_t + eps Delta(sigma_{t+1})].

    ``displacement`` and ``eps_delta`` are the per-step values of eps F and
    eps Delta at sigma_{t+1} (length T). Vector-valued paths are dotted.
    """
    s = np.asarray(sigma_path, dtype=float)
    g = np.asarray(gamma_path, dtype=float)
    d = np.asarray(displacement, dtype=float)
    if len(s) != len(g) or len(d) != len(s) - 1:
        raise ContractError("paths need T+1 entries and the force terms T entries")
    s2 = s.reshape(len(s), -1)
    g2 = g.reshape(len(g), -1)
    d2 = d.reshape(len(d), -1)
    kinetic = np.sum(s2[1:] * (g2[1:] - g2[:-1]))
    drift = np.sum(d2 * g2[:-1])
    return complex(-(kinetic + drift + np.sum(eps_delta)))


def action_sm(space: CyclicSpace, sigma_path, gamma_path, force: CycleForce,
              include_delta: bool = True) -> complex:
    """S_M on lattice paths (state indices; gamma as integer frequencies).

    A sigma path with T+2 entries is accepted; the extra final entry only
    enters the boundary wave function.
    """
    sidx = np.asarray(sigma_path, dtype=int)
    gvals = np.asarray(gamma_path, dtype=float)
    if len(sidx) == len(gvals) + 1:
        sidx = sidx[:-1]
    if len(sidx) != len(gvals):
        raise ContractError("sigma and gamma paths have mismatched lengths")
    ed = force.eps_delta()[sidx[1:]] if include_delta else np.zeros(len(sidx) - 1)
    return discrete_action(space.sigma[sidx], gvals, force.displacement[sidx[1:]], ed)


def field_action(f: ForceField, sigma_path, gamma_path, eps: float, include_delta: bool = True) -> complex:
    """S_M for a continuum model on real-valued sampled paths (T+1, dim)."""
    s = np.asarray(sigma_path, dtype=float).reshape(len(sigma_path), -1)
    dest = s[1:]
    disp = eps * f.force_at(dest)
    if include_delta:
        det = np.linalg.det(np.eye(f.dim) - eps * f.jacobian_at(dest))
        if np.any(det <= 0):
            raise InvertibilityError("nonpositive Jacobian determinant inside the log")
        ed = 0.5j * np.log(det)
    else:
        ed = np.zeros(len(dest))
    return discrete_action(s, np.asarray(gamma_path, dtype=float).reshape(s.shape), disp, ed)


def gamma_summed_amplitude(space: CyclicSpace, sigma_path, force: CycleForce,
                           include_delta: bool = True) -> complex:
    """(1/M)^(T+1) sum over gamma paths of exp(-i s0 g0) exp(i S_M) exp(i sT gT) (brute force).

    Equals the product of step-matrix entries along the sigma path.
    """
    sidx = np.asarray(sigma_path, dtype=int)
    t = len(sidx) - 1
    m = space.modulus
    if m ** (t + 1) > DENSE_CAP:
        raise BudgetError("too many gamma paths for brute force")
    gam, sig = space.gamma, space.sigma
    total = 0j
    for flat in range(m ** (t + 1)):
        gidx = np.unravel_index(flat, (m,) * (t + 1))
        gp = gam[list(gidx)]
        s_m = action_sm(space, sidx, gp, force, include_delta)
        total += np.exp(-1j * sig[sidx[0]] * gp[0] + 1j * s_m + 1j * sig[sidx[-1]] * gp[-1])
    return total / m ** (t + 1)


def continuum_action(f: ForceField, sigma_path, gamma_path, dt: float) -> dict:
    """Riemann-sum realization of S = -int [sigma dgamma/dt + F gamma - (i/2) div F].

    Returns the direct form, the integrated-by-parts form
    -int [-gamma dsigma/dt + F gamma - (i/2) div F] and the boundary term
    -[sigma gamma]_{t_in}^{t_f}, so that direct = by_parts + boundary.
    Closed paths (first sample equal to the last) use periodic differences
    and carry no boundary term.
    """
    s = np.asarray(sigma_path, dtype=float)
    g = np.asarray(gamma_path, dtype=float)
    if s.shape != g.shape:
        raise ContractError("sigma and gamma paths must have matching shapes")
    s = s.reshape(len(s), -1)
    g = g.reshape(len(g), -1)
    closed = np.allclose(s[0], s[-1], atol=1e-12, rtol=0) and np.allclose(g[0], g[-1], atol=1e-12, rtol=0)
    if closed:
        s, g = s[:-1], g[:-1]
        ds = (np.roll(s, -1, axis=0) - np.roll(s, 1, axis=0)) / (2 * dt)
        dg = (np.roll(g, -1, axis=0) - np.roll(g, 1, axis=0)) / (2 * dt)

        def integral(x):
            return np.sum(x) * dt
    else:
        ds = np.gradient(s, dt, axis=0)
        dg = np.gradient(g, dt, axis=0)

        def integral(x):
            return np.trapezoid(x, dx=dt, axis=0).sum() if x.ndim > 1 else np.trapezoid(x, dx=dt)
    force = f.force_at(s)
    div = f.divergence_at(s)
    common = np.sum(force * g, axis=1) - 0.5j * div
    direct = -integral(np.sum(s * dg, axis=1) + common)
    by_parts = -integral(-np.sum(g * ds, axis=1) + common)
    boundary = 0.0 if closed else -float(np.dot(s[-1], g[-1]) - np.dot(s[0], g[0]))
    return {"direct": complex(direct), "by_parts": complex(by_parts), "boundary": boundary,
            "closed": bool(closed)}


# extended wave function and weight -----------------------------------------

@dataclass(frozen=True, eq=False)
class ExtendedWaveFunction:
    space: CyclicSpace
    values: np.ndarray  # (M sigma, M gamma)
    time: int = 0

    @classmethod
    def from_real(cls, space: CyclicSpace, q, time: int = 0) -> "ExtendedWaveFunction":
        """phi(sigma, gamma) = exp(-i sigma gamma) q(sigma)."""
        q = np.asarray(q)
        if q.shape != (space.modulus,):
            raise ContractError(f"q must have {space.modulus} entries")
        return cls(space, np.exp(-1j * np.outer(space.sigma, space.gamma)) * q[:, None], time)

    def factorization_defect(self, q) -> float:
        return float(np.max(np.abs(self.values - ExtendedWaveFunction.from_real(self.space, q).values)))

    def probabilities(self) -> np.ndarray:
        """|phi|^2 with the gamma measure 1/M; sums to sum q^2."""
        return np.abs(self.values) ** 2 / self.space.modulus

    def psi(self) -> np.ndarray:
        """sum over sigma: the gamma-basis wave function."""
        return self.values.sum(axis=0)

    def marginal_q(self) -> np.ndarray:
        """(1/M) sum_gamma exp(i sigma gamma) phi(sigma, gamma): recovers q for factorized phi."""
        sp = self.space
        return np.sum(np.exp(1j * np.outer(sp.sigma, sp.gamma)) * self.values, axis=1) / sp.modulus


def extended_step(phi: ExtendedWaveFunction, force: CycleForce, include_delta: bool = True) -> ExtendedWaveFunction:
    """phi'(s', g') = exp(-i s' g') sqrt(det(s')) (1/M) sum_{s,g} exp(i (s' - d(s')) g) phi(s, g)."""
    sp = phi.space
    if force.space.modulus != sp.modulus:
        raise ContractError("force and wave function live on different cycles")
    amp = np.sqrt(force.determinant) if include_delta else np.ones(sp.modulus)
    kern = np.exp(1j * np.outer(sp.sigma - force.displacement, sp.gamma))
    inner = kern @ phi.psi() / sp.modulus
    vals = np.exp(-1j * np.outer(sp.sigma, sp.gamma)) * (amp * inner)[:, None]
    return ExtendedWaveFunction(sp, vals, phi.time + 1)


def extended_sandwich(phi_t: ExtendedWaveFunction, q_f) -> complex:
    """Close the chain with the final boundary: (1/M) sum_gamma psi_f*(gamma) psi_t(gamma)."""
    sp = phi_t.space
    psi_f = sp.fourier @ np.asarray(q_f)
    return complex(np.sum(np.conj(psi_f) * phi_t.psi()) / sp.modulus)


@dataclass
class ExtendedWeight:
    space: CyclicSpace
    force: CycleForce
    q_in: np.ndarray
    q_f: np.ndarray
    include_delta: bool = True
    dense: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.space.horizon

    def total(self) -> complex:
        if self.dense is not None:
            return complex(self.dense.sum())
        s = step_matrix_cycle(self.force, self.include_delta)
        q = self.q_in.astype(complex)
        for _ in range(self.horizon):
            q = s @ q
        return complex(np.dot(self.q_f, q))

    def _require_dense(self):
        if self.dense is None:
            raise BudgetError("operation needs the dense path representation")
        return self.dense

    @property
    def sigma_axes(self) -> tuple:
        t = self.horizon
        return tuple(range(0, 2 * t + 2, 2)) + (2 * t + 2,)

    @property
    def gamma_axes(self) -> tuple:
        return tuple(range(1, 2 * self.horizon + 2, 2))


def extended_weight(space: CyclicSpace, q_in, force: CycleForce, q_f=None, include_delta: bool = True,
                    dense: bool | None = None) -> ExtendedWeight:
    """w~ = phi*(t_f, sigma_{T+1}, gamma_T) exp(i S_M) phi(t_in, sigma_0, gamma_0) per joint path.

    The default q_f is q_in carried through the same chain, so the total
    weight equals the final squared norm (1 for a unitary chain).
    """
    m, t = space.modulus, space.horizon
    q_in = np.asarray(q_in, dtype=float)
    if q_in.shape != (m,):
        raise ContractError(f"q_in must have {m} entries")
    if q_f is None:
        q_f = chain_evolve(force, q_in, t, include_delta)
        if np.max(np.abs(q_f.imag)) > 1e-10:
            raise ConsistencyError("chain evolution produced a complex final wave function")
        q_f = q_f.real
    q_f = np.asarray(q_f, dtype=float)
    want_dense = space.dense_size <= DENSE_CAP if dense is None else dense
    if want_dense and space.dense_size > DENSE_CAP:
        raise BudgetError(f"dense joint paths M^(2T+3) = {space.dense_size} exceed {DENSE_CAP}; "
                          "use the factorized chain")
    w = ExtendedWeight(space, force, q_in, q_f, include_delta)
    if want_dense:
        w.dense = _dense_weight(space, q_in, q_f, force, include_delta)
    return w


def _dense_weight(space, q_in, q_f, force, include_delta):
    m, t = space.modulus, space.horizon
    sig, gam = space.sigma, space.gamma
    nax = 2 * t + 3
    amp = np.sqrt(force.determinant) if include_delta else np.ones(m)

    def shaped(arr, axes):
        shape = [1] * nax
        for a in axes:
            shape[a] = m
        return arr.reshape(shape)

    boundary_in = q_in[:, None] * np.exp(-1j * np.outer(sig, gam)) / m   # (sigma_0, gamma_0)
    w = shaped(boundary_in, (0, 1))
    for step in range(t):
        g_ax, s_ax, g2_ax = 2 * step + 1, 2 * step + 2, 2 * step + 3
        # (gamma_t, sigma_{t+1}) and (sigma_{t+1}, gamma_{t+1})
        hop = np.exp(1j * np.outer(gam, sig - force.displacement)) * amp[None, :]
        lead = np.exp(-1j * np.outer(sig, gam)) / m
        w = w * shaped(hop, (g_ax, s_ax))
        w = w * shaped(lead, (s_ax, g2_ax))
    close = np.exp(1j * np.outer(gam, sig)) * q_f[None, :]           # (gamma_T, sigma_{T+1})
    return w * shaped(close, (2 * t + 1, 2 * t + 2))


def marginal_sigma(w: ExtendedWeight, collapse_final: bool = True, tol: float = 1e-10) -> np.ndarray:
    """Sum over gamma paths: real nonnegative weights on sigma paths.

    With ``collapse_final`` the boundary copy sigma_{T+1} (forced equal to
    sigma_T) is removed, giving an array over sigma_0 .. sigma_T.
    """
    dense = w._require_dense()
    marg = dense.sum(axis=w.gamma_axes)
    resid = float(np.max(np.abs(marg.imag)))
    if resid > tol:
        raise ConsistencyError(f"gamma marginal has imaginary residue {resid:.3e} > {tol:g}")
    marg = marg.real
    if collapse_final:
        m = w.space.modulus
        off = marg * (1 - np.eye(m)).reshape((1,) * (marg.ndim - 2) + (m, m))
        if np.max(np.abs(off)) > tol:
            raise ConsistencyError("final boundary copy is not tied to sigma_T")
        marg = np.diagonal(marg, axis1=-2, axis2=-1)
    return marg


def marginal_gamma(w: ExtendedWeight) -> np.ndarray:
    """Sum over sigma paths: complex weight on gamma paths (gamma_0 .. gamma_T)."""
    return w._require_dense().sum(axis=w.sigma_axes)


def gamma_chain(space: CyclicSpace, q_in, q_f, force: CycleForce, include_delta: bool = True) -> np.ndarray:
    """w^[gamma] = (1/M) psi_f*(gamma_T) S_gamma ... S_gamma psi_in(gamma_0) on every gamma path."""
    m, t = space.modulus, space.horizon
    if m ** (t + 1) > DENSE_CAP:
        raise BudgetError("too many gamma paths for the dense chain")
    f = space.fourier
    psi_in = f @ np.asarray(q_in, dtype=complex)
    psi_f = f @ np.asarray(q_f, dtype=complex)
    sg = gamma_step_matrix(force, include_delta)
    w = psi_in.reshape((m,) + (1,) * t) / m
    for step in range(t):
        shape = [1] * (t + 1)
        shape[step], shape[step + 1] = m, m
        w = w * sg.T.reshape(shape)
    return w * np.conj(psi_f).reshape((1,) * t + (m,))


# joint functionals ---------------------------------------------------------

def joint_expectation(w: ExtendedWeight, factors) -> complex:
    """sum over joint paths of B[sigma, gamma] w~, with B a product of time-local factors.

    ``factors``: iterable of (time, "sigma" | "gamma", values over the M states
    or the M frequencies in ``space.gamma`` order).
    """
    dense = w._require_dense()
    m, t = w.space.modulus, w.horizon
    b = np.ones([1] * dense.ndim)
    for time, kind, vals in factors:
        if not 0 <= time <= t:
            raise ContractError(f"insertion time {time} outside 0..{t}")
        ax = 2 * time + (0 if kind == "sigma" else 1)
        if kind not in ("sigma", "gamma"):
            raise ContractError("factor kind must be 'sigma' or 'gamma'")
        shape = [1] * dense.ndim
        shape[ax] = m
        b = b * np.asarray(vals).reshape(shape)
    return complex(np.sum(dense * b))


def chain_expectation(space: CyclicSpace, q_in, q_f, force: CycleForce, factors,
                      include_delta: bool = True) -> complex:
    """Time-ordered operator insertions in the step chain: q_f^T ... S [g(gamma^) A(sigma^)] S ... q_in.

    At equal times the sigma-diagonal factor acts first, then the gamma factor.
    """
    m, t = space.modulus, space.horizon
    s = step_matrix_cycle(force, include_delta)
    f = space.fourier
    finv = f.conj().T / m
    by_time = {k: ([], []) for k in range(t + 1)}
    for time, kind, vals in factors:
        if not 0 <= time <= t:
            raise ContractError(f"insertion time {time} outside 0..{t}")
        by_time[time][0 if kind == "sigma" else 1].append(np.asarray(vals))
    q = np.asarray(q_in, dtype=complex)
    for k in range(t + 1):
        for a in by_time[k][0]:
            q = a * q
        for g in by_time[k][1]:
            q = finv @ (g * (f @ q))
        if k < t:
            q = s @ q
    return complex(np.dot(np.asarray(q_f), q))
