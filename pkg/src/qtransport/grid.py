"""Periodic configuration grid, integration measure and Fourier machinery.

Axis domain is [-L, L) sampled at n points, sigma_j = -L + j * 2L/n. Dual
values gamma_m = pi m / L, m in {-n/2, ..., n/2-1}, are stored in numpy's
FFT index order (``np.fft.fftfreq``). Fields may carry leading batch axes;
the trailing ``dim`` axes are always the grid axes.

Measures: integral over sigma is ``cell_volume * sum``; integral over gamma
is ``(1/(2L))**dim * sum``. With these the transform pair below is exact on
the grid and unitary.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import ContractError, RealityError

MAX_SAMPLES = 2 ** 22
MAX_DIM = 3


@dataclass(frozen=True)
class ConfigurationGrid:
    dim: int
    n: int
    L: float

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ContractError(f"dim must be in 1..{MAX_DIM}, got {self.dim}")
        if self.n < 2 or self.n % 2:
            raise ContractError(f"points per axis must be a positive even integer, got {self.n}")
        if not self.L > 0:
            raise ContractError(f"box half width must be positive, got {self.L}")
        if self.n ** self.dim > MAX_SAMPLES:
            raise ContractError(f"n^dim = {self.n ** self.dim} exceeds cap {MAX_SAMPLES}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def spacing(self) -> float:
        return 2 * self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def dual_weight(self) -> float:
        return (1.0 / (2 * self.L)) ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.spacing * np.arange(self.n)

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Integer m per FFT slot (Nyquist appears as -n/2)."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(int)

    @cached_property
    def frequencies(self) -> np.ndarray:
        return np.pi * self.mode_index / self.L

    @cached_property
    def _deriv_multiplier(self) -> np.ndarray:
        k = 1j * self.frequencies
        k[self.n // 2] = 0.0  # unpaired Nyquist mode
        return k

    @cached_property
    def _rderiv_multiplier(self) -> np.ndarray:
        k = 1j * np.pi * np.arange(self.n // 2 + 1) / self.L
        k[-1] = 0.0
        return k

    @cached_property
    def mirror_index(self) -> np.ndarray:
        """FFT slot of -gamma for each slot; Nyquist maps to itself."""
        return (-np.arange(self.n)) % self.n

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(+i gamma_m L) = (-1)^m, from sigma_0 = -L
        sign = np.where(self.mode_index % 2 == 0, 1.0, -1.0)
        out = np.ones(self.shape)
        for ax in range(self.dim):
            out = out * sign.reshape(_axis_shape(self.dim, ax))
        return out

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays (``indexing='ij'``), one per axis."""
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    def coord(self, ax: int) -> np.ndarray:
        """Coordinate sigma_ax as a broadcastable array of shape (1,..,n,..,1)."""
        self._check_axis(ax)
        return self.axis.reshape(_axis_shape(self.dim, ax))

    def points(self) -> np.ndarray:
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def gamma(self, ax: int) -> np.ndarray:
        self._check_axis(ax)
        return self.frequencies.reshape(_axis_shape(self.dim, ax))

    def frequency_list(self) -> np.ndarray:
        """Dual values in ascending order, -n/2 .. n/2-1 (times pi/L)."""
        return np.pi * np.arange(-self.n // 2, self.n // 2) / self.L

    def check_field(self, field) -> np.ndarray:
        field = np.asarray(field)
        if field.ndim >= self.dim and field.shape[field.ndim - self.dim:] == self.shape:
            return field
        if field.size == self.size:
            return field.reshape(self.shape)
        raise ContractError(f"field of shape {field.shape} does not match grid shape {self.shape}")

    def _check_axis(self, ax):
        if not 0 <= ax < self.dim:
            raise ContractError(f"axis {ax} out of range for dim {self.dim}")


def _axis_shape(dim: int, ax: int) -> tuple[int, ...]:
    shp = [1] * dim
    shp[ax] = -1
    return tuple(shp)


def integrate(g: ConfigurationGrid, field) -> complex | float:
    """Riemann sum cell_volume * sum(field); exact trapezoid rule on a periodic grid."""
    field = np.asarray(field)
    if field.size != g.size:
        raise ContractError(f"field has {field.size} samples, grid has {g.size}")
    val = g.cell_volume * np.sum(field)
    return complex(val) if np.iscomplexobj(val) else float(val)


def inner(g: ConfigurationGrid, a, b) -> complex:
    """<a, b> = integral conj(a) b over sigma."""
    return complex(g.cell_volume * np.vdot(np.asarray(a).ravel(), np.asarray(b).ravel()))


def derivative(g: ConfigurationGrid, field, axis: int) -> np.ndarray:
    """Spectral d/dsigma_axis with the Nyquist mode zeroed. Real input gives real output."""
    field = g.check_field(field)
    g._check_axis(axis)
    ax = field.ndim - g.dim + axis
    shp = [1] * field.ndim
    if np.iscomplexobj(field):
        shp[ax] = g.n
        spec = sfft.fft(field, axis=ax) * g._deriv_multiplier.reshape(shp)
        return sfft.ifft(spec, axis=ax)
    shp[ax] = g.n // 2 + 1
    spec = sfft.rfft(field, axis=ax) * g._rderiv_multiplier.reshape(shp)
    return sfft.irfft(spec, n=g.n, axis=ax)


def _grid_axes(g, field):
    return tuple(range(field.ndim - g.dim, field.ndim))


def fourier_forward(g: ConfigurationGrid, q) -> np.ndarray:
    """psi(gamma) = integral exp(-i gamma sigma) q(sigma); output in FFT slot order."""
    q = g.check_field(q)
    return g.cell_volume * g._phase * sfft.fftn(q, axes=_grid_axes(g, q))


def fourier_inverse_complex(g: ConfigurationGrid, psi) -> np.ndarray:
    """q(sigma) = integral_gamma exp(i gamma sigma) psi(gamma), no reality requirement."""
    psi = g.check_field(psi)
    return sfft.ifftn(g._phase * psi, axes=_grid_axes(g, psi)) / g.cell_volume


def mirror(g: ConfigurationGrid, psi) -> np.ndarray:
    """psi(-gamma) as an array in FFT slot order."""
    psi = g.check_field(psi)
    out = psi
    for ax in _grid_axes(g, psi):
        out = np.take(out, g.mirror_index, axis=ax)
    return out


def constraint_defect(g: ConfigurationGrid, psi) -> float:
    """max |psi(-gamma) - conj(psi(gamma))|."""
    psi = g.check_field(psi)
    return float(np.max(np.abs(mirror(g, psi) - np.conj(psi))))


def fourier_inverse(g: ConfigurationGrid, psi, tol: float = 1e-10) -> np.ndarray:
    defect = constraint_defect(g, psi)
    if defect > tol:
        raise RealityError(
            f"constraint psi(-gamma) = conj(psi(gamma)) violated by {defect:.3e} > {tol:g}; "
            "project the wave function first")
    return fourier_inverse_complex(g, psi).real


def interpolation_kernels(g: ConfigurationGrid, points) -> list[np.ndarray]:
    """Per-axis matrices exp(i gamma_m (x_p + L)) / n for trigonometric interpolation."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != g.dim:
        raise ContractError(f"points must have shape (P, {g.dim})")
    return [np.exp(1j * np.outer(points[:, ax] + g.L, g.frequencies)) / g.n for ax in range(g.dim)]


def interpolate(g: ConfigurationGrid, field, points=None, kernels=None, chunk: int = 8192) -> np.ndarray:
    """Evaluate the trigonometric interpolant of a real grid field at off-grid points.

    Taking the real part gives the symmetric (cosine) treatment of the Nyquist mode.
    Pass precomputed ``kernels`` when the same points are reused every step.
    """
    field = g.check_field(field)
    coeff = sfft.fftn(field)
    if kernels is None:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(points))
        for start in range(0, len(points), chunk):
            ks = interpolation_kernels(g, points[start:start + chunk])
            out[start:start + chunk] = _contract(g, coeff, ks)
        return out
    return _contract(g, coeff, kernels)


def _contract(g, coeff, ks):
    if g.dim == 1:
        return (ks[0] @ coeff).real
    if g.dim == 2:
        return np.einsum("pb,pb->p", ks[0] @ coeff, ks[1]).real
    tmp = (ks[0] @ coeff.reshape(g.n, -1)).reshape(-1, g.n, g.n)
    return np.einsum("pbc,pb,pc->p", tmp, ks[1], ks[2]).real


def edge_amplitude(g: ConfigurationGrid, field) -> float:
    """Largest |field| on the outermost grid layer of every axis."""
    field = np.abs(g.check_field(field))
    worst = 0.0
    for ax in range(g.dim):
        worst = max(worst, float(np.max(np.take(field, [0], axis=ax))))
    return worst


# snapshot container --------------------------------------------------------
# Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header
# (sorted keys), then the raw little-endian C-order sample array.

SNAPSHOT_MAGIC = b"QTSNAP01"


def write_snapshot(path, g: ConfigurationGrid, values, *, basis: str = "sigma",
                   time: float = 0.0, meta: dict | None = None) -> None:
    values = g.check_field(values)
    dtype = "<c16" if np.iscomplexobj(values) else "<f8"
    header = {
        "basis": basis,
        "dim": g.dim,
        "dtype": dtype,
        "L": [g.L] * g.dim,
        "n": [g.n] * g.dim,
        "time": float(time),
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    payload = np.ascontiguousarray(values, dtype=dtype).tobytes()
    Path(path).write_bytes(SNAPSHOT_MAGIC + struct.pack("<I", len(raw)) + raw + payload)


def read_snapshot(path) -> tuple[ConfigurationGrid, np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:8] != SNAPSHOT_MAGIC:
        raise ContractError(f"{path}: not a snapshot file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen])
    if len(set(header["n"])) != 1 or len(set(header["L"])) != 1:
        raise ContractError("anisotropic snapshots are not supported")
    g = ConfigurationGrid(header["dim"], header["n"][0], header["L"][0])
    values = np.frombuffer(data[12 + hlen:], dtype=header["dtype"]).reshape(g.shape).copy()
    return g, values, header


def export_csv(path, g: ConfigurationGrid, values, header_lines=()) -> None:
    """Long-format CSV (coordinates then value columns); dim <= 2 only."""
    if g.dim > 2:
        raise ContractError("CSV export is limited to dim <= 2")
    values = g.check_field(values)
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = [f"sigma{ax + 1}" for ax in range(g.dim)]
    cplx = np.iscomplexobj(values)
    w.writerow(cols + (["re", "im"] if cplx else ["value"]))
    pts = g.points()
    for p, v in zip(pts, values.ravel()):
        row = [repr(float(x)) for x in p]
        row += [repr(float(v.real)), repr(float(v.imag))] if cplx else [repr(float(v))]
        w.writerow(row)
    Path(path).write_text(buf.getvalue())
