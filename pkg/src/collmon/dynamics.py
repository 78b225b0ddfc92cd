"""Channel-basis master equation: assembly, propagation and analytic limits.

With hbar = 1 the assembled right-hand side reads::

    d rho_ab / dt = -i (E~_a - E~_b) rho_ab + sum_{a0 b0} M_ab^{a0 b0} rho_{a0 b0}
                    - 1/2 sum_{a0} K_{a a0} rho_{a0 b} - 1/2 sum_{b0} rho_{a b0} K_{b0 b}

where ``E~ = E + epsilon`` and ``K_{a a0} = sum_g M_gg^{a0 a}``.  Positivity is
monitored in the propagated record, never enforced.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .operators import Superoperator, choi_negativity, unvec, vec
from .scattering import ChannelSet
from .thermal import EnergyShifts, RateTensor


class IntegrationError(RuntimeError):
    """Adaptive stepping failed; carries the last accepted state."""

    def __init__(self, msg, last_time, last_state):
        super().__init__(msg)
        self.last_time = last_time
        self.last_state = last_state


@dataclass(frozen=True)
class DensityMatrix:
    channels: ChannelSet
    rho: np.ndarray

    def __post_init__(self):
        n = self.channels.n
        r = np.asarray(self.rho, dtype=complex)
        if r.shape != (n, n):
            raise ValueError(f"density matrix must be {n}x{n}")
        if np.max(np.abs(r - r.conj().T)) > 1e-12:
            raise ValueError("density matrix must be Hermitian")
        if abs(np.trace(r) - 1.0) > 1e-12:
            raise ValueError("density matrix must have unit trace")
        if np.linalg.eigvalsh(r)[0] < -1e-10:
            raise ValueError("density matrix must be positive semidefinite")
        r.setflags(write=False)
        object.__setattr__(self, "rho", r)

    @classmethod
    def from_pure(cls, channels: ChannelSet, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(channels, np.outer(psi, psi.conj()))

    @classmethod
    def basis(cls, channels: ChannelSet, k: int) -> "DensityMatrix":
        r = np.zeros((channels.n, channels.n), dtype=complex)
        r[k, k] = 1.0
        return cls(channels, r)


@dataclass(frozen=True)
class AssembledGenerator:
    channels: ChannelSet
    energies: np.ndarray
    superop: Superoperator
    loss: np.ndarray
    near_degenerate: bool = False

    @property
    def n(self) -> int:
        return self.channels.n

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.energies).astype(complex)

    @property
    def matrix(self) -> np.ndarray:
        return self.superop.matrix

    def __call__(self, rho) -> np.ndarray:
        return self.superop(rho)

    def index(self, a: int, b: int) -> int:
        """Column-stacked position of ``rho[a, b]``."""
        return a + self.n * b


def assemble(channels: ChannelSet, shifts: EnergyShifts | None, rates: RateTensor,
             validate: bool = True) -> AssembledGenerator:
    """Build the superoperator of the channel master equation."""
    n = channels.n
    if rates.channels.n != n:
        raise ValueError("rate tensor and channel set disagree in size")
    if validate:
        rates.validate()
    eps = np.zeros(n) if shifts is None else shifts.epsilon
    energies = channels.energies + eps
    near_deg = not channels.nondegenerate
    if near_deg:
        warnings.warn(
            "channel energies are degenerate within the selection-rule tolerance; "
            "the master equation assumes non-degenerate channels",
            stacklevel=2,
        )
    m = rates.m
    eye = np.eye(n)
    h = np.diag(energies).astype(complex)
    loss = np.einsum("ggyx->xy", m)
    gain = m.transpose(1, 0, 3, 2).reshape(n * n, n * n)
    mat = (
        -1j * (np.kron(eye, h) - np.kron(h.T, eye))
        + gain
        - 0.5 * (np.kron(eye, loss) + np.kron(loss.T, eye))
    )
    return AssembledGenerator(channels, energies, Superoperator(mat), loss, near_deg)


@dataclass
class TrajectoryRecord:
    channels: ChannelSet
    times: np.ndarray
    states: np.ndarray
    stderr: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def trace_error(self) -> np.ndarray:
        return np.abs(np.trace(self.states, axis1=1, axis2=2) - 1.0)

    @property
    def min_eigenvalue(self) -> np.ndarray:
        herm = 0.5 * (self.states + self.states.conj().transpose(0, 2, 1))
        return np.linalg.eigvalsh(herm)[:, 0]

    def diagnostics(self) -> dict:
        span = float(self.times[-1] - self.times[0])
        terr = self.trace_error
        return {
            "max_trace_error": float(terr.max()),
            "trace_drift_per_time": float(terr.max() / span) if span > 0 else 0.0,
            "min_eigenvalue": float(self.min_eigenvalue.min()),
            **self.info,
        }

    # -- CSV ----------------------------------------------------------------

    def columns(self) -> list[str]:
        labs = self.channels.labels
        cols = ["t"]
        for a in labs:
            for b in labs:
                cols += [f"re_rho_{a}_{b}", f"im_rho_{a}_{b}"]
        if self.stderr is not None:
            for a in labs:
                for b in labs:
                    cols += [f"stderr_re_rho_{a}_{b}", f"stderr_im_rho_{a}_{b}"]
        return cols

    def rows(self):
        n = self.channels.n
        for k, t in enumerate(self.times):
            row = [t]
            flat = self.states[k].reshape(n * n)
            for z in flat:
                row += [z.real, z.imag]
            if self.stderr is not None:
                for z in self.stderr[k].reshape(n * n):
                    row += [z.real, z.imag]
            yield row

    def write_csv(self, path, sidecar: dict | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([repr(float(x)) for x in row])
        if sidecar is not None:
            side = dict(sidecar)
            side["diagnostics"] = self.diagnostics()
            with open(str(path).rsplit(".", 1)[0] + ".json", "w", encoding="utf-8") as fh:
                json.dump(side, fh, indent=2, sort_keys=True)

    @classmethod
    def read_csv(cls, path, channels: ChannelSet) -> "TrajectoryRecord":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = channels.n
        k = n * n
        vals = data[:, 1 : 1 + 2 * k]
        states = (vals[:, 0::2] + 1j * vals[:, 1::2]).reshape(-1, n, n)
        stderr = None
        if data.shape[1] > 1 + 2 * k:
            se = data[:, 1 + 2 * k : 1 + 4 * k]
            stderr = (se[:, 0::2] + 1j * se[:, 1::2]).reshape(-1, n, n)
        return cls(channels, data[:, 0], states, stderr)


# -- integrators ------------------------------------------------------------

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri5(f, y0, t_grid, rtol=1e-11, atol=1e-13, h0=None, max_steps=10**6):
    """Adaptive Dormand-Prince 5(4) integration landing exactly on ``t_grid``.

    Returns an array of states at the grid times.  Raises
    :class:`IntegrationError` when the step size underflows.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    y = np.asarray(y0, dtype=complex).copy()
    out = np.empty((t_grid.size,) + y.shape, dtype=complex)
    out[0] = y
    t = t_grid[0]
    span = t_grid[-1] - t_grid[0]
    h = h0 if h0 is not None else (span / 100 if span > 0 else 1.0)
    k1 = f(t, y)
    steps = 0
    for i in range(1, t_grid.size):
        t_end = t_grid[i]
        while t < t_end:
            steps += 1
            if steps > max_steps:
                raise IntegrationError("too many steps", t, y)
            last = False
            if t + h >= t_end:
                h = t_end - t
                last = True
            if h <= 1e-14 * max(abs(t), 1.0):
                raise IntegrationError(f"step size underflow at t={t}", t, y)
            ks = [k1]
            for s in range(1, 7):
                ys = y + h * sum(a * k for a, k in zip(_A[s], ks))
                ks.append(f(t + _C[s] * h, ys))
            y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
            err_vec = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean(np.abs(err_vec / scale) ** 2)))
            if err <= 1.0:
                t = t_end if last else t + h
                y = y_new
                k1 = ks[6]  # first-same-as-last
                fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
                h = h * fac if not last else h * max(fac, 1.0)
            else:
                h *= max(0.2, 0.9 * err ** -0.2)
        out[i] = y
    return out


def _uniform(t_grid: np.ndarray) -> bool:
    d = np.diff(t_grid)
    return d.size > 0 and np.allclose(d, d[0], rtol=1e-12, atol=0.0)


def propagate(gen: AssembledGenerator, rho0: DensityMatrix, t_grid,
              method: str = "expm", rtol: float = 1e-11, atol: float = 1e-13) -> TrajectoryRecord:
    """Evolve ``rho0`` over ``t_grid``.

    ``method="expm"`` uses the matrix exponential of the superoperator
    (one exponential per step on uniform grids); ``method="adaptive"`` uses
    the Dormand-Prince stepper.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    n = gen.n
    y0 = vec(rho0.rho)
    L = gen.matrix
    if method == "expm":
        ys = np.empty((t_grid.size, n * n), dtype=complex)
        ys[0] = y0
        if _uniform(t_grid):
            step = scipy.linalg.expm(L * (t_grid[1] - t_grid[0]))
            for k in range(1, t_grid.size):
                ys[k] = step @ ys[k - 1]
        else:
            for k in range(1, t_grid.size):
                ys[k] = scipy.linalg.expm(L * (t_grid[k] - t_grid[k - 1])) @ ys[k - 1]
    elif method == "adaptive":
        ys = dopri5(lambda t, y: L @ y, y0, t_grid, rtol=rtol, atol=atol)
    else:
        raise ValueError(f"unknown propagation method {method!r}")
    states = np.stack([unvec(y, n) for y in ys])
    return TrajectoryRecord(rho0.channels, t_grid, states, info={"method": method})


def semigroup_choi_negativity(gen: AssembledGenerator, times) -> float:
    worst = 0.0
    for t in times:
        worst = max(worst, choi_negativity(Superoperator(scipy.linalg.expm(t * gen.matrix))))
    return worst


# -- analytic limits --------------------------------------------------------


def population_rate_matrix(rates: RateTensor) -> np.ndarray:
    """Classical rate matrix for the populations.

    ``R[a, a0] = M_aa^{a0 a0}`` off the diagonal and
    ``R[a0, a0] = -sum_{g != a0} M_gg^{a0 a0}``, so columns sum to zero.
    """
    n = rates.n
    idx = np.arange(n)
    r = rates.m[idx[:, None], idx[:, None], idx[None, :], idx[None, :]].real.copy()
    np.fill_diagonal(r, 0.0)
    r[idx, idx] = -r.sum(axis=0)
    return r


def _coherence_decoupled(gen: AssembledGenerator, a: int, b: int, tol: float) -> bool:
    k = gen.index(a, b)
    L = gen.matrix
    scale = max(float(np.max(np.abs(L))), 1e-300)
    row = np.delete(L[k], k)
    col = np.delete(L[:, k], k)
    return bool(max(np.max(np.abs(row), initial=0.0), np.max(np.abs(col), initial=0.0)) <= tol * scale)


def shifted_bohr_frequency(gen: AssembledGenerator, a, b) -> float:
    ch = gen.channels
    a, b = ch.index(a), ch.index(b)
    return float(gen.energies[a] - gen.energies[b])


def coherence_phase_rate(gen: AssembledGenerator, a, b, tol: float = 1e-12) -> float:
    """Angular frequency ``omega`` of ``rho_ab(t) ~ exp(-i omega t)`` for a decoupled coherence.

    Equals the shifted Bohr frequency minus ``Im M_ab^{ab}``; the latter
    vanishes for real amplitudes.
    """
    ch = gen.channels
    a, b = ch.index(a), ch.index(b)
    if a == b:
        raise ValueError("coherence needs two distinct channels")
    if not _coherence_decoupled(gen, a, b, tol):
        raise ValueError(f"coherence ({a}, {b}) is coupled to other matrix elements")
    k = gen.index(a, b)
    return float(-gen.matrix[k, k].imag)


def coherence_decay_rate(gen: AssembledGenerator, a, b) -> float:
    """``-Re`` of the diagonal generator entry for ``rho_ab``."""
    ch = gen.channels
    k = gen.index(ch.index(a), ch.index(b))
    return float(-gen.matrix[k, k].real)


def fit_phase_rate(record: TrajectoryRecord, a, b, min_abs: float = 1e-12) -> float:
    """Least-squares slope of the unwrapped phase of ``rho_ab(t)``, sign as in
    :func:`coherence_phase_rate`."""
    ch = record.channels
    a, b = ch.index(a), ch.index(b)
    z = record.states[:, a, b]
    if np.min(np.abs(z)) < min_abs:
        raise ValueError("coherence vanishes along the record; phase rate undefined")
    phase = np.unwrap(np.angle(z))
    slope = np.polyfit(record.times, phase, 1)[0]
    return float(-slope)
