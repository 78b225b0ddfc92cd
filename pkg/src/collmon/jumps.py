"""Quantum-jump unravelling of the channel master equation.

Jump operators come from the spectral decomposition of the coefficient
matrix ``C[(a, a0), (b, b0)] = M_ab^{a0 b0}``.  Each trajectory draws from its
own Philox stream keyed by ``(master_seed, trajectory_index)``, so ensemble
results do not depend on scheduling.  Ensembles are reduced in fixed-size
chunks in index order, which makes the sums bitwise independent of the
thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import AssembledGenerator, DensityMatrix, TrajectoryRecord
from .operators import Superoperator
from .scattering import ChannelSet
from .thermal import EnergyShifts, RateTensor

try:
    from . import _jumpkernel as _kernel

    BACKEND = "cython"
except ImportError:  # pragma: no cover - exercised when the extension is not built
    from . import _jumpkernel_py as _kernel

    BACKEND = "python"

from . import _jumpkernel_py

DROP_TOL = 1e-12
COND_LIMIT = 1e8
CHUNK = 64
_SEED_MASK = (1 << 64) - 1


def available_backends() -> list[str]:
    return ["cython", "python"] if BACKEND == "cython" else ["python"]


def _kernel_for(backend: str | None):
    if backend is None:
        backend = os.environ.get("COLLMON_BACKEND", BACKEND)
    if backend == "python":
        return _jumpkernel_py
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled jump kernel is not available")
        return _kernel
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class JumpOperatorSet:
    channels: ChannelSet
    hamiltonian: np.ndarray
    operators: np.ndarray  # [k, n, n]
    rates: np.ndarray

    def __post_init__(self):
        n = self.channels.n
        ops = np.asarray(self.operators, dtype=complex).reshape(-1, n, n)
        if ops.shape[0] > n * n:
            raise ValueError("more jump operators than n^2")
        h = np.asarray(self.hamiltonian, dtype=complex)
        for name, val in (("operators", ops), ("hamiltonian", h)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return self.operators.shape[0]

    @property
    def n(self) -> int:
        return self.channels.n

    @property
    def loss(self) -> np.ndarray:
        """``sum_k L_k^dag L_k``."""
        return np.einsum("kij,kil->jl", self.operators.conj(), self.operators)

    @property
    def h_eff(self) -> np.ndarray:
        return self.hamiltonian - 0.5j * self.loss

    def superoperator(self) -> Superoperator:
        """Lindblad superoperator rebuilt from the operators."""
        n = self.n
        eye = np.eye(n)
        h = self.hamiltonian
        m = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
        for op in self.operators:
            m = m + np.kron(op.conj(), op)
        k = self.loss
        m = m - 0.5 * (np.kron(eye, k) + np.kron(k.T, eye))
        return Superoperator(m)


def lindblad_operators(rates: RateTensor, shifts: EnergyShifts | None = None) -> JumpOperatorSet:
    """Jump operators ``L_k = sqrt(lam_k) unvec(u_k)`` from ``C = sum lam_k u_k u_k^dag``.

    Eigenvalues below ``1e-12 |C|`` are dropped.
    """
    rates.validate()
    ch = rates.channels
    n = ch.n
    c = rates.coefficient_matrix()
    lam, u = np.linalg.eigh(0.5 * (c + c.conj().T))
    norm = float(np.max(np.abs(lam), initial=0.0))
    keep = lam > DROP_TOL * norm if norm > 0 else np.zeros(lam.shape, bool)
    lam, u = lam[keep][::-1], u[:, keep][:, ::-1]
    # row index of C is a * n + a0, i.e. u_k reshaped C-order gives L[a, a0]
    ops = np.sqrt(lam)[:, None, None] * u.T.reshape(-1, n, n)
    eps = np.zeros(n) if shifts is None else shifts.epsilon
    h = np.diag(ch.energies + eps).astype(complex)
    return JumpOperatorSet(ch, h, ops, lam)


def reconstruction_residual(ops: JumpOperatorSet, gen: AssembledGenerator) -> float:
    return float(np.max(np.abs(ops.superoperator().matrix - gen.matrix)))


@dataclass(frozen=True)
class _Propagator:
    V: np.ndarray
    lam: np.ndarray
    Vinv: np.ndarray
    ops: np.ndarray


def _propagator(ops: JumpOperatorSet) -> _Propagator:
    lam, V = np.linalg.eig(ops.h_eff)
    if np.linalg.cond(V) > COND_LIMIT:
        raise np.linalg.LinAlgError(
            "effective Hamiltonian is numerically defective; no-jump propagation "
            "by eigendecomposition is unreliable"
        )
    Vinv = np.linalg.inv(V)
    c = np.ascontiguousarray
    return _Propagator(c(V), c(lam), c(Vinv), c(ops.operators))


def _bit_generator(seed: int, index: int) -> np.random.Philox:
    return np.random.Philox(key=(int(seed) & _SEED_MASK) | (int(index) << 64))


def _run(prop: _Propagator, psi0: np.ndarray, times: np.ndarray, bg, kernel) -> np.ndarray:
    out = np.empty((times.size, psi0.size), dtype=complex)
    nj = kernel.run_trajectory(prop.V, prop.lam, prop.Vinv, prop.ops,
                               np.ascontiguousarray(psi0, dtype=complex), times, bg, out)
    assert nj >= 0, "jump triggered with all jump rates zero"
    return out


def _check_times(t_grid) -> np.ndarray:
    t = np.ascontiguousarray(np.atleast_1d(np.asarray(t_grid, dtype=float)))
    if np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return t


def simulate_trajectory(ops: JumpOperatorSet, psi0, t_grid, seed: int, index: int = 0,
                        backend: str | None = None) -> np.ndarray:
    """Conditional pure states at ``t_grid`` (shape ``(len(t_grid), n)``)."""
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (ops.n,):
        raise ValueError(f"initial state must have {ops.n} components")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized")
    times = _check_times(t_grid)
    return _run(_propagator(ops), psi0, times, _bit_generator(seed, index), _kernel_for(backend))


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int
    seed: int
    times: np.ndarray
    threads: int = 1

    def __post_init__(self):
        if int(self.n_traj) < 1:
            raise ValueError("n_traj must be at least 1")
        if not 0 <= int(self.seed) <= _SEED_MASK:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if int(self.threads) < 1:
            raise ValueError("threads must be at least 1")
        object.__setattr__(self, "times", _check_times(self.times))


def _initial_sampler(ops: JumpOperatorSet, initial):
    """Return ``f(bit_generator) -> psi0``; mixed states draw one uniform first."""
    x = initial.rho if isinstance(initial, DensityMatrix) else np.asarray(initial, dtype=complex)
    if x.ndim == 1:
        psi = x / np.linalg.norm(x)
        return lambda bg: psi
    w, v = np.linalg.eigh(x)
    keep = w > 1e-14
    w, v = w[keep], v[:, keep]
    if w.size == 1:
        psi = v[:, 0]
        return lambda bg: psi
    cum = np.cumsum(w / w.sum())

    def sample(bg):
        u = np.random.Generator(bg).random()
        return v[:, min(int(np.searchsorted(cum, u, side="right")), w.size - 1)]

    return sample


def _chunk(prop, sampler, times, seed, start, stop, kernel):
    n = prop.V.shape[0]
    s1 = np.zeros((times.size, n, n), dtype=complex)
    s2re = np.zeros((times.size, n, n))
    s2im = np.zeros((times.size, n, n))
    for idx in range(start, stop):
        bg = _bit_generator(seed, idx)
        out = _run(prop, sampler(bg), times, bg, kernel)
        p = out[:, :, None] * out[:, None, :].conj()
        s1 += p
        s2re += p.real**2
        s2im += p.imag**2
    return s1, s2re, s2im


def ensemble_average(ops: JumpOperatorSet, initial, config: EnsembleConfig,
                     backend: str | None = None) -> TrajectoryRecord:
    """Mean projector over ``config.n_traj`` trajectories with per-entry standard errors.

    ``initial`` is a normalized vector, a density matrix array or a
    :class:`DensityMatrix`.  ``stderr`` holds the standard errors of the real
    and imaginary parts as ``stderr.real`` and ``stderr.imag``.
    """
    kernel = _kernel_for(backend)
    prop = _propagator(ops)
    sampler = _initial_sampler(ops, initial)
    times = config.times
    N = int(config.n_traj)
    bounds = [(s, min(s + CHUNK, N)) for s in range(0, N, CHUNK)]
    work = lambda b: _chunk(prop, sampler, times, config.seed, b[0], b[1], kernel)  # noqa: E731
    if config.threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    s1, s2re, s2im = parts[0]
    for a, b, c in parts[1:]:
        s1 = s1 + a
        s2re = s2re + b
        s2im = s2im + c
    mean = s1 / N
    if N > 1:
        var_re = np.clip(s2re / N - mean.real**2, 0.0, None) * N / (N - 1)
        var_im = np.clip(s2im / N - mean.imag**2, 0.0, None) * N / (N - 1)
        stderr = np.sqrt(var_re / N) + 1j * np.sqrt(var_im / N)
    else:
        stderr = np.zeros_like(mean)
    info = {"n_traj": N, "seed": int(config.seed), "backend": "python" if kernel is _jumpkernel_py else "cython"}
    return TrajectoryRecord(ops.channels, times, mean, stderr, info)
