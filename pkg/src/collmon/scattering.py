"""Multichannel scattering amplitudes and cross sections.

Two amplitude carriers are provided:

* :class:`SWaveKMatrixModel` -- an s-wave reactance-matrix model.  For open
  channels with momenta ``p`` the S-matrix is the Cayley transform
  ``S = (I + iK)(I - iK)^-1`` of ``K = -sqrt(p) a sqrt(p)``, which is exactly
  unitary and symmetric.  Amplitudes follow the scattering-length sign
  convention, ``f -> -a`` at low energy.
* :class:`AmplitudeTable` -- tabulated ``f(cos theta; E)`` with bilinear
  interpolation, read from JSON.

Units: hbar = 1, so momenta are wave numbers.  Collision energies ``E`` of a
table are kinetic energies of the incoming gas particle; ``E_total`` always
means kinetic plus internal energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ENERGY_TOL = 1e-9
COND_LIMIT = 1e12


class ClosedChannelError(ValueError):
    """Amplitude requested for an energetically closed channel."""


@dataclass(frozen=True)
class ChannelSet:
    labels: tuple[str, ...]
    energies: np.ndarray
    energy_tolerance: float = ENERGY_TOL

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        e = np.asarray(self.energies, dtype=float).reshape(-1)
        if len(labels) != e.size or e.size < 1:
            raise ValueError("need one energy per channel label and at least one channel")
        if len(set(labels)) != len(labels):
            raise ValueError("channel labels must be unique")
        if not np.all(np.isfinite(e)):
            raise ValueError("channel energies must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "energies", e)

    def __len__(self) -> int:
        return self.energies.size

    @property
    def n(self) -> int:
        return self.energies.size

    def index(self, ch) -> int:
        if isinstance(ch, (int, np.integer)):
            if not 0 <= ch < self.n:
                raise IndexError(f"channel index {ch} out of range")
            return int(ch)
        try:
            return self.labels.index(str(ch))
        except ValueError:
            raise KeyError(f"unknown channel {ch!r}") from None

    @property
    def nondegenerate(self) -> bool:
        e = self.energies
        gaps = np.abs(e[:, None] - e[None, :])
        np.fill_diagonal(gaps, np.inf)
        return bool(np.all(gaps > self.energy_tolerance))

    @classmethod
    def from_energies(cls, energies, labels=None, **kw) -> "ChannelSet":
        energies = list(energies)
        if labels is None:
            labels = [str(i) for i in range(len(energies))]
        return cls(tuple(labels), np.asarray(energies, dtype=float), **kw)


@dataclass(frozen=True)
class OpenChannels:
    indices: np.ndarray
    momenta: np.ndarray


def open_channels(model, e_total: float) -> OpenChannels:
    """Channels with ``E_alpha < e_total`` and momenta ``sqrt(2 m (e_total - E_alpha))``."""
    e = model.channels.energies
    idx = np.flatnonzero(e < e_total)
    p = np.sqrt(2.0 * model.mass * (e_total - e[idx]))
    return OpenChannels(idx, p)


@dataclass(frozen=True)
class SWaveKMatrixModel:
    """Energy-independent s-wave reactance lengths ``a`` (symmetric)."""

    channels: ChannelSet
    a: np.ndarray
    mass: float

    isotropic = True

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        n = self.channels.n
        if a.shape != (n, n):
            raise ValueError(f"reactance matrix must be {n}x{n}, got {a.shape}")
        if np.max(np.abs(a - a.T), initial=0.0) > 1e-14:
            raise ValueError("reactance matrix must be symmetric")
        if not self.mass > 0:
            raise ValueError("gas-particle mass must be positive")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    def momenta(self, e_total):
        """Channel momenta at ``e_total`` (NaN-free; closed channels get 0) and open mask."""
        e_total = np.asarray(e_total, dtype=float)
        diff = e_total[..., None] - self.channels.energies
        is_open = diff > 0
        p = np.sqrt(2.0 * self.mass * np.where(is_open, diff, 0.0))
        return p, is_open

    def amplitude_matrix(self, e_total) -> tuple[np.ndarray, np.ndarray]:
        """``f[..., alpha, alpha0]`` at ``e_total`` with closed rows/columns zeroed.

        Uses ``F = -a_oo (I + i P a_oo)^-1`` on the open block, equivalent to
        ``(S - I) / (2i sqrt(p_alpha p_alpha0))`` but regular at thresholds.
        """
        e_total = np.asarray(e_total, dtype=float)
        shape = e_total.shape
        flat = e_total.reshape(-1)
        p, is_open = self.momenta(flat)
        n = self.channels.n
        out = np.zeros((flat.size, n, n), dtype=complex)
        for pattern in np.unique(is_open, axis=0):
            if not pattern.any():
                continue
            rows = np.flatnonzero(np.all(is_open == pattern, axis=1))
            idx = np.flatnonzero(pattern)
            a = self.a[np.ix_(idx, idx)]
            pk = p[np.ix_(rows, idx)]
            k = idx.size
            m = np.eye(k) + 1j * a[None, :, :] * pk[:, None, :]
            f = -np.linalg.solve(m, np.broadcast_to(a, (rows.size, k, k)).astype(complex))
            out[np.ix_(rows, idx, idx)] = f
        return out.reshape(shape + (n, n)), is_open.reshape(shape + (n,))

    def column(self, alpha0: int, e_kin, cos_theta=None) -> np.ndarray:
        """``f_{alpha, alpha0}`` for all ``alpha`` at incoming kinetic energy ``e_kin``."""
        e_kin = np.asarray(e_kin, dtype=float)
        f, _ = self.amplitude_matrix(self.channels.energies[alpha0] + e_kin)
        return f[..., :, alpha0]

    def breakpoints(self, alpha0: int) -> np.ndarray:
        """Kinetic energies (incoming frame) where the amplitudes are not smooth."""
        d = self.channels.energies - self.channels.energies[alpha0]
        return np.unique(d[d > 0])


@dataclass(frozen=True)
class AmplitudeTable:
    """Tabulated amplitudes ``f_{alpha, alpha0}(cos theta; E)``.

    ``amplitudes[(alpha, alpha0)]`` has shape ``(len(e_grid), len(cos_grid))``;
    missing pairs are zero.  ``e_grid`` holds incoming kinetic energies.
    """

    channels: ChannelSet
    e_grid: np.ndarray
    cos_grid: np.ndarray
    amplitudes: dict
    mass: float
    units: dict = field(default_factory=dict)

    isotropic = False

    def __post_init__(self):
        e = np.asarray(self.e_grid, dtype=float)
        c = np.asarray(self.cos_grid, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("E grid must be strictly increasing with at least two points")
        if c.ndim != 1 or c.size < 2 or np.any(np.diff(c) <= 0):
            raise ValueError("cos(theta) grid must be strictly increasing")
        if abs(c[0] + 1.0) > 1e-12 or abs(c[-1] - 1.0) > 1e-12:
            raise ValueError("cos(theta) grid must span [-1, 1]")
        if not self.mass > 0:
            raise ValueError("gas-particle mass must be positive")
        n = self.channels.n
        data = np.zeros((n, n, e.size, c.size), dtype=complex)
        for (al, al0), arr in self.amplitudes.items():
            arr = np.asarray(arr, dtype=complex)
            if arr.shape != (e.size, c.size):
                raise ValueError(f"amplitude samples for {(al, al0)} have shape {arr.shape}")
            data[self.channels.index(al), self.channels.index(al0)] = arr
        object.__setattr__(self, "e_grid", e)
        object.__setattr__(self, "cos_grid", c)
        object.__setattr__(self, "_data", data)

    def _interp(self, alpha0: int, e_kin: np.ndarray, cos: np.ndarray) -> np.ndarray:
        e, c = self.e_grid, self.cos_grid
        if np.any(e_kin < e[0] - 1e-300) or np.any(e_kin > e[-1]):
            raise ValueError(
                f"collision energy outside the tabulated range [{e[0]}, {e[-1]}]"
            )
        i = np.clip(np.searchsorted(e, e_kin, side="right") - 1, 0, e.size - 2)
        j = np.clip(np.searchsorted(c, cos, side="right") - 1, 0, c.size - 2)
        te = (e_kin - e[i]) / (e[i + 1] - e[i])
        tc = (cos - c[j]) / (c[j + 1] - c[j])
        d = self._data[:, alpha0]  # [alpha, E, cos]
        f = (
            (1 - te) * (1 - tc) * d[:, i, j]
            + te * (1 - tc) * d[:, i + 1, j]
            + (1 - te) * tc * d[:, i, j + 1]
            + te * tc * d[:, i + 1, j + 1]
        )
        return np.moveaxis(f, 0, -1)

    def column(self, alpha0: int, e_kin, cos_theta=None) -> np.ndarray:
        e_kin = np.asarray(e_kin, dtype=float)
        cos = np.ones_like(e_kin) if cos_theta is None else np.asarray(cos_theta, dtype=float)
        e_kin, cos = np.broadcast_arrays(e_kin, cos)
        f = self._interp(alpha0, e_kin, cos)
        e_tot = self.channels.energies[alpha0] + e_kin
        closed = self.channels.energies >= e_tot[..., None]
        return np.where(closed, 0.0, f)

    def breakpoints(self, alpha0: int) -> np.ndarray:
        d = self.channels.energies - self.channels.energies[alpha0]
        pts = np.concatenate([d[d > 0], self.e_grid[self.e_grid > 0]])
        return np.unique(pts)

    def cos_rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Two-point Gauss rule on every cos(theta) cell.

        Products of two bilinear interpolants are quadratic in cos(theta)
        within a cell, so this integrates them exactly.
        """
        x = np.array([-1.0, 1.0]) / np.sqrt(3.0)
        lo, hi = self.cos_grid[:-1], self.cos_grid[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = (mid[:, None] + half[:, None] * x).reshape(-1)
        weights = np.repeat(half, 2)
        return nodes, weights

    # -- JSON ---------------------------------------------------------------

    def to_json(self) -> dict:
        amps = {}
        n = self.channels.n
        for al in range(n):
            for al0 in range(n):
                arr = self._data[al, al0]
                if np.any(arr != 0):
                    key = f"{self.channels.labels[al]}<-{self.channels.labels[al0]}"
                    amps[key] = [[float(z.real), float(z.imag)] for z in arr.reshape(-1)]
        return {
            "units": dict(self.units),
            "mass": self.mass,
            "channels": [
                {"label": lab, "energy": float(en)}
                for lab, en in zip(self.channels.labels, self.channels.energies)
            ],
            "E_grid": self.e_grid.tolist(),
            "cos_theta_grid": self.cos_grid.tolist(),
            "amplitudes": amps,
        }

    @classmethod
    def from_json(cls, obj: dict, mass: float | None = None) -> "AmplitudeTable":
        chans = ChannelSet(
            tuple(c["label"] for c in obj["channels"]),
            np.array([c["energy"] for c in obj["channels"]], dtype=float),
        )
        e = np.asarray(obj["E_grid"], dtype=float)
        c = np.asarray(obj["cos_theta_grid"], dtype=float)
        amps = {}
        for key, samples in obj.get("amplitudes", {}).items():
            try:
                out_label, in_label = key.split("<-")
            except ValueError:
                raise ValueError(f"amplitude key {key!r} is not of the form 'alpha<-alpha0'") from None
            arr = np.asarray(samples, dtype=float)
            if arr.shape != (e.size * c.size, 2):
                raise ValueError(f"amplitude {key!r}: expected {e.size * c.size} [re, im] pairs")
            amps[(out_label, in_label)] = (arr[:, 0] + 1j * arr[:, 1]).reshape(e.size, c.size)
        m = obj.get("mass", mass) if mass is None else mass
        if m is None:
            raise ValueError("amplitude table needs the gas-particle mass")
        return cls(chans, e, c, amps, float(m), dict(obj.get("units", {})))

    @classmethod
    def load(cls, path, mass: float | None = None) -> "AmplitudeTable":
        with open(Path(path), encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), mass=mass)


# -- operations ---------------------------------------------------------------


def s_matrix_at_energy(model: SWaveKMatrixModel, e_total: float):
    """Unitary, symmetric S over the open channels (returned with their indices)."""
    oc = open_channels(model, e_total)
    if oc.indices.size == 0:
        raise ClosedChannelError(f"no open channel at E_total = {e_total}")
    sq = np.sqrt(oc.momenta)
    k = -sq[:, None] * model.a[np.ix_(oc.indices, oc.indices)] * sq[None, :]
    n = k.shape[0]
    lhs = np.eye(n) - 1j * k
    # I - iK is normal with eigenvalues 1 - i kappa, hence cond <= sqrt(1 + |K|^2)
    bound = np.sqrt(1.0 + np.linalg.norm(k, "fro") ** 2)
    assert bound < COND_LIMIT, f"Cayley transform ill-conditioned (cond <= {bound:.3e})"
    s = np.linalg.solve(lhs, np.eye(n) + 1j * k)
    return oc.indices, s


def _require_open(model, alpha: int, e_total: float) -> None:
    e_a = model.channels.energies[alpha]
    if not e_a < e_total:
        raise ClosedChannelError(
            f"channel {model.channels.labels[alpha]!r} is closed at E_total = {e_total} "
            f"(threshold {e_a})"
        )


def amplitude(model, alpha, alpha0, cos_theta: float, e_total: float) -> complex:
    """Scattering amplitude ``f_{alpha alpha0}(cos theta)`` at total energy ``e_total``."""
    ch = model.channels
    al, al0 = ch.index(alpha), ch.index(alpha0)
    if not -1.0 <= cos_theta <= 1.0:
        raise ValueError("cos(theta) must lie in [-1, 1]")
    _require_open(model, al, e_total)
    _require_open(model, al0, e_total)
    col = model.column(al0, np.array(e_total - ch.energies[al0]), np.array(cos_theta))
    return complex(col[al])


def _angular_integral(model, al0: int, e_kin: float, power_of: int) -> float:
    if model.isotropic:
        f = model.column(al0, np.array(e_kin))
        return 2.0 * float(np.abs(f[power_of]) ** 2)
    nodes, w = model.cos_rule()
    f = model.column(al0, np.full(nodes.shape, e_kin), nodes)
    return float(np.sum(w * np.abs(f[:, power_of]) ** 2))


def pair_cross_section(model, alpha, alpha0, e_total: float) -> float:
    """``sigma_{alpha alpha0} = 2 pi int |f|^2 dcos`` (no flux factor)."""
    ch = model.channels
    al, al0 = ch.index(alpha), ch.index(alpha0)
    _require_open(model, al, e_total)
    _require_open(model, al0, e_total)
    return 2.0 * np.pi * _angular_integral(model, al0, e_total - ch.energies[al0], al)


def channel_total_cross_section(model, alpha0, e_total: float) -> float:
    """Total cross section out of ``alpha0``: ``sum_alpha (p_alpha / p_alpha0) sigma_{alpha alpha0}``.

    The outgoing-flux factor ``p_alpha / p_alpha0`` makes this the quantity
    that enters the multichannel optical theorem.
    """
    ch = model.channels
    al0 = ch.index(alpha0)
    _require_open(model, al0, e_total)
    oc = open_channels(model, e_total)
    p0 = np.sqrt(2.0 * model.mass * (e_total - ch.energies[al0]))
    total = 0.0
    for al, p in zip(oc.indices, oc.momenta):
        total += (p / p0) * pair_cross_section(model, al, al0, e_total)
    return total


def forward_optical_cross_section(model, alpha0, e_total: float) -> float:
    """``(4 pi / p_alpha0) Im f_{alpha0 alpha0}(forward)``."""
    al0 = model.channels.index(alpha0)
    p0 = np.sqrt(2.0 * model.mass * (e_total - model.channels.energies[al0]))
    return 4.0 * np.pi / p0 * amplitude(model, al0, al0, 1.0, e_total).imag


def optical_theorem_residual(model, alpha0, e_total: float) -> float:
    """Relative mismatch of the optical theorem (absolute if the cross section vanishes)."""
    sig = channel_total_cross_section(model, alpha0, e_total)
    opt = forward_optical_cross_section(model, alpha0, e_total)
    return abs(sig - opt) / sig if sig > 0 else abs(opt)


def random_k_model(rng: np.random.Generator, n: int, *, mass: float = 1.0,
                   scale: float = 1.0, energies: Sequence[float] | None = None) -> SWaveKMatrixModel:
    """Random symmetric reactance model, used by tests and the verify suite."""
    if energies is None:
        energies = np.sort(rng.uniform(0.0, 2.0, size=n))
        energies[0] = 0.0
    a = rng.normal(scale=scale, size=(n, n))
    return SWaveKMatrixModel(ChannelSet.from_energies(energies), 0.5 * (a + a.T), mass)
