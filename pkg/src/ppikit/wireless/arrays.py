"""Uniform planar arrays, Kronecker codebooks, channel synthesis and capacity.

The transmit array lies in the y-z plane and faces the +x axis. With zenith
``theta`` (from +z) and azimuth ``phi`` (from +x in the x-y plane), element
``(i_y, i_z)`` sees the phase ``2 pi s (i_y sin(theta) sin(phi) + i_z cos(theta))``
for element spacing ``s`` in wavelengths. Vectors are ordered with the
z index running fastest, i.e. ``a = kron(a_y, a_z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Transmit UPA of ``n_y`` by ``n_z`` elements and ``n_rx`` receive antennas.

    The receive side is a uniform linear array along z with the same spacing.
    """

    n_y: int = 4
    n_z: int = 4
    spacing: float = 0.5
    n_rx: int = 1

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1 or self.n_rx < 1:
            raise ValueError("antenna counts must be positive")
        if not self.spacing > 0:
            raise ValueError("element spacing must be positive")

    @property
    def n_tx(self) -> int:
        return self.n_y * self.n_z


def ula_response(n: int, value, spacing: float = 0.5) -> np.ndarray:
    """Unit-norm linear-array response ``exp(j 2 pi s k value) / sqrt(n)``.

    ``value`` may be an array; the element index is the last axis.
    """
    k = np.arange(n)
    v = np.asarray(value, dtype=float)[..., None]
    return np.exp(2j * np.pi * spacing * k * v) / np.sqrt(n)


def upa_steering(n_y: int, n_z: int, theta, phi, spacing: float = 0.5) -> np.ndarray:
    """Unit-norm UPA response ``kron(a_y(sin theta sin phi), a_z(cos theta))``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ay = ula_response(n_y, np.sin(theta) * np.sin(phi), spacing)
    az = ula_response(n_z, np.cos(theta), spacing)
    out = ay[..., :, None] * az[..., None, :]
    return out.reshape(out.shape[:-2] + (n_y * n_z,))


def rx_steering(geom: ArrayGeometry, theta, phi) -> np.ndarray:
    if geom.n_rx == 1:
        return np.ones(np.shape(theta) + (1,), dtype=complex)
    return ula_response(geom.n_rx, np.cos(theta), geom.spacing)


@dataclass(frozen=True)
class PathSet:
    """Multipath description of one link.

    Parameters
    ----------
    gains : complex ndarray of shape (L,)
    aod : ndarray of shape (L, 2)
        (zenith, azimuth) departure angles in radians.
    aoa : ndarray of shape (L, 2)
        (zenith, azimuth) arrival angles in radians.
    """

    gains: np.ndarray
    aod: np.ndarray
    aoa: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex).reshape(-1)
        aod = np.asarray(self.aod, dtype=float).reshape(-1, 2)
        aoa = np.asarray(self.aoa, dtype=float).reshape(-1, 2)
        if g.size < 1:
            raise ValueError("a path set needs at least one path")
        if aod.shape[0] != g.size or aoa.shape[0] != g.size:
            raise ValueError("one departure and one arrival angle pair per path")
        for ang in (aod, aoa):
            if np.any(ang[:, 0] < 0) or np.any(ang[:, 0] > np.pi) or np.any(np.abs(ang[:, 1]) > np.pi):
                raise ValueError("angles must lie in [0, pi] x [-pi, pi]")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "aod", aod)
        object.__setattr__(self, "aoa", aoa)

    @property
    def L(self) -> int:
        return self.gains.size

    def to_vector(self, L: int) -> np.ndarray:
        """Fixed-length ``(Re a, Im a, zenith, azimuth)`` per path, zero-padded or truncated to ``L`` paths."""
        out = np.zeros((L, 4))
        m = min(L, self.L)
        out[:m, 0] = self.gains[:m].real
        out[:m, 1] = self.gains[:m].imag
        out[:m, 2:] = self.aod[:m]
        return out.reshape(-1)

    @classmethod
    def from_vector(cls, v) -> "PathSet":
        """Inverse of :meth:`to_vector`; angles are clipped to their valid ranges
        and arrival angles are set to broadside."""
        v = np.asarray(v, dtype=float).reshape(-1, 4)
        aod = np.column_stack([np.clip(v[:, 2], 0.0, np.pi), np.clip(v[:, 3], -np.pi, np.pi)])
        aoa = np.column_stack([np.full(len(v), np.pi / 2), np.zeros(len(v))])
        return cls(v[:, 0] + 1j * v[:, 1], aod, aoa)


def channel_from_paths(z: PathSet, geom: ArrayGeometry) -> np.ndarray:
    """``H = sum_l a_l a_tx(aod_l) a_rx(aoa_l)^H`` of shape (n_tx, n_rx)."""
    at = upa_steering(geom.n_y, geom.n_z, z.aod[:, 0], z.aod[:, 1], geom.spacing)
    ar = rx_steering(geom, z.aoa[:, 0], z.aoa[:, 1])
    return np.einsum("l,lt,lr->tr", z.gains, at, ar.conj())


@dataclass(frozen=True)
class Codebook:
    """Unit-norm beams stacked as rows of ``beams`` (shape ``(n_beams, dim)``)."""

    beams: np.ndarray

    def __len__(self) -> int:
        return self.beams.shape[0]

    @property
    def dim(self) -> int:
        return self.beams.shape[1]


def grid(count: int) -> np.ndarray:
    """``count`` uniform points ``-1 + 2 i / count`` covering [-1, 1)."""
    return -1.0 + 2.0 * np.arange(count) / count


def make_upa_codebook(n_y: int, n_z: int, spacing: float = 0.5) -> Codebook:
    """Kronecker codebook over ``2 n_y`` values of sin(phi) and ``2 n_z`` values of cos(theta).

    Beam ``i_y * 2 n_z + i_z`` is ``kron(a_y(grid_y[i_y]), a_z(grid_z[i_z]))``.
    """
    if n_y < 1 or n_z < 1:
        raise ValueError("antenna counts must be positive")
    ay = ula_response(n_y, grid(2 * n_y), spacing)
    az = ula_response(n_z, grid(2 * n_z), spacing)
    beams = (ay[:, None, :, None] * az[None, :, None, :]).reshape(4 * n_y * n_z, n_y * n_z)
    return Codebook(beams)


def trivial_codebook(n: int = 1) -> Codebook:
    """Single beam (all-ones, unit norm) for a receiver without beam selection."""
    return Codebook(np.full((1, n), 1.0 / np.sqrt(n), dtype=complex))


def beam_gains(H, tx: Codebook, rx: Codebook) -> np.ndarray:
    """``|u^H H w|^2`` for every pair, flattened row-major over (u, w)."""
    H = np.asarray(H, dtype=complex)
    G = tx.beams.conj() @ H @ rx.beams.T
    return (np.abs(G) ** 2).reshape(-1)


def optimal_beam(H, tx: Codebook, rx: Codebook) -> int:
    """Pair index ``i_u * |W| + i_w`` maximizing ``|u^H H w|^2``; lowest index on ties."""
    return int(np.argmax(beam_gains(H, tx, rx)))


def pair(j: int, rx: Codebook) -> tuple:
    """``(i_u, i_w)`` of pair index ``j``."""
    return divmod(int(j), len(rx))


def capacity(H, u, w, P: float = 1.0, noise_var: float = 1.0) -> float:
    """``log2(1 + P |u^H H w|^2 / noise_var)`` in bps/Hz."""
    g = np.vdot(np.asarray(u), np.asarray(H, dtype=complex) @ np.asarray(w))
    return float(np.log2(1.0 + P * abs(g) ** 2 / noise_var))


def pair_capacity(H, j: int, tx: Codebook, rx: Codebook, P: float = 1.0,
                  noise_var: float = 1.0) -> float:
    iu, iw = pair(j, rx)
    return capacity(H, tx.beams[iu], rx.beams[iw], P, noise_var)
