"""Synthetic propagation environment: a base station, point scatterers and
a deterministic map from receiver position to its multipath description.

Each receiver sees the line-of-sight path and single-bounce paths off every
scatterer. Amplitudes follow free-space spreading ``g0 / length`` (with a
per-scatterer reflection coefficient on bounced paths); the line-of-sight
phase is zero and bounced paths get a uniform random phase drawn from a
generator seeded by the environment seed and the receiver position
quantized to 1 cm, so the map is a pure function of position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._seeding import derive_seed
from .arrays import PathSet

REF_GAIN_DB = 50.0
QUANTUM = 0.01


@dataclass(frozen=True)
class Region:
    """Axis-aligned box ``[lo, hi]`` in metres."""

    lo: tuple = (20.0, -40.0, 0.0)
    hi: tuple = (80.0, 40.0, 20.0)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(h < l for l, h in zip(lo, hi)):
            raise ValueError("region needs 3-D bounds with lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def sample(self, rng, count: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(count, 3))


def _angles(v) -> tuple:
    """(zenith, azimuth) of direction ``v``."""
    r = np.linalg.norm(v)
    theta = float(np.arccos(np.clip(v[2] / r, -1.0, 1.0)))
    phi = float(np.arctan2(v[1], v[0]))
    return theta, phi


@dataclass(frozen=True)
class Environment:
    """Base station, scatterers and path-synthesis settings.

    Parameters
    ----------
    bs : (3,) array
    scatterers : (S, 3) array
    reflectivity : (S,) array
        Amplitude reflection coefficient of each scatterer.
    region : Region
        Where scatterers were drawn and where receivers are sampled.
    L_max : int
        Paths kept per receiver (strongest first).
    seed : int
    wavelength : float
        Carrier wavelength in metres (recorded for completeness; phases of
        bounced paths are drawn at random).
    rx_height : float
        Height of receivers sampled by :func:`sample_positions`.
    """

    bs: np.ndarray
    scatterers: np.ndarray
    reflectivity: np.ndarray
    region: Region
    L_max: int = 4
    seed: int = 0
    wavelength: float = 0.005
    rx_height: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "bs", np.asarray(self.bs, dtype=float).reshape(3))
        object.__setattr__(self, "scatterers",
                           np.asarray(self.scatterers, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "reflectivity",
                           np.asarray(self.reflectivity, dtype=float).reshape(-1))
        if self.reflectivity.size != self.scatterers.shape[0]:
            raise ValueError("one reflectivity per scatterer")
        if self.L_max < 1:
            raise ValueError("L_max must be at least 1")

    def paths(self, x) -> PathSet:
        """Line-of-sight plus the ``L_max - 1`` strongest single-bounce paths at ``x``."""
        x = np.asarray(x, dtype=float).reshape(3)
        g0 = 10.0 ** (REF_GAIN_DB / 20.0)
        key = tuple(int(v) for v in np.round(x / QUANTUM))
        rng = np.random.default_rng(derive_seed(self.seed, "phase", *key))
        d_los = x - self.bs
        gains = [g0 / max(np.linalg.norm(d_los), QUANTUM) + 0j]
        aod = [_angles(d_los)]
        aoa = [_angles(-d_los)]
        if self.scatterers.shape[0]:
            phases = rng.uniform(-np.pi, np.pi, size=self.scatterers.shape[0])
            for s, gamma, ph in zip(self.scatterers, self.reflectivity, phases):
                out = s - self.bs
                back = s - x
                length = np.linalg.norm(out) + np.linalg.norm(back)
                gains.append(gamma * g0 / max(length, QUANTUM) * np.exp(1j * ph))
                aod.append(_angles(out))
                aoa.append(_angles(back))
        gains = np.asarray(gains)
        order = np.argsort(-np.abs(gains), kind="stable")[: self.L_max]
        return PathSet(gains[order], np.asarray(aod)[order], np.asarray(aoa)[order])

    def sample_positions(self, count: int, seed) -> np.ndarray:
        """Receiver positions uniform over the region footprint at ``rx_height``."""
        rng = np.random.default_rng(derive_seed(self.seed, "positions", seed))
        pts = self.region.sample(rng, count)
        pts[:, 2] = self.rx_height
        return pts

    def to_json(self) -> str:
        return json.dumps({
            "bs": self.bs.tolist(),
            "scatterers": self.scatterers.tolist(),
            "reflectivity": self.reflectivity.tolist(),
            "region": {"lo": list(self.region.lo), "hi": list(self.region.hi)},
            "L_max": self.L_max,
            "seed": self.seed,
            "wavelength": self.wavelength,
            "rx_height": self.rx_height,
        })

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        d = json.loads(text)
        return cls(np.array(d["bs"]), np.array(d["scatterers"]).reshape(-1, 3),
                   np.array(d["reflectivity"]), Region(tuple(d["region"]["lo"]),
                                                       tuple(d["region"]["hi"])),
                   int(d["L_max"]), int(d["seed"]), float(d["wavelength"]),
                   float(d["rx_height"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Environment":
        return cls.from_json(Path(path).read_text())


def gen_environment(region: Region | None = None, scatterer_count: int = 8, L_max: int = 4,
                    seed: int = 0, bs=(0.0, 0.0, 10.0),
                    reflectivity_range=(0.1, 0.4)) -> Environment:
    """Scatterers uniform in ``region`` with reflectivities uniform in ``reflectivity_range``."""
    if scatterer_count < 0:
        raise ValueError("scatterer_count must be nonnegative")
    region = Region() if region is None else region
    rng = np.random.default_rng(derive_seed(seed, "environment"))
    scat = region.sample(rng, scatterer_count)
    refl = rng.uniform(*reflectivity_range, size=scatterer_count)
    return Environment(np.asarray(bs, dtype=float), scat, refl, region, L_max, int(seed))
