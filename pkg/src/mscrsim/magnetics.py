"""Point-dipole field model of the rotatable actuating magnet.

All vectors are plain ``numpy`` arrays of shape (3,), matrices (3, 3).
Positions are in metres, fields in tesla, gradients in tesla per metre.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MU0 = 4e-7 * math.pi  # vacuum permeability [T m / A]

# Dipole moment modulus fitted over the working range [A m^2].
DEFAULT_MOMENT = 342.86

_EYE = np.eye(3)


class SingularDipoleError(ValueError):
    """Field requested at the dipole origin."""


class CalibrationError(ValueError):
    """No usable field samples for the moment fit."""


@dataclass(frozen=True)
class DipoleMagnet:
    position: np.ndarray
    psi: float = 0.0
    moment: float = DEFAULT_MOMENT

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if not self.moment > 0:
            raise ValueError(f"moment must be positive, got {self.moment}")


@dataclass(frozen=True)
class FieldSample:
    d: float
    B: float

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"sample distance must be positive, got {self.d}")
        if self.B < 0:
            raise ValueError(f"field magnitude must be non-negative, got {self.B}")


@dataclass(frozen=True)
class WorkingRange:
    d_min: float = 0.100
    d_max: float = 0.250

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"invalid working range [{self.d_min}, {self.d_max}]")

    def __contains__(self, d: float) -> bool:
        return self.d_min <= d <= self.d_max


def unit_moment(psi: float, frame: str = "A") -> np.ndarray:
    """Unit dipole direction for rotation angle ``psi``.

    ``frame="A"`` is the magnet's own frame; ``frame="G"`` is the robot base
    frame for a magnet constrained to the x-y plane (roll angle zero).
    """
    c, s = math.cos(psi), math.sin(psi)
    if frame == "A":
        return np.array([c, s, 0.0])
    if frame == "G":
        return np.array([-c, s, 0.0])
    raise ValueError(f"unknown frame {frame!r}")


def unit_moment_derivative(psi: float, frame: str = "G") -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    if frame == "A":
        return np.array([-s, c, 0.0])
    if frame == "G":
        return np.array([s, c, 0.0])
    raise ValueError(f"unknown frame {frame!r}")


def _split(p) -> tuple[float, np.ndarray]:
    p = np.asarray(p, dtype=float)
    r = float(np.linalg.norm(p))
    if not r > 0 or not math.isfinite(r):
        raise SingularDipoleError("field evaluated at the dipole origin")
    return r, p / r


def dipole_field(p, m_hat, moment: float = DEFAULT_MOMENT) -> np.ndarray:
    """Flux density at offset ``p`` from a dipole of direction ``m_hat``."""
    r, ph = _split(p)
    m_hat = np.asarray(m_hat, dtype=float)
    return MU0 * moment / (4 * math.pi * r**3) * (3 * ph * (ph @ m_hat) - m_hat)


def dipole_gradient(p, m_hat, moment: float = DEFAULT_MOMENT) -> np.ndarray:
    """Spatial gradient ``G[i, j] = d b_i / d p_j`` (symmetric, traceless)."""
    r, ph = _split(p)
    m_hat = np.asarray(m_hat, dtype=float)
    Z = _EYE - 5 * np.outer(ph, ph)
    scale = 3 * MU0 * moment / (4 * math.pi * r**4)
    return scale * (np.outer(ph, m_hat) + (ph @ m_hat) * _EYE + np.outer(Z @ m_hat, ph))


def field_operator(p, moment: float = DEFAULT_MOMENT) -> np.ndarray:
    """Matrix ``B`` with ``B @ m_hat == dipole_field(p, m_hat)``."""
    r, ph = _split(p)
    return MU0 * moment / (4 * math.pi * r**3) * (3 * np.outer(ph, ph) - _EYE)


def gradient_operator(p, v, moment: float = DEFAULT_MOMENT) -> np.ndarray:
    """Matrix ``Bg`` with ``Bg @ m_hat == dipole_gradient(p, m_hat).T @ v``.

    Separates the magnet orientation from the gradient contracted with an
    arbitrary vector ``v`` (typically the body magnetization).
    """
    r, ph = _split(p)
    v = np.asarray(v, dtype=float)
    Z = _EYE - 5 * np.outer(ph, ph)
    scale = 3 * MU0 * moment / (4 * math.pi * r**4)
    return scale * (np.outer(ph, v) + np.outer(v, ph) + (ph @ v) * Z)


def on_axis_field(d, moment: float = DEFAULT_MOMENT):
    """Field magnitude on the principal axis, ``mu0 M / (2 pi d^3)``."""
    d = np.asarray(d, dtype=float)
    return MU0 * moment / (2 * math.pi * d**3)


def calibrate_moment(samples: Iterable[FieldSample], working_range: WorkingRange | None = None) -> float:
    """Least-squares dipole moment from on-axis field measurements.

    The on-axis model is linear in the moment, ``B(d) = M g(d)``, so the
    minimiser of the squared residual over samples inside the working range
    is ``sum(B_E g) / sum(g^2)``.
    """
    rng = working_range or WorkingRange()
    used = [s for s in samples if s.d in rng]
    if not used:
        raise CalibrationError(f"no samples inside [{rng.d_min}, {rng.d_max}] m")
    d = np.array([s.d for s in used])
    b = np.array([s.B for s in used])
    g = on_axis_field(d, 1.0)
    return float(b @ g / (g @ g))


def calibration_residual(samples: Sequence[FieldSample], moment: float,
                         working_range: WorkingRange | None = None) -> float:
    rng = working_range or WorkingRange()
    used = [s for s in samples if s.d in rng]
    d = np.array([s.d for s in used])
    b = np.array([s.B for s in used])
    return float(np.sum((b - on_axis_field(d, moment)) ** 2))


def synthetic_samples(moment: float = DEFAULT_MOMENT, noise: float = 0.0, seed: int = 0,
                      distances=None) -> list[FieldSample]:
    """On-axis samples from the dipole model with relative Gaussian noise."""
    if distances is None:
        distances = np.linspace(0.05, 0.30, 26)
    rng = np.random.default_rng(seed)
    d = np.asarray(distances, dtype=float)
    b = on_axis_field(d, moment)
    if noise:
        b = b * (1 + noise * rng.standard_normal(d.shape))
    return [FieldSample(float(di), float(max(bi, 0.0))) for di, bi in zip(d, b)]


def read_samples(path) -> list[FieldSample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"d_m", "B_T"} <= set(reader.fieldnames):
            raise CalibrationError(f"{path}: expected header d_m,B_T")
        return [FieldSample(float(row["d_m"]), float(row["B_T"])) for row in reader]


def write_samples(path, samples: Iterable[FieldSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d_m", "B_T"])
        for s in samples:
            w.writerow([repr(s.d), repr(s.B)])


def fixture_path() -> Path:
    return Path(__file__).parent / "data" / "field_samples.csv"


def field_map(axis: str = "x", d_values=None, psi: float = 0.0, moment: float = DEFAULT_MOMENT):
    """Rows ``(d, |b|, dbx/dx, dby/dy, dbx/dy)`` along an axis of frame A.

    The three gradient entries are the independent in-plane quantities
    (the fourth follows from the zero trace).
    """
    if d_values is None:
        d_values = np.linspace(0.10, 0.25, 31)
    direction = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}[axis]
    m_hat = unit_moment(psi, "A")
    rows = []
    for d in d_values:
        p = d * direction
        b = dipole_field(p, m_hat, moment)
        G = dipole_gradient(p, m_hat, moment)
        rows.append((float(d), float(np.linalg.norm(b)), float(G[0, 0]), float(G[1, 1]), float(G[0, 1])))
    return rows
