"""Random Fourier Feature banks.

Every scalar coordinate of a feature vector is lifted independently into ``k``
cosine features ``sqrt(2) * cos(omega * x + phi)`` with ``omega ~ N(0, 1)`` and
``phi ~ U(0, 2*pi)``.  After the lift, dependence between two original
coordinates shows up as plain linear cross-covariance between their blocks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

SQRT2 = np.sqrt(2.0)
STD_FLOOR = 1e-6


class RffFunction(NamedTuple):
    omega: float
    phi: float

    def __call__(self, x):
        return SQRT2 * np.cos(self.omega * x + self.phi)


@dataclass(frozen=True)
class RffBank:
    """Immutable bank of ``input_dim * multiplier`` cosine features.

    ``omega`` and ``phi`` have shape ``(input_dim, multiplier)``; row ``d``
    holds the functions applied to coordinate ``d``.
    """

    omega: np.ndarray
    phi: np.ndarray
    seed: int

    def __post_init__(self):
        if self.omega.shape != self.phi.shape or self.omega.ndim != 2:
            raise ValueError("omega and phi must share a 2-d shape")
        for arr in (self.omega, self.phi):
            arr.setflags(write=False)

    @property
    def input_dim(self) -> int:
        return self.omega.shape[0]

    @property
    def multiplier(self) -> int:
        return self.omega.shape[1]

    @property
    def output_dim(self) -> int:
        return self.omega.size

    @property
    def per_dim_functions(self) -> list[list[RffFunction]]:
        return [
            [RffFunction(float(w), float(p)) for w, p in zip(wr, pr)]
            for wr, pr in zip(self.omega, self.phi)
        ]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "input_dim": self.input_dim,
            "multiplier": self.multiplier,
            "omega": self.omega.ravel().tolist(),
            "phi": self.phi.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RffBank":
        shape = (int(d["input_dim"]), int(d["multiplier"]))
        omega = np.asarray(d["omega"], dtype=np.float64).reshape(shape)
        phi = np.asarray(d["phi"], dtype=np.float64).reshape(shape)
        return cls(omega=omega, phi=phi, seed=int(d["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "RffBank":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_bank(input_dim: int, multiplier: int, seed: int) -> RffBank:
    """Draw a bank with ``multiplier`` functions per input coordinate."""
    if input_dim < 1 or multiplier < 1:
        raise ValueError(f"input_dim and multiplier must be >= 1, got {input_dim}, {multiplier}")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((input_dim, multiplier))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(input_dim, multiplier))
    return RffBank(omega=omega, phi=phi, seed=int(seed))


def apply(bank: RffBank, features: np.ndarray) -> np.ndarray:
    """Lift ``features`` (n, m) to (n, m*k); column ``d*k + j`` uses function (d, j)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.input_dim:
        raise ValueError(f"expected (n, {bank.input_dim}) features, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in RFF input")
    out = SQRT2 * np.cos(x[:, :, None] * bank.omega[None] + bank.phi[None])
    return out.reshape(x.shape[0], -1)


def standardize(features: np.ndarray, floor: float = STD_FLOOR) -> np.ndarray:
    """Z-score each column with batch statistics."""
    x = np.asarray(features, dtype=np.float64)
    std = np.maximum(x.std(axis=0), floor)
    return (x - x.mean(axis=0)) / std
