"""Random Fourier features for the Gaussian kernel.

A Gaussian transition density with bandwidth ``sigma`` factorizes as an inner
product of two feature maps. Sampling frequencies from ``N(0, I / sigma**2)``
and phases from ``U[0, 2*pi)`` gives features

    phi_i(x) = sqrt(2 / D) * cos(omega_i @ x + b_i)

whose plain dot product is an unbiased estimate of
``exp(-||x - y||**2 / (2 * sigma**2))``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

RECORD_VERSION = 1


@dataclass(frozen=True)
class RffMap:
    """Frozen random Fourier parameters.

    ``frequencies`` has shape ``(n_features, input_dim)``; ``phases`` has
    shape ``(n_features,)``. Arrays are made read-only on construction.
    """

    frequencies: np.ndarray
    phases: np.ndarray
    bandwidth: float
    seed: Optional[int] = None

    def __post_init__(self):
        freq = np.array(self.frequencies, dtype=float)
        phases = np.array(self.phases, dtype=float)
        if freq.ndim != 2 or freq.shape[0] < 1 or freq.shape[1] < 1:
            raise ValueError(f"frequencies must be a nonempty 2-D array, got shape {freq.shape}")
        if phases.shape != (freq.shape[0],):
            raise ValueError("phases must have one entry per frequency row")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if np.any(phases < 0) or np.any(phases >= 2 * np.pi):
            raise ValueError("phases must lie in [0, 2*pi)")
        freq.setflags(write=False)
        phases.setflags(write=False)
        object.__setattr__(self, "frequencies", freq)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def n_features(self) -> int:
        return self.frequencies.shape[0]

    @property
    def input_dim(self) -> int:
        return self.frequencies.shape[1]

    def __call__(self, x):
        return apply_rff(self, x)

    def to_record(self) -> dict:
        """Structured record sufficient to rebuild the map.

        Seeded maps store only (seed, dims, bandwidth); unseeded maps store
        the arrays themselves.
        """
        rec = {
            "version": RECORD_VERSION,
            "kind": "gaussian_rff",
            "input_dim": self.input_dim,
            "n_features": self.n_features,
            "bandwidth": self.bandwidth,
            "seed": self.seed,
        }
        if self.seed is None:
            rec["frequencies"] = self.frequencies.tolist()
            rec["phases"] = self.phases.tolist()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "RffMap":
        if rec.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported RffMap record version {rec.get('version')}")
        if rec.get("seed") is not None:
            return sample_rff(rec["input_dim"], rec["n_features"], rec["bandwidth"], rec["seed"])
        return cls(np.asarray(rec["frequencies"]), np.asarray(rec["phases"]), rec["bandwidth"])

    def dumps(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RffMap":
        return cls.from_record(json.loads(text))


def sample_rff(input_dim: int, n_features: int, bandwidth: float, seed: int) -> RffMap:
    """Draw a Gaussian-kernel feature map deterministically from ``seed``."""
    if int(input_dim) != input_dim or input_dim < 1:
        raise ValueError(f"input_dim must be a positive integer, got {input_dim}")
    if int(n_features) != n_features or n_features < 1:
        raise ValueError(f"n_features must be a positive integer, got {n_features}")
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    rng = np.random.default_rng(seed)
    freq = rng.standard_normal((int(n_features), int(input_dim))) / bandwidth
    phases = rng.uniform(0.0, 2 * np.pi, size=int(n_features))
    return RffMap(freq, phases, bandwidth, seed=seed)


def apply_rff(rff: RffMap, x) -> np.ndarray:
    """Evaluate features at ``x`` of shape ``(d,)`` or ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != rff.input_dim or x.ndim not in (1, 2):
        raise ValueError(f"expected input of dimension {rff.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    proj = x @ rff.frequencies.T
    proj += rff.phases
    return np.sqrt(2.0 / rff.n_features) * np.cos(proj)


def gaussian_kernel_exact(x, y, bandwidth: float):
    """``exp(-||x - y||^2 / (2 bandwidth^2))``, broadcasting over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    sq = np.sum((x - y) ** 2, axis=-1)
    return np.exp(-sq / (2.0 * bandwidth**2))


def kernel_approx_error(rff: RffMap, pairs: Sequence) -> float:
    """Max absolute gap between the feature inner product and the exact kernel."""
    if len(pairs) == 0:
        raise ValueError("pair list is empty")
    xs = np.array([p[0] for p in pairs], dtype=float)
    ys = np.array([p[1] for p in pairs], dtype=float)
    approx = np.einsum("ij,ij->i", apply_rff(rff, xs), apply_rff(rff, ys))
    exact = gaussian_kernel_exact(xs, ys, rff.bandwidth)
    return float(np.max(np.abs(approx - exact)))


def random_pairs(input_dim: int, n_pairs: int, max_dist: float, seed, box: float = 3.0) -> list:
    """Pairs ``(x, y)`` with ``x`` uniform in ``[-box, box]^d`` and ``||x - y|| <= max_dist``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box, box, size=(n_pairs, input_dim))
    u = rng.standard_normal((n_pairs, input_dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y = x + max_dist * rng.uniform(0.0, 1.0, size=(n_pairs, 1)) * u
    return list(zip(x, y))


def export_features_csv(rff: RffMap, points: Iterable, path) -> None:
    """Write one row per input point: the point coordinates then its features."""
    pts = np.atleast_2d(np.asarray(list(points), dtype=float))
    feats = apply_rff(rff, pts)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(rff.input_dim)] + [f"phi{i}" for i in range(rff.n_features)])
        for p, f in zip(pts, feats):
            writer.writerow([repr(float(v)) for v in p] + [repr(float(v)) for v in f])
