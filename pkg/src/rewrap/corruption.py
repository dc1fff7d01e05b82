"""Synthetic data and response attacks.

Random streams are PCG64 generators seeded with ``derive_seed(seed, tag)``,
a BLAKE2b hash of the canonical text of ``(seed, tag)``.  Clean data use the
tag ``"generate"`` and the oblivious attack uses ``"oaa"`` under its own
seed, so changing the attack seed never touches the clean sample.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import DatasetMeta, RegressionDataset, round_half_up
from .errors import DimensionMismatch, ParameterOutOfRange

OAA_BASE = 20.0
OAA_SPREAD = 15.0


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from any sequence of ints, floats and strings."""
    text = "\x1f".join(repr(p) if isinstance(p, float) else str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def rng_stream(seed: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(int(seed), tag)))


@dataclass(frozen=True)
class GenConfig:
    n: int
    d: int
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.n >= self.d >= 1):
            raise ParameterOutOfRange("need n >= d >= 1")
        if not self.sigma >= 0:
            raise ParameterOutOfRange("sigma must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ParameterOutOfRange("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    alpha: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("oaa", "aaa"):
            raise ParameterOutOfRange(f"unknown attack {self.kind!r}")
        if not 0 <= self.alpha < 1:
            raise ParameterOutOfRange("alpha must lie in [0, 1)")

    def budget(self, n: int) -> int:
        return round_half_up(self.alpha * n)


def generate_clean(cfg: GenConfig) -> RegressionDataset:
    """``w* ~ N(0, I_d)``, ``x_i ~ N(0, I_d)``, ``y = X^T w* + N(0, sigma^2)``."""
    rng = rng_stream(cfg.seed, "generate")
    w = rng.standard_normal(cfg.d)
    X = rng.standard_normal((cfg.d, cfg.n))
    eps = rng.standard_normal(cfg.n)
    y = X.T @ w + cfg.sigma * eps
    return RegressionDataset(X, y, DatasetMeta(cfg.sigma, cfg.seed, w))


def _corrupt(data: RegressionDataset, idx: np.ndarray, values: np.ndarray) -> RegressionDataset:
    y = np.array(data.y)
    y[idx] = values
    return data.with_response(y, corruption_support=idx)


def apply_oaa(data: RegressionDataset, attack: AttackSpec) -> RegressionDataset:
    """Overwrite a uniformly random ``round(alpha n)`` subset with ``20 + U[0, 15]``."""
    if attack.kind != "oaa":
        raise ParameterOutOfRange("apply_oaa needs an oaa attack")
    k = attack.budget(data.n)
    rng = rng_stream(attack.seed, "oaa")
    idx = np.sort(rng.choice(data.n, size=k, replace=False))
    return _corrupt(data, idx, OAA_BASE + rng.uniform(0.0, OAA_SPREAD, size=k))


def apply_aaa(data: RegressionDataset, attack: AttackSpec) -> RegressionDataset:
    """Zero the responses of the ``round(alpha n)`` highest-leverage samples."""
    if attack.kind != "aaa":
        raise ParameterOutOfRange("apply_aaa needs an aaa attack")
    k = attack.budget(data.n)
    norms = np.sqrt(np.sum(data.X**2, axis=0))
    idx = np.flatnonzero(_kernels.top_k_mask(norms, k))
    return _corrupt(data, idx, np.zeros(k))


def apply_attack(data: RegressionDataset, attack: AttackSpec) -> RegressionDataset:
    return apply_oaa(data, attack) if attack.kind == "oaa" else apply_aaa(data, attack)


def l2_error(w_hat, w_true) -> float:
    w_hat = np.asarray(w_hat, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if w_hat.shape != w_true.shape:
        raise DimensionMismatch(f"{w_hat.shape} vs {w_true.shape}")
    return float(np.linalg.norm(w_hat - w_true))
