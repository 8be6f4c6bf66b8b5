"""Convex benchmark targets with exact value and subgradient oracles.

Each target is frozen by (name, dim, seed): coefficient draws happen once at
construction and evaluation is pure.  Subgradients use the sign(0) = 0
convention at absolute-value kinks. All targets are registered by name for
the command line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .model import spawn_rng

TARGET_NAMES = (
    "QuadraticIso",
    "QuadraticAniso",
    "NormEuclid",
    "NormAniso",
    "Mixed",
    "SoftplusSum",
    "LogSumExpQuad",
    "Huber",
    "L1Norm",
    "ICKANPaperTarget",
)

_MIXED_PIECES = 5


@dataclass(frozen=True, eq=False)
class TargetFunction:
    name: str
    dim: int
    seed: int
    weights: Optional[np.ndarray] = None  # per-coordinate weights
    weights2: Optional[np.ndarray] = None  # second weight vector (Mixed)
    piece_slopes: Optional[np.ndarray] = None  # max-affine block (Mixed)
    piece_intercepts: Optional[np.ndarray] = None
    delta: float = 1.0


def make_target(name: str, dim: int, seed: int) -> TargetFunction:
    if name not in TARGET_NAMES:
        raise ValueError(f"unknown target {name!r}; valid names: {', '.join(TARGET_NAMES)}")
    if dim < 2:
        raise ValueError("target dimension must be >= 2")

    idx = np.arange(dim, dtype=np.float64)
    rng = spawn_rng(seed, TARGET_NAMES.index(name), dim)
    weights = weights2 = slopes = intercepts = None
    if name == "QuadraticAniso":
        weights = 0.5 + 2.0 * idx / (dim - 1)
    elif name == "NormAniso":
        weights = 1.0 + 9.0 * idx / (dim - 1)
    elif name == "ICKANPaperTarget":
        weights = rng.uniform(0.5, 2.0, dim)
    elif name == "Mixed":
        weights = rng.uniform(0.5, 2.0, dim)
        weights2 = rng.uniform(0.5, 2.0, dim)
        slopes = rng.standard_normal((_MIXED_PIECES, dim)) / np.sqrt(dim)
        intercepts = rng.standard_normal(_MIXED_PIECES)
    return TargetFunction(
        name=name,
        dim=dim,
        seed=seed,
        weights=weights,
        weights2=weights2,
        piece_slopes=slopes,
        piece_intercepts=intercepts,
        delta=1.0,
    )


def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def _huber_value(t: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(t)
    return np.where(a <= delta, t * t, 2.0 * delta * a - delta * delta)


def _huber_grad(t: np.ndarray, delta: float) -> np.ndarray:
    return np.where(np.abs(t) <= delta, 2.0 * t, 2.0 * delta * np.sign(t))


def target_value_and_subgradient(target: TargetFunction, x) -> Tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (target.dim,):
        raise ValueError(f"expected input of shape ({target.dim},), got {x.shape}")
    name = target.name

    if name == "QuadraticIso":
        return 0.5 * float(np.dot(x, x)), x.copy()
    if name == "QuadraticAniso":
        w = target.weights
        return 0.5 * float(np.dot(w, x * x)), w * x
    if name == "NormEuclid":
        r = float(np.sqrt(np.dot(x, x)))
        return r, x / r if r > 0 else np.zeros_like(x)
    if name == "NormAniso":
        w = target.weights
        r = float(np.sqrt(np.dot(w, x * x)))
        return r, (w * x) / r if r > 0 else np.zeros_like(x)
    if name == "Mixed":
        w1, w2 = target.weights, target.weights2
        quad = 0.25 * float(np.dot(w1, x * x))
        root = float(np.sqrt(np.dot(w2, x * x)))
        pieces = target.piece_slopes @ x + target.piece_intercepts
        k = int(np.argmax(pieces))
        value = quad + 0.7 * root + float(pieces[k])
        grad = 0.5 * w1 * x + target.piece_slopes[k].copy()
        if root > 0:
            grad += 0.7 * (w2 * x) / root
        return value, grad
    if name == "SoftplusSum":
        value = float(np.sum(np.logaddexp(0.0, x)))
        e = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
        return value, e
    if name == "LogSumExpQuad":
        return _logsumexp(x) + 0.1 * float(np.dot(x, x)), _softmax(x) + 0.2 * x
    if name == "Huber":
        return float(np.sum(_huber_value(x, target.delta))), _huber_grad(x, target.delta)
    if name == "L1Norm":
        return float(np.sum(np.abs(x))), np.sign(x)
    if name == "ICKANPaperTarget":
        w = target.weights
        value = float(np.sum(np.abs(x) + np.abs(1.0 - x))) + 0.25 * float(np.dot(w, x * x))
        grad = np.sign(x) - np.sign(1.0 - x) + 0.5 * w * x
        return value, grad
    raise AssertionError(name)


def target_value(target: TargetFunction, x) -> float:
    return target_value_and_subgradient(target, x)[0]


def target_values_batch(target: TargetFunction, X) -> np.ndarray:
    """Values on the rows of X; used for dataset generation and sampling tests.

    The squared-norm and norm reductions deliberately use the same einsum
    primitive as the model's branch evaluation, so a model that represents a
    target exactly produces bitwise-zero residuals (and hence exactly zero
    gradients) on sampled datasets.
    """
    X = np.asarray(X, dtype=np.float64)
    name = target.name
    if name == "QuadraticIso":
        return 0.5 * np.einsum("ij,ij->i", X, X)
    if name == "QuadraticAniso":
        return 0.5 * (X * X) @ target.weights
    if name == "NormEuclid":
        return np.sqrt(np.einsum("ij,ij->i", X, X))
    if name == "NormAniso":
        return np.sqrt((X * X) @ target.weights)
    if name == "Mixed":
        quad = 0.25 * (X * X) @ target.weights
        root = np.sqrt((X * X) @ target.weights2)
        pieces = X @ target.piece_slopes.T + target.piece_intercepts
        return quad + 0.7 * root + np.max(pieces, axis=1)
    if name == "SoftplusSum":
        return np.sum(np.logaddexp(0.0, X), axis=1)
    if name == "LogSumExpQuad":
        m = np.max(X, axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.sum(np.exp(X - m), axis=1))
        return lse + 0.1 * np.sum(X * X, axis=1)
    if name == "Huber":
        return np.sum(_huber_value(X, target.delta), axis=1)
    if name == "L1Norm":
        return np.sum(np.abs(X), axis=1)
    if name == "ICKANPaperTarget":
        return np.sum(np.abs(X) + np.abs(1.0 - X), axis=1) + 0.25 * (X * X) @ target.weights
    raise AssertionError(name)
