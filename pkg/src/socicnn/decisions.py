"""Feasible sets, projected gradient descent, and parametric decision tasks.

Three feasible sets are supported: the probability simplex, the unit box,
and the capped simplex (box coordinates with a fixed budget sum).  Tasks pair
a strongly convex quadratic-linear backbone with one of four structured
convex terms (cone norms, logistic sums, log-sum-exp blocks, Huber sums),
all parameterized by an 8-dimensional context vector through frozen random
affine maps.  Decision quality is scored against an intensified projected
gradient oracle on the true objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .model import sigmoid, softplus, spawn_rng

SET_KINDS = ("Simplex", "Box", "CappedSimplex")
FAMILIES = (
    "SimplexSocp",
    "BoxSocp",
    "BudgetTwoConeSocp",
    "SimplexLogistic",
    "BoxLogsumexp",
    "BudgetHuber",
)

THETA_DIM = 8


@dataclass(frozen=True)
class FeasibleSet:
    kind: str
    dim: int
    budget: float = 0.0

    def __post_init__(self):
        if self.kind not in SET_KINDS:
            raise ValueError(f"unknown set kind {self.kind!r}; valid: {', '.join(SET_KINDS)}")
        if self.kind == "CappedSimplex" and not (0.0 < self.budget < self.dim):
            raise ValueError("capped-simplex budget must lie strictly between 0 and dim")


def capped_simplex(dim: int, budget: Optional[float] = None) -> FeasibleSet:
    return FeasibleSet("CappedSimplex", dim, 0.3 * dim if budget is None else budget)


# ---------------------------------------------------------------------------
# Euclidean projections


def _project_simplex_rows(Y: np.ndarray) -> np.ndarray:
    """Sort-and-threshold projection of each row onto {x >= 0, sum x = 1}."""
    n, d = Y.shape
    srt = np.sort(Y, axis=1)[:, ::-1]
    csum = np.cumsum(srt, axis=1)
    ks = np.arange(1, d + 1)
    cond = srt - (csum - 1.0) / ks > 0.0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)  # last index satisfying cond
    tau = (csum[np.arange(n), rho] - 1.0) / (rho + 1.0)
    return np.maximum(Y - tau[:, None], 0.0)


def _project_capped_rows(Y: np.ndarray, budget: float) -> np.ndarray:
    """Bisection on the shift tau in clip(y - tau, 0, 1) until the row sums
    hit the budget to 1e-12; the sum is continuous and nonincreasing in tau."""
    lo = np.min(Y, axis=1) - 1.0
    hi = np.max(Y, axis=1)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        sums = np.clip(Y - mid[:, None], 0.0, 1.0).sum(axis=1)
        high = sums > budget
        lo = np.where(high, mid, lo)
        hi = np.where(high, hi, mid)
        if np.all(hi - lo < 1e-14) and np.all(np.abs(sums - budget) < 1e-12):
            break
    tau = 0.5 * (lo + hi)
    return np.clip(Y - tau[:, None], 0.0, 1.0)


def project_onto_batch(feasible: FeasibleSet, Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != feasible.dim:
        raise ValueError(f"expected rows of length {feasible.dim}")
    if feasible.kind == "Box":
        return np.clip(Y, 0.0, 1.0)
    if feasible.kind == "Simplex":
        return _project_simplex_rows(Y)
    return _project_capped_rows(Y, feasible.budget)


def project_onto(feasible: FeasibleSet, y) -> np.ndarray:
    """Euclidean projection of one point onto the feasible set."""
    y = np.asarray(y, dtype=np.float64)
    return project_onto_batch(feasible, y[None, :])[0]


def sample_feasible(feasible: FeasibleSet, n: int, rng: np.random.Generator) -> np.ndarray:
    """Projections of uniform box samples; the start distribution for PGD."""
    return project_onto_batch(feasible, rng.uniform(0.0, 1.0, (n, feasible.dim)))


# ---------------------------------------------------------------------------
# projected gradient descent


def _batch_adapter(objective: Callable) -> Callable:
    def batched(X: np.ndarray):
        vals = np.empty(X.shape[0])
        grads = np.empty_like(X)
        for i, row in enumerate(X):
            v, g = objective(row)
            vals[i] = v
            grads[i] = g
        return vals, grads

    return batched


def pgd_minimize(
    objective: Callable,
    feasible: FeasibleSet,
    restarts: int,
    steps: int,
    step_size: float,
    seed: int,
    decay: float = 0.999,
    vectorized: bool = False,
) -> Tuple[np.ndarray, float]:
    """Best iterate of projected (sub)gradient descent over random restarts.

    Each restart starts from the projection of a uniform box sample and
    iterates x <- project(x - step_k * grad) with geometrically decaying
    steps.  The best objective value seen at any iterate of any restart wins;
    ties go to the lowest restart index.  A restart that produces a
    non-finite value is abandoned; if every restart dies, this is an error.

    ``objective`` maps a point to (value, gradient).  Pass vectorized=True
    when it accepts an (n, d) batch and returns ((n,), (n, d)).
    """
    if restarts < 1 or steps < 1:
        raise ValueError("restarts and steps must be >= 1")
    fn = objective if vectorized else _batch_adapter(objective)
    rng = spawn_rng(seed)
    X = sample_feasible(feasible, restarts, rng)

    best_vals = np.full(restarts, np.inf)
    best_X = X.copy()
    alive = np.ones(restarts, dtype=bool)

    def record(vals, points):
        nonlocal alive
        finite = np.isfinite(vals)
        alive &= finite
        improved = finite & (vals < best_vals)
        best_vals[improved] = vals[improved]
        best_X[improved] = points[improved]

    step = step_size
    for _ in range(steps):
        vals, grads = fn(X)
        record(vals, X)
        move = X - step * grads
        move[~alive] = X[~alive]
        X = project_onto_batch(feasible, move)
        step *= decay
    vals, _ = fn(X)
    record(vals, X)

    if not np.any(np.isfinite(best_vals)):
        raise RuntimeError("every restart produced non-finite objective values")
    idx = int(np.argmin(best_vals))
    return best_X[idx].copy(), float(best_vals[idx])


# ---------------------------------------------------------------------------
# parametric tasks


@dataclass(frozen=True, eq=False)
class ConeTerm:
    """weight(theta) * ||proj @ x - (offset_base + offset_map @ theta)||."""

    proj: np.ndarray
    offset_base: np.ndarray
    offset_map: np.ndarray
    weight_base: float
    weight_map: np.ndarray


@dataclass(frozen=True, eq=False)
class PiecewiseTerm:
    """Rows a_k with theta-affine shifts and softplus-transformed weights.

    Used by both the logistic and the Huber families: the k-th summand is
    weight_k(theta) * phi(a_k @ x - shift_k(theta)) for a scalar convex phi.
    """

    slopes: np.ndarray  # (K, d)
    shift_base: np.ndarray  # (K,)
    shift_map: np.ndarray  # (K, THETA_DIM)
    weight_base: np.ndarray  # (K,)
    weight_map: np.ndarray  # (K, THETA_DIM)


@dataclass(frozen=True, eq=False)
class LogSumExpTerm:
    """weight(theta) * logsumexp(proj @ x - shift(theta))."""

    proj: np.ndarray
    shift_base: np.ndarray
    shift_map: np.ndarray
    weight_base: float
    weight_map: np.ndarray


@dataclass(frozen=True, eq=False)
class ParametricTask:
    family: str
    dim: int
    feasible_set: FeasibleSet
    alpha: float
    backbone_weights: np.ndarray  # (d,), entries in [0.8, 1.6]
    m_base: np.ndarray
    m_map: np.ndarray
    c_base: np.ndarray
    c_map: np.ndarray
    cones: Tuple[ConeTerm, ...] = ()
    pieces: Optional[PiecewiseTerm] = None
    lse: Tuple[LogSumExpTerm, ...] = ()
    delta: float = 0.35
    theta_dim: int = THETA_DIM


def _affine_maps(rng: np.random.Generator, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    base = rng.standard_normal(dim)
    mat = rng.standard_normal((dim, THETA_DIM)) / math.sqrt(THETA_DIM)
    return base, mat


def make_task(family: str, dim: int, seed: int) -> ParametricTask:
    """Freeze one task's coefficients from (family, dim, seed)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; valid: {', '.join(FAMILIES)}")
    if dim < 2:
        raise ValueError("task dimension must be >= 2")
    rng = spawn_rng(seed, FAMILIES.index(family), dim)

    if family.startswith("Simplex"):
        feasible = FeasibleSet("Simplex", dim)
    elif family.startswith("Box"):
        feasible = FeasibleSet("Box", dim)
    else:
        feasible = capped_simplex(dim)

    smooth_family = family in ("SimplexLogistic", "BoxLogsumexp")
    alpha = 0.35 if smooth_family else 1.0
    weights = rng.uniform(0.8, 1.6, dim)
    m_base, m_map = _affine_maps(rng, dim)
    c_base, c_map = _affine_maps(rng, dim)

    cones: Tuple[ConeTerm, ...] = ()
    pieces = None
    lse: Tuple[LogSumExpTerm, ...] = ()

    if family in ("SimplexSocp", "BoxSocp", "BudgetTwoConeSocp"):
        num_cones = 2 if family == "BudgetTwoConeSocp" else 1
        cone_dim = dim + 2  # overdetermined map: the norm stays smooth on the set
        built = []
        for _ in range(num_cones):
            proj = rng.standard_normal((cone_dim, dim)) / math.sqrt(dim)
            offset_base = rng.standard_normal(cone_dim)
            offset_map = rng.standard_normal((cone_dim, THETA_DIM)) / math.sqrt(THETA_DIM)
            built.append(
                ConeTerm(
                    proj=proj,
                    offset_base=offset_base,
                    offset_map=offset_map,
                    weight_base=float(rng.standard_normal()),
                    weight_map=rng.standard_normal(THETA_DIM) / math.sqrt(THETA_DIM),
                )
            )
        cones = tuple(built)
    elif family == "SimplexLogistic":
        count = max(6, dim // 3)
        pieces = PiecewiseTerm(
            slopes=rng.standard_normal((count, dim)) / math.sqrt(dim),
            shift_base=rng.standard_normal(count),
            shift_map=rng.standard_normal((count, THETA_DIM)) / math.sqrt(THETA_DIM),
            weight_base=rng.standard_normal(count),
            weight_map=rng.standard_normal((count, THETA_DIM)) / math.sqrt(THETA_DIM),
        )
    elif family == "BoxLogsumexp":
        rows = max(4, dim // 4)
        built_lse = []
        for _ in range(2):
            built_lse.append(
                LogSumExpTerm(
                    proj=rng.standard_normal((rows, dim)) / math.sqrt(dim),
                    shift_base=rng.standard_normal(rows),
                    shift_map=rng.standard_normal((rows, THETA_DIM)) / math.sqrt(THETA_DIM),
                    weight_base=float(rng.standard_normal()),
                    weight_map=rng.standard_normal(THETA_DIM) / math.sqrt(THETA_DIM),
                )
            )
        lse = tuple(built_lse)
    else:  # BudgetHuber
        count = max(8, dim // 2)
        pieces = PiecewiseTerm(
            slopes=rng.standard_normal((count, dim)) / math.sqrt(dim),
            shift_base=rng.standard_normal(count),
            shift_map=rng.standard_normal((count, THETA_DIM)) / math.sqrt(THETA_DIM),
            weight_base=rng.standard_normal(count),
            weight_map=rng.standard_normal((count, THETA_DIM)) / math.sqrt(THETA_DIM),
        )

    return ParametricTask(
        family=family,
        dim=dim,
        feasible_set=feasible,
        alpha=alpha,
        backbone_weights=weights,
        m_base=m_base,
        m_map=m_map,
        c_base=c_base,
        c_map=c_map,
        cones=cones,
        pieces=pieces,
        lse=lse,
    )


def sample_context(seed: int, *key: int) -> np.ndarray:
    """Context vectors are drawn uniformly from [-1, 1]^8."""
    return spawn_rng(seed, *key).uniform(-1.0, 1.0, THETA_DIM)


def _huber_value_grad(t: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    a = np.abs(t)
    small = a <= delta
    value = np.where(small, t * t, 2.0 * delta * a - delta * delta)
    grad = np.where(small, 2.0 * t, 2.0 * delta * np.sign(t))
    return value, grad


def task_objective(task: ParametricTask, theta, x) -> Tuple[np.ndarray, np.ndarray]:
    """Objective value and gradient in x; accepts a point or an (n, d) batch.

    Gradients at a vanishing cone norm use the zero-vector convention.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (task.theta_dim,):
        raise ValueError(f"theta must have shape ({task.theta_dim},)")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != task.dim:
        raise ValueError(f"decision points must have dimension {task.dim}")

    m = task.m_base + task.m_map @ theta
    c = task.c_base + task.c_map @ theta
    diff = X - m
    w = task.backbone_weights
    vals = 0.5 * task.alpha * (diff * diff) @ w + X @ c
    grads = task.alpha * (diff * w) + c

    for cone in task.cones:
        weight = float(softplus(cone.weight_base + cone.weight_map @ theta))
        offset = cone.offset_base + cone.offset_map @ theta
        U = X @ cone.proj.T - offset
        norms = np.sqrt(np.einsum("ij,ij->i", U, U))
        vals += weight * norms
        safe = norms > 0.0
        scale = np.where(safe, weight / np.where(safe, norms, 1.0), 0.0)
        grads += (scale[:, None] * U) @ cone.proj

    if task.pieces is not None:
        pieces = task.pieces
        weights = softplus(pieces.weight_base + pieces.weight_map @ theta)  # (K,)
        shifts = pieces.shift_base + pieces.shift_map @ theta
        T = X @ pieces.slopes.T - shifts  # (n, K)
        if task.family == "SimplexLogistic":
            vals += np.logaddexp(0.0, T) @ weights
            grads += (sigmoid(T) * weights) @ pieces.slopes
        else:
            hv, hg = _huber_value_grad(T, task.delta)
            vals += hv @ weights
            grads += (hg * weights) @ pieces.slopes

    for term in task.lse:
        weight = float(softplus(term.weight_base + term.weight_map @ theta))
        shift = term.shift_base + term.shift_map @ theta
        T = X @ term.proj.T - shift
        mx = np.max(T, axis=1, keepdims=True)
        expT = np.exp(T - mx)
        denom = np.sum(expT, axis=1)
        vals += weight * (mx[:, 0] + np.log(denom))
        grads += weight * ((expT / denom[:, None]) @ term.proj)

    if single:
        return float(vals[0]), grads[0]
    return vals, grads


@dataclass(frozen=True)
class DecisionReport:
    regret: float
    decision_error: float
    surrogate_value_at_decision: float
    true_value_at_decision: float


DEFAULT_ORACLE_CONFIG = (20, 2000)


def minimize_task(
    task: ParametricTask,
    theta,
    restarts: int,
    steps: int,
    step_size: float = 0.05,
    seed: int = 0,
) -> Tuple[np.ndarray, float]:
    """Projected gradient descent on the true objective."""
    objective = lambda X: task_objective(task, theta, X)
    return pgd_minimize(
        objective,
        task.feasible_set,
        restarts,
        steps,
        step_size,
        seed,
        vectorized=True,
    )


def evaluate_decision_quality(
    task: ParametricTask,
    theta,
    x_hat,
    oracle_config: Tuple[int, int] = DEFAULT_ORACLE_CONFIG,
    oracle_seed: int = 0,
    surrogate_value: float = float("nan"),
) -> DecisionReport:
    """Regret and decision error of x_hat against the intensified oracle.

    x_hat must already be feasible (project first).  The oracle runs
    restarts x steps projected gradient descent on the true objective, which
    dominates the lighter decision-time search, so regret is nonnegative up
    to the oracle's own tolerance.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    restarts, steps = oracle_config
    x_star, f_star = minimize_task(task, theta, restarts, steps, seed=oracle_seed)
    f_hat, _ = task_objective(task, theta, x_hat)
    return DecisionReport(
        regret=float(f_hat - f_star),
        decision_error=float(np.sqrt(np.sum((x_hat - x_star) ** 2))),
        surrogate_value_at_decision=float(surrogate_value),
        true_value_at_decision=float(f_hat),
    )
