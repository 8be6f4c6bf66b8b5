"""Parameter containers and the exact forward pass.

The model is a nonnegative-weight convex backbone (ReLU or Softplus hidden
units) plus two kinds of structural branches added to the output:

* quadratic branches  weight/2 * ||proj @ x + offset||^2   (weight >= 0)
* conic branches      weight   * ||proj @ x + offset||     (weight >= 0)

Hidden-to-hidden weights, the hidden readout, and all branch weights must be
nonnegative so the total stays convex in the input.  Nonnegativity is imposed
by clamping (``project_feasible``), never by reparameterization, so the stored
arrays are exactly the data of the epigraph lift used by the certificate
module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

RELU = "ReLU"
SOFTPLUS = "Softplus"
ACTIVATIONS = (RELU, SOFTPLUS)

_UINT64 = 0xFFFFFFFFFFFFFFFF


class DimensionError(ValueError):
    """Shape mismatch in model construction or evaluation."""


class ConstraintError(ValueError):
    """Violation of a sign constraint required for convexity."""


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator derived deterministically from a root seed and an index path.

    Every source of randomness in the package goes through this helper, so a
    run is reproducible from its root seed alone and per-task streams are
    independent of execution order.
    """
    entropy = [int(seed) & _UINT64] + [int(k) & _UINT64 for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def softplus(t):
    """log(1 + exp(t)) evaluated without overflow for large |t|."""
    return np.logaddexp(0.0, t)


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def half_sqnorm(q: np.ndarray) -> float:
    return 0.5 * float(np.dot(q, q))


def l2norm(u: np.ndarray) -> float:
    return float(np.sqrt(np.dot(u, u)))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True, eq=False)
class LayerParams:
    """One backbone layer: pre = w_x @ x + w_z @ z_prev + b.

    w_z is absent on the first layer (there is no previous hidden state) and
    must stay elementwise nonnegative.  w_x is absent past the first layer
    when passthrough connections are disabled.
    """

    w_x: Optional[np.ndarray]
    w_z: Optional[np.ndarray]
    b: np.ndarray

    @property
    def width(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True, eq=False)
class QuadBranchParams:
    """Curvature branch: weight/2 * ||proj @ x + offset||^2 with weight >= 0."""

    weight: float
    proj: np.ndarray
    offset: np.ndarray

    @property
    def rank(self) -> int:
        return self.proj.shape[0]


@dataclass(frozen=True, eq=False)
class ConicBranchParams:
    """Norm branch: weight * ||proj @ x + offset|| with weight >= 0."""

    weight: float
    proj: np.ndarray
    offset: np.ndarray

    @property
    def dim(self) -> int:
        return self.proj.shape[0]


@dataclass(frozen=True, eq=False)
class SocIcnnParams:
    """Full model: backbone layers, readout, and structural branches.

    Treat instances as immutable values; all mutation helpers return new
    objects, so sharing a model across threads is safe.
    """

    input_dim: int
    layers: Tuple[LayerParams, ...]
    w_out: np.ndarray  # nonnegative readout of the last hidden state
    w_skip: np.ndarray  # unconstrained direct readout of the input
    b_out: float
    quad: Tuple[QuadBranchParams, ...]
    conic: Tuple[ConicBranchParams, ...]
    passthrough: bool
    activation: str

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(layer.width for layer in self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Everything the forward pass computed for one input.

    quad_s[h] and conic_t[g] are stored exactly as evaluated from quad_q[h]
    and conic_u[g]; downstream feasibility checks rely on that bitwise
    identity.
    """

    preacts: Tuple[np.ndarray, ...]
    acts: Tuple[np.ndarray, ...]
    backbone_value: float
    quad_q: Tuple[np.ndarray, ...]
    quad_s: Tuple[float, ...]
    conic_u: Tuple[np.ndarray, ...]
    conic_t: Tuple[float, ...]
    total: float


# ---------------------------------------------------------------------------
# construction


def _matrix(rng: np.random.Generator, rows: int, cols: int, scale: float) -> np.ndarray:
    return rng.standard_normal((rows, cols)) * scale


def init_model(
    input_dim: int,
    widths: Sequence[int],
    num_quad: int,
    quad_ranks: Sequence[int],
    num_conic: int,
    conic_dims: Sequence[int],
    passthrough: bool,
    activation: str,
    seed: int,
) -> SocIcnnParams:
    """Draw a feasible model deterministically from ``seed``.

    Unconstrained matrices use zero-mean entries scaled by 1/sqrt(fan-in);
    nonnegative weights use the absolute value of the same draw scaled by
    1/fan-in; branch weights start at 0.1 and biases at zero.  This keeps
    initial outputs O(1) and needs no projection to be feasible.
    """
    widths = [int(w) for w in widths]
    if input_dim < 1:
        raise DimensionError("input_dim must be >= 1")
    if not widths:
        raise DimensionError("widths must be non-empty")
    if any(w < 1 for w in widths):
        raise DimensionError("all layer widths must be >= 1")
    if len(quad_ranks) != num_quad:
        raise DimensionError("quad_ranks must have length num_quad")
    if len(conic_dims) != num_conic:
        raise DimensionError("conic_dims must have length num_conic")
    if any(r < 1 for r in quad_ranks) or any(k < 1 for k in conic_dims):
        raise DimensionError("branch ranks and dims must be >= 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")

    rng = spawn_rng(seed)
    layers = []
    for idx, width in enumerate(widths):
        if idx == 0:
            w_x = _matrix(rng, width, input_dim, 1.0 / np.sqrt(input_dim))
            w_z = None
        else:
            prev = widths[idx - 1]
            w_x = _matrix(rng, width, input_dim, 1.0 / np.sqrt(input_dim)) if passthrough else None
            w_z = np.abs(rng.standard_normal((width, prev))) / prev
        layers.append(LayerParams(w_x=w_x, w_z=w_z, b=np.zeros(width)))

    w_out = np.abs(rng.standard_normal(widths[-1])) / widths[-1]
    w_skip = rng.standard_normal(input_dim) / np.sqrt(input_dim)

    quad = tuple(
        QuadBranchParams(
            weight=0.1,
            proj=_matrix(rng, int(r), input_dim, 1.0 / np.sqrt(input_dim)),
            offset=np.zeros(int(r)),
        )
        for r in quad_ranks
    )
    conic = tuple(
        ConicBranchParams(
            weight=0.1,
            proj=_matrix(rng, int(k), input_dim, 1.0 / np.sqrt(input_dim)),
            offset=np.zeros(int(k)),
        )
        for k in conic_dims
    )
    return SocIcnnParams(
        input_dim=input_dim,
        layers=tuple(layers),
        w_out=w_out,
        w_skip=w_skip,
        b_out=0.0,
        quad=quad,
        conic=conic,
        passthrough=bool(passthrough),
        activation=activation,
    )


def project_feasible(params: SocIcnnParams) -> SocIcnnParams:
    """Clamp every sign-constrained entry to max(., 0); idempotent."""
    layers = tuple(
        layer if layer.w_z is None else replace(layer, w_z=np.maximum(layer.w_z, 0.0))
        for layer in params.layers
    )
    quad = tuple(replace(br, weight=max(float(br.weight), 0.0)) for br in params.quad)
    conic = tuple(replace(br, weight=max(float(br.weight), 0.0)) for br in params.conic)
    return replace(
        params,
        layers=layers,
        w_out=np.maximum(params.w_out, 0.0),
        quad=quad,
        conic=conic,
    )


def max_infeasibility(params: SocIcnnParams) -> float:
    """Largest violation of the sign constraints (0.0 when feasible)."""
    worst = 0.0
    for layer in params.layers:
        if layer.w_z is not None and layer.w_z.size:
            worst = max(worst, float(np.max(-layer.w_z)))
    if params.w_out.size:
        worst = max(worst, float(np.max(-params.w_out)))
    for br in params.quad:
        worst = max(worst, -float(br.weight))
    for br in params.conic:
        worst = max(worst, -float(br.weight))
    return max(worst, 0.0)


# ---------------------------------------------------------------------------
# forward evaluation


def _apply_activation(activation: str, pre: np.ndarray) -> np.ndarray:
    if activation == RELU:
        return np.maximum(pre, 0.0)
    return softplus(pre)


def forward(params: SocIcnnParams, x) -> ForwardTrace:
    """Evaluate the model at one input, recording every intermediate."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise DimensionError(f"expected input of shape ({params.input_dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")

    preacts = []
    acts = []
    z = None
    for layer in params.layers:
        pre = layer.b.copy()
        if layer.w_x is not None:
            pre = pre + layer.w_x @ x
        if layer.w_z is not None:
            pre = pre + layer.w_z @ z
        z = _apply_activation(params.activation, pre)
        preacts.append(pre)
        acts.append(z)

    backbone = float(params.w_out @ z) + float(params.w_skip @ x) + params.b_out

    quad_q, quad_s = [], []
    total = backbone
    for br in params.quad:
        q = br.proj @ x + br.offset
        s = half_sqnorm(q)
        quad_q.append(q)
        quad_s.append(s)
        total += br.weight * s
    conic_u, conic_t = [], []
    for br in params.conic:
        u = br.proj @ x + br.offset
        t = l2norm(u)
        conic_u.append(u)
        conic_t.append(t)
        total += br.weight * t

    return ForwardTrace(
        preacts=tuple(preacts),
        acts=tuple(acts),
        backbone_value=backbone,
        quad_q=tuple(quad_q),
        quad_s=tuple(quad_s),
        conic_u=tuple(conic_u),
        conic_t=tuple(conic_t),
        total=float(total),
    )


def batch_forward(params: SocIcnnParams, X: np.ndarray, with_cache: bool = False):
    """Vectorized forward over the rows of X.

    Returns totals of shape (n,), plus a cache of per-layer and per-branch
    intermediates when ``with_cache`` is set (used by the gradient engine).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionError(f"expected batch of shape (n, {params.input_dim}), got {X.shape}")
    n = X.shape[0]

    preacts = []
    acts = []
    Z = None
    for layer in params.layers:
        pre = np.broadcast_to(layer.b, (n, layer.width)).copy()
        if layer.w_x is not None:
            pre += X @ layer.w_x.T
        if layer.w_z is not None:
            pre += Z @ layer.w_z.T
        Z = _apply_activation(params.activation, pre)
        preacts.append(pre)
        acts.append(Z)

    backbone = Z @ params.w_out + X @ params.w_skip + params.b_out

    totals = backbone.copy()
    quad_q, quad_s = [], []
    for br in params.quad:
        Q = X @ br.proj.T + br.offset
        s = 0.5 * np.einsum("ij,ij->i", Q, Q)
        quad_q.append(Q)
        quad_s.append(s)
        totals += br.weight * s
    conic_u, conic_t = [], []
    for br in params.conic:
        U = X @ br.proj.T + br.offset
        t = np.sqrt(np.einsum("ij,ij->i", U, U))
        conic_u.append(U)
        conic_t.append(t)
        totals += br.weight * t

    if not with_cache:
        return totals
    cache = {
        "preacts": preacts,
        "acts": acts,
        "backbone": backbone,
        "quad_q": quad_q,
        "quad_s": quad_s,
        "conic_u": conic_u,
        "conic_t": conic_t,
    }
    return totals, cache


def forward_total_batch(params: SocIcnnParams, X: np.ndarray) -> np.ndarray:
    return batch_forward(params, X, with_cache=False)


# ---------------------------------------------------------------------------
# exact representation of the structured convex class


def from_structured_class(linear, constant, quad_matrix, norm_terms) -> SocIcnnParams:
    """Build a model that evaluates exactly to

        linear @ x + constant + 1/2 ||quad_matrix @ x||^2
            + sum_g weight_g * ||proj_g @ x + offset_g||

    The backbone is reduced to the affine readout (a single zero-weight
    hidden unit with zero readout), so the branches carry all curvature.
    ``quad_matrix`` may be None or have zero rows; ``norm_terms`` is a
    sequence of (weight, proj, offset) triples with weight >= 0.
    """
    a = np.asarray(linear, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise DimensionError("linear term must be a 1-d vector")
    d0 = a.shape[0]

    quad = ()
    if quad_matrix is not None:
        B = np.asarray(quad_matrix, dtype=np.float64)
        if B.size:
            if B.ndim != 2 or B.shape[1] != d0:
                raise DimensionError(f"quad_matrix must have {d0} columns")
            quad = (QuadBranchParams(weight=1.0, proj=B, offset=np.zeros(B.shape[0])),)

    conic = []
    for weight, proj, offset in norm_terms:
        weight = float(weight)
        if weight < 0:
            raise ConstraintError("norm-term weights must be nonnegative")
        proj = np.asarray(proj, dtype=np.float64)
        offset = np.asarray(offset, dtype=np.float64)
        if proj.ndim != 2 or proj.shape[1] != d0 or offset.shape != (proj.shape[0],):
            raise DimensionError("norm term shapes must be (k, d0) and (k,)")
        conic.append(ConicBranchParams(weight=weight, proj=proj, offset=offset))

    layers = (LayerParams(w_x=np.zeros((1, d0)), w_z=None, b=np.zeros(1)),)
    return SocIcnnParams(
        input_dim=d0,
        layers=layers,
        w_out=np.zeros(1),
        w_skip=a,
        b_out=float(constant),
        quad=quad,
        conic=tuple(conic),
        passthrough=True,
        activation=RELU,
    )


# ---------------------------------------------------------------------------
# accounting


def count_parameters(params: SocIcnnParams) -> int:
    total = 0
    for layer in params.layers:
        for arr in (layer.w_x, layer.w_z, layer.b):
            if arr is not None:
                total += arr.size
    total += params.w_out.size + params.w_skip.size + 1
    for br in params.quad:
        total += br.proj.size + br.offset.size + 1
    for br in params.conic:
        total += br.proj.size + br.offset.size + 1
    return total


def count_forward_flops(params: SocIcnnParams) -> int:
    """Floating operations of one forward evaluation.

    Convention: a matrix-vector product (m, n) costs m*(2n - 1), a dot
    product of length n costs 2n - 1, vector adds and activations cost one
    operation per entry, and sqrt counts as one operation.
    """

    def matvec(m, n):
        return m * (2 * n - 1)

    d0 = params.input_dim
    total = 0
    for idx, layer in enumerate(params.layers):
        w = layer.width
        if layer.w_z is not None:
            total += matvec(w, params.layers[idx - 1].width)
        if layer.w_x is not None:
            total += matvec(w, d0)
            if layer.w_z is not None:
                total += w  # add the two affine maps
        total += w  # bias
        total += w  # activation
    total += (2 * params.widths[-1] - 1) + (2 * d0 - 1) + 2  # readout
    for br in params.quad:
        r = br.rank
        total += matvec(r, d0) + r  # affine map and offset
        total += (2 * r - 1) + 1  # squared norm and the 1/2 factor
        total += 2  # branch weight and accumulation
    for br in params.conic:
        k = br.dim
        total += matvec(k, d0) + k
        total += (2 * k - 1) + 1  # squared norm and sqrt
        total += 2
    return total


# ---------------------------------------------------------------------------
# serialization (versioned JSON, value-exact round trip)


def to_json_dict(params: SocIcnnParams) -> dict:
    layers = []
    for layer in params.layers:
        entry = {"b": layer.b.tolist()}
        if layer.w_x is not None:
            entry["W"] = layer.w_x.tolist()
        if layer.w_z is not None:
            entry["U"] = layer.w_z.tolist()
        layers.append(entry)
    return {
        "version": 1,
        "d0": params.input_dim,
        "passthrough": params.passthrough,
        "activation": params.activation,
        "layers": layers,
        "c": params.w_out.tolist(),
        "v": params.w_skip.tolist(),
        "b0": float(params.b_out),
        "quad": [
            {"alpha": float(br.weight), "B": br.proj.tolist(), "e": br.offset.tolist()}
            for br in params.quad
        ],
        "conic": [
            {"lambda": float(br.weight), "A": br.proj.tolist(), "d": br.offset.tolist()}
            for br in params.conic
        ],
    }


def from_json_dict(doc: dict) -> SocIcnnParams:
    if doc.get("version") != 1:
        raise ValueError(f"unsupported model document version: {doc.get('version')!r}")
    layers = []
    for entry in doc["layers"]:
        w_x = np.asarray(entry["W"], dtype=np.float64) if "W" in entry else None
        w_z = np.asarray(entry["U"], dtype=np.float64) if "U" in entry else None
        layers.append(LayerParams(w_x=w_x, w_z=w_z, b=np.asarray(entry["b"], dtype=np.float64)))
    quad = tuple(
        QuadBranchParams(
            weight=float(e["alpha"]),
            proj=np.asarray(e["B"], dtype=np.float64),
            offset=np.asarray(e["e"], dtype=np.float64),
        )
        for e in doc["quad"]
    )
    conic = tuple(
        ConicBranchParams(
            weight=float(e["lambda"]),
            proj=np.asarray(e["A"], dtype=np.float64),
            offset=np.asarray(e["d"], dtype=np.float64),
        )
        for e in doc["conic"]
    )
    return SocIcnnParams(
        input_dim=int(doc["d0"]),
        layers=tuple(layers),
        w_out=np.asarray(doc["c"], dtype=np.float64),
        w_skip=np.asarray(doc["v"], dtype=np.float64),
        b_out=float(doc["b0"]),
        quad=quad,
        conic=conic,
        passthrough=bool(doc["passthrough"]),
        activation=str(doc["activation"]),
    )


def save_model(params: SocIcnnParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(params), fh)
        fh.write("\n")


def load_model(path) -> SocIcnnParams:
    with open(path) as fh:
        return from_json_dict(json.load(fh))
