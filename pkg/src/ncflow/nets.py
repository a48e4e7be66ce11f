"""Bias-free feed-forward homogeneous networks and their exact layerwise gradients.

A network of depth ``L`` maps an input ``x`` to the scalar

    H(x; W_1, ..., W_L) = W_L s(W_{L-1} ... s(W_1 x) ...),

where the activation ``s(x) = max(x, alpha*x)**p`` is applied coordinate-wise.
The whole map is positively homogeneous of order ``p**(L-1) + ... + p + 1`` in
the stacked weight vector, which drives every scaling law used elsewhere in
the package.

Gradients are computed from the forward traces: with ``e_i^L = c_i`` and
``e_i^l = A_i^l W_{l+1}^T e_i^{l+1}`` (``A_i^l`` the diagonal of the
activation derivative at the layer-l pre-activation), the layer-l gradient of
``sum_i c_i H(x_i; w)`` is ``sum_i e_i^l (phi_i^{l-1})^T``.  The reduction
over examples is done as a single matrix product; it is deterministic from
run to run on a fixed build.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Dimension mismatch; the message names the offending layer."""


def activation(x, alpha: float, p: int):
    """max(x, alpha*x)**p, evaluated literally (the larger branch is active)."""
    x = np.asarray(x, dtype=float)
    b = np.maximum(x, alpha * x)
    out = b ** p
    return float(out) if out.ndim == 0 else out


def activation_derivative(x, alpha: float, p: int):
    """Derivative of the activation with a fixed subgradient selection.

    On the open branches this is ``p * branch**(p-1) * branch_slope``.  At the
    p=1 kink (x = 0) the selected value is ``alpha``; for p >= 2 the derivative
    is 0 there and the function is C^1.
    """
    x = np.asarray(x, dtype=float)
    b = np.maximum(x, alpha * x)
    slope = np.where(x > alpha * x, 1.0, alpha)
    out = p * b ** (p - 1) * slope
    return float(out) if out.ndim == 0 else out


def iterated_activation(x, alpha: float, p: int, times: int):
    """Activation composed with itself `times` times; times=0 is the identity."""
    if times < 0:
        raise ValueError("times must be >= 0")
    out = np.asarray(x, dtype=float)
    for _ in range(times):
        out = np.maximum(out, alpha * out) ** p
    return float(out) if out.ndim == 0 else out


def iterated_activation_derivative(x, alpha: float, p: int, times: int):
    """Chain-rule derivative of the `times`-fold composition."""
    if times < 0:
        raise ValueError("times must be >= 0")
    cur = np.asarray(x, dtype=float)
    out = np.ones_like(cur)
    for _ in range(times):
        out = out * activation_derivative(cur, alpha, p)
        cur = np.maximum(cur, alpha * cur) ** p
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NetSpec:
    """Architecture descriptor: layer widths (k_0, ..., k_L) and activation (alpha, p).

    k_0 is the input dimension and the output width k_L must be 1.
    """

    widths: tuple[int, ...]
    alpha: float = 0.0
    p: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(k) for k in self.widths))
        if len(self.widths) < 3:
            raise ValueError("need depth >= 2, i.e. at least (k_0, k_1, 1)")
        if self.widths[-1] != 1:
            raise ValueError("output width k_L must be 1")
        if any(k < 1 for k in self.widths):
            raise ValueError("all widths must be >= 1")
        if self.p < 1:
            raise ValueError("activation power p must be >= 1")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(self.widths[l], self.widths[l - 1]) for l in range(1, len(self.widths))]

    @property
    def num_params(self) -> int:
        return sum(r * c for r, c in self.layer_shapes())


def homogeneity_order(spec: NetSpec) -> int:
    """Order of positive homogeneity in the stacked weights: sum of p**l, l < depth."""
    return sum(spec.p ** l for l in range(spec.depth))


@dataclass(frozen=True)
class Weights:
    """Per-layer matrices with a canonical flat view (layer-major, row-major)."""

    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "layers", tuple(np.asarray(W, dtype=float) for W in self.layers)
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.layers])

    @classmethod
    def from_flat(cls, spec: NetSpec, v: np.ndarray) -> "Weights":
        v = np.asarray(v, dtype=float)
        if v.shape != (spec.num_params,):
            raise ShapeError(
                f"flat vector has length {v.shape}, spec needs ({spec.num_params},)"
            )
        layers = []
        pos = 0
        for r, c in spec.layer_shapes():
            layers.append(v[pos : pos + r * c].reshape(r, c))
            pos += r * c
        return cls(tuple(layers))

    @classmethod
    def zeros(cls, spec: NetSpec) -> "Weights":
        return cls(tuple(np.zeros(s) for s in spec.layer_shapes()))

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(W * W)) for W in self.layers)))

    def scaled(self, c: float) -> "Weights":
        return Weights(tuple(c * W for W in self.layers))

    def check_against(self, spec: NetSpec) -> None:
        shapes = spec.layer_shapes()
        if len(self.layers) != len(shapes):
            raise ShapeError(
                f"got {len(self.layers)} layers, spec has {len(shapes)}"
            )
        for l, (W, s) in enumerate(zip(self.layers, shapes), start=1):
            if W.shape != s:
                raise ShapeError(f"layer {l}: weight shape {W.shape}, expected {s}")


@dataclass(frozen=True)
class Dataset:
    """Inputs as columns of X (d x n) with one scalar target per column."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise ShapeError("X must be 2-d (d, n) and y 1-d (n,)")
        if self.X.shape[1] != self.y.shape[0]:
            raise ShapeError(
                f"X has {self.X.shape[1]} columns but y has {self.y.shape[0]} entries"
            )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer records from one forward pass.

    pre[l-1] is the layer-l pre-activation h^l, post[l] the post-activation
    phi^l (post[0] is the input), active[l-1] the diagonal of the activation
    derivative at h^l.  Hidden layers only; the linear output is `output`.
    """

    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]
    active: tuple[np.ndarray, ...]
    output: float


def forward(spec: NetSpec, weights: Weights, x: np.ndarray) -> tuple[float, ForwardTrace]:
    """Evaluate the network on one input and record the full trace."""
    weights.check_against(spec)
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.input_dim,):
        raise ShapeError(f"layer 1: input shape {x.shape}, expected ({spec.input_dim},)")
    pre, post, active = [], [x], []
    phi = x
    for l, W in enumerate(weights.layers, start=1):
        h = W @ phi
        if l < spec.depth:
            pre.append(h)
            active.append(activation_derivative(h, spec.alpha, spec.p))
            phi = activation(h, spec.alpha, spec.p)
            post.append(phi)
        else:
            out = float(h[0])
    return out, ForwardTrace(tuple(pre), tuple(post), tuple(active), out)


def _forward_batch(spec: NetSpec, weights: Weights, X: np.ndarray):
    """Forward pass over all columns of X; returns outputs, post- and derivative traces."""
    phis = [X]
    acts = []
    phi = X
    for l, W in enumerate(weights.layers, start=1):
        h = W @ phi
        if l < spec.depth:
            acts.append(activation_derivative(h, spec.alpha, spec.p))
            phi = activation(h, spec.alpha, spec.p)
            phis.append(phi)
        else:
            out = h[0]
    return out, phis, acts


def outputs(spec: NetSpec, weights: Weights, X: np.ndarray) -> np.ndarray:
    """Vector of network outputs H(x_i; w) over the columns of X."""
    weights.check_against(spec)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != spec.input_dim:
        raise ShapeError(f"layer 1: input shape {X.shape}, expected ({spec.input_dim}, n)")
    out, _, _ = _forward_batch(spec, weights, X)
    return out


def gradient(spec: NetSpec, weights: Weights, data: Dataset, coeffs: np.ndarray) -> Weights:
    """Layerwise gradient of sum_i coeffs_i * H(x_i; w).

    Uses the selected activation derivative, so at p=1 kinks this is one fixed
    element of the generalized gradient.
    """
    weights.check_against(spec)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (data.n,):
        raise ShapeError(f"coeffs has shape {coeffs.shape}, expected ({data.n},)")
    if data.d != spec.input_dim:
        raise ShapeError(f"layer 1: data dim {data.d}, spec input dim {spec.input_dim}")
    _, phis, acts = _forward_batch(spec, weights, data.X)
    L = spec.depth
    grads: list[np.ndarray | None] = [None] * L
    e = coeffs[None, :]
    grads[L - 1] = e @ phis[L - 1].T
    for l in range(L - 1, 0, -1):
        e = acts[l - 1] * (weights.layers[l].T @ e)
        grads[l - 1] = e @ phis[l - 1].T
    return Weights(tuple(grads))  # type: ignore[arg-type]
