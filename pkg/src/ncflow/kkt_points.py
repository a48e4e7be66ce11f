"""Construction and verification of rank-one KKT points of the constrained NCF.

For a feed-forward net with activation max(x, alpha*x)**p, stationary points
of z^T H(X; W) on the unit Frobenius sphere that have rank-one hidden layers
W_l = a_l b_l^T (with ||a_l|| = ||b_l||) are completely characterized by

  * layer norms:   ||a_l||^4 = p^(L-l) / p_hat,  ||w_bar||^2 = 1 / p_hat,
    where p_hat = p^(L-1) + ... + p + 1;
  * alignment:     b_l is a_{l-1} / p^(1/4) up to a sign (absolute values for
    even p when alpha = 1), and w_bar is a_{L-1} / (p * p_hat)^(1/4) up to a
    sign;
  * identical non-zero entries of each a_l when p >= 2, and non-negative
    a_l, b_{l>=2} when alpha != 1;
  * b_1 solving the small sphere-constrained problem
    max sum_i y_i s^(L-1)(x_i^T u)  s.t.  ||u||^2 = radius_sq,
    with s^(L-1) the (L-1)-fold composition of the activation.

Everything here builds such points from a small-problem solution and checks
each condition numerically, including the diagonal balance between
consecutive layers that any stationary point must satisfy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .flow import sphere_ascent
from .metrics import factor_rank_one
from .ncf import NcfProblem, kkt_report
from .nets import (
    Dataset,
    NetSpec,
    Weights,
    iterated_activation,
    iterated_activation_derivative,
)


def p_hat_value(L: int, p: int) -> int:
    return sum(p ** i for i in range(L))


def small_problem_radius(L: int, p: int) -> float:
    """Squared-norm constraint of the reduced problem on b_1."""
    if L < 2 or p < 1:
        raise ValueError("need L >= 2 and p >= 1")
    if p == 1:
        return 1.0 / math.sqrt(L)
    return math.sqrt(p ** (L - 1) / p_hat_value(L, p))


@dataclass(frozen=True)
class SmallProblem:
    """max sum_i y_i s^(L-1)(x_i^T u) on the sphere ||u||^2 = radius_sq."""

    data: Dataset
    alpha: float
    p: int
    L: int
    radius_sq: float = 0.0

    def __post_init__(self):
        if self.radius_sq == 0.0:
            object.__setattr__(self, "radius_sq", small_problem_radius(self.L, self.p))
        if self.radius_sq <= 0:
            raise ValueError("radius_sq must be positive")


def small_objective(sp: SmallProblem, u: np.ndarray) -> float:
    t = sp.data.X.T @ u
    return float(sp.data.y @ iterated_activation(t, sp.alpha, sp.p, sp.L - 1))


def small_objective_gradient(sp: SmallProblem, u: np.ndarray) -> np.ndarray:
    t = sp.data.X.T @ u
    d = iterated_activation_derivative(t, sp.alpha, sp.p, sp.L - 1)
    return sp.data.X @ (sp.data.y * d)


@dataclass(frozen=True)
class SphereReport:
    """First-order diagnostics of the small problem on its sphere."""

    value: float
    lambda_estimate: float
    residual: float
    alignment: float


def small_problem_report(sp: SmallProblem, u: np.ndarray) -> SphereReport:
    g = small_objective_gradient(sp, u)
    r2 = float(u @ u)
    lam = float(u @ g) / r2
    resid = float(np.linalg.norm(g - lam * u))
    gn = float(np.linalg.norm(g))
    align = float(u @ g) / (math.sqrt(r2) * gn) if gn > 0 else 1.0
    return SphereReport(small_objective(sp, u), lam, resid, align)


def _pattern_fixed_point(sp: SmallProblem, u0: np.ndarray, radius: float):
    """Fixed point of u -> radius * grad G(u) / ||grad G(u)|| for piecewise-linear G.

    A strict fixed point pins the sign pattern of the x_i^T u, making the point
    an exactly differentiable KKT point with positive value.  Runs the plain
    jump map first, then damped variants that settle oscillating orbits.
    """
    for beta in (1.0, 0.5, 0.25, 0.1):
        u = np.array(u0)
        for _ in range(400):
            c = small_objective_gradient(sp, u)
            cn = float(np.linalg.norm(c))
            if cn == 0.0:
                return None
            target = (radius / cn) * c
            if beta < 1.0:
                w = (1.0 - beta) * u + beta * target
                target = (radius / float(np.linalg.norm(w))) * w
            if np.linalg.norm(target - u) <= 1e-14 * radius:
                # exact jump: machine-exact stationarity if the pattern is stable
                c2 = small_objective_gradient(sp, target)
                jump = (radius / float(np.linalg.norm(c2))) * c2
                if np.linalg.norm(jump - target) <= 1e-13 * radius:
                    return jump
                break
            u = target
    return None


def solve_small_problem(
    sp: SmallProblem,
    seed: int,
    step: float = 0.02,
    max_iter: int = 200_000,
    tol: float = 1e-11,
    retries: int = 60,
) -> tuple[np.ndarray, SphereReport]:
    """Find a positive-value first-order point of the reduced problem.

    Smooth activations (p >= 2) use backtracked sphere-projected ascent;
    p = 1 uses the sign-pattern fixed-point iteration, which either lands on
    an exactly differentiable stationary point or moves to the next start.
    Starts are derived deterministically from the seed; raises after the
    retry cap (mixed-sign weightings can make differentiable positive-value
    points rare for p = 1; weightings of one sign always admit them).
    """
    radius = math.sqrt(sp.radius_sq)

    def value_grad(u):
        return small_objective(sp, u), small_objective_gradient(sp, u)

    for attempt in range(retries):
        rng = np.random.default_rng([seed, attempt])
        u0 = rng.standard_normal(sp.data.d)
        u0 *= radius / np.linalg.norm(u0)
        if small_objective(sp, u0) <= 0.0:
            continue
        if sp.p == 1:
            u = _pattern_fixed_point(sp, u0, radius)
            if u is None:
                continue
        else:
            g0n = float(np.linalg.norm(small_objective_gradient(sp, u0)))
            eta = step * radius / g0n if g0n > 0 else step
            u, _, ok = sphere_ascent(
                value_grad,
                u0,
                eta,
                max_iter,
                radius=radius,
                tol_residual=tol,
                check_every=20,
                backtrack=True,
            )
            if not ok:
                continue
        report = small_problem_report(sp, u)
        if report.value > 0.0 and report.residual <= max(tol, 1e-9):
            return u, report
    raise RuntimeError("no positive-value KKT point found within the retry cap")


@dataclass(frozen=True)
class RankOneKKT:
    """Factors of a rank-one stationary point: hidden W_l = a_l b_l^T, output w_bar^T."""

    a: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    w_bar: np.ndarray
    q: tuple[int, ...]
    p_hat: int
    alpha: float
    p: int

    def to_dict(self) -> dict:
        return {
            "a": [list(map(float, v)) for v in self.a],
            "b": [list(map(float, v)) for v in self.b],
            "w_bar": list(map(float, self.w_bar)),
            "q": list(self.q),
            "p_hat": self.p_hat,
            "alpha": self.alpha,
            "p": self.p,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RankOneKKT":
        return cls(
            a=tuple(np.asarray(v, dtype=float) for v in d["a"]),
            b=tuple(np.asarray(v, dtype=float) for v in d["b"]),
            w_bar=np.asarray(d["w_bar"], dtype=float),
            q=tuple(int(s) for s in d["q"]),
            p_hat=int(d["p_hat"]),
            alpha=float(d["alpha"]),
            p=int(d["p"]),
        )


def construct_rank_one(
    spec: NetSpec,
    b1: np.ndarray,
    q: tuple[int, ...] | None = None,
    a_supports: list[list[int]] | None = None,
) -> RankOneKKT:
    """Build the factor lists from a small-problem point b1.

    q holds the L-1 free signs (one per layer 2..L); for alpha != 1 the
    interior signs must stay +1 so that the b_l remain non-negative.
    a_supports selects the non-zero coordinates of each a_l; the default is
    every coordinate for p = 1 and coordinate 0 for p >= 2 (identical entries
    are required in the latter case, and the minimal support is the simplest
    witness).
    """
    L, p, alpha = spec.depth, spec.p, spec.alpha
    ph = p_hat_value(L, p)
    b1 = np.asarray(b1, dtype=float)
    if b1.shape != (spec.input_dim,):
        raise ValueError(f"b1 has shape {b1.shape}, expected ({spec.input_dim},)")
    r_sq = small_problem_radius(L, p)
    if abs(float(b1 @ b1) - r_sq) > 1e-10:
        raise ValueError(
            f"||b1||^2 = {float(b1 @ b1):.12g} does not match the required {r_sq:.12g}"
        )

    if q is None:
        q = tuple([1] * (L - 1))
    q = tuple(int(s) for s in q)
    if len(q) != L - 1 or any(s not in (-1, 1) for s in q):
        raise ValueError(f"q must hold {L - 1} signs in {{-1, +1}}")
    if alpha != 1.0 and any(s == -1 for s in q[:-1]):
        raise ValueError("for alpha != 1 the interior signs must be +1 (b_l >= 0)")

    hidden_widths = spec.widths[1:-1]  # k_1 .. k_{L-1}
    if a_supports is None:
        if p == 1:
            a_supports = [list(range(k)) for k in hidden_widths]
        else:
            a_supports = [[0] for _ in hidden_widths]
    if len(a_supports) != L - 1:
        raise ValueError(f"a_supports must list {L - 1} supports")

    a = []
    for l, (k, support) in enumerate(zip(hidden_widths, a_supports), start=1):
        support = sorted(set(int(i) for i in support))
        if not support or support[0] < 0 or support[-1] >= k:
            raise ValueError(f"layer {l}: support must be non-empty indices below {k}")
        a_norm = (p ** (L - l) / ph) ** 0.25
        vec = np.zeros(k)
        vec[support] = a_norm / math.sqrt(len(support))
        a.append(vec)

    b = [b1]
    for l in range(2, L):
        b.append(q[l - 2] * a[l - 2] / p ** 0.25)
    w_bar = q[L - 2] * a[L - 2] / (p * ph) ** 0.25

    return RankOneKKT(tuple(a), tuple(b), w_bar, q, ph, alpha, p)


def assemble_weights(kkt: RankOneKKT) -> Weights:
    layers = [np.outer(av, bv) for av, bv in zip(kkt.a, kkt.b)]
    layers.append(kkt.w_bar[None, :])
    return Weights(tuple(layers))


def factor_hidden_layers(weights: Weights):
    """Balanced, sign-canonicalized rank-one factors of every hidden layer."""
    a, b = [], []
    for W in weights.layers[:-1]:
        av, bv = factor_rank_one(W)
        a.append(av)
        b.append(bv)
    return a, b, weights.layers[-1][0].copy()


def check_balance(weights: Weights, power: int, linear: bool = False) -> np.ndarray:
    """Per-layer balance deviation between consecutive layers.

    Measures ||diag(W_l W_l^T) - power * diag(W_{l+1}^T W_{l+1})||_inf, or the
    full-matrix gap ||W_l W_l^T - W_{l+1}^T W_{l+1}||_max when linear=True
    (identity activation).
    """
    devs = []
    for Wl, Wn in zip(weights.layers[:-1], weights.layers[1:]):
        if linear:
            devs.append(float(np.max(np.abs(Wl @ Wl.T - Wn.T @ Wn))))
        else:
            left = np.sum(Wl * Wl, axis=1)
            right = power * np.sum(Wn * Wn, axis=0)
            devs.append(float(np.max(np.abs(left - right))))
    return np.array(devs)


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    deviation: float
    tolerance: float
    passed: bool


@dataclass(frozen=True)
class Verdict:
    checks: tuple[ConditionCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "checks": [
                {
                    "name": c.name,
                    "deviation": c.deviation,
                    "tolerance": c.tolerance,
                    "passed": c.passed,
                }
                for c in self.checks
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def verify_theorem_conditions(
    kkt: RankOneKKT,
    prob: NcfProblem,
    tol_norm: float = 1e-10,
    tol_align: float = 1e-10,
    tol_identical: float = 1e-10,
    tol_nonneg: float = 1e-12,
    tol_sphere: float = 1e-12,
    tol_balance: float = 1e-12,
    tol_small: float = 1e-8,
    tol_full: float = 1e-8,
) -> Verdict:
    """Itemized numerical check of every rank-one KKT condition.

    The verdict covers factor-norm balance, the layer-norm values, sign-aware
    alignment between consecutive factors, identical entries (p >= 2),
    non-negativity (alpha != 1), the unit Frobenius sphere, the interlayer
    balance, and the first-order residuals of both the reduced problem at b_1
    and the full problem at the assembled weights.
    """
    spec = prob.spec
    L, p, alpha, ph = spec.depth, kkt.p, kkt.alpha, kkt.p_hat
    checks = []

    dev = max(
        abs(float(np.linalg.norm(av)) - float(np.linalg.norm(bv)))
        for av, bv in zip(kkt.a, kkt.b)
    )
    checks.append(ConditionCheck("factor_norm_balance", dev, tol_norm, dev <= tol_norm))

    dev = max(
        abs(float(np.linalg.norm(av)) ** 4 - p ** (L - l) / ph)
        for l, av in enumerate(kkt.a, start=1)
    )
    dev = max(dev, abs(float(kkt.w_bar @ kkt.w_bar) - 1.0 / ph))
    checks.append(ConditionCheck("layer_norms", dev, tol_norm, dev <= tol_norm))

    use_abs = alpha == 1.0 and p % 2 == 0
    dev = 0.0
    for l in range(2, L):
        ref = np.abs(kkt.a[l - 2]) if use_abs else kkt.a[l - 2]
        dev = max(dev, float(np.max(np.abs(kkt.b[l - 1] - kkt.q[l - 2] * ref / p ** 0.25))))
    ref = np.abs(kkt.a[L - 2]) if use_abs else kkt.a[L - 2]
    dev = max(dev, float(np.max(np.abs(kkt.w_bar - kkt.q[L - 2] * ref / (p * ph) ** 0.25))))
    checks.append(ConditionCheck("alignment", dev, tol_align, dev <= tol_align))

    dev = 0.0
    if p >= 2:
        for av in kkt.a:
            mags = np.abs(av)
            top = float(mags.max())
            support = mags > 1e-12 * top
            spread = float(mags[support].max() - mags[support].min())
            dev = max(dev, spread / top)
    checks.append(ConditionCheck("identical_entries", dev, tol_identical, dev <= tol_identical))

    dev = 0.0
    if alpha != 1.0:
        worst = min(
            min(float(av.min()) for av in kkt.a),
            min((float(bv.min()) for bv in kkt.b[1:]), default=0.0),
        )
        dev = max(0.0, -worst)
    checks.append(ConditionCheck("nonnegative_factors", dev, tol_nonneg, dev <= tol_nonneg))

    assembled = assemble_weights(kkt)
    dev = abs(sum(float(np.sum(W * W)) for W in assembled.layers) - 1.0)
    checks.append(ConditionCheck("frobenius_sphere", dev, tol_sphere, dev <= tol_sphere))

    dev = float(check_balance(assembled, p, linear=(alpha == 1.0 and p == 1)).max())
    checks.append(ConditionCheck("balance", dev, tol_balance, dev <= tol_balance))

    # the reduced problem weights the inputs by the NCF vector z
    sp = SmallProblem(Dataset(prob.data.X, prob.z), alpha, p, L)
    dev = small_problem_report(sp, kkt.b[0]).residual
    checks.append(ConditionCheck("small_problem_kkt", dev, tol_small, dev <= tol_small))

    dev = kkt_report(prob, assembled).residual
    checks.append(ConditionCheck("full_problem_kkt", dev, tol_full, dev <= tol_full))

    return Verdict(tuple(checks))
