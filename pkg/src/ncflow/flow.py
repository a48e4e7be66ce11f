"""Continuous- and discrete-time dynamics.

Covers classical RK4 integration of the training gradient flow
w' = -grad L(w) from w(0) = delta * w0 and of the correlation ascent flow
u' = grad N(u), finite-time blow-up detection with a growth-rate fit,
the delta-rescaling s(t) = w(t / delta^(M-2)) / delta that collapses
small-initialization training onto the ascent flow, plain gradient descent,
and projected gradient ascent on the sphere together with its adaptive-step
equivalent.

Ascent flows of an M-homogeneous objective with M > 2 can escape to infinity
in finite time; the integrator caps the norm, optionally shrinks its step
geometrically as the escape is approached (keeping the per-step relative
growth bounded), and estimates the escape time T* from the last norm-doubling
times.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .losses import LossKind, loss_prime
from .nets import Dataset, NetSpec, Weights, gradient, homogeneity_order, outputs

# relative norm growth allowed per step once step shrinking is active
_GROWTH_PER_STEP = 0.05
_MAX_HALVINGS = 200
_ZERO_SNAPSHOTS_TO_STOP = 100


@dataclass(frozen=True)
class Termination:
    kind: str  # "horizon" | "blowup" | "zero"
    t_star: float | None = None

    @classmethod
    def horizon(cls) -> "Termination":
        return cls("horizon")

    @classmethod
    def blowup(cls, t_star: float) -> "Termination":
        return cls("blowup", t_star)

    @classmethod
    def zero(cls) -> "Termination":
        return cls("zero")


@dataclass
class Trajectory:
    """Time-stamped snapshots of a flat state vector."""

    times: np.ndarray
    states: np.ndarray  # (num_snapshots, k)
    terminated_by: Termination
    scale_factors: np.ndarray | None = None  # per-step projection factors (ascent only)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.times.shape != (self.states.shape[0],):
            raise ValueError("times and states must have matching snapshot counts")

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class IntegratorConfig:
    step: float
    horizon: float
    snapshot_stride: int = 1
    blowup_norm_cap: float = 1e8
    zero_floor: float = 1e-12
    step_shrink_near_blowup: bool = True

    def __post_init__(self):
        if self.step <= 0 or self.horizon <= 0 or self.snapshot_stride < 1:
            raise ValueError("step, horizon and snapshot_stride must be positive")
        if self.blowup_norm_cap <= 0 or self.zero_floor <= 0:
            raise ValueError("blowup_norm_cap and zero_floor must be positive")


@dataclass(frozen=True)
class BlowupReport:
    """Log-log fit of the norm against the estimated time to escape."""

    T_star_estimate: float
    fitted_exponent: float
    kappa_rate: float
    r_squared: float


def _rk4_step(f, v: np.ndarray, h: float) -> np.ndarray:
    k1 = f(v)
    k2 = f(v + 0.5 * h * k1)
    k3 = f(v + 0.5 * h * k2)
    k4 = f(v + h * k3)
    return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(f, v0: np.ndarray, cfg: IntegratorConfig) -> Trajectory:
    v = np.array(v0, dtype=float)
    t = 0.0
    times = [0.0]
    states = [v.copy()]
    zero_run = 0
    term: Termination | None = None
    steps = 0

    while t < cfg.horizon - 1e-15:
        h = min(cfg.step, cfg.horizon - t)
        if cfg.step_shrink_near_blowup:
            gn = float(np.linalg.norm(f(v)))
            vn = float(np.linalg.norm(v))
            if gn > 0.0 and vn > 0.0:
                h = min(h, _GROWTH_PER_STEP * vn / gn)
        nxt = None
        for _ in range(_MAX_HALVINGS):
            cand = _rk4_step(f, v, h)
            if np.all(np.isfinite(cand)):
                nxt = cand
                break
            h *= 0.5
        if nxt is None:
            # state explodes under arbitrarily small steps: record the escape
            term = Termination.blowup(_estimate_blowup_time(times, states))
            break
        v = nxt
        t += h
        steps += 1
        vn = float(np.linalg.norm(v))
        snapped = steps % cfg.snapshot_stride == 0 or vn > cfg.blowup_norm_cap
        if snapped:
            times.append(t)
            states.append(v.copy())
        if vn > cfg.blowup_norm_cap:
            term = Termination.blowup(_estimate_blowup_time(times, states))
            break
        if snapped:
            # declare convergence to zero only after a long run of tiny snapshots
            if vn < cfg.zero_floor:
                zero_run += 1
                if zero_run >= _ZERO_SNAPSHOTS_TO_STOP:
                    term = Termination.zero()
                    break
            else:
                zero_run = 0

    if term is None:
        term = Termination.horizon()
        if times[-1] != t and t > 0.0:
            times.append(t)
            states.append(v.copy())
    return Trajectory(np.array(times), np.array(states), term)


def _estimate_blowup_time(times, states) -> float:
    """Escape-time estimate from geometric extrapolation of norm-doubling times.

    Doubling times of a norm growing like (T*-t)^(-1/m) form a geometric
    sequence converging to T*; three of them pin down the limit.  Falls back
    to the last recorded time when fewer than three doublings are available.
    """
    times = np.asarray(times, dtype=float)
    norms = np.linalg.norm(np.asarray(states, dtype=float), axis=1)
    crossings = _doubling_times(times, norms)
    if len(crossings) < 3:
        return float(times[-1])
    t1, t2, t3 = crossings[-3], crossings[-2], crossings[-1]
    d1, d2 = t2 - t1, t3 - t2
    if d1 <= 0 or d2 <= 0 or d2 >= d1:
        return float(times[-1])
    r = d2 / d1
    return float(t3 + d2 * r / (1.0 - r))


def _doubling_times(times: np.ndarray, norms: np.ndarray) -> list[float]:
    base = 10.0 * norms[0]
    if base <= 0:
        return []
    mask = norms > 0
    times = times[mask]
    norms = norms[mask]
    levels = np.log2(norms / base)
    crossings = []
    k = 0
    for i in range(1, len(levels)):
        while levels[i] >= k and levels[i - 1] < k:
            lo, hi = levels[i - 1], levels[i]
            frac = (k - lo) / (hi - lo)
            crossings.append(float(times[i - 1] + frac * (times[i] - times[i - 1])))
            k += 1
    return crossings


def integrate_training_flow(
    spec: NetSpec,
    w0: Weights,
    delta: float,
    data: Dataset,
    kind: LossKind,
    cfg: IntegratorConfig,
) -> Trajectory:
    """RK4 trajectory of w' = -sum_i l'(H(x_i; w), y_i) grad H(x_i; w), w(0) = delta*w0."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    v0 = w0.flat()
    if abs(np.linalg.norm(v0) - 1.0) > 1e-12:
        raise ValueError("w0 must have unit norm")

    def f(v: np.ndarray) -> np.ndarray:
        w = Weights.from_flat(spec, v)
        coeffs = -loss_prime(kind, outputs(spec, w, data.X), data.y)
        return gradient(spec, w, data, coeffs).flat()

    return _integrate(f, delta * v0, cfg)


def integrate_ncf_flow(
    spec: NetSpec,
    u0: Weights,
    z: np.ndarray,
    data: Dataset,
    cfg: IntegratorConfig,
) -> Trajectory:
    """RK4 trajectory of the correlation ascent flow u' = grad N_z(u)."""
    z = np.asarray(z, dtype=float)

    def f(v: np.ndarray) -> np.ndarray:
        return gradient(spec, Weights.from_flat(spec, v), data, z).flat()

    return _integrate(f, u0.flat(), cfg)


def fit_blowup_rate(traj: Trajectory, L_order: int) -> BlowupReport:
    """Least-squares fit of log ||u|| against -log(T* - t) near the escape.

    Only samples with norm above 10x the initial norm enter the fit; the
    fitted exponent approaches 1/(L_order - 2) for an L_order-homogeneous
    ascent flow.
    """
    if traj.terminated_by.kind != "blowup":
        raise ValueError("trajectory did not terminate by blow-up")
    if L_order < 3:
        raise ValueError("need homogeneity order >= 3 for a finite-time escape rate")
    norms = traj.norms()
    t_star = _estimate_blowup_time(traj.times, traj.states)
    mask = (norms >= 10.0 * norms[0]) & (traj.times < t_star)
    if int(mask.sum()) < 8:
        raise ValueError(f"only {int(mask.sum())} samples beyond 10x initial norm; need >= 8")
    tau = t_star - traj.times[mask]
    x = np.log(tau)
    yv = np.log(norms[mask])
    slope, intercept = np.polyfit(x, yv, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((yv - fit) ** 2))
    ss_tot = float(np.sum((yv - np.mean(yv)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return BlowupReport(
        T_star_estimate=float(t_star),
        fitted_exponent=float(-slope),
        kappa_rate=float(np.exp(intercept)),
        r_squared=r2,
    )


def rescale_trajectory(traj: Trajectory, delta: float, L_order: int) -> Trajectory:
    """Map a training trajectory w(.) at scale delta to s(t) = w(t/delta^(M-2))/delta.

    s(0) equals the unit initial direction, and for small delta the rescaled
    path shadows the correlation ascent flow started from the same direction.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    factor = delta ** (L_order - 2)
    term = traj.terminated_by
    if term.t_star is not None:
        term = Termination(term.kind, term.t_star * factor)
    return Trajectory(traj.times * factor, traj.states / delta, term)


def xi_residual(spec: NetSpec, w: Weights, data: Dataset, kind: LossKind) -> np.ndarray:
    """Coupling residual l'(H(X; w), y) - l'(0, y); the term that vanishes as the
    weights shrink and decouples training from the correlation ascent flow."""
    yhat = outputs(spec, w, data.X)
    return loss_prime(kind, yhat, data.y) - loss_prime(kind, np.zeros(data.n), data.y)


def gradient_descent(
    spec: NetSpec,
    w0: Weights,
    delta: float,
    step: float,
    iters: int,
    data: Dataset,
    kind: LossKind,
    snapshot_stride: int = 1,
) -> Trajectory:
    """Explicit Euler on -grad L from delta * w0; times are iteration * step."""
    if step <= 0:
        raise ValueError("step must be positive")
    if delta <= 0:
        raise ValueError("delta must be positive")
    v = delta * w0.flat()
    times = [0.0]
    states = [v.copy()]
    term = Termination.horizon()
    for j in range(1, iters + 1):
        w = Weights.from_flat(spec, v)
        coeffs = -loss_prime(kind, outputs(spec, w, data.X), data.y)
        v = v + step * gradient(spec, w, data, coeffs).flat()
        if not np.all(np.isfinite(v)):
            term = Termination.blowup(j * step)
            break
        if j % snapshot_stride == 0 or j == iters:
            times.append(j * step)
            states.append(v.copy())
    return Trajectory(np.array(times), np.array(states), term)


def projected_gradient_ascent(
    prob,
    u0: Weights,
    step: float,
    iters: int,
    snapshot_stride: int = 1,
) -> Trajectory:
    """v(t+1) = normalize(v(t) + step * grad N(v(t))) on the unit sphere.

    Snapshot times are iteration indices.  The per-step projection factors
    c_t = 1/||v + step*grad N(v)|| are recorded in `scale_factors`; feeding
    them to adaptive_gradient_ascent reproduces this path up to their running
    product.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    v = u0.flat().copy()
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("u0 must have unit norm")
    times = [0.0]
    states = [v.copy()]
    factors: list[float] = []
    term = Termination.horizon()
    for j in range(1, iters + 1):
        g = prob.gradient_flat(v)
        if not np.any(g):
            term = Termination.zero()
            break
        w = v + step * g
        c = 1.0 / float(np.linalg.norm(w))
        factors.append(c)
        v = c * w
        if j % snapshot_stride == 0 or j == iters:
            times.append(float(j))
            states.append(v.copy())
    return Trajectory(np.array(times), np.array(states), term, np.array(factors))


def adaptive_gradient_ascent(
    prob,
    u0: Weights,
    base_step: float,
    scale_factors: np.ndarray,
    iters: int,
    snapshot_stride: int = 1,
) -> Trajectory:
    """Unconstrained ascent with steps eta_t = base_step * (prod_{m<t} c_m)^(M-2).

    With the c_t produced by a paired projected run, the identity
    v(T) = (prod_{t<T} c_t) u(T) holds exactly in exact arithmetic.
    """
    if base_step <= 0:
        raise ValueError("base_step must be positive")
    scale_factors = np.asarray(scale_factors, dtype=float)
    if scale_factors.shape[0] < iters:
        raise ValueError(f"need {iters} scale factors, got {scale_factors.shape[0]}")
    m = homogeneity_order(prob.spec)
    u = u0.flat().copy()
    prod_c = 1.0
    times = [0.0]
    states = [u.copy()]
    for j in range(iters):
        eta = base_step * prod_c ** (m - 2)
        u = u + eta * prob.gradient_flat(u)
        prod_c *= scale_factors[j]
        if (j + 1) % snapshot_stride == 0 or j + 1 == iters:
            times.append(float(j + 1))
            states.append(u.copy())
    return Trajectory(np.array(times), np.array(states), Termination.horizon())


def sphere_ascent(
    value_grad,
    v0: np.ndarray,
    step: float,
    max_iter: int,
    radius: float = 1.0,
    tol_residual: float | None = None,
    tol_alignment: float | None = None,
    check_every: int = 1,
    backtrack: bool = False,
):
    """Fixed-step ascent renormalized to a sphere of the given radius.

    value_grad maps a state to (value, gradient).  Stops once the tangential
    residual or the gradient/state alignment reaches its tolerance (checked
    every check_every accepted steps).  With backtrack=True the step is halved
    whenever it fails to increase the objective, which keeps the iteration
    monotone on awkward landscapes.  Returns (state, iterations, converged).
    """
    v = radius * np.asarray(v0, dtype=float) / np.linalg.norm(v0)
    val, g = value_grad(v)
    eta = step
    r2 = radius * radius
    for it in range(1, max_iter + 1):
        w = v + eta * g
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            return v, it, False
        cand = (radius / wn) * w
        cval, cg = value_grad(cand)
        # the slack keeps rounding-level fluctuations from shrinking the step
        if backtrack and cval < val - 1e-12 * (1.0 + abs(val)):
            eta *= 0.5
            if eta < 1e-300:
                return v, it, False
            continue
        if backtrack:
            eta = min(1.02 * eta, step)
        v, val, g = cand, cval, cg
        if it % check_every == 0:
            lam = float(v @ g) / r2
            resid = float(np.linalg.norm(g - lam * v))
            gn = float(np.linalg.norm(g))
            if tol_residual is not None and resid <= tol_residual:
                return v, it, True
            if (
                tol_alignment is not None
                and gn > 0.0
                and float(v @ g) / (radius * gn) >= tol_alignment
            ):
                return v, it, True
    return v, max_iter, tol_residual is None and tol_alignment is None


def save_trajectory(traj: Trajectory, csv_path, sidecar: dict, json_path=None) -> None:
    """Write `t, w_0, ..., w_{k-1}` rows plus a JSON sidecar with run metadata."""
    k = traj.states.shape[1]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"w_{i}" for i in range(k)])
        for t, state in zip(traj.times, traj.states):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in state])
    meta = dict(sidecar)
    meta["terminated_by"] = {
        "kind": traj.terminated_by.kind,
        "t_star": traj.terminated_by.t_star,
    }
    if json_path is None:
        json_path = str(csv_path) + ".json"
    with open(json_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
