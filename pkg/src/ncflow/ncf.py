"""The neural correlation function N_z(w) = z^T H(X; w) and its first-order
stationarity diagnostics on the unit sphere.

A unit-norm w is a KKT point of max N on the sphere exactly when the gradient
is radial: grad N(w) = lambda * w with lambda = M * N(w), M the homogeneity
order.  kkt_report measures the tangential remainder and the gradient/weight
alignment used as the directional-convergence signal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING

import numpy as np

from .nets import Dataset, NetSpec, Weights, gradient, homogeneity_order, outputs

if TYPE_CHECKING:  # pragma: no cover
    from .flow import Trajectory


@dataclass(frozen=True)
class NcfProblem:
    spec: NetSpec
    data: Dataset
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if self.z.shape != (self.data.n,):
            raise ValueError(f"z has shape {self.z.shape}, expected ({self.data.n},)")

    def value(self, w: Weights) -> float:
        return float(self.z @ outputs(self.spec, w, self.data.X))

    def gradient(self, w: Weights) -> Weights:
        return gradient(self.spec, w, self.data, self.z)

    # flat-vector views used by the integrators and ascent loops
    def value_flat(self, v: np.ndarray) -> float:
        return self.value(Weights.from_flat(self.spec, v))

    def gradient_flat(self, v: np.ndarray) -> np.ndarray:
        return self.gradient(Weights.from_flat(self.spec, v)).flat()


def ncf_value(prob: NcfProblem, w: Weights) -> float:
    return prob.value(w)


def ncf_gradient(prob: NcfProblem, w: Weights) -> Weights:
    return prob.gradient(w)


@dataclass(frozen=True)
class KktReport:
    """First-order report at the unit-normalized point.

    residual is the tangential gradient norm ||grad N - lambda * w_hat||;
    alignment is w_hat . grad N / ||grad N|| (set to 1 at exactly stationary
    points where the gradient vanishes).
    """

    ncf_value: float
    lambda_estimate: float
    residual: float
    alignment: float
    is_nonnegative_kkt: bool
    nonsmooth: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def kkt_report(prob: NcfProblem, w: Weights, tol: float = 1e-8) -> KktReport:
    v = w.flat()
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        raise ValueError("kkt_report needs nonzero weights")
    v = v / nv
    g = prob.gradient_flat(v)
    lam = float(v @ g)
    residual = float(np.linalg.norm(g - lam * v))
    gn = float(np.linalg.norm(g))
    alignment = lam / gn if gn > 0 else 1.0
    value = prob.value_flat(v)
    return KktReport(
        ncf_value=value,
        lambda_estimate=lam,
        residual=residual,
        alignment=alignment,
        is_nonnegative_kkt=value >= -tol,
        nonsmooth=(prob.spec.p == 1 and prob.spec.alpha != 1.0),
    )


def directional_alignment(prob: NcfProblem, v: np.ndarray) -> float:
    """Alignment of the NCF gradient with the normalized state v (NaN if v = 0)."""
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return float("nan")
    v = v / nv
    g = prob.gradient_flat(v)
    gn = float(np.linalg.norm(g))
    return float(v @ g) / gn if gn > 0 else 1.0


def directional_alignment_series(prob: NcfProblem, traj: "Trajectory") -> np.ndarray:
    """Alignment at every snapshot of a trajectory; zero-norm snapshots give NaN."""
    return np.array([directional_alignment(prob, state) for state in traj.states])


def lambda_matches_value(report: KktReport, spec: NetSpec, rel_tol: float = 1e-8) -> bool:
    """Whether lambda = M * N holds at the reported point (true at KKT points)."""
    m = homogeneity_order(spec)
    target = m * report.ncf_value
    return abs(report.lambda_estimate - target) <= rel_tol * (1.0 + abs(target))
