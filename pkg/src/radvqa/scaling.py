"""Empirical fine-tuning loss model.

Eval loss is modeled as L = A * X^(-alpha) * D_f^(-beta) + E, where X is
the trainable-parameter count of the fine-tuned subset, D_f the number of
fine-tuning tokens, and E the irreducible floor. Fitting happens in
log-loss space (power-law terms span orders of magnitude; raw residuals
would let the largest losses dominate), with bound constraints keeping
A > 0 and alpha, beta, E >= 0.

`mcq_loss_floor` gives the analytic per-token floor for an n-way multiple
choice answer under a uniform guess: ln(n) nats.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "ScalingError",
    "LossPoint",
    "ScalingFit",
    "predict",
    "fit",
    "mcq_loss_floor",
    "read_points_csv",
    "write_points_csv",
    "fit_report",
    "write_fit_json",
]

CSV_HEADER = ("X", "D_f", "L")

DEFAULT_BOUNDS = ((1e-12, 0.0, 0.0, 0.0), (np.inf, 10.0, 10.0, np.inf))


class ScalingError(ValueError):
    pass


@dataclass(frozen=True)
class LossPoint:
    """One observed (parameter count, token count, eval loss) triple."""

    X: float
    D_f: float
    L: float

    def __post_init__(self):
        for name in ("X", "D_f", "L"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ScalingError(f"{name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class ScalingFit:
    A: float
    alpha: float
    beta: float
    E: float
    residual: float = 0.0            # RMS error in loss space
    covariance: Optional[tuple[tuple[float, ...], ...]] = None
    n_points: int = 0

    def __post_init__(self):
        if not (self.A > 0):
            raise ScalingError(f"A must be positive, got {self.A!r}")
        for name in ("alpha", "beta", "E"):
            if getattr(self, name) < 0:
                raise ScalingError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if self.residual < 0:
            raise ScalingError("residual cannot be negative")


def predict(fit: ScalingFit, X: float, D_f: float) -> float:
    """Evaluate the loss model at one design point."""
    if X <= 0 or D_f <= 0:
        raise ScalingError(f"X and D_f must be positive, got X={X!r}, D_f={D_f!r}")
    return fit.A * X ** (-fit.alpha) * D_f ** (-fit.beta) + fit.E


def mcq_loss_floor(num_choices: int) -> float:
    if isinstance(num_choices, bool) or not isinstance(num_choices, int):
        raise ScalingError(f"num_choices must be an integer, got {num_choices!r}")
    if num_choices < 2:
        raise ScalingError(f"num_choices must be >= 2, got {num_choices}")
    return math.log(num_choices)


def _default_init(xs: np.ndarray, ds: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """Two-step seed: peel off a floor guess, then solve the linearized
    power law log(L - E0) = log A - alpha log X - beta log D_f."""
    e0 = 0.75 * float(ls.min())
    gap = np.maximum(ls - e0, 1e-12)
    design = np.column_stack([np.ones_like(xs), -np.log(xs), -np.log(ds)])
    coef, *_ = np.linalg.lstsq(design, np.log(gap), rcond=None)
    log_a, alpha, beta = coef
    return np.array([
        max(math.exp(min(log_a, 300.0)), 1e-10),
        min(max(alpha, 0.0), 9.9),
        min(max(beta, 0.0), 9.9),
        max(e0, 0.0),
    ])


def _covariance(result, n_points: int) -> Optional[tuple[tuple[float, ...], ...]]:
    """Pseudo-inverse of J^T J scaled by residual variance; small singular
    values are dropped so the estimate stays positive semi-definite."""
    dof = n_points - 4
    if dof <= 0:
        return None
    _, s, vt = np.linalg.svd(result.jac, full_matrices=False)
    keep = s > max(result.jac.shape) * np.finfo(float).eps * s[0] if s.size else s > 0
    if not keep.any():
        return None
    vt = vt[keep]
    cov = (vt.T / s[keep] ** 2) @ vt * (2.0 * result.cost / dof)
    return tuple(tuple(float(v) for v in row) for row in cov)


def fit(points: Iterable[LossPoint],
        init: Optional[Sequence[float]] = None,
        bounds: Optional[tuple[Sequence[float], Sequence[float]]] = None) -> ScalingFit:
    """Bounded nonlinear least squares on log-loss residuals.

    Deterministic for a given init; the default init is derived from the
    data, so repeated fits of the same points agree bit for bit.
    """
    pts = list(points)
    if len(pts) < 6:
        raise ScalingError(f"need at least 6 points to fit 4 parameters, got {len(pts)}")
    xs = np.array([p.X for p in pts], dtype=np.float64)
    ds = np.array([p.D_f for p in pts], dtype=np.float64)
    ls = np.array([p.L for p in pts], dtype=np.float64)
    if np.unique(xs).size < 2:
        raise ScalingError(
            "underdetermined design: every point shares one X value, so alpha cannot be identified")
    if np.unique(ds).size < 2:
        raise ScalingError(
            "underdetermined design: every point shares one D_f value, so beta cannot be identified")

    lb, ub = bounds if bounds is not None else DEFAULT_BOUNDS
    lb = np.asarray(lb, dtype=np.float64)
    ub = np.asarray(ub, dtype=np.float64)
    x0 = np.asarray(init, dtype=np.float64) if init is not None else _default_init(xs, ds, ls)
    x0 = np.clip(x0, lb + 1e-15, np.where(np.isfinite(ub), ub, x0))

    log_l = np.log(ls)

    def residuals(theta: np.ndarray) -> np.ndarray:
        a, alpha, beta, e = theta
        pred = a * xs ** (-alpha) * ds ** (-beta) + e
        return np.log(np.maximum(pred, 1e-300)) - log_l

    result = least_squares(residuals, x0, bounds=(lb, ub), method="trf",
                           x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                           max_nfev=20000)
    a, alpha, beta, e = (float(v) for v in result.x)
    linear_resid = a * xs ** (-alpha) * ds ** (-beta) + e - ls
    return ScalingFit(A=a, alpha=alpha, beta=beta, E=e,
                      residual=float(np.sqrt(np.mean(linear_resid ** 2))),
                      covariance=_covariance(result, len(pts)),
                      n_points=len(pts))


def read_points_csv(path: str | Path) -> list[LossPoint]:
    """Read `X,D_f,L` rows; blank lines are skipped, anything else is an error."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ScalingError(f"expected header {','.join(CSV_HEADER)}, got {header!r}")
        points = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise ScalingError(f"line {lineno}: expected 3 columns, got {len(row)}")
            try:
                x, d, l = (float(cell) for cell in row)
            except ValueError:
                raise ScalingError(f"line {lineno}: non-numeric value in {row!r}") from None
            try:
                points.append(LossPoint(X=x, D_f=d, L=l))
            except ScalingError as exc:
                raise ScalingError(f"line {lineno}: {exc}") from None
    return points


def write_points_csv(points: Iterable[LossPoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for p in points:
            writer.writerow([repr(p.X), repr(p.D_f), repr(p.L)])


def fit_report(fit_result: ScalingFit) -> dict:
    return {
        "A": fit_result.A,
        "alpha": fit_result.alpha,
        "beta": fit_result.beta,
        "E": fit_result.E,
        "residual": fit_result.residual,
        "n_points": fit_result.n_points,
        "covariance": [list(row) for row in fit_result.covariance]
        if fit_result.covariance is not None else None,
        "d_f_units": "supervised answer tokens",
    }


def write_fit_json(fit_result: ScalingFit, path: str | Path) -> dict:
    report = fit_report(fit_result)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    return report
