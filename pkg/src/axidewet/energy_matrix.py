"""Surface energy matrices B_q(theta) and minimal stabilizing functions.

B_q recasts the anisotropic curvature term in conservative form:

    B_q(theta) = M(theta) R(2 theta)^(1-q) + S(theta) (I - R(2 theta)) / 2

with M = [[g, -g'], [g', g]], R the reflection block [[cos, sin], [sin, -cos]]
and S a nonnegative stabilizing function.  The stabilizer acts only in the
normal direction ((I - R)/2 equals n n^T), so B_q tau = g tau + g' n for any S.

The minimal stabilizer S0(theta) is the pointwise least S for which the
time-stepper's energy inequality holds against every comparison angle; it is
found by bisection over a dense comparison grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .anisotropy import AnisotropyModel, check_admissibility, eval_gamma

S_MAX_DEFAULT = 100.0
THETA_GRID_DEFAULT = 720
HAT_GRID_DEFAULT = 2048
BISECT_TOL_DEFAULT = 1e-8
STABILIZER_MARGIN_DEFAULT = 1.01


class StabilizerSearchError(RuntimeError):
    """No admissible stabilizer below S_max; anisotropy inadmissible or a bug."""


@dataclass(frozen=True)
class StabilizerTable:
    """Tabulated minimal stabilizer on a uniform theta grid, linear interp."""

    theta_grid: np.ndarray
    s0_values: np.ndarray

    def __post_init__(self):
        if self.theta_grid.shape != self.s0_values.shape:
            raise ValueError("theta grid and value arrays must have equal shape")
        if np.any(self.s0_values < 0.0):
            raise ValueError("stabilizer values must be nonnegative")

    def __call__(self, theta):
        # Evaluators are 2*pi-periodic; fold only for the table lookup.
        th = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
        return np.interp(th, self.theta_grid, self.s0_values)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("theta,s0\n")
            for t, s in zip(self.theta_grid, self.s0_values):
                fh.write(f"{t:.17g},{s:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "StabilizerTable":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(theta_grid=data[:, 0], s0_values=data[:, 1])


@dataclass(frozen=True)
class EnergyMatrixSpec:
    """The pair (q, S): matrix variant and stabilizing function.

    ``stabilizer`` is a constant, a callable theta -> S, or a StabilizerTable.
    The safety margin applies to tabulated stabilizers only: interpolation
    between grid points can undershoot the true infimum.
    """

    q: int
    stabilizer: float | Callable | StabilizerTable = 0.0
    margin: float = STABILIZER_MARGIN_DEFAULT

    def __post_init__(self):
        if self.q not in (0, 1):
            raise ValueError("q must be 0 or 1")
        if self.margin < 1.0:
            raise ValueError("stabilizer margin must be >= 1")
        if isinstance(self.stabilizer, (int, float)) and self.stabilizer < 0:
            raise ValueError("stabilizer must be nonnegative")

    def stabilizer_at(self, theta):
        th = np.asarray(theta, dtype=float)
        if isinstance(self.stabilizer, StabilizerTable):
            return np.maximum(self.stabilizer(th), 0.0) * self.margin
        if callable(self.stabilizer):
            s = np.asarray(self.stabilizer(th), dtype=float)
            return np.broadcast_to(s, th.shape).astype(float)
        return np.full_like(th, float(self.stabilizer))

    def validate_for(self, model: AnisotropyModel) -> None:
        report = check_admissibility(model, self.q)
        if not report.ok:
            raise ValueError(f"{model.label()} inadmissible for q={self.q}: {report.message}")


def eval_B(spec: EnergyMatrixSpec, model: AnisotropyModel, theta) -> np.ndarray:
    """B_q(theta) as a (..., 2, 2) array (2x2 for scalar theta)."""
    th = np.asarray(theta, dtype=float)
    g, gp, _ = eval_gamma(model, th)
    g = np.asarray(g, dtype=float)
    gp = np.asarray(gp, dtype=float)
    s = spec.stabilizer_at(th)
    c2, s2 = np.cos(2.0 * th), np.sin(2.0 * th)
    out = np.empty(th.shape + (2, 2))
    if spec.q == 1:
        out[..., 0, 0] = g
        out[..., 0, 1] = -gp
        out[..., 1, 0] = gp
        out[..., 1, 1] = g
    else:
        # M(theta) @ R(2 theta), symmetric
        out[..., 0, 0] = g * c2 - gp * s2
        out[..., 0, 1] = g * s2 + gp * c2
        out[..., 1, 0] = gp * c2 + g * s2
        out[..., 1, 1] = gp * s2 - g * c2
    # stabilizer block (I - R)/2 = n n^T
    out[..., 0, 0] += s * 0.5 * (1.0 - c2)
    out[..., 0, 1] += -s * 0.5 * s2
    out[..., 1, 0] += -s * 0.5 * s2
    out[..., 1, 1] += s * 0.5 * (1.0 + c2)
    if np.isscalar(theta):
        return out.reshape(2, 2)
    return out


def split_B1(spec: EnergyMatrixSpec, model: AnisotropyModel, theta):
    """Symmetric/antisymmetric split of B_1 (only defined for q = 1)."""
    if spec.q != 1:
        raise ValueError("split applies to q = 1 only")
    B = eval_B(spec, model, theta)
    sym = 0.5 * (B + np.swapaxes(B, -1, -2))
    antisym = 0.5 * (B - np.swapaxes(B, -1, -2))
    return sym, antisym


def _residual_q0(model: AnisotropyModel, s_theta, theta, hat):
    """g(theta)*(B0(theta) v(hat)).v(hat) - g(hat)^2 on a broadcast grid.

    Expanded matrix action; theta-shaped arrays broadcast against hat along
    the last axis.
    """
    g, gp, _ = eval_gamma(model, theta)
    ghat, _, _ = eval_gamma(model, hat)
    delta = theta[..., None] - hat[None, :]
    quad = (
        g[..., None] * np.cos(2.0 * delta)
        - gp[..., None] * np.sin(2.0 * delta)
        + s_theta[..., None] * np.sin(delta) ** 2
    )
    return g[..., None] * quad - ghat[None, :] ** 2


def _margin_q1(model: AnisotropyModel, alpha, theta, hat):
    """P_alpha(theta, hat) - Q(theta, hat) on a broadcast grid."""
    g, gp, _ = eval_gamma(model, theta)
    ghat, _, _ = eval_gamma(model, hat)
    diff = theta[..., None] - hat[None, :]
    sin_d = np.sin(diff)
    p = 2.0 * np.sqrt((g[..., None] + alpha[..., None] * sin_d**2) * g[..., None])
    q = ghat[None, :] + g[..., None] * np.cos(diff) + gp[..., None] * sin_d
    return p - q


def compute_min_stabilizer(
    model: AnisotropyModel,
    q: int,
    theta_grid_size: int = THETA_GRID_DEFAULT,
    hat_grid_size: int = HAT_GRID_DEFAULT,
    bisect_tol: float = BISECT_TOL_DEFAULT,
    s_max: float = S_MAX_DEFAULT,
    feas_tol: float = 1e-11,
) -> StabilizerTable:
    """Tabulate the minimal stabilizer S0(theta) by bisection.

    Per theta the feasibility of a candidate S is monotone (the S coefficient
    is nonnegative), so bisection against the dense comparison grid is valid.
    The returned value is the upper bracket endpoint, i.e. guaranteed feasible
    up to bisect_tol.  ``feas_tol`` absorbs roundoff at the binding angles
    (hat = theta and theta + pi) where the margin vanishes identically and
    the stabilizer has no effect.
    """
    report = check_admissibility(model, q)
    if not report.ok:
        raise ValueError(f"{model.label()} inadmissible for q={q}: {report.message}")
    theta = np.linspace(-np.pi, np.pi, theta_grid_size + 1)
    hat = np.linspace(-np.pi, np.pi, hat_grid_size, endpoint=False)

    # Hoist everything that does not depend on the bisection candidate.
    g, gp, _ = eval_gamma(model, theta)
    ghat, _, _ = eval_gamma(model, hat)
    delta = theta[:, None] - hat[None, :]
    sin2 = np.sin(delta) ** 2
    if q == 0:
        base = g[:, None] * (g[:, None] * np.cos(2.0 * delta) - gp[:, None] * np.sin(2.0 * delta))
        base = base - ghat[None, :] ** 2
        slope = g[:, None] * sin2

        def feasible(s):
            return (base + s[:, None] * slope).min(axis=-1) >= -feas_tol
    else:
        qfun = ghat[None, :] + g[:, None] * np.cos(delta) + gp[:, None] * np.sin(delta)

        def feasible(s):
            p = 2.0 * np.sqrt((g[:, None] + s[:, None] * sin2) * g[:, None])
            return (p - qfun).min(axis=-1) >= -feas_tol

    if not feasible(np.full_like(theta, s_max)).all():
        raise StabilizerSearchError(
            f"no stabilizer below S_max = {s_max} satisfies the inequality for {model.label()}, q={q}"
        )
    lo = np.zeros_like(theta)
    hi = np.full_like(theta, s_max)
    ok0 = feasible(lo)
    hi[ok0] = 0.0
    n_iter = int(np.ceil(np.log2(s_max / bisect_tol))) + 1
    for _ in range(n_iter):
        if np.all(hi - lo <= bisect_tol):
            break
        mid = 0.5 * (lo + hi)
        ok = feasible(mid)
        hi[ok] = mid[ok]
        lo[~ok] = mid[~ok]
    return StabilizerTable(theta_grid=theta, s0_values=hi)


@lru_cache(maxsize=32)
def min_stabilizer_cached(model: AnisotropyModel, q: int) -> StabilizerTable:
    """Default-parameter stabilizer table, cached per (model, q)."""
    return compute_min_stabilizer(model, q)


@dataclass(frozen=True)
class StabilityReport:
    ok: bool
    q: int
    worst_residual: float
    at_theta: float
    at_hat: float
    at_magnitudes: tuple = ()

    def summary(self) -> str:
        loc = f"theta={self.at_theta:.6f}, hat={self.at_hat:.6f}"
        if self.at_magnitudes:
            loc += f", |v|,|w|={self.at_magnitudes}"
        return f"q={self.q}: worst residual {self.worst_residual:.3e} at {loc}"


def verify_stability_inequality(
    spec: EnergyMatrixSpec,
    model: AnisotropyModel,
    grid_size: int = THETA_GRID_DEFAULT,
    tol: float = 1e-9,
    magnitudes=(0.5, 1.0, 2.0),
) -> StabilityReport:
    """Scan the energy inequality on a product grid via explicit matrices.

    q = 0: g(t) (B0(t) v(h)).v(h) - g(h)^2 >= -tol.
    q = 1: (B1(t) w).(w - v)/|v| - (|w| g(h) - |v| g(t)) >= -tol with
    v = |v| (cos t, sin t), w = |w| (cos h, sin h) over the magnitude samples.
    """
    theta = np.linspace(-np.pi, np.pi, grid_size + 1)
    hat = np.linspace(-np.pi, np.pi, grid_size, endpoint=False)
    B = eval_B(spec, model, theta)
    g, _, _ = eval_gamma(model, theta)
    ghat, _, _ = eval_gamma(model, hat)
    vhat = np.stack([np.cos(hat), np.sin(hat)], axis=-1)
    if spec.q == 0:
        Bv = np.einsum("tij,hj->thi", B, vhat)
        resid = g[:, None] * np.einsum("thi,hi->th", Bv, vhat) - ghat[None, :] ** 2
        i, j = np.unravel_index(np.argmin(resid), resid.shape)
        worst = float(resid[i, j])
        return StabilityReport(worst >= -tol, 0, worst, float(theta[i]), float(hat[j]))
    vdir = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    worst = np.inf
    loc = (0.0, 0.0, (1.0, 1.0))
    for mv in magnitudes:
        for mw in magnitudes:
            w = mw * vhat
            v = mv * vdir
            Bw = np.einsum("tij,hj->thi", B, w)
            lhs = (np.einsum("thi,hi->th", Bw, w) - np.einsum("thi,ti->th", Bw, v)) / mv
            rhs = mw * ghat[None, :] - mv * g[:, None]
            resid = lhs - rhs
            i, j = np.unravel_index(np.argmin(resid), resid.shape)
            if resid[i, j] < worst:
                worst = float(resid[i, j])
                loc = (float(theta[i]), float(hat[j]), (mv, mw))
    return StabilityReport(worst >= -tol, 1, worst, loc[0], loc[1], loc[2])
