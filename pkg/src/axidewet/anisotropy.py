"""Surface energy densities gamma(theta) and their admissibility checks.

A density is evaluated together with its first two derivatives so that the
solver never needs finite differences.  All shipped densities are even and
2*pi-periodic by construction; construction rejects densities that are not
strictly positive or not even on a dense angular grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Dense grid used for construction checks and admissibility scans.  4096
# points resolve every shipped k <= 8 harmonic with large margin.
CHECK_GRID_SIZE = 4096
SYMMETRY_TOL = 1e-12
PERIODICITY_TOL = 1e-9

KFOLD = "kfold"
BGN = "bgn"
SERIES = "series"


def _as_matrix_tuple(metrics) -> tuple[tuple[float, ...], ...]:
    out = []
    for g in metrics:
        g = np.asarray(g, dtype=float)
        if g.shape != (2, 2):
            raise ValueError("bgn metric matrices must be 2x2")
        out.append(tuple(map(tuple, g)))
    return tuple(out)


@dataclass(frozen=True)
class AnisotropyModel:
    """Evaluator for gamma(theta) of kind 'kfold', 'bgn' or 'series'."""

    kind: str
    k: int = 0
    beta: float = 0.0
    eps: float = 0.0
    metrics: tuple = ()
    coeffs: tuple = ()

    def __post_init__(self):
        if self.kind not in (KFOLD, BGN, SERIES):
            raise ValueError(f"unknown anisotropy kind {self.kind!r}")
        if self.kind == KFOLD:
            if self.k < 1 or int(self.k) != self.k:
                raise ValueError("kfold requires a positive integer k")
        if self.kind == BGN and not self.metrics:
            raise ValueError("bgn requires at least one metric matrix")
        theta = np.linspace(-np.pi, np.pi, CHECK_GRID_SIZE)
        g, _, _ = eval_gamma(self, theta)
        if np.any(g <= 0.0):
            bad = theta[int(np.argmin(g))]
            raise ValueError(f"gamma(theta) must be positive; gamma({bad:.6f}) = {g.min():.6g}")
        g_neg, _, _ = eval_gamma(self, -theta)
        asym = float(np.max(np.abs(g - g_neg)))
        if asym > SYMMETRY_TOL:
            raise ValueError(f"gamma must be even in theta; asymmetry {asym:.3e}")

    def label(self) -> str:
        if self.kind == KFOLD:
            return f"kfold(k={self.k}, beta={self.beta})"
        if self.kind == BGN:
            return f"bgn(eps={self.eps}, {len(self.metrics)} metrics)"
        return f"series({', '.join(repr(c) for c in self.coeffs)})"


@dataclass(frozen=True)
class ContactParameters:
    """Material constant sigma and contact-line mobility eta (finite, > 0)."""

    sigma: float
    eta: float

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta <= 0.0:
            raise ValueError("contact-line mobility eta must be finite and positive")


def kfold(k: int, beta: float) -> AnisotropyModel:
    """Density 1 + beta*cos(k*theta)."""
    return AnisotropyModel(kind=KFOLD, k=int(k), beta=float(beta))


def isotropic() -> AnisotropyModel:
    return AnisotropyModel(kind=SERIES, coeffs=(1.0,))


def cosine_series(coeffs) -> AnisotropyModel:
    """Density sum_k c_k cos(k*theta) from coefficients (c_0, c_1, ...)."""
    return AnisotropyModel(kind=SERIES, coeffs=tuple(float(c) for c in coeffs))


def bgn_metrics(eps: float) -> list[np.ndarray]:
    """The pair of diagonal metrics giving gamma_1 + gamma_2 for parameter eps."""
    return [np.diag([eps**2, 1.0]), np.diag([1.0, eps**2])]


def bgn(eps: float, metrics=None) -> AnisotropyModel:
    """Density sum_l sqrt(v(theta)^T G_l v(theta)), v = (cos, sin)."""
    if metrics is None:
        metrics = bgn_metrics(eps)
    return AnisotropyModel(kind=BGN, eps=float(eps), metrics=_as_matrix_tuple(metrics))


def eval_gamma(model: AnisotropyModel, theta):
    """Return (gamma, gamma', gamma'') at theta (scalar or array), all analytic."""
    th = np.asarray(theta, dtype=float)
    if model.kind == KFOLD:
        k, b = model.k, model.beta
        g = 1.0 + b * np.cos(k * th)
        gp = -b * k * np.sin(k * th)
        gpp = -b * k * k * np.cos(k * th)
    elif model.kind == SERIES:
        g = np.zeros_like(th)
        gp = np.zeros_like(th)
        gpp = np.zeros_like(th)
        for k, c in enumerate(model.coeffs):
            g = g + c * np.cos(k * th)
            gp = gp - c * k * np.sin(k * th)
            gpp = gpp - c * k * k * np.cos(k * th)
    else:  # BGN
        c, s = np.cos(th), np.sin(th)
        g = np.zeros_like(th)
        gp = np.zeros_like(th)
        gpp = np.zeros_like(th)
        for G in model.metrics:
            (g11, g12), (g21, g22) = G
            # A = v^T G v with v = (cos, sin); v' = (-sin, cos); v'' = -v
            A = g11 * c * c + (g12 + g21) * s * c + g22 * s * s
            Ap = -2.0 * g11 * s * c + (g12 + g21) * (c * c - s * s) + 2.0 * g22 * s * c
            App = 2.0 * (g11 * s * s - (g12 + g21) * s * c + g22 * c * c) - 2.0 * A
            root = np.sqrt(A)
            g = g + root
            gp = gp + Ap / (2.0 * root)
            gpp = gpp + App / (2.0 * root) - Ap * Ap / (4.0 * A * root)
    if np.isscalar(theta):
        return float(g), float(gp), float(gpp)
    return g, gp, gpp


def contact_flux(model: AnisotropyModel, theta, sigma: float):
    """Young-type flux f(theta; sigma) = gamma*cos - gamma'*sin - sigma."""
    g, gp, _ = eval_gamma(model, theta)
    return g * np.cos(theta) - gp * np.sin(theta) - sigma


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    q: int
    worst_value: float
    worst_theta: float
    message: str = ""


def check_admissibility(model: AnisotropyModel, q: int) -> AdmissibilityReport:
    """Check the condition the energy matrix B_q places on gamma.

    q = 0 requires gamma(theta) = gamma(theta + pi) (pi-periodicity); q = 1
    requires 3*gamma(theta) - gamma(theta + pi) > 0 everywhere.
    """
    if q not in (0, 1):
        raise ValueError("q must be 0 or 1")
    theta = np.linspace(-np.pi, np.pi, CHECK_GRID_SIZE)
    g, _, _ = eval_gamma(model, theta)
    g_shift, _, _ = eval_gamma(model, theta + np.pi)
    if q == 0:
        gap = np.abs(g - g_shift)
        i = int(np.argmax(gap))
        ok = gap[i] <= PERIODICITY_TOL
        msg = "" if ok else (
            f"gamma is not pi-periodic: |gamma(t) - gamma(t+pi)| = {gap[i]:.3e} at theta = {theta[i]:.6f}"
        )
        return AdmissibilityReport(ok, 0, float(gap[i]), float(theta[i]), msg)
    margin = 3.0 * g - g_shift
    i = int(np.argmin(margin))
    ok = margin[i] > 0.0
    msg = "" if ok else (
        f"3*gamma(t) - gamma(t+pi) = {margin[i]:.3e} <= 0 at theta = {theta[i]:.6f}"
    )
    return AdmissibilityReport(ok, 1, float(margin[i]), float(theta[i]), msg)
