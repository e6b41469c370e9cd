"""Discrete generating curves and their geometric quantities.

A generating curve is an ordered node list (r_j, z_j), j = 0..J, in the
axial half-plane.  Node 0 is the inner endpoint, node J the outer one; the
topology flag says whether node 0 sits on the substrate (two_contacts) or on
the rotation axis (inner_on_axis).  Revolution about the z-axis produces the
film surface, and the curve's element tangent/normal frame follows
n = -tau^perp with (a, b)^perp = (b, -a), so n = (-sin t, cos t) points out
of the film for the inner-to-outer traversal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anisotropy import AnisotropyModel, eval_gamma

TWO_CONTACTS = "two_contacts"
INNER_ON_AXIS = "inner_on_axis"

SUBSTRATE_CLAMP = 1e-15


class CurveError(ValueError):
    pass


@dataclass
class GeneratingCurve:
    r: np.ndarray
    z: np.ndarray
    topology: str

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.r.ndim != 1 or self.r.shape != self.z.shape:
            raise CurveError("r and z must be 1-d arrays of equal length")
        if self.topology not in (TWO_CONTACTS, INNER_ON_AXIS):
            raise CurveError(f"unknown topology {self.topology!r}")

    @property
    def J(self) -> int:
        return len(self.r) - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.stack([self.r, self.z], axis=1)

    def copy(self) -> "GeneratingCurve":
        return GeneratingCurve(self.r.copy(), self.z.copy(), self.topology)

    def validate(self) -> None:
        if self.J < 1:
            raise CurveError("curve needs at least one element")
        if abs(self.z[-1]) > SUBSTRATE_CLAMP:
            raise CurveError(f"outer contact must sit on the substrate, z_J = {self.z[-1]:.3e}")
        if self.topology == TWO_CONTACTS:
            if abs(self.z[0]) > SUBSTRATE_CLAMP:
                raise CurveError(f"inner contact must sit on the substrate, z_0 = {self.z[0]:.3e}")
            if self.r[0] < 0.0:
                raise CurveError("inner contact radius must be nonnegative")
        else:
            if self.r[0] != 0.0:
                raise CurveError(f"axis node must have r = 0, got {self.r[0]:.3e}")
        if np.any(self.r[1:] <= 0.0):
            j = 1 + int(np.argmin(self.r[1:]))
            raise CurveError(f"node {j} has nonpositive radius {self.r[j]:.3e}")
        dr = np.diff(self.r)
        dz = np.diff(self.z)
        lengths = np.hypot(dr, dz)
        if np.any(lengths <= 0.0):
            j = int(np.argmin(lengths))
            raise CurveError(f"element {j + 1} has zero length")


@dataclass(frozen=True)
class ElementFrames:
    """Per-element lengths and constant P1 frames (tau, n, theta)."""

    lengths: np.ndarray
    tau: np.ndarray
    normal: np.ndarray
    theta: np.ndarray


def perp(v: np.ndarray) -> np.ndarray:
    """(a, b) -> (b, -a) on the last axis."""
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


def element_frames(curve: GeneratingCurve) -> ElementFrames:
    d = np.diff(curve.nodes, axis=0)
    lengths = np.hypot(d[:, 0], d[:, 1])
    if np.any(lengths <= 0.0):
        j = int(np.argmin(lengths))
        raise CurveError(f"element {j + 1} has zero length")
    tau = d / lengths[:, None]
    theta = np.arctan2(tau[:, 1], tau[:, 0])
    # atan2 returns -pi for exactly antiparallel elements; prefer +pi
    theta[theta == -np.pi] = np.pi
    normal = -perp(tau)
    return ElementFrames(lengths=lengths, tau=tau, normal=normal, theta=theta)


def discrete_volume(curve: GeneratingCurve) -> float:
    """Volume enclosed by the revolved curve and the substrate.

    Exact for the polygonal generatrix: per element the integrand r^2 n.e1
    is quadratic, giving the one-third rule below (the same value as the
    shoelace/Pappus volume of the revolved polygon).  Negative values flag a
    reversed orientation and are rejected.
    """
    r, z = curve.r, curve.z
    dz = np.diff(z)
    vol = -np.pi / 3.0 * float(np.sum((r[:-1] ** 2 + r[:-1] * r[1:] + r[1:] ** 2) * dz))
    if vol < 0.0:
        raise CurveError(f"negative enclosed volume {vol:.6g}; curve orientation is reversed")
    return vol


def discrete_energy(curve: GeneratingCurve, model: AnisotropyModel, sigma: float) -> float:
    """Total free energy: surface integral minus sigma-weighted substrate annulus."""
    frames = element_frames(curve)
    g, _, _ = eval_gamma(model, frames.theta)
    r = curve.r
    surface = 2.0 * np.pi * float(np.sum(frames.lengths * g * 0.5 * (r[:-1] + r[1:])))
    substrate = sigma * np.pi * (r[-1] ** 2 - r[0] ** 2)
    return surface - substrate


def weighted_normal(curve_old: GeneratingCurve, curve_new: GeneratingCurve) -> np.ndarray:
    """Time-integrated normal field; shape (J, 2, 2): per element, value at
    its left (q_{j-1}+) and right (q_j-) endpoint.

    Within each element the field is linear in rho, so the midpoint value is
    the endpoint average and elementwise quadrature with those three values
    integrates products with P1 functions exactly.  That exactness makes
    2*pi*<X_new - X_old, f> equal the discrete volume difference.
    """
    if curve_old.J != curve_new.J:
        raise CurveError("curves must share the node count")
    if curve_old.topology != curve_new.topology:
        raise CurveError("curves must share the topology")
    J = curve_old.J
    h = 1.0 / J
    a = np.diff(curve_old.nodes, axis=0)
    b = np.diff(curve_new.nodes, axis=0)
    rm = curve_old.r
    rn = curve_new.r
    out = np.empty((J, 2, 2))
    for side, idx in ((0, slice(0, J)), (1, slice(1, J + 1))):
        coeff_a = 2.0 * rm[idx] + rn[idx]
        coeff_b = 2.0 * rn[idx] + rm[idx]
        vec = coeff_a[:, None] * a + coeff_b[:, None] * b
        out[:, side, :] = -perp(vec) / (6.0 * h)
    return out


def volume_pairing(curve_old: GeneratingCurve, curve_new: GeneratingCurve) -> float:
    """2*pi*<X_new - X_old, f^(m+1/2)> with exact elementwise quadrature."""
    J = curve_old.J
    h = 1.0 / J
    f = weighted_normal(curve_old, curve_new)
    delta = curve_new.nodes - curve_old.nodes
    dP, dQ = delta[:-1], delta[1:]
    fP, fQ = f[:, 0, :], f[:, 1, :]
    fM = 0.5 * (fP + fQ)
    dM = 0.5 * (dP + dQ)
    elems = (
        np.einsum("ji,ji->j", dP, fP)
        + 4.0 * np.einsum("ji,ji->j", dM, fM)
        + np.einsum("ji,ji->j", dQ, fQ)
    ) / 6.0
    return 2.0 * np.pi * h * float(np.sum(elems))


def mesh_ratio(curve: GeneratingCurve) -> float:
    lengths = element_frames(curve).lengths
    return float(lengths.max() / lengths.min())


def discrete_curvature(curve: GeneratingCurve) -> np.ndarray:
    """Angle-deficit curvature at interior nodes (diagnostic only).

    kappa_j = -(turning angle)/(mean adjacent length); positive on
    convex-outward arcs with the n = -tau^perp convention.
    """
    frames = element_frames(curve)
    turn = np.diff(frames.theta)
    turn = np.mod(turn + np.pi, 2.0 * np.pi) - np.pi
    avg_len = 0.5 * (frames.lengths[:-1] + frames.lengths[1:])
    return -turn / avg_len


def contact_angles(curve: GeneratingCurve) -> tuple[float | None, float]:
    """Contact angles in degrees (inner, outer); inner is None on the axis.

    The element angle sits at the element midpoint, half an element away
    from the contact; a one-sided linear extrapolation from the last two
    elements recovers the contact value to second order.
    """
    frames = element_frames(curve)
    th, ln = frames.theta, frames.lengths

    def extrapolated(theta_end, theta_prev, len_end, len_prev):
        slope = (theta_end - theta_prev) / (0.5 * (len_end + len_prev))
        return theta_end + slope * 0.5 * len_end

    if len(th) >= 2:
        theta_outer = extrapolated(th[-1], th[-2], ln[-1], ln[-2])
        theta_inner = extrapolated(th[0], th[1], ln[0], ln[1])
    else:
        theta_outer = th[-1]
        theta_inner = th[0]
    outer = np.degrees(-theta_outer)
    inner = None if curve.topology == INNER_ON_AXIS else float(np.degrees(theta_inner))
    return inner, float(outer)


def _resample_arclength(points: np.ndarray, J: int) -> np.ndarray:
    """Resample a fine polyline to J+1 nodes equidistributed in arc length."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], J + 1)
    out = np.empty((J + 1, 2))
    out[:, 0] = np.interp(targets, s, points[:, 0])
    out[:, 1] = np.interp(targets, s, points[:, 1])
    out[0] = points[0]
    out[-1] = points[-1]
    return out


def make_initial_shape(kind: str, params: dict, J: int) -> GeneratingCurve:
    """Build a named initial curve with nodes equidistributed in arc length.

    Kinds: semi_ellipse(a, b) on the axis; torus(R, a) and
    elongated(length, height, r_inner) with two contacts.
    """
    if J < 8:
        raise CurveError("initial shapes need J >= 8")
    fine = max(64 * J, 4096)
    if kind == "semi_ellipse":
        a, b = float(params["a"]), float(params["b"])
        if a <= 0 or b <= 0:
            raise CurveError("semi_ellipse needs positive semi-axes")
        phi = np.linspace(0.0, np.pi / 2.0, fine)
        pts = np.stack([a * np.sin(phi), b * np.cos(phi)], axis=1)
        nodes = _resample_arclength(pts, J)
        nodes[0] = (0.0, b)
        nodes[-1] = (a, 0.0)
        curve = GeneratingCurve(nodes[:, 0], nodes[:, 1], INNER_ON_AXIS)
    elif kind == "torus":
        R, a = float(params["R"]), float(params["a"])
        if not 0.0 < a < R:
            raise CurveError("torus needs 0 < a < R to avoid crossing the axis")
        psi = np.linspace(0.0, np.pi, fine)
        pts = np.stack([R - a * np.cos(psi), a * np.sin(psi)], axis=1)
        nodes = _resample_arclength(pts, J)
        nodes[0] = (R - a, 0.0)
        nodes[-1] = (R + a, 0.0)
        curve = GeneratingCurve(nodes[:, 0], nodes[:, 1], TWO_CONTACTS)
    elif kind == "elongated":
        length = float(params["length"])
        height = float(params["height"])
        r_inner = float(params["r_inner"])
        if height <= 0 or r_inner <= 0 or length < 2.0 * height:
            raise CurveError("elongated needs r_inner > 0 and length >= 2*height > 0")
        quarter = np.linspace(0.0, np.pi / 2.0, fine // 3)
        left = np.stack(
            [r_inner + height - height * np.cos(quarter), height * np.sin(quarter)], axis=1
        )
        top = np.stack(
            [
                np.linspace(r_inner + height, r_inner + length - height, fine // 3),
                np.full(fine // 3, height),
            ],
            axis=1,
        )
        right = np.stack(
            [
                r_inner + length - height + height * np.sin(quarter),
                height * np.cos(quarter),
            ],
            axis=1,
        )
        pts = np.concatenate([left, top[1:], right[1:]], axis=0)
        nodes = _resample_arclength(pts, J)
        nodes[0] = (r_inner, 0.0)
        nodes[-1] = (r_inner + length, 0.0)
        curve = GeneratingCurve(nodes[:, 0], nodes[:, 1], TWO_CONTACTS)
    else:
        raise CurveError(f"unknown initial shape {kind!r}")
    curve.validate()
    return curve
