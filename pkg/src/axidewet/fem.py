"""Degrees of freedom, mass-lumped products, and the three time-steppers.

Each step solves a banded linear system for the nodal unknowns
(r_j, z_j, mu_j).  The three schemes share the chemical-potential row and
differ in how the geometric coupling is built:

* P: weighted-normal coupling on both equations, nonlinear through the new
  curve (Picard), quadratic contact terms; conserves volume and decays the
  energy at the fixed point.
* L: all weights frozen on the old curve, one linear solve; good mesh, no
  conservation guarantee.
* V: weighted-normal first equation (Picard) with the L second equation;
  conserves volume with the L mesh behaviour.

The weighted-normal pairings are integrated elementwise exactly (Simpson,
exact for the cubic integrands), which is what makes the discrete volume
identity hold for the solved systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .anisotropy import AnisotropyModel, ContactParameters, eval_gamma
from .energy_matrix import EnergyMatrixSpec, eval_B
from .geometry import (
    INNER_ON_AXIS,
    TWO_CONTACTS,
    CurveError,
    GeneratingCurve,
    element_frames,
    perp,
)

R, Z, MU = 0, 1, 2

METHOD_P = "P"
METHOD_L = "L"
METHOD_V = "V"


class SolverError(RuntimeError):
    pass


class PicardDivergence(SolverError):
    pass


def lumped_inner(u: np.ndarray, v: np.ndarray, h: float | None = None) -> float:
    """Mass-lumped product (h/2) sum_j [(u.v)(q_j-) + (u.v)(q_{j-1}+)].

    ``u`` and ``v`` hold one-sided element endpoint values, shape (J, 2) for
    scalars or (J, 2, c) for c components; index 0 is the element's left
    endpoint.  Arc-length weights enter as part of u or v.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("lumped product needs matching partitions")
    prod = u * v
    if prod.ndim == 3:
        prod = prod.sum(axis=-1)
    J = prod.shape[0]
    if h is None:
        h = 1.0 / J
    return 0.5 * h * float(np.sum(prod))


def nodal_values(values: np.ndarray) -> np.ndarray:
    """One-sided endpoint representation of a continuous nodal field."""
    values = np.asarray(values, dtype=float)
    return np.stack([values[:-1], values[1:]], axis=1)


def element_values(values: np.ndarray) -> np.ndarray:
    """Endpoint representation of an elementwise-constant field."""
    values = np.asarray(values, dtype=float)
    return np.stack([values, values], axis=1)


@dataclass(frozen=True)
class DofMap:
    """Free/fixed status per node for (r, z, mu) and the equation indexing."""

    topology: str
    J: int
    r_free: np.ndarray
    z_free: np.ndarray
    index: np.ndarray
    n_free: int

    @classmethod
    def build(cls, topology: str, J: int) -> "DofMap":
        r_free = np.ones(J + 1, dtype=bool)
        z_free = np.ones(J + 1, dtype=bool)
        z_free[J] = False
        if topology == TWO_CONTACTS:
            z_free[0] = False
        elif topology == INNER_ON_AXIS:
            r_free[0] = False
        else:
            raise CurveError(f"unknown topology {topology!r}")
        index = -np.ones((J + 1, 3), dtype=int)
        counter = 0
        for j in range(J + 1):
            for comp, free in ((R, r_free[j]), (Z, z_free[j]), (MU, True)):
                if free:
                    index[j, comp] = counter
                    counter += 1
        return cls(topology, J, r_free, z_free, index, counter)


@dataclass
class SchemeConfig:
    """Method selection and stepping controls for one solver instance."""

    method: str
    matrix: EnergyMatrixSpec
    contact: ContactParameters
    dt: float
    picard_tol: float = 1e-12
    picard_max: int = 50
    dt_halvings: int = 5

    def __post_init__(self):
        if self.method not in (METHOD_P, METHOD_L, METHOD_V):
            raise ValueError(f"unknown method {self.method!r}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.picard_tol <= 0.0:
            raise ValueError("picard_tol must be positive")


@dataclass
class StepSystem:
    """Banded linear system for one iterate; rows follow the DofMap."""

    dofmap: DofMap
    kl: int
    ku: int
    ab: np.ndarray
    rhs: np.ndarray

    def solve(self) -> np.ndarray:
        lu, piv, x, info = lapack.dgbsv(self.kl, self.ku, self.ab, self.rhs)
        if info > 0:
            raise SolverError(f"singular step system: zero pivot at equation {info - 1}")
        if info < 0:
            raise SolverError(f"banded solver rejected argument {-info}")
        return x


class _Builder:
    """Triplet accumulator over the full (r, z, mu)-per-node index space."""

    def __init__(self, J: int):
        self.J = J
        self.n_full = 3 * (J + 1)
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs = np.zeros(self.n_full)

    def add(self, row, col, val):
        row = np.atleast_1d(np.asarray(row, dtype=int))
        col = np.atleast_1d(np.asarray(col, dtype=int))
        val = np.atleast_1d(np.asarray(val, dtype=float))
        row, col, val = np.broadcast_arrays(row, col, val)
        self.rows.append(row.ravel())
        self.cols.append(col.ravel())
        self.vals.append(val.ravel())

    def add_rhs(self, row, val):
        np.add.at(self.rhs, np.asarray(row, dtype=int), np.asarray(val, dtype=float))

    def finish(self, dofmap: DofMap) -> StepSystem:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        full_to_free = dofmap.index.reshape(self.n_full)
        rr = full_to_free[rows]
        cc = full_to_free[cols]
        keep = (rr >= 0) & (cc >= 0)
        rr, cc, vv = rr[keep], cc[keep], vals[keep]
        n = dofmap.n_free
        if len(rr):
            kl = max(0, int(np.max(rr - cc)))
            ku = max(0, int(np.max(cc - rr)))
        else:
            kl = ku = 0
        ab = np.zeros((2 * kl + ku + 1, n))
        np.add.at(ab, (kl + ku + rr - cc, cc), vv)
        rhs = self.rhs[full_to_free >= 0]
        return StepSystem(dofmap, kl, ku, ab, rhs)


def _full_index(j, comp):
    return 3 * np.asarray(j, dtype=int) + comp


def _weighted_normal_endpoint_values(curve_old, curve_new):
    """Per-element endpoint values of h*f^(m+1/2), shape (J, 2, 2)."""
    a = np.diff(curve_old.nodes, axis=0)
    b = np.diff(curve_new.nodes, axis=0)
    rm, rn = curve_old.r, curve_new.r
    out = np.empty((curve_old.J, 2, 2))
    for side, sl in ((0, slice(0, -1)), (1, slice(1, None))):
        vec = (2.0 * rm[sl] + rn[sl])[:, None] * a + (2.0 * rn[sl] + rm[sl])[:, None] * b
        out[:, side, :] = -perp(vec) / 6.0
    return out


def _node_coupling_weights(fval: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simpson weights pairing node i's test row with nodes i-1, i, i+1.

    The trilinear elementwise form (P1 a) * f * (P1 b) integrated exactly is
    symmetric in (a, b), so the same weights serve the first equation's
    displacement coupling and the second equation's mu coupling.
    """
    J = fval.shape[0]
    f_mid = 0.5 * (fval[:, 0, :] + fval[:, 1, :])
    w_minus = np.zeros((J + 1, 2))
    w_zero = np.zeros((J + 1, 2))
    w_plus = np.zeros((J + 1, 2))
    w_minus[1:] = f_mid / 6.0
    w_plus[:-1] = f_mid / 6.0
    w_zero[1:] += (f_mid + fval[:, 1, :]) / 6.0
    w_zero[:-1] += (fval[:, 0, :] + f_mid) / 6.0
    return w_minus, w_zero, w_plus


def _mu_laplacian(builder: _Builder, curve_old: GeneratingCurve, frames):
    """-<r^m d_rho mu, d_rho phi |d_rho X^m|^-1> into the mu-test rows."""
    J = curve_old.J
    r = curve_old.r
    w = 0.5 * (r[:-1] + r[1:]) / frames.lengths
    for e in range(J):
        p, q = e, e + 1
        for i, sgn in ((q, 1.0), (p, -1.0)):
            row = _full_index(i, MU)
            builder.add(row, _full_index(q, MU), -sgn * w[e])
            builder.add(row, _full_index(p, MU), sgn * w[e])


def _f_coupling_first_equation(builder, curve_old, w_minus, w_zero, w_plus, dt):
    """(1/dt) <X_new - X_old, phi f> rows (mu-test), plus RHS with X_old."""
    J = curve_old.J
    nodes = curve_old.nodes
    for di, W in ((-1, w_minus), (0, w_zero), (1, w_plus)):
        lo = max(0, -di)
        hi = J + 1 - max(0, di)
        i = np.arange(lo, hi)
        k = i + di
        rows = _full_index(i, MU)
        builder.add(rows, _full_index(k, R), W[i, 0] / dt)
        builder.add(rows, _full_index(k, Z), W[i, 1] / dt)
        builder.add_rhs(rows, np.einsum("ij,ij->i", W[i], nodes[k]) / dt)


def _f_coupling_second_equation(builder, dofmap, w_minus, w_zero, w_plus):
    """<mu f, psi> into the free position-test rows."""
    J = dofmap.J
    for comp in (R, Z):
        free = dofmap.r_free if comp == R else dofmap.z_free
        for di, W in ((-1, w_minus), (0, w_zero), (1, w_plus)):
            lo = max(0, -di)
            hi = J + 1 - max(0, di)
            i = np.arange(lo, hi)
            i = i[free[i]]
            if len(i) == 0:
                continue
            builder.add(_full_index(i, comp), _full_index(i + di, MU), W[i, comp])


def _stiffness(builder, dofmap, curve_old, frames, Bmats, r_weighted: bool):
    """<w B_q(theta^m) d_rho X_new, d_rho psi |d_rho X^m|^-1> rows."""
    J = dofmap.J
    r = curve_old.r
    if r_weighted:
        w = 0.5 * (r[:-1] + r[1:]) / frames.lengths
    else:
        w = 1.0 / frames.lengths
    for e in range(J):
        p, q = e, e + 1
        B = Bmats[e] * w[e]
        for i, sgn in ((q, 1.0), (p, -1.0)):
            for comp in (R, Z):
                free = dofmap.r_free if comp == R else dofmap.z_free
                if not free[i]:
                    continue
                row = _full_index(i, comp)
                builder.add(row, _full_index(q, R), sgn * B[comp, 0])
                builder.add(row, _full_index(q, Z), sgn * B[comp, 1])
                builder.add(row, _full_index(p, R), -sgn * B[comp, 0])
                builder.add(row, _full_index(p, Z), -sgn * B[comp, 1])


def _gamma_load(builder, dofmap, model, iterate_frames):
    """-<gamma(theta*), psi_1 |d_rho X*|> moved to the RHS (r-test rows)."""
    J = dofmap.J
    g, _, _ = eval_gamma(model, iterate_frames.theta)
    gl = g * iterate_frames.lengths
    load = np.zeros(J + 1)
    load[:-1] += 0.5 * gl
    load[1:] += 0.5 * gl
    i = np.arange(J + 1)[dofmap.r_free]
    builder.add_rhs(_full_index(i, R), -load[i])


def _contact_nodes(dofmap):
    """(node, sigma_sign) pairs carrying contact-line boundary terms."""
    nodes = [(dofmap.J, -1.0)]
    if dofmap.topology == TWO_CONTACTS:
        nodes.append((0, 1.0))
    return nodes


def _boundary_terms_P(builder, dofmap, curve_old, iterate, contact, dt):
    for j, sig_sign in _contact_nodes(dofmap):
        row = _full_index(j, R)
        pair = iterate.r[j] + curve_old.r[j]
        coeff = pair / (2.0 * contact.eta * dt)
        builder.add(row, row, coeff + sig_sign * 0.5 * contact.sigma)
        builder.add_rhs(row, coeff * curve_old.r[j] - sig_sign * 0.5 * contact.sigma * curve_old.r[j])


def _boundary_terms_linear(builder, dofmap, curve_old, contact, dt):
    for j, sig_sign in _contact_nodes(dofmap):
        row = _full_index(j, R)
        coeff = 1.0 / (contact.eta * dt)
        builder.add(row, row, coeff)
        builder.add_rhs(row, coeff * curve_old.r[j] - sig_sign * contact.sigma)


def lumped_node_normals(frames, J: int) -> np.ndarray:
    """Vertex-lumped weighted normals N_i = (l_i n_i + l_{i+1} n_{i+1}) / 2."""
    ln = frames.lengths[:, None] * frames.normal
    N = np.zeros((J + 1, 2))
    N[:-1] += 0.5 * ln
    N[1:] += 0.5 * ln
    return N


def vertex_anisotropy_vector(model: AnisotropyModel, frames, J: int) -> np.ndarray:
    """Vertex interpolant of gamma(theta) n - gamma'(theta) tau.

    Equal-weight average of the adjacent element values, one-sided at the
    endpoints; reduces to the exact value on straight runs.
    """
    g, gp, _ = eval_gamma(model, frames.theta)
    elem = g[:, None] * frames.normal - gp[:, None] * frames.tau
    omega = np.zeros((J + 1, 2))
    omega[0] = elem[0]
    omega[-1] = elem[-1]
    if J > 1:
        omega[1:-1] = 0.5 * (elem[:-1] + elem[1:])
    return omega


def eval_lambda_half(
    curve_old: GeneratingCurve,
    model: AnisotropyModel,
    node_index: int,
    mu_value: float | None = None,
):
    """Curvature-compensating multiplier at one node.

    At the axis node the multiplier couples to the unknown chemical
    potential, -mu/2; pass the current value through ``mu_value``.  At all
    other nodes it is explicit data from the old curve.
    """
    j = int(node_index)
    if curve_old.topology == INNER_ON_AXIS and j == 0:
        if mu_value is None:
            raise ValueError("axis node couples to mu; supply mu_value")
        return -0.5 * mu_value
    rj = curve_old.r[j]
    if rj <= 0.0:
        raise CurveError(f"node {j} has r = 0 but is not flagged as an axis node")
    frames = element_frames(curve_old)
    omega = vertex_anisotropy_vector(model, frames, curve_old.J)
    return float(omega[j, 0] / rj)


def _lambda_data(curve_old, model, frames):
    """Per-node explicit lambda values; NaN marks the axis-coupled node."""
    J = curve_old.J
    omega = vertex_anisotropy_vector(model, frames, J)
    lam = np.empty(J + 1)
    start = 0
    if curve_old.topology == INNER_ON_AXIS:
        lam[0] = np.nan
        start = 1
    r = curve_old.r
    if np.any(r[start:] <= 0.0):
        j = start + int(np.argmin(r[start:]))
        raise CurveError(f"node {j} has r = 0 but is not flagged as an axis node")
    lam[start:] = omega[start:, 0] / r[start:]
    return lam


def _curvature_coupling_linear(builder, dofmap, curve_old, model, frames):
    """<mu + lambda, n^m . psi |d_rho X^m|> rows for the L/V second equation."""
    J = dofmap.J
    N = lumped_node_normals(frames, J)
    lam = _lambda_data(curve_old, model, frames)
    for comp in (R, Z):
        free = dofmap.r_free if comp == R else dofmap.z_free
        for i in range(J + 1):
            if not free[i]:
                continue
            row = _full_index(i, comp)
            if np.isnan(lam[i]):
                builder.add(row, _full_index(i, MU), 0.5 * N[i, comp])
            else:
                builder.add(row, _full_index(i, MU), N[i, comp])
                builder.add_rhs(row, -lam[i] * N[i, comp])


def _first_equation_linear(builder, curve_old, frames, dt):
    """(1/dt) <r^m (X_new - X_old), phi n^m |d_rho X^m|> rows (mu-test)."""
    J = curve_old.J
    N = lumped_node_normals(frames, J)
    i = np.arange(J + 1)
    rows = _full_index(i, MU)
    rN = curve_old.r[:, None] * N
    builder.add(rows, _full_index(i, R), rN[:, 0] / dt)
    builder.add(rows, _full_index(i, Z), rN[:, 1] / dt)
    builder.add_rhs(rows, np.einsum("ij,ij->i", rN, curve_old.nodes) / dt)


def assemble_P_iterate(
    curve_old: GeneratingCurve,
    iterate_curve: GeneratingCurve,
    model: AnisotropyModel,
    spec: EnergyMatrixSpec,
    config: SchemeConfig,
) -> StepSystem:
    dofmap = DofMap.build(curve_old.topology, curve_old.J)
    frames = element_frames(curve_old)
    it_frames = element_frames(iterate_curve)
    Bmats = eval_B(spec, model, frames.theta)
    builder = _Builder(curve_old.J)
    fval = _weighted_normal_endpoint_values(curve_old, iterate_curve)
    wm, w0, wp = _node_coupling_weights(fval)
    _f_coupling_first_equation(builder, curve_old, wm, w0, wp, config.dt)
    _mu_laplacian(builder, curve_old, frames)
    _f_coupling_second_equation(builder, dofmap, wm, w0, wp)
    _gamma_load(builder, dofmap, model, it_frames)
    _stiffness(builder, dofmap, curve_old, frames, Bmats, r_weighted=True)
    _boundary_terms_P(builder, dofmap, curve_old, iterate_curve, config.contact, config.dt)
    return builder.finish(dofmap)


def assemble_L_step(
    curve_old: GeneratingCurve,
    model: AnisotropyModel,
    spec: EnergyMatrixSpec,
    config: SchemeConfig,
) -> StepSystem:
    dofmap = DofMap.build(curve_old.topology, curve_old.J)
    frames = element_frames(curve_old)
    Bmats = eval_B(spec, model, frames.theta)
    builder = _Builder(curve_old.J)
    _first_equation_linear(builder, curve_old, frames, config.dt)
    _mu_laplacian(builder, curve_old, frames)
    _curvature_coupling_linear(builder, dofmap, curve_old, model, frames)
    _stiffness(builder, dofmap, curve_old, frames, Bmats, r_weighted=False)
    _boundary_terms_linear(builder, dofmap, curve_old, config.contact, config.dt)
    return builder.finish(dofmap)


def assemble_V_iterate(
    curve_old: GeneratingCurve,
    iterate_curve: GeneratingCurve,
    model: AnisotropyModel,
    spec: EnergyMatrixSpec,
    config: SchemeConfig,
) -> StepSystem:
    dofmap = DofMap.build(curve_old.topology, curve_old.J)
    frames = element_frames(curve_old)
    Bmats = eval_B(spec, model, frames.theta)
    builder = _Builder(curve_old.J)
    fval = _weighted_normal_endpoint_values(curve_old, iterate_curve)
    wm, w0, wp = _node_coupling_weights(fval)
    _f_coupling_first_equation(builder, curve_old, wm, w0, wp, config.dt)
    _mu_laplacian(builder, curve_old, frames)
    _curvature_coupling_linear(builder, dofmap, curve_old, model, frames)
    _stiffness(builder, dofmap, curve_old, frames, Bmats, r_weighted=False)
    _boundary_terms_linear(builder, dofmap, curve_old, config.contact, config.dt)
    return builder.finish(dofmap)


def _curve_from_solution(x: np.ndarray, dofmap: DofMap, curve_old: GeneratingCurve):
    r = np.zeros(dofmap.J + 1)
    z = np.zeros(dofmap.J + 1)
    mu = np.zeros(dofmap.J + 1)
    for j in range(dofmap.J + 1):
        ir, iz, imu = dofmap.index[j]
        r[j] = x[ir] if ir >= 0 else 0.0
        z[j] = x[iz] if iz >= 0 else 0.0
        mu[j] = x[imu]
    curve = GeneratingCurve(r, z, curve_old.topology)
    return curve, mu


@dataclass(frozen=True)
class StepResult:
    curve: GeneratingCurve
    mu: np.ndarray
    picard_iters: int
    dt: float


ANDERSON_DEPTH = 8


def _solve_once(curve_old, model, spec, config: SchemeConfig) -> StepResult:
    if config.method == METHOD_L:
        system = assemble_L_step(curve_old, model, spec, config)
        curve, mu = _curve_from_solution(system.solve(), system.dofmap, curve_old)
        curve.validate()
        return StepResult(curve, mu, 1, config.dt)
    assemble = assemble_P_iterate if config.method == METHOD_P else assemble_V_iterate

    def sweep_from(nodes: np.ndarray):
        guess = GeneratingCurve(nodes[:, 0].copy(), nodes[:, 1].copy(), curve_old.topology)
        system = assemble(curve_old, guess, model, spec, config)
        x = system.solve()
        if not np.all(np.isfinite(x)):
            raise PicardDivergence("non-finite iterate")
        return _curve_from_solution(x, system.dofmap, curve_old)

    # Frozen-coefficient sweeps with Anderson mixing over the iterate
    # history: the tangential rearrangement mode of the P/V fixed point
    # contracts slowly under plain substitution, and the mixing removes it
    # without touching the fixed point itself.
    iterate = curve_old.nodes
    hist_x: list[np.ndarray] = []
    hist_g: list[np.ndarray] = []
    for sweep in range(1, config.picard_max + 1):
        candidate, mu = sweep_from(iterate)
        g = candidate.nodes
        disp = float(np.max(np.linalg.norm(g - iterate, axis=1)))
        if disp <= config.picard_tol:
            try:
                candidate.validate()
            except CurveError as exc:
                raise PicardDivergence(str(exc)) from exc
            return StepResult(candidate, mu, sweep, config.dt)
        hist_x.append(iterate.reshape(-1))
        hist_g.append(g.reshape(-1))
        if len(hist_x) > ANDERSON_DEPTH:
            hist_x.pop(0)
            hist_g.pop(0)
        nxt = g
        if len(hist_x) >= 2:
            res = [gg - xx for gg, xx in zip(hist_g, hist_x)]
            dres = np.stack([res[i + 1] - res[i] for i in range(len(res) - 1)], axis=1)
            dg = np.stack(
                [hist_g[i + 1] - hist_g[i] for i in range(len(hist_g) - 1)], axis=1
            )
            coef, *_ = np.linalg.lstsq(dres, res[-1], rcond=None)
            mixed = (hist_g[-1] - dg @ coef).reshape(-1, 2)
            if np.all(np.isfinite(mixed)) and np.all(mixed[1:, 0] > 0.0):
                nxt = mixed
        iterate = nxt
    raise PicardDivergence(
        f"no contraction within {config.picard_max} sweeps (last displacement {disp:.3e})"
    )


def solve_step(
    curve_old: GeneratingCurve,
    model: AnisotropyModel,
    spec: EnergyMatrixSpec,
    config: SchemeConfig,
) -> StepResult:
    """Advance one accepted step, halving dt on Picard non-convergence."""
    dt = config.dt
    last: PicardDivergence | None = None
    for _ in range(config.dt_halvings + 1):
        trial = SchemeConfig(
            method=config.method,
            matrix=config.matrix,
            contact=config.contact,
            dt=dt,
            picard_tol=config.picard_tol,
            picard_max=config.picard_max,
            dt_halvings=config.dt_halvings,
        )
        try:
            return _solve_once(curve_old, model, spec, trial)
        except PicardDivergence as exc:
            last = exc
            dt *= 0.5
    raise SolverError(f"step failed after {config.dt_halvings} dt halvings: {last}")
