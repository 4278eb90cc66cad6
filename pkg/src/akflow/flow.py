"""Symplectic curvature flow in Chern form, RK4 integration and evolution checks.

The evolved unknowns are (omega, J); g is recomputed from them at every
stage.  Evolution formulas are checked by central time differences about the
middle of three consecutive saved states.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .connection import covariant_derivative
from .curvature import GeometryCache
from .fields import ConfigurationError, TensorField, ein, l2_mean, max_abs, project_type
from .structure import EXACT, FD, AlmostKahlerStructure, conjugation_family

CHECKS = ("tau_norm", "chern_scalar", "tau_tensor", "tau_norm_general", "riemann_scalar")


class StepRejected(RuntimeError):
    """Structure drift exceeded the tolerance after a step."""

    def __init__(self, msg, drift, location):
        super().__init__(msg)
        self.drift = drift
        self.location = location


def _cache(x):
    return x if isinstance(x, GeometryCache) else GeometryCache(x)


def _twozero(G, f):
    return project_type(f, (0, 1), G.s, "twozero")


def j_velocity(G):
    """Jdot_i^k = 4 omega^re nabla_r tau^k_ei, stored as [i, k]."""
    return 4.0 * ein("re,rkei->ik", G.s.omega_inv, G.nabla_tau_up)


def j_velocity_original(G):
    """Jdot = -(P^{2,0+0,2} - 2 J Rc^{2,0+0,2}) g^{-1}."""
    s = G.s
    m = _twozero(G, G.P) - 2.0 * ein("ie,ew->iw", s.J, _twozero(G, G.rc))
    return -ein("iw,wk->ik", m, s.g_inv)


def flow_rhs(s):
    """Velocities of the flow; accepts a structure or a GeometryCache."""
    G = _cache(s)
    s = G.s
    omega_dot = -G.P
    J_dot = j_velocity(G)
    g_dot = (-ein("is,js->ij", s.J, G.P)
             + 4.0 * ein("ra,raij->ij", s.g_inv, G.nabla_tau))
    g_dot_chain = ein("is,js->ij", J_dot, s.omega) + ein("is,js->ij", s.J, omega_dot)
    return {"omega_dot": omega_dot, "J_dot": J_dot, "g_dot": g_dot,
            "g_dot_chain": g_dot_chain}


# state and integration ------------------------------------------------------------

@dataclass
class FlowConfig:
    dt: float = 1e-3
    steps: int = 10
    drift_tol: float = 1e-8
    retraction: str = "off"
    backend: str = FD
    cadence: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if int(self.steps) < 1:
            raise ConfigurationError("steps must be at least 1")
        if self.retraction not in ("off", "renormalize"):
            raise ConfigurationError(f"unknown retraction {self.retraction!r}")
        if self.backend != FD:
            raise ConfigurationError("time stepping uses the fd backend only")
        if int(self.cadence) < 1:
            raise ConfigurationError("cadence must be at least 1")


@dataclass
class FlowState:
    t: float
    omega: TensorField
    J: TensorField
    lam: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def structure(self):
        return AlmostKahlerStructure(self.J, self.omega)

    @property
    def g(self):
        return self.structure.g

    @classmethod
    def from_structure(cls, s, t=0.0, lam=None):
        s = s.values_only() if s.backend == EXACT else s
        st = cls(t, s.omega, s.J, lam)
        st.diagnostics = diagnostics(s)
        return st


def drifts(J, omega):
    """Largest violations of J^2 = -I and of the compatibility of g = J omega."""
    d = J.values
    j2 = d @ d + np.eye(d.shape[-1])
    graw = ein("is,js->ij", J, omega).values
    gs = 0.5 * (graw + np.swapaxes(graw, -1, -2))
    compat = d @ gs @ np.swapaxes(d, -1, -2) - gs
    asym = graw - np.swapaxes(graw, -1, -2)
    j2n = np.max(np.abs(j2), axis=(-1, -2))
    cn = np.maximum(np.max(np.abs(compat), axis=(-1, -2)), np.max(np.abs(asym), axis=(-1, -2)))
    return j2n, cn


def diagnostics(s):
    G = GeometryCache(s)
    t2 = G.tau_norm2.values
    j2n, cn = drifts(s.J, s.omega)
    return {"rho_mean": float(np.mean(G.rho.values)),
            "tau2_max": float(np.max(t2)),
            "tau2_l2": float(np.sqrt(np.mean(t2 ** 2))),
            "j2_drift": float(np.max(j2n)),
            "compat_drift": float(np.max(cn)),
            "scalR_mean": float(np.mean(G.scal.values))}


def renormalize(J):
    """Project J to J^2 = -I with J (-J^2)^{-1/2}."""
    d = J.values
    m = -(d @ d)
    w, V = np.linalg.eig(m)
    inv_sqrt = (V * (1.0 / np.sqrt(w))[..., None, :]) @ np.linalg.inv(V)
    return TensorField.from_values(J.grid, np.real(d @ inv_sqrt), "lu")


def _rhs_pair(J, omega):
    r = flow_rhs(AlmostKahlerStructure(J, omega))
    return r["omega_dot"], r["J_dot"]


def step_rk4(state, cfg):
    dt = cfg.dt
    w0, J0 = state.omega, state.J
    kw1, kJ1 = _rhs_pair(J0, w0)
    kw2, kJ2 = _rhs_pair(J0 + 0.5 * dt * kJ1, w0 + 0.5 * dt * kw1)
    kw3, kJ3 = _rhs_pair(J0 + 0.5 * dt * kJ2, w0 + 0.5 * dt * kw2)
    kw4, kJ4 = _rhs_pair(J0 + dt * kJ3, w0 + dt * kw3)
    w = w0 + (dt / 6.0) * (kw1 + 2.0 * kw2 + 2.0 * kw3 + kw4)
    J = J0 + (dt / 6.0) * (kJ1 + 2.0 * kJ2 + 2.0 * kJ3 + kJ4)
    # omega stays antisymmetric up to roundoff; remove it
    w = TensorField(w.grid, 0.5 * (w.data - np.swapaxes(w.data, -1, -2)), "ll")
    if cfg.retraction == "renormalize":
        J = renormalize(J)
    j2n, cn = drifts(J, w)
    worst = np.maximum(j2n, cn)
    loc = np.unravel_index(int(np.argmax(worst)), worst.shape)
    if worst[loc] > cfg.drift_tol:
        kind = "J^2 + I" if j2n[loc] >= cn[loc] else "compatibility"
        raise StepRejected(
            f"step at t={state.t:.6g} rejected: {kind} drift {worst[loc]:.3e} exceeds "
            f"{cfg.drift_tol:.1e} at grid point {tuple(int(i) for i in loc)}",
            float(worst[loc]), tuple(int(i) for i in loc))
    new = FlowState(state.t + dt, w, J, state.lam)
    new.diagnostics = diagnostics(new.structure)
    return new


@dataclass
class Trajectory:
    states: list
    dt: float
    J_dot: list | None = None  # only for synthetic paths

    def rows(self):
        return [{"t": st.t, **st.diagnostics} for st in self.states]


def run(state, cfg):
    states = [state]
    cur = state
    for n in range(1, int(cfg.steps) + 1):
        cur = step_rk4(cur, cfg)
        if n % int(cfg.cadence) == 0:
            states.append(cur)
    return Trajectory(states, cfg.dt * int(cfg.cadence))


def synthetic_j_path(grid, eps, rate=1.0, dt=1e-3, n=3, **family):
    """Conjugation family with eps(t) = eps + rate t and omega fixed.

    Every member is almost Kaehler with the same omega, so this is a pure
    J-path; tau^i_jk depends only on J.
    """
    states = []
    for k in range(n):
        t = (k - (n - 1) // 2) * dt
        s = conjugation_family(grid, eps=eps + rate * t, backend=FD, **family)
        states.append(FlowState(t, s.omega, s.J))
    return Trajectory(states, dt)


# evolution checks -----------------------------------------------------------------

@dataclass
class EvolutionResidual:
    which: str
    t: float
    dt: float
    max_abs: float
    relative: float
    l2_mean: float

    def as_dict(self):
        return dict(which=self.which, t=self.t, dt=self.dt, max_abs=self.max_abs,
                    relative=self.relative, l2_mean=self.l2_mean)


def _omega_tau_tau_dim4(G):
    """g^dr g^ap g^bq Omega_rpq^e (tau_edc tau_abc + 2 tau_ced tau_acb)."""
    s, o, t = G.s, G.omega_up, G.tau_low
    gi = s.g_inv
    a = ein("dr,ap,bq,rpqe,edc,abf,cf->", gi, gi, gi, o, t, t, gi)
    b = ein("dr,ap,bq,rpqe,ced,afb,cf->", gi, gi, gi, o, t, t, gi)
    return a + 2.0 * b


def tau_norm_rhs(G):
    """(d_t - Delta)|tau|^2 along the flow; the dimension-4 form when dim = 4."""
    from .identities import omega_tau_tau
    if G.s.dim == 4:
        return -2.0 * G.norm2(G.nabla_tau) - 4.0 * _omega_tau_tau_dim4(G)
    return G.norm2(G.b) - 2.0 * G.norm2(G.nabla_tau) - omega_tau_tau(G)


def chern_scalar_rhs(G):
    """(d_t - Delta) rho along the flow."""
    from .identities import div_tau_term
    s = G.s
    gi = s.g_inv
    ddb = covariant_derivative(covariant_derivative(G.b, G.conn.upsilon), G.conn.upsilon)
    return (4.0 * G.norm2(G.rc - G.b) + 2.0 * G.chern_laplacian(G.tau_norm2)
            + 4.0 * ein("ip,jq,jipq->", gi, gi, ddb) + 16.0 * div_tau_term(G))


def tau_tensor_rhs(G, Jd):
    """Variation of tau^i_jk in terms of Jdot (stored Jdot[k, i] = Jdot_k^i)."""
    s, t = G.s, G.tau
    J = s.J
    DJd = covariant_derivative(Jd, G.conn.upsilon)  # [p, k, i] = nabla_p Jdot_k^i
    lin = (0.25 * (ein("jp,pki->ijk", J, DJd) - ein("jp,kpi->ijk", J, DJd))
           - 0.25 * (ein("kp,pji->ijk", J, DJd) - ein("kp,jpi->ijk", J, DJd)))
    quad = 0.5 * (ein("pd,kp,ijd->ijk", Jd, J, t) - ein("pd,jp,ikd->ijk", Jd, J, t)
                  + ein("pd,di,pjk->ijk", Jd, J, t))
    return lin + quad


def tau_norm_general_rhs(G, g_dot, Jd):
    s = G.s
    DJd = covariant_derivative(Jd, G.conn.upsilon)  # [p, w, e]
    return G.inner(g_dot, G.b) + 2.0 * ein("ap,bw,bae,pwe->", s.g_inv, s.omega_inv,
                                           G.tau_low, DJd)


def riemann_scalar_rhs(G, g_dot):
    s = G.s
    gi, ups = s.g_inv, G.conn.upsilon
    tr = ein("ij,ij->", gi, g_dot)
    ddg = covariant_derivative(covariant_derivative(g_dot, ups), ups)  # [j, i, p, q]
    flux = ein("pd,pqw->dqw", g_dot, G.tau)
    dflux = covariant_derivative(flux, ups)  # [j, d, q, w]
    return (-G.inner(g_dot, G.rc) - G.chern_laplacian(tr)
            + ein("ip,jq,jipq->", gi, gi, ddg) - ein("dw,qj,jdqw->", gi, gi, dflux))


def check_evolution(traj, which, center=None):
    """Central time difference of the left side against the formula at the center."""
    if which not in CHECKS:
        raise ConfigurationError(f"unknown evolution check {which!r}")
    if len(traj.states) < 3:
        raise ValueError("evolution checks need at least three saved states")
    c = len(traj.states) // 2 if center is None else center
    if not 0 < c < len(traj.states) - 1:
        raise ValueError("center state must have a neighbour on each side")
    prev, mid, nxt = traj.states[c - 1], traj.states[c], traj.states[c + 1]
    dt = traj.dt
    Gm, Gp, Gn = (GeometryCache(st.structure) for st in (mid, prev, nxt))
    ddt = lambda f: (f(Gn) - f(Gp)) * (0.5 / dt)
    if which == "tau_tensor":
        Jd = (nxt.J - prev.J) * (0.5 / dt)
        terms = [ddt(lambda G: G.tau), -tau_tensor_rhs(Gm, Jd)]
    else:
        rhs = flow_rhs(Gm)
        if which == "tau_norm":
            terms = [ddt(lambda G: G.tau_norm2), -Gm.chern_laplacian(Gm.tau_norm2),
                     -tau_norm_rhs(Gm)]
        elif which == "chern_scalar":
            terms = [ddt(lambda G: G.rho), -Gm.chern_laplacian(Gm.rho), -chern_scalar_rhs(Gm)]
        elif which == "tau_norm_general":
            terms = [ddt(lambda G: G.tau_norm2),
                     -tau_norm_general_rhs(Gm, rhs["g_dot"], rhs["J_dot"])]
        else:
            terms = [ddt(lambda G: G.scal), -riemann_scalar_rhs(Gm, rhs["g_dot"])]
    total = terms[0]
    for x in terms[1:]:
        total = total + x
    raw = max_abs(total)
    scale = max(max_abs(x) for x in terms)
    return EvolutionResidual(which, mid.t, dt, raw, raw / scale if scale > 0 else 0.0,
                             l2_mean(total))


def evolution_study(grid, which, dts, eps=0.05, **family):
    """Residuals of one check at several step sizes on a fixed grid.

    Flow checks integrate two RK4 steps from the family; the tau_tensor check
    uses the synthetic J-path.  Returns residuals and successive ratios.
    """
    out = [_single_residual(grid, which, dt, eps, **family) for dt in dts]
    ratios = [a.max_abs / b.max_abs if b.max_abs > 0 else float("inf")
              for a, b in zip(out, out[1:])]
    return out, ratios


def _single_residual(grid, which, dt, eps, **family):
    if which == "tau_tensor":
        traj = synthetic_j_path(grid, eps, dt=dt, **family)
    else:
        st = FlowState.from_structure(conjugation_family(grid, eps=eps, **family))
        traj = run(st, FlowConfig(dt=dt, steps=2, drift_tol=np.inf))
    return check_evolution(traj, which)


def h_refinement(grid, which, dt, eps=0.05, **family):
    """Residuals at one dt on the grid and on half its profile resolution.

    Returns (coarse, fine, coarse/fine).  A factor near 1 means the time
    differencing error dominates.
    """
    axis = family.get("axis", 0)
    coarse_grid = grid.with_resolution(axis, grid.resolutions[axis] // 2)
    coarse = _single_residual(coarse_grid, which, dt, eps, **family)
    fine = _single_residual(grid, which, dt, eps, **family)
    factor = coarse.max_abs / fine.max_abs if fine.max_abs > 0 else float("inf")
    return coarse, fine, factor


# static structures ------------------------------------------------------------------

@dataclass
class StaticReport:
    lam: float
    p_residual: float
    j_residual: float
    tol: float

    @property
    def passed(self):
        return self.p_residual <= self.tol and self.j_residual <= self.tol

    def as_dict(self):
        return dict(lam=self.lam, p_residual=self.p_residual, j_residual=self.j_residual,
                    tol=self.tol, passed=self.passed)


def static_check(s, lam=0.0, tol=1e-12):
    """Static means omega_dot = -lam omega and J_dot = 0, i.e. P = lam omega."""
    G = _cache(s)
    r = flow_rhs(G)
    return StaticReport(lam, max_abs(G.P - G.s.omega * lam), max_abs(r["J_dot"]), tol)
