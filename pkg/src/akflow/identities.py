"""Registry of geometric identities as executable residual checks.

Every check returns one or more equations.  An equation is a list of
tensor fields whose sum should vanish, plus optional reference fields that
set the magnitude used for the relative residual (needed when an identity
has a single term, such as a trace that should be zero).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .connection import covariant_derivative, lower_last
from .curvature import GeometryCache, scal_times
from .fields import (JetOrderError, TensorField, delta, ein, l2_mean, max_abs, project_type)
from .structure import EXACT, FD, conjugation_family, flat_kahler

REGISTRY_VERSION = "1.0"
JET_CLASSES = ("algebraic", "first_order", "second_order", "third_order")
EXACT_TOL = 1e-9
FD_TOL = 1e-3
FLOOR = 1e-11  # relative residual regarded as machine precision


@dataclass
class Equation:
    terms: list
    refs: list = field(default_factory=list)


def eq(*terms, refs=()):
    return Equation(list(terms), list(refs))


@dataclass(frozen=True)
class IdentityCheck:
    id: str
    description: str
    formula: str
    jet_class: str
    evaluate: object
    notes: str = ""

    @property
    def backends(self):
        return frozenset({FD}) if self.jet_class == "third_order" else frozenset({FD, EXACT})


REGISTRY = {}


def identity(id, description, formula, jet_class, notes=""):
    assert jet_class in JET_CLASSES

    def wrap(fn):
        if id in REGISTRY:
            raise ValueError(f"duplicate identity id {id}")
        REGISTRY[id] = IdentityCheck(id, description, formula, jet_class, fn, notes)
        return fn
    return wrap


def _sum(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def equation_residual(e):
    total = _sum(e.terms)
    raw = max_abs(total)
    scale = max([max_abs(t) for t in e.terms] + [max_abs(r) for r in e.refs])
    rel = raw / scale if scale > 0 else 0.0
    return raw, rel, l2_mean(total)


# small helpers ---------------------------------------------------------------

def perm(t, spec):
    return ein(spec, t)


def twozero(G, f):
    return project_type(f, (0, 1), G.s, "twozero")


def oneone(G, f):
    return project_type(f, (0, 1), G.s, "oneone")


def mixed_ricci(G):
    """Rc_a^b = Rc_ac g^{cb}."""
    return ein("ac,cb->ab", G.rc, G.s.g_inv)


def probe_vector(s, seed=20240601):
    """Smooth deterministic vector field X^p, jet-compatible with s."""
    rng = np.random.default_rng(seed)
    grid, dim = s.grid, s.dim
    levels = s.J.levels
    axes = [s.J.jet_axis] if s.J.is_jet else [a for a, n in enumerate(grid.resolutions) if n > 1]
    data = np.zeros((levels,) + tuple(grid.shape) + (dim,))
    data[0] += rng.normal(size=dim)
    for a in axes:
        x = grid.coordinate(a)
        amp = rng.normal(size=dim)
        phase = rng.uniform(0, 2 * np.pi, size=dim)
        for k in range(levels):
            data[k] += amp * np.sin(x[..., None] + phase + k * np.pi / 2)
    return TensorField(grid, data, "u", s.J.jet_axis)


# structure -------------------------------------------------------------------

@identity("J-SQUARED", "almost complex structure squares to minus identity",
          "J_i^a J_a^k + delta_i^k = 0", "algebraic")
def _j2(G):
    s = G.s
    return [eq(ein("ia,ak->ik", s.J, s.J), delta(s.grid, s.J), refs=[s.J])]


@identity("G-COMPAT", "metric is J-invariant", "g_ij = J_i^a J_j^b g_ab", "algebraic")
def _gcompat(G):
    s = G.s
    return [eq(s.g, -ein("ia,jb,ab->ij", s.J, s.J, s.g))]


@identity("OMEGA-FROM-G", "symplectic form from metric and J", "omega_ij = J_i^a g_ja",
          "algebraic")
def _omega_from_g(G):
    s = G.s
    return [eq(s.omega, -ein("ia,ja->ij", s.J, s.g))]


@identity("G-FROM-OMEGA", "metric from symplectic form and J", "g_ij = J_i^s omega_js",
          "algebraic")
def _g_from_omega(G):
    s = G.s
    return [eq(s.g, -ein("is,js->ij", s.J, s.omega))]


@identity("INVERSE-FORMS", "inverse metric and inverse symplectic form via J",
          "g^ij = J_s^i omega^js ; omega^ij = J_s^i g^js", "algebraic")
def _inv_forms(G):
    s = G.s
    return [eq(s.g_inv, -ein("si,js->ij", s.J, s.omega_inv)),
            eq(s.omega_inv, -ein("si,js->ij", s.J, s.g_inv))]


@identity("J-FORMS", "J recovered from omega and g",
          "J_i^j = omega^js g_is = omega_is g^js", "algebraic")
def _j_forms(G):
    s = G.s
    return [eq(s.J, -ein("js,is->ij", s.omega_inv, s.g)),
            eq(s.J, -ein("is,js->ij", s.omega, s.g_inv))]


@identity("OMEGA-INVERSE", "inverse symplectic form", "omega^ac omega_cb = delta^a_b",
          "algebraic")
def _omega_inverse(G):
    s = G.s
    return [eq(ein("ac,cb->ab", s.omega_inv, s.omega), -delta(s.grid, s.J, "ul"))]


@identity("D-OMEGA", "symplectic form is closed",
          "d_i omega_jk + d_j omega_ki + d_k omega_ij = 0", "first_order")
def _domega(G):
    from .fields import partial
    dw = partial(G.s.omega)
    return [eq(dw, perm(dw, "jki->ijk"), perm(dw, "kij->ijk"), refs=[G.s.omega])]


# connection ------------------------------------------------------------------

@identity("LC-METRIC", "Levi-Civita connection is metric", "D_k g_ij = 0", "first_order")
def _lc_metric(G):
    return [eq(covariant_derivative(G.s.g, G.conn.gamma), refs=[G.conn.gamma])]


@identity("CHERN-PARALLEL", "Chern connection preserves omega, J and g",
          "nabla omega = 0 ; nabla J = 0 ; nabla g = 0", "first_order")
def _chern_parallel(G):
    u = G.conn.upsilon
    return [eq(covariant_derivative(f, u), refs=[u]) for f in (G.s.omega, G.s.J, G.s.g)]


@identity("TAU-11", "torsion has no (1,1) part as a vector-valued 2-form",
          "tau^k_ij = -J_i^a J_j^b tau^k_ab", "first_order")
def _tau11(G):
    t = G.tau
    return [eq(t, ein("ia,jb,kab->kij", G.s.J, G.s.J, t))]


@identity("N-8TAU", "Nijenhuis tensor is eight times the Chern torsion", "N^i_jk = 8 tau^i_jk",
          "first_order",
          notes="N = 2(J_j^p d_p J_k^i - J_k^p d_p J_j^i - J_p^i d_j J_k^p + J_p^i d_k J_j^p); "
                "normalizations without the leading 2 differ by that factor")
def _n8tau(G):
    return [eq(G.conn.nijenhuis, -8.0 * G.tau)]


@identity("THETA-N", "contorsion in terms of the Nijenhuis tensor", "8 Theta_ijk = N_jki",
          "first_order")
def _theta_n(G):
    s = G.s
    th, n = lower_last(G.conn.theta, s), lower_last(G.conn.nijenhuis, s)
    return [eq(8.0 * th, -perm(n, "jki->ijk"))]


@identity("N-DOMEGA", "Nijenhuis tensor as a Levi-Civita derivative of omega",
          "N^k_ij = 4 omega^kp D_p omega_ij ; D_i omega_jk = 1/4 omega_ip N^p_jk", "first_order")
def _n_domega(G):
    s, N, Dw = G.s, G.conn.nijenhuis, G.d_omega
    return [eq(N, -4.0 * ein("kp,pij->kij", s.omega_inv, Dw)),
            eq(Dw, -0.25 * ein("ip,pjk->ijk", s.omega, N))]


@identity("DJ-TAU", "Levi-Civita derivative of J through torsion",
          "D_k J_i^m = 2 omega^mv tau_vik", "first_order")
def _dj_tau(G):
    return [eq(G.conn.dJ, -2.0 * ein("mv,vik->kim", G.s.omega_inv, G.tau_low))]


@identity("N-SYM", "lowered Nijenhuis tensor is J-anti-invariant in each pair",
          "N_ijk = -N_ibc J_j^b J_k^c = -J_i^a J_j^b N_abk", "first_order")
def _n_sym(G):
    s = G.s
    n = lower_last(G.conn.nijenhuis, s)
    return [eq(n, ein("ibc,jb,kc->ijk", n, s.J, s.J)), eq(n, ein("ia,jb,abk->ijk", s.J, s.J, n))]


@identity("TAU-SYM", "torsion antisymmetry and J-anti-invariance",
          "tau_ijk = -tau_jik = -tau_isr J_j^s J_k^r = -J_i^p J_j^q tau_pqk", "first_order")
def _tau_sym(G):
    s, t = G.s, G.tau_low
    return [eq(t, perm(t, "jik->ijk")),
            eq(t, ein("isr,js,kr->ijk", t, s.J, s.J)),
            eq(t, ein("ip,jq,pqk->ijk", s.J, s.J, t))]


@identity("TAU-TYPE", "lowered torsion is (2,0+0,2) in every index pair",
          "[tau]^{1,1} on pairs (01), (12), (02) vanishes", "first_order")
def _tau_type(G):
    t = G.tau_low
    return [eq(project_type(t, p, G.s, "oneone"), refs=[t]) for p in ((0, 1), (1, 2), (0, 2))]


@identity("TAU-CYCLIC", "cyclic sum of the lowered torsion vanishes",
          "tau_ijk + tau_jki + tau_kij = 0", "first_order")
def _tau_cyclic(G):
    t = G.tau_low
    return [eq(t, perm(t, "jki->ijk"), perm(t, "kij->ijk"))]


@identity("TAU-TRACE", "every metric, symplectic and J trace of the torsion vanishes",
          "g^ab tau_abc = g^bc tau_abc = omega^ab tau_abc = omega^bc tau_abc = J_a^b tau^a_cb = 0",
          "first_order")
def _tau_trace(G):
    s, t = G.s, G.tau_low
    return [eq(ein("ab,abc->c", s.g_inv, t), refs=[t]),
            eq(ein("bc,abc->a", s.g_inv, t), refs=[t]),
            eq(ein("ab,abc->c", s.omega_inv, t), refs=[t]),
            eq(ein("bc,abc->a", s.omega_inv, t), refs=[t]),
            eq(ein("ab,acb->c", s.J, G.tau), refs=[t])]


@identity("TAUTAU-11", "the six quadratic torsion contractions are (1,1)",
          "(g|omega)^ab g^cd tau_iac tau_jbd, tau_iac tau_jdb, tau_aci tau_bdj have no (2,0+0,2) part",
          "first_order")
def _tautau11(G):
    s, t = G.s, G.tau_low
    out = []
    for m in (s.g_inv, s.omega_inv):
        for spec in ("ab,cd,iac,jbd->ij", "ab,cd,iac,jdb->ij", "ab,cd,aci,bdj->ij"):
            x = ein(spec, m, s.g_inv, t, t)
            out.append(eq(twozero(G, x), refs=[x]))
    return out


@identity("B-FORMS", "B-tensors from DJ agree with their torsion forms",
          "B1 = 4 g^kl g^wv tau_vki tau_wlj ; B2 = 4 g_mn g^wv tau^n_iv tau^m_jw ; "
          "B = -2 tau^w_ik tau^k_jw", "first_order")
def _b_forms(G):
    bt = G.b_from_tau
    return [eq(G.b1, -bt["b1"]), eq(G.b2, -bt["b2"]), eq(G.b, -bt["b"])]


@identity("B-TRACE", "traces of the B-tensors",
          "|tau|^2 = 1/4 tr B1 = 1/4 tr B2 = -tr B", "first_order",
          notes="trace of B taken with coefficient -1; forced by B = B1/4 - B2/2")
def _b_trace(G):
    s, t2 = G.s, G.tau_norm2
    tr = lambda b: ein("ij,ij->", s.g_inv, b)
    return [eq(t2, -0.25 * tr(G.b1)), eq(t2, -0.25 * tr(G.b2)), eq(t2, tr(G.b))]


@identity("B-NORMS", "four-dimensional norm relations of the B-tensors",
          "|B1|^2 = 8|tau|^4, |B2|^2 = 4|tau|^4, <B1,B2> = 4|tau|^4, |B|^2 = 1/2 |tau|^4",
          "first_order", notes="dimension 4 only")
def _b_norms(G):
    if G.s.dim != 4:
        return None
    t4 = ein(",->", G.tau_norm2, G.tau_norm2)
    return [eq(G.norm2(G.b1), -8.0 * t4), eq(G.norm2(G.b2), -4.0 * t4),
            eq(G.inner(G.b1, G.b2), -4.0 * t4), eq(G.norm2(G.b), -0.5 * t4)]


@identity("B2-METRIC", "in dimension 4 the second B-tensor is |tau|^2 g", "B2 = |tau|^2 g",
          "first_order", notes="dimension 4 only")
def _b2_metric(G):
    if G.s.dim != 4:
        return None
    return [eq(G.b2, -scal_times(G.tau_norm2, G.s.g))]


@identity("PHI-ID", "phi in torsion and B1 forms",
          "phi_ij = 4 omega^mk g^ld tau_mli tau_kdj = J_i^v B1_vj", "first_order")
def _phi(G):
    s, t = G.s, G.tau_low
    return [eq(G.phi, -4.0 * ein("mk,ld,mli,kdj->ij", s.omega_inv, s.g_inv, t, t)),
            eq(G.phi, -ein("iv,vj->ij", s.J, G.b1))]


# curvature -------------------------------------------------------------------

@identity("RM-SYM", "Riemann tensor symmetries",
          "Rm_ijkl = -Rm_jikl = -Rm_ijlk = Rm_klij ; Rm_ijkl + Rm_jkil + Rm_kijl = 0",
          "second_order")
def _rm_sym(G):
    r = G.rm
    return [eq(r, perm(r, "jikl->ijkl")), eq(r, perm(r, "ijlk->ijkl")),
            eq(r, -perm(r, "klij->ijkl")),
            eq(r, perm(r, "jkil->ijkl"), perm(r, "kijl->ijkl"))]


@identity("OMEGA-SYM", "Chern curvature symmetries",
          "Omega_ijkl = -Omega_jikl = -Omega_ijlk = Omega_ijab J_k^a J_l^b", "second_order")
def _omega_sym(G):
    o, J = G.omega_curv, G.s.J
    return [eq(o, perm(o, "jikl->ijkl")), eq(o, perm(o, "ijlk->ijkl")),
            eq(o, -ein("ijab,ka,lb->ijkl", o, J, J))]


@identity("RHO-TRACES", "Chern scalar curvature from either Ricci-type trace",
          "omega^ba P_ab = omega^dc S_cd", "second_order")
def _rho(G):
    return [eq(G.rho, -G._traces["rho_from_S"], refs=[G.P, G.S])]


@identity("BIANCHI-1", "first Bianchi identity with torsion",
          "Omega_abc^k + cyc = (nabla_a tau^k_bc + cyc) - (tau^k_as tau^s_bc + cyc)",
          "second_order")
def _bianchi1(G):
    o, n, t = G.omega_up, G.nabla_tau_up, G.tau
    lhs = [perm(o, "abck->kabc"), perm(o, "cabk->kabc"), perm(o, "bcak->kabc")]
    lin = [perm(n, "akbc->kabc"), perm(n, "bkca->kabc"), perm(n, "ckab->kabc")]
    quad = [ein("kas,sbc->kabc", t, t), ein("kcs,sab->kabc", t, t), ein("kbs,sca->kabc", t, t)]
    return [eq(*lhs, *[-x for x in lin], *quad)]


@identity("COMMUTATOR", "commutator of Chern derivatives on a vector field",
          "[nabla_a, nabla_b] X^p = Omega_abd^p X^d - tau^e_ab nabla_e X^p", "second_order")
def _commutator(G):
    X = probe_vector(G.s)
    u = G.conn.upsilon
    DX = covariant_derivative(X, u)
    DDX = covariant_derivative(DX, u)
    return [eq(DDX, -perm(DDX, "bap->abp"), -ein("abdp,d->abp", G.omega_up, X),
               ein("eab,ep->abp", G.tau, DX))]


@identity("T-SYM", "symmetries of the curvature-gap tensor T",
          "T_abij = -T_baij = -T_abji = -T_ijab", "second_order")
def _t_sym(G):
    T = G.t_tensor
    return [eq(T, perm(T, "baij->abij")), eq(T, perm(T, "abji->abij")),
            eq(T, perm(T, "ijab->abij"))]


@identity("T-GAP", "pair-exchange defect of the Chern curvature",
          "Omega_bdac - Omega_acbd = T_bdac", "second_order")
def _t_gap(G):
    o = G.omega_curv
    return [eq(o, -perm(o, "acbd->bdac"), -G.t_tensor)]


@identity("RM-OMEGA", "Riemann curvature from Chern curvature and torsion",
          "Rm_ijkl = Omega_ijkl + nabla_i tau_klj - nabla_j tau_kli + tau_sli g^sd tau_kdj "
          "- tau_slj g^sd tau_kdi + tau^c_ij tau_klc", "second_order")
def _rm_omega(G):
    s, n, tl, tu = G.s, G.nabla_tau, G.tau_low, G.tau
    return [eq(G.rm, -G.omega_curv, -perm(n, "iklj->ijkl"), perm(n, "jkli->ijkl"),
               -ein("sli,sd,kdj->ijkl", tl, s.g_inv, tl), ein("slj,sd,kdi->ijkl", tl, s.g_inv, tl),
               -ein("cij,klc->ijkl", tu, tl))]


@identity("RC-OMEGA", "Ricci curvature from Chern quantities",
          "Rc_jk = V_jk + g^il nabla_i tau_klj - g^sd tau_slj tau^l_kd + g^li tau^c_ij tau_klc",
          "second_order")
def _rc_omega(G):
    s, n, tl, tu = G.s, G.nabla_tau, G.tau_low, G.tau
    gi = s.g_inv
    return [eq(G.rc, -G.V, -ein("il,iklj->jk", gi, n), ein("sd,slj,lkd->jk", gi, tl, tu),
               -ein("li,cij,klc->jk", gi, tu, tl))]


def _v_traced_terms(G):
    s = G.s
    half_jp = 0.5 * ein("ka,ja->jk", s.J, G.P)
    div = ein("ur,rukj->jk", s.g_inv, G.nabla_tau)
    quad = ein("sje,eks->jk", G.tau, G.tau)
    return half_jp, div, quad


@identity("V-TRACED", "traced Chern curvature V",
          "V_jk = 1/2 J_k^a P_ja - g^ur nabla_r tau_ukj - tau^s_je tau^e_ks", "second_order")
def _v_traced(G):
    h, d, q = _v_traced_terms(G)
    return [eq(G.V, -h, d, q)]


@identity("RC-ID", "Ricci curvature through the Chern-Ricci form",
          "Rc_jk = 1/2 J_k^a P_ja - 2 g^ur nabla_r tau_ukj - 2 tau^s_je tau^e_ks", "second_order")
def _rc_id(G):
    h, d, q = _v_traced_terms(G)
    return [eq(G.rc, -h, 2.0 * d, 2.0 * q)]


@identity("SCAL-ID", "Riemannian versus Chern scalar curvature", "R = 1/2 rho - |tau|^2",
          "second_order")
def _scal(G):
    return [eq(G.scal, -0.5 * G.rho, G.tau_norm2)]


@identity("KI", "B-tensor from the (1,1) parts of Ricci and the Chern-Ricci form",
          "B_ij = Rc^{1,1}_ij - 1/2 J_i^s P^{1,1}_js", "second_order")
def _ki(G):
    return [eq(G.b, -oneone(G, G.rc), 0.5 * ein("is,js->ij", G.s.J, oneone(G, G.P)))]


@identity("V-2002", "(2,0+0,2) part of V", "V^{2,0+0,2}_ab = -g^mq nabla_m tau_qab",
          "second_order")
def _v2002(G):
    return [eq(twozero(G, G.V), ein("mq,mqab->ab", G.s.g_inv, G.nabla_tau), refs=[G.V])]


@identity("P-2002", "(2,0+0,2) part of the Chern-Ricci form",
          "P^{2,0+0,2}_ab = 2 omega^mn nabla_m tau_abn", "second_order")
def _p2002(G):
    return [eq(twozero(G, G.P), -2.0 * ein("mn,mabn->ab", G.s.omega_inv, G.nabla_tau),
               refs=[G.P])]


@identity("RC-2002", "(2,0+0,2) part of Ricci",
          "Rc^{2,0+0,2}_jk = -g^ur nabla_r (tau_ujk + tau_ukj)", "second_order")
def _rc2002(G):
    gi, n = G.s.g_inv, G.nabla_tau
    return [eq(twozero(G, G.rc), ein("ur,rujk->jk", gi, n), ein("ur,rukj->jk", gi, n),
               refs=[G.rc])]


@identity("RSTAR", "star-scalar curvature gap", "R - R* = -2 |tau|^2", "second_order")
def _rstar(G):
    return [eq(G.scal, -G.star_scal, 2.0 * G.tau_norm2)]


@identity("WEYL-TRACEFREE", "Weyl tensor is trace-free with Riemann symmetries",
          "g^il W_ijkl = 0 ; W_ijkl = -W_jikl = W_klij", "second_order")
def _weyl(G):
    W = G.weyl
    return [eq(ein("il,ijkl->jk", G.s.g_inv, W), refs=[G.rm]),
            eq(W, perm(W, "jikl->ijkl")), eq(W, -perm(W, "klij->ijkl"))]


@identity("LAP-OMEGA", "Levi-Civita rough Laplacian of omega",
          "Delta_D omega_ij = -P^{2,0+0,2}_ij - J_i^s B2_sj = -P^{2,0+0,2}_ij "
          "- 4 omega^ue tau_iuw tau^w_je ; (Delta_D omega)^{2,0+0,2}_kl = -2 J_e^i nabla_i tau^e_kl",
          "second_order")
def _lap_omega(G):
    s, L = G.s, G.lap_omega
    p20 = twozero(G, G.P)
    return [eq(L, p20, ein("is,sj->ij", s.J, G.b2)),
            eq(L, p20, 4.0 * ein("ue,iuw,wje->ij", s.omega_inv, G.tau_low, G.tau)),
            eq(twozero(G, L), 2.0 * ein("ei,iekl->kl", s.J, G.nabla_tau_up), refs=[L])]


@identity("LAP-J", "rough Laplacian of J through Riemann and Ricci",
          "Delta_D J_a^b = Rm_iae^b omega^ei + Rc_a^d J_d^b + Rc_e^b J_a^e + Rm_aei^b omega^ei",
          "second_order")
def _lap_j(G):
    s = G.s
    DDJ = covariant_derivative(G.conn.dJ, G.conn.gamma)
    lap = ein("ij,ijab->ab", s.g_inv, DDJ)
    rcm = mixed_ricci(G)
    return [eq(lap, -ein("iaeb,ei->ab", G.rm_up, s.omega_inv), -ein("ad,db->ab", rcm, s.J),
               -ein("eb,ae->ab", rcm, s.J), -ein("aeib,ei->ab", G.rm_up, s.omega_inv))]


@identity("LAP-J-TRACE", "J has constant norm", "0 = 2 <Delta_D J, J> + 8 |tau|^2",
          "second_order")
def _lap_j_trace(G):
    s = G.s
    DDJ = covariant_derivative(G.conn.dJ, G.conn.gamma)
    lap = ein("ij,ijab->ab", s.g_inv, DDJ)
    ip = ein("ab,bu,av,vu->", lap, s.g, s.g_inv, s.J)
    return [eq(2.0 * ip, 8.0 * G.tau_norm2)]


@identity("TAU-RM", "pointwise torsion norm from Riemann curvature",
          "|tau|^2 = -1/2 J_b^a Rm_aie^b omega^ei - 1/2 R "
          "= 1/4 J_b^a (Rm_iae^b + Rm_aei^b) omega^ei - 1/2 R", "second_order",
          notes="index pattern and overall sign rederived from the rough Laplacian of J")
def _tau_rm(G):
    s, r = G.s, G.rm_up
    half_r = 0.5 * G.scal
    single = ein("aieb,ba,ei->", r, s.J, s.omega_inv)
    pair = ein("iaeb,ba,ei->", r, s.J, s.omega_inv) + ein("aeib,ba,ei->", r, s.J, s.omega_inv)
    return [eq(G.tau_norm2, 0.5 * single, half_r), eq(G.tau_norm2, -0.25 * pair, half_r)]


@identity("SEKIGAWA-DIV0", "contraction of D omega with Q in torsion form",
          "1/2 (D_v omega^ij) Q_ij = -2 g^rs g^ja tau_asv nabla_m tau^m_rj", "second_order")
def _sek_div0(G):
    s = G.s
    Dwi = covariant_derivative(s.omega_inv, G.conn.gamma)
    lhs = 0.5 * ein("vij,ij->v", Dwi, G.Q)
    div = ein("mmrj->rj", G.nabla_tau_up)
    rhs = -2.0 * ein("rs,ja,asv,rj->v", s.g_inv, s.g_inv, G.tau_low, div)
    return [eq(lhs, -rhs)]


# flow right-hand sides at a single instant --------------------------------------

@identity("PROP-A", "two forms of the J velocity agree",
          "-(P^{2,0+0,2}_iw - 2 J_i^e Rc^{2,0+0,2}_ew) g^wk = 4 omega^re nabla_r tau^k_ei",
          "second_order")
def _prop_a(G):
    from .flow import j_velocity, j_velocity_original
    return [eq(j_velocity(G), -j_velocity_original(G))]


@identity("GDOT-FORMS", "three forms of the metric velocity agree",
          "-J_i^s P_js + 4 g^ra nabla_r tau_aij = Jdot_i^s omega_js - J_i^s P_js = -2 Rc + 2 B",
          "second_order")
def _gdot(G):
    from .flow import flow_rhs
    r = flow_rhs(G)
    return [eq(r["g_dot"], -r["g_dot_chain"]), eq(r["g_dot"], 2.0 * G.rc, -2.0 * G.b)]


# third order (finite differences only) ------------------------------------------

@identity("BIANCHI-2", "differential Bianchi identity with torsion",
          "nabla_a Omega_bcj^k + cyc(abc) = Omega_aij^k tau^i_bc + cyc(abc)", "third_order")
def _bianchi2(G):
    dO = covariant_derivative(G.omega_up, G.conn.upsilon)  # [a, b, c, j, k]
    o, t = G.omega_up, G.tau
    lhs = [perm(dO, "abcjk->abcjk"), perm(dO, "bcajk->abcjk"), perm(dO, "cabjk->abcjk")]
    rhs = [ein("aijk,ibc->abcjk", o, t), ein("bijk,ica->abcjk", o, t),
           ein("cijk,iab->abcjk", o, t)]
    return [eq(*lhs, *[-x for x in rhs])]


@identity("P-BIANCHI", "traced differential Bianchi identity for the Chern-Ricci form",
          "nabla_a P_bc + cyc = P_ai tau^i_bc + cyc", "third_order")
def _p_bianchi(G):
    dP = covariant_derivative(G.P, G.conn.upsilon)
    P, t = G.P, G.tau
    return [eq(dP, perm(dP, "bca->abc"), perm(dP, "cab->abc"),
               -ein("ai,ibc->abc", P, t), -ein("bi,ica->abc", P, t), -ein("ci,iab->abc", P, t))]


def omega_tau_tau(G):
    """4 g^ap g^bq g^dr g^es Omega_rpqs (tau_edc tau_abc + tau_cde tau_acb + tau_ced tau_acb)."""
    s, o, t = G.s, G.omega_curv, G.tau_low
    gi = s.g_inv
    ou = ein("rpqs,ap,bq,dr,es->dabe", o, gi, gi, gi, gi)
    a =ein("dabe,edc,abf,cf->", ou, t, t, gi)
    b = ein("dabe,cde,afb,cf->", ou, t, t, gi)
    c = ein("dabe,ced,afb,cf->", ou, t, t, gi)
    return 4.0 * (a + b + c)


def div_tau_term(G):
    """g^ap g^bq g^cs g^rt (nabla_a nabla_t tau_rbc) tau_pqs."""
    s = G.s
    gi = s.g_inv
    dd = G.nabla2_tau  # [a, t, r, b, c]
    x = ein("atrbc,rt->abc", dd, gi)
    return ein("abc,pqs,ap,bq,cs->", x, G.tau_low, gi, gi, gi)


@identity("LAP-TAU", "Chern Laplacian of the torsion norm",
          "Delta|tau|^2 = -2<Rc^{1,1},B> + |B|^2 + 8 (nabla_a nabla_r tau_rbc) tau_abc "
          "+ 2|nabla tau|^2 + 4 Omega_rpqs (tau_edc tau_abc + tau_cde tau_acb + tau_ced tau_acb)",
          "third_order", notes="Laplacian is g^ij nabla_i nabla_j with the Chern connection")
def _lap_tau(G):
    lap = G.chern_laplacian(G.tau_norm2)
    return [eq(lap, 2.0 * G.inner(oneone(G, G.rc), G.b), -G.norm2(G.b),
               -8.0 * div_tau_term(G), -2.0 * G.norm2(G.nabla_tau), -omega_tau_tau(G))]


def _sekigawa_parts(G):
    s = G.s
    gi = s.g_inv
    rc20 = twozero(G, G.rc)
    Dwi = covariant_derivative(s.omega_inv, G.conn.gamma)  # [v, i, j]
    flux = ein("vij,ij,uv->u", Dwi, G.Q, gi)
    div_q = ein("uu->", covariant_derivative(flux, G.conn.gamma))
    X = ein("qb,jb->qj", s.J, rc20)
    Z = ein("pj,aqj->paq", s.J, covariant_derivative(X, G.conn.gamma))
    div_rc = ein("pi,qa,ipaq->", gi, gi, covariant_derivative(Z, G.conn.gamma))
    return rc20, div_q, div_rc


@identity("GRAY", "J-projected Riemann tensor in torsion form",
          "Rm~+_ijkl = tau^e_ij tau_kle ; Rm~-_ijkl = 1/2 (nabla_i tau_klj - nabla_j tau_kli) "
          "- 1/2 J_i^a J_j^b (nabla_a tau_klb - nabla_b tau_kla) ; 16 |Rm~+|^2 = |phi|^2",
          "second_order",
          notes="Rm~ = 1/4 (Rm - JJ Rm - Rm JJ + JJ Rm JJ), Rm~+- = 1/2 (Rm~ +- J_i^a Rm~_ajcl J_k^c); "
                "Rm~- is the (2,0+0,2) Weyl part")
def _gray(G):
    J, n = G.s.J, G.nabla_tau
    a = 0.5 * (perm(n, "iklj->ijkl") - perm(n, "jkli->ijkl"))
    return [eq(G.rm_tilde_plus, -ein("eij,kle->ijkl", G.tau, G.tau_low)),
            eq(G.weyl_2002, -a, ein("ia,jb,abkl->ijkl", J, J, a)),
            eq(16.0 * G.norm2(G.rm_tilde_plus), -G.norm2(G.phi))]


@identity("SEKIGAWA-NORMS", "norms entering the Sekigawa formula",
          "|Delta_D omega|^2 = |P^{2,0+0,2}|^2 + |B2|^2 ; |phi|^2 = |B1|^2 ; "
          "-2 g^ia g^jb (Delta_D omega_ab + 1/2 phi_ab) J_i^s Rc^{1,1}_js = -4 <Rc^{1,1}, B>",
          "second_order",
          notes="the sign of the last relation is forced by J-orthogonality of g")
def _sek_norms(G):
    s = G.s
    mix = -2.0 * ein("ia,jb,ab,is,js->", s.g_inv, s.g_inv, G.lap_omega + 0.5 * G.phi, s.J,
                     oneone(G, G.rc))
    return [eq(G.norm2(G.lap_omega), -G.norm2(twozero(G, G.P)), -G.norm2(G.b2)),
            eq(G.norm2(G.phi), -G.norm2(G.b1)),
            eq(mix, 4.0 * G.inner(oneone(G, G.rc), G.b))]


@identity("SEKIGAWA", "Sekigawa-type pointwise formula in torsion form",
          "-2<B,Rc^{1,1}> = |Rc^{2,0+0,2}|^2 - |W^{2,0+0,2}|^2 - 1/4|P^{2,0+0,2}|^2 - 1/4|B2|^2 "
          "- 1/16|B1|^2 + g^uv D_u[(D_v omega^ij) Q_ij] "
          "- 2 g^pi g^qa D_i[J_p^j D_a[J_q^b Rc^{2,0+0,2}_jb]] + Delta|tau|^2", "third_order",
          notes="the sign of the D omega Q divergence was fixed by a least-squares fit of "
                "all eight coefficients over random generators")
def _sekigawa(G):
    rc20, div_q, div_rc = _sekigawa_parts(G)
    lhs = -2.0 * G.inner(G.b, oneone(G, G.rc))
    rhs = [G.norm2(rc20), -G.norm2(G.weyl_2002), -0.25 * G.norm2(twozero(G, G.P)),
           -0.25 * G.norm2(G.b2), -G.norm2(G.b1) * (1 / 16), div_q, -2.0 * div_rc,
           G.chern_laplacian(G.tau_norm2)]
    return [eq(lhs, *[-x for x in rhs])]


@identity("SEKIGAWA-ADM", "Sekigawa pointwise formula in Levi-Civita form",
          "-Delta(R - R*) = 1/8|phi|^2 + 1/2|Delta_D omega|^2 + 2|W^{2,0+0,2}|^2 - 2|Rc^{2,0+0,2}|^2 "
          "- 2 g^ia g^jb (Delta_D omega_ab + 1/2 phi_ab) J_i^s Rc^{1,1}_js "
          "+ 4 g^pi g^qa D_i[J_p^j D_a[J_q^b Rc^{2,0+0,2}_jb]] - 2 g^uv D_u[(D_v omega^ij) Q_ij]",
          "third_order",
          notes="Laplacian sign and J Rc divergence coefficient fixed numerically; "
                "equivalent to SEKIGAWA through SEKIGAWA-NORMS and RSTAR")
def _sek_adm(G):
    s = G.s
    rc20, div_q, div_rc = _sekigawa_parts(G)
    mix = -2.0 * ein("ia,jb,ab,is,js->", s.g_inv, s.g_inv, G.lap_omega + 0.5 * G.phi, s.J,
                     oneone(G, G.rc))
    lhs = -G.chern_laplacian(G.scal - G.star_scal)
    rhs = [0.125 * G.norm2(G.phi), 0.5 * G.norm2(G.lap_omega), 2.0 * G.norm2(G.weyl_2002),
           -2.0 * G.norm2(rc20), mix, 4.0 * div_rc, -2.0 * div_q]
    return [eq(lhs, *[-x for x in rhs])]


@identity("SEKIGAWA-DIV", "divergence term of the Sekigawa formula in Chern form",
          "1/2 g^uv D_u[(D_v omega^ij) Q_ij] = -2 g^rs g^ja nabla_u[tau^u_as nabla_m tau^m_rj]",
          "third_order")
def _sek_div(G):
    s = G.s
    _, div_q, _ = _sekigawa_parts(G)
    div = ein("mmrj->rj", G.nabla_tau_up)
    vec = ein("rs,ja,uas,rj->u", s.g_inv, s.g_inv, G.tau, div)
    rhs = -2.0 * ein("uu->", covariant_derivative(vec, G.conn.upsilon))
    return [eq(0.5 * div_q, -rhs)]


# runner ------------------------------------------------------------------------

@dataclass
class IdentityResult:
    id: str
    jet_class: str
    status: str          # pass | fail | skipped
    max_abs: float = float("nan")
    relative: float = float("nan")
    l2_mean: float = float("nan")
    reason: str = ""

    def as_dict(self):
        d = {"id": self.id, "jet_class": self.jet_class, "status": self.status}
        if self.status != "skipped":
            d.update(max_abs=self.max_abs, relative=self.relative, l2_mean=self.l2_mean)
        if self.reason:
            d["reason"] = self.reason
        return d


def evaluate_identity(check, G, backend):
    if backend not in check.backends:
        return IdentityResult(check.id, check.jet_class, "skipped",
                              reason="needs third-order jets")
    try:
        eqs = check.evaluate(G)
    except JetOrderError:
        return IdentityResult(check.id, check.jet_class, "skipped",
                              reason="needs third-order jets")
    if eqs is None:
        return IdentityResult(check.id, check.jet_class, "skipped",
                              reason=f"not applicable in dimension {G.s.dim}")
    raws, rels, l2s = zip(*(equation_residual(e) for e in eqs))
    return IdentityResult(check.id, check.jet_class, "", max(raws), max(rels), max(l2s))


def run_all(s, backend=None, selection=None, tol=None, abs_tol=1e-12, workers=1):
    """Evaluate the selected identities on one structure.

    A check passes when its relative residual is within ``tol`` or its raw
    residual is within ``abs_tol``.  With ``workers`` > 1 the identities are
    evaluated on a thread pool; results keep id order either way.
    """
    backend = s.backend if backend is None else backend
    if backend == FD and s.backend == EXACT:
        s = s.values_only()
    if backend == EXACT and s.backend != EXACT:
        raise ValueError("exact backend requested for a structure without closed-form jets")
    tol = (EXACT_TOL if backend == EXACT else FD_TOL) if tol is None else tol
    ids = sorted(REGISTRY) if selection is None else sorted(selection)
    unknown = [i for i in ids if i not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown identity ids: {', '.join(unknown)}")
    G = GeometryCache(s)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda i: evaluate_identity(REGISTRY[i], G, backend), ids))
    else:
        results = [evaluate_identity(REGISTRY[i], G, backend) for i in ids]
    for r in results:
        if r.status == "":
            r.status = "pass" if (r.relative <= tol or r.max_abs <= abs_tol) else "fail"
    return Report(backend, tol, results)


@dataclass
class Report:
    backend: str
    tol: float
    results: list

    @property
    def passed(self):
        return all(r.status != "fail" for r in self.results)

    def by_id(self):
        return {r.id: r for r in self.results}

    def as_dict(self):
        return {"backend": self.backend, "tolerance": self.tol, "passed": self.passed,
                "results": [r.as_dict() for r in self.results]}


# convergence -------------------------------------------------------------------

@dataclass
class ConvergenceResult:
    id: str
    resolutions: list
    residuals: list
    orders: list
    status: str  # converging | at-machine-precision | stalled | skipped

    @property
    def order(self):
        return min(self.orders) if self.orders else float("nan")

    def as_dict(self):
        return {"id": self.id, "resolutions": self.resolutions, "residuals": self.residuals,
                "orders": self.orders, "observed_order": self.order if self.orders else None,
                "status": self.status}


def build_structure(example, grid, eps=0.1, A=None, axis=0, harmonic=1, backend=FD):
    if example == "flat":
        return flat_kahler(grid, backend)
    if example == "family":
        return conjugation_family(grid, A=A, eps=eps, axis=axis, harmonic=harmonic,
                                  backend=backend)
    raise ValueError(f"unknown example {example!r}")


def convergence_study(family_params, ids, resolutions, fd_order=4, axis=0):
    """Refine the grid along the profile axis and measure log2 residual ratios."""
    resolutions = list(resolutions)
    if len(resolutions) < 2:
        raise ValueError("need at least two resolutions")
    if any(b != 2 * a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError("resolutions must double")
    from .fields import PeriodicGrid
    params = dict(family_params)
    example = params.pop("example", "family")
    dim = params.pop("dim", 4)
    ids = sorted(ids)
    per_res = []
    for n in resolutions:
        res = [1] * dim
        res[axis] = n
        grid = PeriodicGrid(dim, tuple(res), fd_order)
        s = build_structure(example, grid, axis=axis, **params)
        G = GeometryCache(s)
        per_res.append({i: evaluate_identity(REGISTRY[i], G, FD) for i in ids})
    out = []
    for i in ids:
        recs = [pr[i] for pr in per_res]
        if any(r.status == "skipped" for r in recs):
            out.append(ConvergenceResult(i, resolutions, [], [], "skipped"))
            continue
        rels = [r.relative for r in recs]
        orders = [float(np.log2(a / b)) if a > 0 and b > 0 else float("nan")
                  for a, b in zip(rels, rels[1:])]
        if max(rels) <= FLOOR or max(r.max_abs for r in recs) <= 1e-13:
            status = "at-machine-precision"
        elif all(o >= fd_order - 1 for o in orders):
            status = "converging"
        else:
            status = "stalled"
        out.append(ConvergenceResult(i, resolutions, rels, orders, status))
    return out
