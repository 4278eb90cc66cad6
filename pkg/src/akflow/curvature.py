"""Curvature tensors, their traces, B-tensors, T, Weyl and the Sekigawa ingredients.

Curvature convention (applied to any connection C):
    R_{ijk}^l = d_i C^l_jk - d_j C^l_ik + C^l_is C^s_jk - C^l_js C^s_ik,
lowered on the last slot, Rm_{ijkl} = R_{ijk}^m g_ml.  Arrays are indexed in
the written order, so ``rm_up[i, j, k, l]`` is R_{ijk}^l.
"""
from __future__ import annotations

from functools import cached_property

from .connection import chern, covariant_derivative
from .fields import ein, inner, partial, project_type, tensor_norm2


def curvature_up(conn):
    dC = partial(conn)  # [i, l, j, k] = d_i C^l_jk
    return (ein("iljk->ijkl", dC) - ein("jlik->ijkl", dC)
            + ein("lis,sjk->ijkl", conn, conn) - ein("ljs,sik->ijkl", conn, conn))


def lower_curvature(r_up, s):
    return ein("ijkm,ml->ijkl", r_up, s.g)


def riemann(gamma, s):
    return lower_curvature(curvature_up(gamma), s)


def chern_curvature(upsilon, s):
    return lower_curvature(curvature_up(upsilon), s)


def traces(rm, omega_curv, s):
    oi, gi = s.omega_inv, s.g_inv
    P = ein("cd,abcd->ab", oi, omega_curv)
    S = ein("ab,abcd->cd", oi, omega_curv)
    Q = ein("ab,abcd->cd", oi, rm)
    V = ein("re,rjke->jk", gi, omega_curv)
    rc = ein("il,ijkl->jk", gi, rm)
    return {
        "P": P, "S": S, "Q": Q, "V": V,
        "rho": ein("ba,ab->", oi, P),
        "rho_from_S": ein("dc,cd->", oi, S),
        "rc": rc,
        "scal": ein("jk,jk->", gi, rc),
    }


def b_tensors_from_dj(s, conn):
    gi, g, DJ = s.g_inv, s.g, conn.dJ
    b1 = ein("kl,mn,ikm,jln->ij", gi, g, DJ, DJ)
    b2 = ein("kl,mn,kim,ljn->ij", gi, g, DJ, DJ)
    return {"b1": b1, "b2": b2, "b": 0.25 * b1 - 0.5 * b2}


def b_tensors_from_tau(s, conn):
    gi, g, tu, tl = s.g_inv, s.g, conn.tau, conn.tau_low
    return {
        "b1": 4.0 * ein("kl,wv,vki,wlj->ij", gi, gi, tl, tl),
        "b2": 4.0 * ein("mn,wv,niv,mjw->ij", g, gi, tu, tu),
        "b": -2.0 * ein("wik,kjw->ij", tu, tu),
    }


def b_tensors(s, conn):
    """B-tensors by definition (from DJ); the torsion forms live in b_tensors_from_tau."""
    return b_tensors_from_dj(s, conn)


def t_tensor(s, conn, nabla_tau):
    """T_bdac with nabla_tau[a, b, d, c] = nabla_a tau_bdc."""
    n, tl, tu = nabla_tau, conn.tau_low, conn.tau
    lin = (ein("abdc->bdac", n) + ein("bcad->bdac", n)
           + ein("cdba->bdac", n) + ein("dacb->bdac", n))
    quad = (ein("asd,sbc->bdac", tl, tu) + ein("bsc,sda->bdac", tl, tu)
            + ein("dsc,sab->bdac", tl, tu) + ein("asb,scd->bdac", tl, tu))
    return lin - quad


def weyl(rm, rc, scal, s):
    n = s.dim
    g = s.g
    if n < 3:
        return 0.0 * rm
    h = rc - (scal_times(scal, g) * (1.0 / (2 * (n - 1))))
    kn = (ein("il,jk->ijkl", h, g) + ein("jk,il->ijkl", h, g)
          - ein("ik,jl->ijkl", h, g) - ein("jl,ik->ijkl", h, g))
    return rm - kn * (1.0 / (n - 2))


def j_projection(A, J):
    """1/4 (A - J J A - A J J + J J A J J): the part anti-invariant in both pairs."""
    return 0.25 * (A - ein("ia,jb,abkl->ijkl", J, J, A) - ein("ijcd,kc,ld->ijkl", A, J, J)
                   + ein("abcd,ia,jb,kc,ld->ijkl", A, J, J, J, J))


def j_split(At, J, sign):
    """1/2 (At_ijkl + sign J_i^a At_ajcl J_k^c)."""
    return 0.5 * (At + sign * ein("ia,ajcl,kc->ijkl", J, At, J))


def scal_times(f, t):
    """Pointwise product of a scalar field with a tensor."""
    letters = "abcdefgh"[:t.rank]
    return ein(f",{letters}->{letters}", f, t)


class GeometryCache:
    """Every derived quantity of a structure, computed on first access.

    Attributes raise JetOrderError if the exact backend lacks the derivative
    order they need.
    """

    def __init__(self, s, conn=None):
        self.s = s
        self._conn = conn

    @cached_property
    def conn(self):
        return chern(self.s) if self._conn is None else self._conn

    # curvature tensors
    @cached_property
    def rm_up(self):
        return curvature_up(self.conn.gamma)

    @cached_property
    def omega_up(self):
        return curvature_up(self.conn.upsilon)

    @cached_property
    def rm(self):
        return lower_curvature(self.rm_up, self.s)

    @cached_property
    def omega_curv(self):
        return lower_curvature(self.omega_up, self.s)

    @cached_property
    def _traces(self):
        return traces(self.rm, self.omega_curv, self.s)

    P = property(lambda self: self._traces["P"])
    S = property(lambda self: self._traces["S"])
    Q = property(lambda self: self._traces["Q"])
    V = property(lambda self: self._traces["V"])
    rho = property(lambda self: self._traces["rho"])
    rc = property(lambda self: self._traces["rc"])
    scal = property(lambda self: self._traces["scal"])

    # torsion-derived
    @property
    def tau(self):
        return self.conn.tau

    @property
    def tau_low(self):
        return self.conn.tau_low

    @cached_property
    def tau_norm2(self):
        return tensor_norm2(self.tau_low, self.s)

    @cached_property
    def nabla_tau(self):
        """nabla_a tau_bcd as [a, b, c, d]."""
        return covariant_derivative(self.tau_low, self.conn.upsilon)

    @cached_property
    def nabla_tau_up(self):
        """nabla_a tau^k_bc as [a, k, b, c]."""
        return covariant_derivative(self.tau, self.conn.upsilon)

    @cached_property
    def nabla2_tau(self):
        """nabla_a nabla_t tau_rbc as [a, t, r, b, c]."""
        return covariant_derivative(self.nabla_tau, self.conn.upsilon)

    @cached_property
    def _b(self):
        return b_tensors(self.s, self.conn)

    b1 = property(lambda self: self._b["b1"])
    b2 = property(lambda self: self._b["b2"])
    b = property(lambda self: self._b["b"])

    @cached_property
    def b_from_tau(self):
        return b_tensors_from_tau(self.s, self.conn)

    @cached_property
    def t_tensor(self):
        return t_tensor(self.s, self.conn, self.nabla_tau)

    # type parts
    def twozero(self, f):
        return project_type(f, (0, 1), self.s, "twozero")

    def oneone(self, f):
        return project_type(f, (0, 1), self.s, "oneone")

    # Sekigawa ingredients
    @cached_property
    def weyl(self):
        return weyl(self.rm, self.rc, self.scal, self.s)

    @cached_property
    def rm_tilde(self):
        return j_projection(self.rm, self.s.J)

    @cached_property
    def rm_tilde_plus(self):
        return j_split(self.rm_tilde, self.s.J, 1.0)

    @cached_property
    def weyl_2002(self):
        """(2,0+0,2) Weyl part, realised as the minus half of the J-projected Riemann tensor."""
        return j_split(self.rm_tilde, self.s.J, -1.0)

    @cached_property
    def star_scal(self):
        oi = self.s.omega_inv
        return 0.5 * ein("ji,kl,ijkl->", oi, oi, self.rm)

    @cached_property
    def d_omega(self):
        """Levi-Civita derivative D_a omega_bc as [a, b, c]."""
        return covariant_derivative(self.s.omega, self.conn.gamma)

    @cached_property
    def phi(self):
        """phi_ij = <D_{J e_i} omega, D_{e_j} omega>."""
        s, Dw = self.s, self.d_omega
        gi = s.g_inv
        return ein("ia,abc,jde,bd,ce->ij", s.J, Dw, Dw, gi, gi)

    @cached_property
    def lap_omega(self):
        """Rough Levi-Civita Laplacian g^{ab} D_a D_b omega_ij."""
        DDw = covariant_derivative(self.d_omega, self.conn.gamma)
        return ein("ab,abij->ij", self.s.g_inv, DDw)

    def chern_laplacian(self, f):
        """g^{ij} nabla_i nabla_j f with the Chern connection."""
        ups = self.conn.upsilon
        d2 = covariant_derivative(covariant_derivative(f, ups), ups)
        letters = "abcdefgh"[:f.rank]
        return ein(f"yz,yz{letters}->{letters}", self.s.g_inv, d2)

    def norm2(self, f):
        return tensor_norm2(f, self.s)

    def inner(self, a, b):
        return inner(a, b, self.s)
