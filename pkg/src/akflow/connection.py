"""Levi-Civita and Chern connections, contorsion, torsion and Nijenhuis tensor.

Connection coefficients are stored as ``conn[k, i, j]`` = C^k_{ij} with the
covariant derivative ``nabla_i X^k = d_i X^k + C^k_{ij} X^j``.
"""
from __future__ import annotations

from dataclasses import dataclass

from .fields import UP, TensorField, ein, partial


def covariant_derivative(f, conn):
    """Covariant derivative with a new leading lower slot."""
    if conn.variance != "ull":
        raise TypeError("connection coefficients must have layout (k; i j)")
    out = partial(f)
    pool = [c for c in "abcdefghjklmnopqrstuvwxy"]  # 'i' is the derivative slot, 'z' the dummy
    letters = pool[:f.rank]
    target = "i" + "".join(letters)
    for slot, var in enumerate(f.variance):
        src = letters.copy()
        src[slot] = "z"
        src = "".join(src)
        a = letters[slot]
        if var == UP:
            out = out + ein(f"{a}iz,{src}->{target}", conn, f)
        else:
            out = out - ein(f"zi{a},{src}->{target}", conn, f)
    return out


def levi_civita(s):
    dg = partial(s.g)  # [i, j, l] = d_i g_jl
    gi = s.g_inv
    return 0.5 * (ein("kl,ijl->kij", gi, dg) + ein("kl,jil->kij", gi, dg)
                  - ein("kl,lij->kij", gi, dg))


def nijenhuis(s):
    """N^i_{jk}, stored as [i, j, k]."""
    J = s.J
    dJ = partial(J)  # [p, k, i] = d_p J_k^i
    return 2.0 * (ein("jp,pki->ijk", J, dJ) - ein("kp,pji->ijk", J, dJ)
                  - ein("pi,jkp->ijk", J, dJ) + ein("pi,kjp->ijk", J, dJ))


def lower_last(t, s):
    """t^l_{ij} -> t_{ijl}."""
    return ein("lij,lk->ijk", t, s.g)


@dataclass
class ConnectionData:
    gamma: TensorField      # Gamma^k_ij
    theta: TensorField      # Theta^k_ij
    upsilon: TensorField    # Chern coefficients
    tau: TensorField        # tau^k_ij
    tau_low: TensorField    # tau_ijk = tau^l_ij g_lk
    nijenhuis: TensorField  # N^i_jk
    dJ: TensorField         # D_i J_p^k as [i, p, k]


def chern(s, gamma=None):
    gamma = levi_civita(s) if gamma is None else gamma
    DJ = covariant_derivative(s.J, gamma)
    theta = -0.5 * ein("ipk,jp->kij", DJ, s.J)
    ups = gamma - theta
    tau = ups - ein("kji->kij", ups)
    return ConnectionData(gamma=gamma, theta=theta, upsilon=ups, tau=tau,
                          tau_low=lower_last(tau, s), nijenhuis=nijenhuis(s), dJ=DJ)
