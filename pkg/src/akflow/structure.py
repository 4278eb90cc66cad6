"""Almost-Kähler structures (g, J, omega) on a periodic grid."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.linalg import expm

from .fields import (ConfigurationError, TensorField, delta, ein, leibniz_inverse, max_abs,
                     partial)

FD, EXACT = "fd", "exact"
_JET_LEVELS = 3  # values plus first and second derivatives


class AmplitudeError(ConfigurationError):
    """The family amplitude destroys positivity of g."""


class AlmostKahlerStructure:
    """Compatible triple with J stored as J_i^k (variance 'lu').

    Conventions: g_ij = J_i^s omega_js, omega_ij = J_i^a g_ja.  The metric
    is always derived from (J, omega), so only those two are independent.
    """

    def __init__(self, J, omega):
        if J.variance != "lu" or omega.variance != "ll":
            raise ConfigurationError("J must be 'lu' and omega 'll'")
        self.grid = J.grid
        self.J = J
        self.omega = omega
        g = ein("is,js->ij", J, omega)
        # symmetrize away the roundoff-level antisymmetric part
        self.g = TensorField(g.grid, 0.5 * (g.data + np.swapaxes(g.data, -1, -2)), "ll",
                             g.jet_axis)
        self.g_inv = leibniz_inverse(self.g)
        self.omega_inv = leibniz_inverse(self.omega)

    @property
    def backend(self):
        return EXACT if self.J.is_jet else FD

    @property
    def dim(self):
        return self.grid.dim

    def values_only(self):
        """Same structure with jets dropped (inputs for the FD backend)."""
        return AlmostKahlerStructure(self.J.values_only(), self.omega.values_only())


def standard_blocks(dim, sign=1.0):
    m = np.zeros((dim, dim))
    for k in range(dim // 2):
        m[2 * k, 2 * k + 1] = sign
        m[2 * k + 1, 2 * k] = -sign
    return m


def _flat_matrices(dim):
    """Standard omega_0 and the orientation of J_0 making g = identity."""
    omega0 = standard_blocks(dim)
    for sign in (1.0, -1.0):
        J0 = standard_blocks(dim, sign)
        g0 = -J0 @ omega0  # g_ij = J_i^s omega_js
        if np.all(np.linalg.eigvalsh(0.5 * (g0 + g0.T)) > 0):
            assert np.allclose(g0, np.eye(dim))
            return omega0, J0
    raise AssertionError("no standard orientation yields a positive metric")


def flat_kahler(grid, backend=FD):
    omega0, J0 = _flat_matrices(grid.dim)
    like = None
    if backend == EXACT:
        like = TensorField(grid, np.zeros((_JET_LEVELS,) + tuple(grid.shape)), "", 0)
    J = TensorField.constant(grid, J0, "lu", like)
    omega = TensorField.constant(grid, omega0, "ll", like)
    return AlmostKahlerStructure(J, omega)


def default_generator(dim):
    """omega_0^{-1} H with H symmetric coupling axes 0 and 2 (axes 0 and 1 in dim 2)."""
    omega0, _ = _flat_matrices(dim)
    H = np.zeros((dim, dim))
    b = 2 if dim >= 4 else 1
    H[0, b] = H[b, 0] = 1.0
    return np.linalg.solve(omega0, H)


def conjugation_family(grid, A=None, eps=0.1, axis=0, harmonic=1, backend=FD):
    """J = S J_0 S^{-1} with S = exp(eps sin(harmonic x_axis) A), omega = omega_0.

    In the exact backend the fields carry closed-form derivatives along
    ``axis`` up to second order.
    """
    dim = grid.dim
    omega0, J0 = _flat_matrices(dim)
    A = default_generator(dim) if A is None else np.asarray(A, dtype=float)
    if A.shape != (dim, dim):
        raise ConfigurationError(f"generator must be {dim}x{dim}")
    sym_err = np.max(np.abs(A.T @ omega0 + omega0 @ A))
    if sym_err > 1e-12:
        raise ConfigurationError(f"generator is not in sp(2n): residual {sym_err:.3e}")
    if not 0 <= axis < dim:
        raise ConfigurationError(f"profile axis {axis} out of range")
    if backend not in (FD, EXACT):
        raise ConfigurationError(f"unknown backend {backend!r}")

    x = grid.coordinate(axis)
    m = float(harmonic)
    f = [eps * np.sin(m * x), eps * m * np.cos(m * x), -eps * m * m * np.sin(m * x)]
    S0 = expm(np.multiply.outer(f[0], A))
    Sinv0 = expm(np.multiply.outer(-f[0], A))
    A2 = A @ A
    fA = lambda c: np.multiply.outer(c, A)
    fA2 = lambda c: np.multiply.outer(c, A2)
    # derivatives of S and S^{-1} along the profile axis (A commutes with S)
    S = [S0, fA(f[1]) @ S0, (fA(f[2]) + fA2(f[1] ** 2)) @ S0]
    Sinv = [Sinv0, -fA(f[1]) @ Sinv0, (-fA(f[2]) + fA2(f[1] ** 2)) @ Sinv0]

    # endomorphism E = S E0 S^{-1} with E0 = J0^T; stored J = E^T
    E0 = J0.T
    E = [sum(comb(k, a) * S[a] @ E0 @ Sinv[k - a] for a in range(k + 1))
         for k in range(_JET_LEVELS)]
    Jdata = np.swapaxes(np.stack(E), -1, -2)
    if backend == EXACT:
        J = TensorField(grid, Jdata, "lu", axis)
    else:
        J = TensorField(grid, Jdata[:1].copy(), "lu")
    omega = TensorField.constant(grid, omega0, "ll", J if backend == EXACT else None)
    s = AlmostKahlerStructure(J, omega)
    eig = np.linalg.eigvalsh(s.g.values)
    worst = np.unravel_index(np.argmin(eig[..., 0]), grid.shape)
    if eig[..., 0][worst] <= 0:
        raise AmplitudeError(
            f"metric not positive-definite at grid point {tuple(int(i) for i in worst)} "
            f"(min eigenvalue {eig[..., 0][worst]:.3e})")
    return s


@dataclass
class ValidationReport:
    residuals: dict
    min_eigenvalue: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(v <= self.tol for v in self.residuals.values()) \
            and self.min_eigenvalue > 0


def structure_residuals(s):
    """Residual fields of the pointwise compatibility conditions."""
    d = delta(s.grid, s.J)
    J, g, w = s.J, s.g, s.omega
    res = {
        "j_squared": ein("ia,ak->ik", J, J) + d,
        "g_compatible": g - ein("ia,jb,ab->ij", J, J, g),
        "omega_from_g": w - ein("ia,ja->ij", J, g),
        "g_from_omega": g - ein("is,js->ij", J, w),
        "omega_inverse": ein("ac,cb->ab", s.omega_inv, w) - delta(s.grid, s.J, "ul"),
        "omega_antisymmetric": w + ein("ij->ji", w),
    }
    return res


def closedness_residual(s):
    dw = partial(s.omega)  # [i, j, k] = d_i omega_jk
    return dw + ein("jki->ijk", dw) + ein("kij->ijk", dw)


def validate(s, tol=1e-10):
    res = {k: max_abs(v) for k, v in structure_residuals(s).items()}
    res["d_omega"] = max_abs(closedness_residual(s))
    min_eig = float(np.min(np.linalg.eigvalsh(s.g.values)))
    return ValidationReport(res, min_eig, tol)
