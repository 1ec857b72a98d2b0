"""
Robust secure transceiver design.

The precoders of all cooperating BSs are solved jointly: stacking
``v = [V_1; ...; V_KT]`` the Lagrangian is quadratic in ``v`` with Hessian
``A(lambda) = A0 - sum_e lambda_e Q_e + blockdiag(lambda_t I)``, whose
diagonal blocks are the per-BS matrices ``A_t`` returned by
:func:`build_A_t`. The multipliers are found from the complementarity
conditions of the eavesdropper-MSE and per-BS power constraints.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import optimize

from .channel import ErrorModel, draw_error
from .mse import (
    RobustFlags,
    TransceiverSolution,
    UncertaintyInput,
    effective_channel,
    eve_filters,
    mse_eavesdropper,
    mse_legitimate,
    transmit_powers,
)
from .numerics import SingularMatrix, fro2, herm, hermitian_solve, make_rng, null_space_projector

__all__ = [
    "NoConvergence",
    "DesignProblem",
    "SolverReport",
    "WorstCaseErrors",
    "build_A_t",
    "update_precoder",
    "update_precoders",
    "update_receiver",
    "update_an_shaping",
    "solve_multipliers",
    "coordinate_descent",
    "worst_case_delta_legitimate",
    "worst_case_delta_eve",
    "nbe_design",
    "lagrangian",
    "lagrangian_grad_V",
    "lagrangian_grad_W",
    "lagrangian_grad_R",
    "initial_solution",
]

log = logging.getLogger(__name__)

MULTIPLIER_TOL = 1e-10
MULTIPLIER_MAX_ITERS = 200
MONOTONE_SLACK = 1e-3
AN_FIXED_POINT_ROUNDS = 5
STALL_WINDOW = 15


class NoConvergence(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass
class DesignProblem:
    """
    One design instance.

    ``u`` defaults to the scalars implied by the channel set's error models
    when a robust flag is set, and to zeros otherwise.
    """

    dims: object
    channels: object
    flags: RobustFlags = field(default_factory=RobustFlags)
    u: UncertaintyInput = None
    beta: float = 1e-4
    max_outer_iters: int = 50
    seed: int = 0
    an_tol: float = 1e-8
    jacobian: str = "analytic"
    init: str = "eigen"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError("jacobian must be 'analytic' or 'fd'")
        if self.init not in ("eigen", "random"):
            raise ValueError("init must be 'eigen' or 'random'")
        self.channels.check(self.dims)
        if self.u is None:
            self.u = UncertaintyInput.from_channels(self.channels, self.dims)


@dataclass
class SolverReport:
    iterations_used: int
    final_smse: float
    constraint_residuals: np.ndarray
    converged: bool
    multiplier_solve_residual: float
    smse_history: list = field(default_factory=list)
    monotone: bool = True
    eve_mse: np.ndarray = None
    power: np.ndarray = None
    multiplier_failures: int = 0


@dataclass
class WorstCaseErrors:
    Delta_tl: np.ndarray
    Delta_te: np.ndarray


# ---------------------------------------------------------------------------
# stacked quadratic model in v


def _stack(ch):
    """``(K_T, K, rows, N_T)`` -> ``(K, rows, K_T * N_T)``."""
    K_T, K, rows, N_T = ch.shape
    return ch.transpose(1, 2, 0, 3).reshape(K, rows, K_T * N_T)


def _blockdiag(vals, N_T):
    return np.diag(np.repeat(np.asarray(vals, dtype=float), N_T)).astype(complex)


class _Quadratic:
    """Terms of the Lagrangian that depend on the stacked precoder."""

    def __init__(self, problem, sol):
        dims, ch, flags, u = problem.dims, problem.channels, problem.flags, problem.u
        self.dims = dims
        self.N_T = dims.N_T
        self.n = dims.K_T * dims.N_T
        RC = np.einsum("lsr,lrn->lsn", sol.R, _stack(ch.C_hat))
        r2 = fro2(sol.R)
        self.A0 = np.einsum("lsm,lsn->mn", RC.conj(), RC) + _blockdiag(
            flags.chi_l * (u.s_tl @ r2), dims.N_T)
        self.b0 = herm(RC).sum(axis=0)
        EG = np.einsum("esr,ern->esn", sol.E, _stack(ch.G_hat))
        e2 = fro2(sol.E)
        self.Q = np.einsum("esm,esn->emn", EG.conj(), EG)
        for e in range(dims.K_E):
            self.Q[e] += _blockdiag(flags.chi_e * u.s_te[:, e] * e2[e], dims.N_T)
        self.g = herm(EG)
        # parts of eps_e that do not depend on V
        an_var = dims.an_var
        EGW = np.einsum("esr,tern->etsn", sol.E, ch.G_hat)
        EGW = np.einsum("etsn,tnm->etsm", EGW, sol.W)
        an = np.einsum("t,etsm->e", an_var, np.abs(EGW) ** 2)
        self.eve_const = (dims.N_s + an + dims.noise_var_eve * e2
                          + flags.chi_e * e2 * ((an_var * fro2(sol.W)) @ u.s_te))
        self.w_power = an_var * fro2(sol.W)

    def matrix(self, lam_e, lam_t):
        A = self.A0 + _blockdiag(lam_t, self.N_T)
        for e, le in enumerate(lam_e):
            if le != 0.0:
                A = A - le * self.Q[e]
        return A

    def rhs(self, lam_e):
        b = self.b0.copy()
        for e, le in enumerate(lam_e):
            if le != 0.0:
                b = b - le * self.g[e]
        return b

    def solve(self, lam_e, lam_t, require_pd=False):
        A = self.matrix(lam_e, lam_t)
        if require_pd:
            # the multiplier map is only monotone where A is positive definite
            try:
                np.linalg.cholesky(0.5 * (A + herm(A)))
            except np.linalg.LinAlgError:
                raise SingularMatrix("precoder matrix is not positive definite") from None
        return A, hermitian_solve(A, self.rhs(lam_e))

    def eve_mse(self, v):
        quad = np.real(np.einsum("ms,emn,ns->e", v.conj(), self.Q, v))
        lin = 2.0 * np.real(np.einsum("ems,ms->e", self.g.conj(), v))
        return quad - lin + self.eve_const

    def powers(self, v):
        blocks = v.reshape(self.dims.K_T, self.N_T, -1)
        return fro2(blocks) + self.w_power


class _LowRank:
    """
    Multiplier-dependent precoder system in low-rank form.

    The stacked Hessian is ``D + U M U^H`` with ``D`` diagonal and constant
    on each BS block, ``U`` holding the ``m = (K_R + K_E) N_s`` columns
    ``(R_l C_l)^H`` and ``(E_e G_e)^H``, and ``M = diag(1, ..., -lambda_e)``.
    The Woodbury identity turns every solve into ``m x m`` algebra.
    """

    def __init__(self, problem, sol):
        dims, ch, flags, u = problem.dims, problem.channels, problem.flags, problem.u
        self.dims = dims
        self.problem, self.sol = problem, sol
        self._dense = None
        ns = dims.N_s
        RC = np.einsum("lsr,tlrn->tnls", sol.R, ch.C_hat).reshape(dims.K_T, dims.N_T, dims.K_R * ns)
        EG = np.einsum("esr,tern->tnes", sol.E, ch.G_hat).reshape(dims.K_T, dims.N_T, dims.K_E * ns)
        self.Ut = np.concatenate([RC.conj(), EG.conj()], axis=2)  # (K_T, N_T, m)
        self.m = self.Ut.shape[2]
        self.Kt = np.einsum("tnm,tnk->tmk", self.Ut.conj(), self.Ut)
        self.J = np.tile(np.eye(ns), (dims.K_R + dims.K_E, 1)).astype(complex)
        self.n_leg = dims.K_R * ns
        e2 = fro2(sol.E)
        self.base = flags.chi_l * (u.s_tl @ fro2(sol.R))
        self.se = flags.chi_e * u.s_te * e2[None, :]  # (K_T, K_E)
        an_var = dims.an_var
        EGW = np.einsum("esr,tern->etsn", sol.E, ch.G_hat)
        EGW = np.einsum("etsn,tnm->etsm", EGW, sol.W)
        an = np.einsum("t,etsm->e", an_var, np.abs(EGW) ** 2)
        self.eve_const = (ns + an + dims.noise_var_eve * e2
                          + flags.chi_e * e2 * ((an_var * fro2(sol.W)) @ u.s_te))
        self.w_power = an_var * fro2(sol.W)

    @property
    def dense(self):
        if self._dense is None:
            self._dense = _Quadratic(self.problem, self.sol)
        return self._dense

    def delta(self, lam_e, lam_t):
        return self.base + np.asarray(lam_t, float) - self.se @ np.asarray(lam_e, float)

    def mvec(self, lam_e):
        return np.concatenate([np.ones(self.n_leg), np.repeat(-np.asarray(lam_e, float), self.dims.N_s)])

    def solve(self, lam_e, lam_t, require_pd=False):
        """Reduced solution ``y`` with ``v_t = U_t y / delta_t``."""
        delta = self.delta(lam_e, lam_t)
        if np.any(delta <= 0):
            raise SingularMatrix("diagonal part of the precoder matrix is not positive")
        mv = self.mvec(lam_e)
        K = np.tensordot(1.0 / delta, self.Kt, axes=1)
        K = 0.5 * (K + herm(K))
        if require_pd and np.any(mv < 0):
            # D + U M U^H > 0  iff  I + K^1/2 M K^1/2 > 0
            w, Q = np.linalg.eigh(K)
            Kh = (Q * np.sqrt(np.maximum(w, 0.0))) @ herm(Q)
            S = np.eye(self.m) + Kh @ (mv[:, None] * Kh)
            if np.linalg.eigvalsh(0.5 * (S + herm(S)))[0] <= 1e-12:
                raise SingularMatrix("precoder matrix is not positive definite")
        B = np.eye(self.m) + K * mv[None, :]
        y = mv[:, None] * hermitian_solve(B, self.J)
        return _LowRankState(delta, mv, K, B, y)

    def precoders(self, st):
        return np.einsum("tnm,ms->tns", self.Ut, st.y) / st.delta[:, None, None]

    def stacked(self, lam_e, lam_t):
        """Stacked precoder ``(K_T, N_T, N_s)``, dense when the diagonal part is indefinite."""
        if np.all(self.delta(lam_e, lam_t) > 0):
            return self.precoders(self.solve(lam_e, lam_t))
        _, v = self.dense.solve(lam_e, lam_t)
        return v.reshape(self.dims.K_T, self.dims.N_T, self.dims.N_s)

    def evaluate(self, x, want_jac):
        """Constraints (eves then BSs), their Jacobian and the dual value."""
        dims = self.dims
        K_E, K_T, ns = dims.K_E, dims.K_T, dims.N_s
        lam_e, lam_t = x[:K_E], x[K_E:]
        if np.any(self.delta(lam_e, lam_t) <= 0):
            c, J, v = _constraints(self.dense, self.problem, x, want_jac)
            return c, J, _dual_value(self.dense, self.problem, x, v)
        st = self.solve(lam_e, lam_t, require_pd=True)
        y, delta = st.y, st.delta
        Kty = np.matmul(self.Kt, y)
        vnorm = np.real(np.einsum("ms,tms->t", y.conj(), Kty)) / delta ** 2
        Ky = st.K @ y
        Kye = Ky[self.n_leg:].reshape(K_E, ns, ns)
        eps = (fro2(Kye) + vnorm @ self.se - 2.0 * np.real(np.trace(Kye, axis1=1, axis2=2)) + self.eve_const)
        pw = vnorm + self.w_power
        c = np.concatenate([dims.Gamma - eps, (pw - dims.P_T) / dims.P_T])
        bv = np.real(np.trace(self.J.T @ (st.mv[:, None] * Ky)))
        dual = (-bv - float(np.dot(lam_e, self.eve_const - dims.Gamma))
                + float(np.dot(lam_t, self.w_power - dims.P_T)))
        if not want_jac:
            return c, None, dual
        # r_j = sum_t U_t z[j, t]: eve rows first, then BS rows
        p = K_E + K_T
        z = np.zeros((p, K_T, self.m, ns), dtype=complex)
        for e in range(K_E):
            sl = slice(self.n_leg + e * ns, self.n_leg + (e + 1) * ns)
            z[e, :, sl, :] += (Kye[e] - np.eye(ns))[None]
            z[e] += (self.se[:, e] / delta)[:, None, None] * y[None]
        for t in range(K_T):
            z[K_E + t, t] = -y / delta[t]
        Kz = np.matmul(self.Kt[None], z) / delta[None, :, None, None]
        direct = z.reshape(p, -1).conj() @ Kz.reshape(p, -1).T
        h = Kz.sum(axis=1)  # (p, m, ns)
        Bih = hermitian_solve(st.B, np.moveaxis(h, 0, 1).reshape(self.m, p * ns)).reshape(self.m, p, ns)
        corr = (h.conj() * st.mv[None, :, None]).reshape(p, -1) @ np.moveaxis(Bih, 1, 0).reshape(p, -1).T
        gram = 2.0 * np.real(direct - corr)
        rows = np.concatenate([np.ones(K_E), np.full(K_T, 1.0 / dims.P_T)])
        return c, -rows[:, None] * gram, dual


@dataclass
class _LowRankState:
    delta: np.ndarray
    mv: np.ndarray
    K: np.ndarray
    B: np.ndarray
    y: np.ndarray


def build_A_t(sol, channels, flags, u, multipliers, t):
    """
    Per-BS precoder matrix ``A_t``.

    ``sum_l C^H R^H R C - sum_e lambda_e G^H E^H E G`` over the links of BS
    ``t``, plus the scalar error terms and ``lambda_t`` times the identity.
    ``multipliers`` is the pair ``(lambda_e, lambda_t)``.
    """
    lam_e, lam_t = multipliers
    C = channels.C_hat[t]
    G = channels.G_hat[t]
    N_T = C.shape[-1]
    RC = np.einsum("lsr,lrn->lsn", sol.R, C)
    A = np.einsum("lsm,lsn->mn", RC.conj(), RC)
    scal = flags.chi_l * float(np.dot(u.s_tl[t], fro2(sol.R))) + float(lam_t[t])
    if G.shape[0]:
        EG = np.einsum("esr,ern->esn", sol.E, G)
        A = A - np.einsum("e,esm,esn->mn", np.asarray(lam_e, float), EG.conj(), EG)
        scal -= flags.chi_e * float(np.sum(np.asarray(lam_e) * u.s_te[t] * fro2(sol.E)))
    A = A + scal * np.eye(N_T)
    if np.linalg.norm(A - herm(A)) > 1e-9 * (1.0 + np.linalg.norm(A)):
        raise FloatingPointError("A_t is not Hermitian")
    return 0.5 * (A + herm(A))


def update_precoders(problem, sol, multipliers):
    """Joint stationary precoders of all BSs for fixed receivers and multipliers."""
    return _LowRank(problem, sol).stacked(*multipliers)


def update_precoder(problem, sol, multipliers, t):
    """
    Stationary precoder of BS ``t`` with the other BSs' precoders held fixed.

    Solves ``A_t V_t = b_t - sum_{t' != t} A_{t t'} V_{t'}``.
    """
    dims = problem.dims
    quad = _Quadratic(problem, sol)
    lam_e, lam_t = multipliers
    A = quad.matrix(lam_e, lam_t)
    b = quad.rhs(lam_e)
    N_T = dims.N_T
    sl = slice(t * N_T, (t + 1) * N_T)
    v = sol.V.reshape(dims.K_T * N_T, dims.N_s).copy()
    v[sl] = 0.0
    return hermitian_solve(A[sl, sl], b[sl] - A[sl] @ v)


def update_receiver(problem, sol, l):
    """MMSE receive filter of user ``l`` for the current precoders and AN shapers."""
    dims, ch, flags, u = problem.dims, problem.channels, problem.flags, problem.u
    C = ch.C_hat[:, l]
    H = effective_channel(C, sol.V)
    CW = C @ sol.W
    K = H @ herm(H) + np.einsum("t,tij,tkj->ik", dims.an_var, CW, CW.conj())
    scal = dims.noise_var_legit[l]
    if flags.chi_l:
        scal = scal + float(np.dot(u.s_tl[:, l], transmit_powers(sol, dims)))
    K = K + scal * np.eye(dims.N_R)
    return herm(hermitian_solve(0.5 * (K + herm(K)), H))


def update_an_shaping(problem, sol, multipliers, t):
    """Unit-norm AN shaper from the (near) null space of ``A_t``."""
    A = build_A_t(sol, problem.channels, problem.flags, problem.u, multipliers, t)
    P = null_space_projector(A, problem.an_tol)
    return P / np.linalg.norm(P)


# ---------------------------------------------------------------------------
# multipliers


def _constraints(quad, problem, x, want_jac):
    """Normalized constraint values ``c <= 0`` (eves first, then BSs) and Jacobian."""
    dims = problem.dims
    K_E, K_T, N_T = dims.K_E, dims.K_T, dims.N_T
    lam_e, lam_t = x[:K_E], x[K_E:]
    A, v = quad.solve(lam_e, lam_t, require_pd=True)
    eps = quad.eve_mse(v)
    pw = quad.powers(v)
    c = np.concatenate([dims.Gamma - eps, (pw - dims.P_T) / dims.P_T])
    if not want_jac:
        return c, None, v
    grad_e = np.einsum("emn,ns->ems", quad.Q, v) - quad.g
    cols = []
    for e in range(K_E):
        cols.append(grad_e[e])
    for t in range(K_T):
        r = np.zeros_like(v)
        r[t * N_T:(t + 1) * N_T] = -v[t * N_T:(t + 1) * N_T]
        cols.append(r)
    dV = hermitian_solve(A, np.concatenate(cols, axis=1)) if cols else np.zeros((v.shape[0], 0))
    ns = v.shape[1]
    J = np.zeros((K_E + K_T, K_E + K_T))
    vb = v.reshape(K_T, N_T, ns)
    for j in range(K_E + K_T):
        dv = dV[:, j * ns:(j + 1) * ns]
        J[:K_E, j] = -2.0 * np.real(np.einsum("ems,ms->e", grad_e.conj(), dv))
        J[K_E:, j] = 2.0 * np.real(np.einsum("tns,tns->t", vb.conj(), dv.reshape(K_T, N_T, ns))) / dims.P_T
    return c, J, v


def _evaluate_fd(model, x, h=1e-7):
    c, _, d = model.evaluate(x, False)
    J = np.zeros((c.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xp[j] += h * max(1.0, abs(x[j]))
        cp, _, _ = model.evaluate(xp, False)
        J[:, j] = (cp - c) / (xp[j] - x[j])
    return c, J, d


def _complementarity_residual(x, c):
    return float(np.max(np.abs(np.maximum(c, np.minimum(x, -c))))) if c.size else 0.0


def _dual_value(quad, problem, x, v):
    """Lagrangian minimized over the stacked precoder, up to a constant."""
    dims = problem.dims
    lam_e, lam_t = x[:dims.K_E], x[dims.K_E:]
    b = quad.rhs(lam_e)
    return (-float(np.real(np.vdot(b, v)))
            - float(np.dot(lam_e, quad.eve_const - dims.Gamma))
            + float(np.dot(lam_t, quad.w_power - dims.P_T)))


def _cold_start(quad, problem):
    """``lambda_e = 0`` and a common ``lambda_t`` meeting the total power budget."""
    dims = problem.dims
    mu, U = np.linalg.eigh(0.5 * (quad.A0 + herm(quad.A0)))
    proj = np.sum(np.abs(herm(U) @ quad.b0) ** 2, axis=1)
    budget = float(np.sum(np.maximum(dims.P_T - quad.w_power, 1e-12 * dims.P_T)))
    scale = max(float(np.max(np.abs(mu))), 1e-12)

    def excess(log_lam):
        lam = np.exp(log_lam)
        return np.log(np.sum(proj / (mu + lam) ** 2) + 1e-300) - np.log(budget)

    lo = np.log(scale * 1e-10)
    hi = np.log(max(np.sqrt(np.sum(proj) / budget), scale) * 10.0)
    if excess(lo) <= 0:
        lam = np.exp(lo)
    else:
        lam = np.exp(optimize.brentq(excess, lo, hi, xtol=1e-12))
    return np.concatenate([np.zeros(dims.K_E), np.full(dims.K_T, lam)])


def _projected_newton(model, problem, x0, tol, max_iters):
    """
    Maximize the concave dual function over ``lambda >= 0``.

    Its gradient is the constraint vector and its Hessian the constraint
    Jacobian, so this is a damped Newton method on the complementarity
    conditions. Variables at zero whose gradient points outward are held
    fixed (active set); steps are clipped to the nonnegative orthant and
    halved until the dual value increases. Trial points where the precoder
    matrix loses definiteness are rejected.
    """
    dims = problem.dims
    scale = np.concatenate([np.ones(dims.K_E), np.full(dims.K_T, dims.P_T)])

    def evaluate(x):
        if problem.jacobian == "analytic":
            return model.evaluate(x, True)
        return _evaluate_fd(model, x)

    x = np.maximum(np.asarray(x0, float), 0.0)
    c, J, d = evaluate(x)
    res = _complementarity_residual(x, c)
    history = [res]
    it = 0
    for it in range(1, max_iters + 1):
        if res <= tol:
            return x, res, it - 1, True
        if len(history) > STALL_WINDOW and res > 0.5 * history[-STALL_WINDOW - 1]:
            # crawling along the definiteness boundary: the constraints
            # cannot be met for these filters
            break
        g = c * scale
        H = J * scale[:, None]
        eps_act = min(1e-12, res)
        fixed = (x <= eps_act) & (g < 0)
        free = ~fixed
        p = np.zeros_like(x)
        if np.any(free):
            Hf = -H[np.ix_(free, free)]
            Hf = 0.5 * (Hf + Hf.T)
            try:
                p[free] = np.linalg.solve(Hf, g[free])
            except np.linalg.LinAlgError:
                p[free] = np.linalg.lstsq(Hf, g[free], rcond=None)[0]
            if not np.all(np.isfinite(p)) or float(p[free] @ g[free]) <= 0:
                p[free] = g[free]
        p[fixed] = -x[fixed]
        alpha = 1.0
        accepted = False
        for _ in range(40):
            x_new = np.maximum(x + alpha * p, 0.0)
            try:
                c_new, J_new, d_new = evaluate(x_new)
            except SingularMatrix:
                alpha *= 0.5
                continue
            res_new = _complementarity_residual(x_new, c_new)
            gain = d_new - d
            if gain >= 1e-4 * float(g @ (x_new - x)) or res_new <= 0.5 * res:
                accepted = True
                break
            if abs(gain) <= 1e-15 * (1.0 + abs(d)) and res_new < res:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        x, c, J, d, res = x_new, c_new, J_new, d_new, res_new
        history.append(res)
    return x, res, it, res <= tol


def solve_multipliers(problem, sol, tol=MULTIPLIER_TOL, max_iters=MULTIPLIER_MAX_ITERS, warm=True, raise_on_fail=False):
    """
    Multipliers satisfying the eavesdropper-MSE and power constraints.

    Precoders are the joint stationary point for each candidate multiplier
    vector; receive filters, eavesdropper filters and AN shapers are held
    fixed. The complementarity conditions ``lambda >= 0, c <= 0,
    lambda c = 0`` are solved by projected Newton ascent on the dual
    function. A warm start from ``sol.lambda_*`` is tried first, then a
    cold start.

    Returns
    -------
    lambda_e, lambda_t : ndarray
    residual : float
        Max-norm of ``max(c, min(lambda, -c))`` (eves in MSE units, BSs
        relative to ``P_T``).
    """
    dims = problem.dims
    model = _LowRank(problem, sol)
    starts = []
    if warm and np.all(np.isfinite(sol.lambda_t)) and np.any(np.asarray(sol.lambda_t) > 0):
        starts.append(np.concatenate([np.asarray(sol.lambda_e, float), np.asarray(sol.lambda_t, float)]))
    starts.append(None)
    best = None
    for x0 in starts:
        try:
            if x0 is None:
                x0 = _cold_start(model.dense, problem)
            x, res, _, ok = _projected_newton(model, problem, x0, tol, max_iters)
        except SingularMatrix:
            continue
        if best is None or res < best[1]:
            best = (x, res)
        if ok:
            break
    if best is None:
        raise SingularMatrix("multiplier solve: precoder system singular at every start")
    x, res = best
    if raise_on_fail and res > tol:
        raise NoConvergence(f"multiplier solve stalled at residual {res:.3e}", (x[:dims.K_E], x[dims.K_E:], res))
    return x[:dims.K_E].copy(), x[dims.K_E:].copy(), res



# ---------------------------------------------------------------------------
# Lagrangian and its gradients


def lagrangian(problem, sol, lambda_e=None, lambda_t=None):
    """``sum_l eps_l - sum_e lambda_e (eps_e - Gamma) + sum_t lambda_t (P_t - P_T)``."""
    dims, ch, flags, u = problem.dims, problem.channels, problem.flags, problem.u
    lam_e = sol.lambda_e if lambda_e is None else lambda_e
    lam_t = sol.lambda_t if lambda_t is None else lambda_t
    val = sum(mse_legitimate(sol, ch, dims, flags, u, l) for l in range(dims.K_R))
    for e in range(dims.K_E):
        val -= lam_e[e] * (mse_eavesdropper(sol, ch, dims, flags, u, e) - dims.Gamma)
    val += float(np.dot(lam_t, transmit_powers(sol, dims) - dims.P_T))
    return float(val)


def lagrangian_grad_V(problem, sol, lambda_e=None, lambda_t=None):
    """Analytic gradient with respect to the conjugate precoders, ``(K_T, N_T, N_s)``."""
    dims, ch, flags, u = problem.dims, problem.channels, problem.flags, problem.u
    lam_e = sol.lambda_e if lambda_e is None else lambda_e
    lam_t = sol.lambda_t if lambda_t is None else lambda_t
    I = np.eye(dims.N_s)
    G = np.zeros_like(sol.V)
    for l in range(dims.K_R):
        R = sol.R[l]
        D = R @ effective_channel(ch.C_hat[:, l], sol.V) - I
        r2 = fro2(R)
        for t in range(dims.K_T):
            G[t] += herm(ch.C_hat[t, l]) @ herm(R) @ D + flags.chi_l * u.s_tl[t, l] * r2 * sol.V[t]
    for e in range(dims.K_E):
        Ee = sol.E[e]
        D = Ee @ effective_channel(ch.G_hat[:, e], sol.V) - I
        e2 = fro2(Ee)
        for t in range(dims.K_T):
            G[t] -= lam_e[e] * (herm(ch.G_hat[t, e]) @ herm(Ee) @ D + flags.chi_e * u.s_te[t, e] * e2 * sol.V[t])
    G += np.asarray(lam_t, float)[:, None, None] * sol.V
    return G


def lagrangian_grad_W(problem, sol, lambda_e=None, lambda_t=None):
    """Analytic gradient with respect to the conjugate AN shapers: ``sigma_z^2 A_t W_t``."""
    lam_e = sol.lambda_e if lambda_e is None else lambda_e
    lam_t = sol.lambda_t if lambda_t is None else lambda_t
    dims = problem.dims
    out = np.zeros_like(sol.W)
    for t in range(dims.K_T):
        A = build_A_t(sol, problem.channels, problem.flags, problem.u, (lam_e, lam_t), t)
        out[t] = dims.an_var[t] * A @ sol.W[t]
    return out


def lagrangian_grad_R(problem, sol, l):
    """Analytic gradient of the Lagrangian with respect to ``conj(R_l)``."""
    dims, ch, flags, u = problem.dims, problem.channels, problem.flags, problem.u
    R = sol.R[l]
    C = ch.C_hat[:, l]
    H = effective_channel(C, sol.V)
    CW = C @ sol.W
    K = np.einsum("t,tij,tkj->ik", dims.an_var, CW, CW.conj()) + dims.noise_var_legit[l] * np.eye(dims.N_R)
    if flags.chi_l:
        K = K + float(np.dot(u.s_tl[:, l], transmit_powers(sol, dims))) * np.eye(dims.N_R)
    return (R @ H - np.eye(dims.N_s)) @ herm(H) + R @ K


# ---------------------------------------------------------------------------
# coordinate descent


def initial_solution(problem):
    """
    Feasible starting point.

    AN shapers are normalized Gaussian draws seeded by ``problem.seed``.
    Precoders are either Gaussian draws (``init="random"``) or the
    ``N_s`` strongest eigenvectors of ``sum_l C_l^H C_l`` over the stacked
    antennas of all BSs (``init="eigen"``), a common-beam start for the
    multicast group. Each BS gets ``tr(V V^H) = 0.9 P_T`` (less if the AN
    would not fit).
    """
    dims = problem.dims
    rng = make_rng(problem.seed, 0)
    sol = TransceiverSolution.zeros(dims)
    pv = 0.9 * dims.P_T
    pv = np.where(pv + dims.an_var <= dims.P_T, pv, 0.9 * (dims.P_T - dims.an_var))
    for t in range(dims.K_T):
        V = rng.standard_normal((dims.N_T, dims.N_s)) + 1j * rng.standard_normal((dims.N_T, dims.N_s))
        sol.V[t] = V
        W = rng.standard_normal((dims.N_T, dims.N_T)) + 1j * rng.standard_normal((dims.N_T, dims.N_T))
        sol.W[t] = W / np.linalg.norm(W)
    if problem.init == "eigen":
        Cs = _stack(problem.channels.C_hat)
        M = np.einsum("lrm,lrn->mn", Cs.conj(), Cs)
        _, U = np.linalg.eigh(0.5 * (M + herm(M)))
        beams = U[:, ::-1][:, :dims.N_s].reshape(dims.K_T, dims.N_T, dims.N_s)
        # a BS whose block of the beam is numerically empty keeps its random start
        usable = fro2(beams) > 1e-12
        sol.V[usable] = beams[usable]
    sol.V *= np.sqrt(pv / fro2(sol.V))[:, None, None]
    return sol


def _legit_mses(problem, sol):
    dims = problem.dims
    return np.array([mse_legitimate(sol, problem.channels, dims, problem.flags, problem.u, l) for l in range(dims.K_R)])


def _eve_mses(problem, sol):
    dims = problem.dims
    return np.array([mse_eavesdropper(sol, problem.channels, dims, problem.flags, problem.u, e) for e in range(dims.K_E)])


def _residuals(problem, sol):
    dims = problem.dims
    eps_e = _eve_mses(problem, sol)
    pw = transmit_powers(sol, dims)
    c = np.concatenate([dims.Gamma - eps_e, (pw - dims.P_T) / dims.P_T])
    x = np.concatenate([sol.lambda_e, sol.lambda_t])
    return np.maximum(c, np.minimum(x, -c)), eps_e, pw


def _multipliers_precoders_shapers(problem, sol, max_rounds=AN_FIXED_POINT_ROUNDS):
    """
    Multipliers, precoders and AN shapers for fixed receive filters.

    The AN shapers depend on the multipliers and enter the eavesdropper
    constraints, so the multiplier solve and the shaper update are repeated
    until the shapers settle. The last multiplier solve always uses the
    returned shapers, so the constraints hold at the returned point.
    """
    dims = problem.dims
    res = 0.0
    for _ in range(max_rounds):
        lam_e, lam_t, res = solve_multipliers(problem, sol)
        sol.lambda_e, sol.lambda_t = lam_e, lam_t
        sol.V = update_precoders(problem, sol, (lam_e, lam_t))
        W_new = np.stack([update_an_shaping(problem, sol, (lam_e, lam_t), t) for t in range(dims.K_T)])
        moved = np.linalg.norm(W_new - sol.W)
        sol.W = W_new
        if moved <= 1e-9:
            return res
    lam_e, lam_t, res = solve_multipliers(problem, sol)
    sol.lambda_e, sol.lambda_t = lam_e, lam_t
    sol.V = update_precoders(problem, sol, (lam_e, lam_t))
    return res


def coordinate_descent(problem, init=None, strict=False):
    """
    Alternating minimization of the sum MSE under the eavesdropper and power constraints.

    Each pass updates, in order, the eavesdropper filters, the receive
    filters, the multipliers, the precoders and the AN shapers, then stops
    once every user's MSE moved by at most ``beta``.

    Parameters
    ----------
    problem : DesignProblem
    init : TransceiverSolution, optional
        Warm start; a seeded random start is used otherwise.
    strict : bool
        Raise :class:`NoConvergence` instead of returning an unconverged result.

    Returns
    -------
    sol : TransceiverSolution
    report : SolverReport
    """
    dims, ch = problem.dims, problem.channels
    sol = initial_solution(problem) if init is None else init.copy()
    prev = np.zeros(dims.K_R)
    history = []
    converged = False
    mult_res = 0.0
    failures = 0
    it = 0
    for it in range(1, problem.max_outer_iters + 1):
        if dims.K_E:
            sol.E = eve_filters(sol.V, ch.G_hat, dims.noise_var_eve)
        for l in range(dims.K_R):
            sol.R[l] = update_receiver(problem, sol, l)
        mult_res = _multipliers_precoders_shapers(problem, sol)
        if mult_res > 1e-6:
            failures += 1
            log.debug("multiplier residual %.3e at iteration %d", mult_res, it)
        eps = _legit_mses(problem, sol)
        history.append(float(eps.sum()))
        if np.all(np.abs(eps - prev) <= problem.beta):
            converged = True
            break
        prev = eps
    monotone = all(b <= a + MONOTONE_SLACK * max(1.0, abs(a)) for a, b in zip(history, history[1:]))
    res, eps_e, pw = _residuals(problem, sol)
    report = SolverReport(
        iterations_used=it,
        final_smse=history[-1],
        constraint_residuals=res,
        converged=converged,
        multiplier_solve_residual=mult_res,
        smse_history=history,
        monotone=monotone,
        eve_mse=eps_e,
        power=pw,
        multiplier_failures=failures,
    )
    if strict and not converged:
        raise NoConvergence(f"no convergence after {it} iterations", (sol, report))
    return sol, report


# ---------------------------------------------------------------------------
# worst-case errors


def _sphere_point(M, tau):
    nrm = np.linalg.norm(M)
    if tau <= 0 or nrm == 0.0:
        return np.zeros_like(M)
    return np.sqrt(tau) * M / nrm


def mse_error_gradient(F, Ch, V, W, an_var, t):
    """
    Gradient of a receiver's MSE with respect to ``conj(D_t)`` at ``D = 0``.

    ``F^H (F H - I) V_t^H + sz_t^2 F^H F Ch_t W_t W_t^H`` with ``H = sum Ch V``.
    """
    N_s = V.shape[2]
    D = F @ effective_channel(Ch, V) - np.eye(N_s)
    return herm(F) @ D @ herm(V[t]) + an_var[t] * herm(F) @ F @ Ch[t] @ W[t] @ herm(W[t])


def worst_case_delta_legitimate(sol, channels, t, l, tau_tl, sigma_zt):
    """Error on the ``sqrt(tau)`` sphere that maximizes user ``l``'s linearized MSE."""
    an_var = np.broadcast_to(np.asarray(sigma_zt, float) ** 2, (sol.V.shape[0],))
    M = mse_error_gradient(sol.R[l], channels.C_hat[:, l], sol.V, sol.W, an_var, t)
    return _sphere_point(M, tau_tl)


def worst_case_delta_eve(sol, channels, t, e, tau_te, sigma_zt):
    """Error on the ``sqrt(tau)`` sphere that minimizes eavesdropper ``e``'s linearized MSE."""
    an_var = np.broadcast_to(np.asarray(sigma_zt, float) ** 2, (sol.V.shape[0],))
    M = mse_error_gradient(sol.E[e], channels.G_hat[:, e], sol.V, sol.W, an_var, t)
    return -_sphere_point(M, tau_te)


def _all_worst_cases(problem, sol, tau_l, tau_e):
    dims, ch = problem.dims, problem.channels
    sz = np.sqrt(dims.an_var)
    D_l = np.zeros_like(ch.C_hat)
    D_e = np.zeros_like(ch.G_hat)
    for t in range(dims.K_T):
        for l in range(dims.K_R):
            D_l[t, l] = worst_case_delta_legitimate(sol, ch, t, l, tau_l[t, l], sz)
        for e in range(dims.K_E):
            D_e[t, e] = worst_case_delta_eve(sol, ch, t, e, tau_e[t, e], sz)
    return D_l, D_e


def nbe_design(problem, max_outer_iters=30, strict=False):
    """
    Robust design against norm-bounded CSI errors.

    Alternates a robust coordinate-descent solve, in which the error
    scalars are ``||D||^2`` of the current worst-case errors, with a refresh
    of those errors, until every user's MSE moved by at most ``beta``.

    Returns
    -------
    sol : TransceiverSolution
    worst : WorstCaseErrors
        The errors the returned solution was designed against.
    report : SolverReport
    """
    dims, ch = problem.dims, problem.channels
    for side, model in (("legitimate", ch.leg_error), ("eavesdropper", ch.eve_error)):
        if model.kind not in ("norm_bounded", "perfect"):
            raise ValueError(f"{side} error model must be norm bounded, got {model.kind}")
    tau_l = ch.leg_error.link_values(dims.K_T, dims.K_R)
    tau_e = ch.eve_error.link_values(dims.K_T, dims.K_E)
    rng = make_rng(problem.seed, 1)
    D_l = np.zeros_like(ch.C_hat)
    D_e = np.zeros_like(ch.G_hat)
    for t in range(dims.K_T):
        for l in range(dims.K_R):
            D_l[t, l] = draw_error(ErrorModel.norm_bounded(tau_l[t, l]), dims.N_R, dims.N_T, rng)
        for e in range(dims.K_E):
            D_e[t, e] = draw_error(ErrorModel.norm_bounded(tau_e[t, e]), dims.N_E, dims.N_T, rng)

    flags = RobustFlags(1, 1)
    sol, report, u_prev = None, None, None
    prev = np.zeros(dims.K_R)
    history = []
    converged = False
    total_failures = 0
    it = 0
    for it in range(1, max_outer_iters + 1):
        u = UncertaintyInput.from_deltas(D_l, D_e)
        same = u_prev is not None and all(
            np.allclose(a, b, rtol=1e-12, atol=0.0) for a, b in ((u.s_tl, u_prev.s_tl), (u.s_te, u_prev.s_te)))
        if not same:
            sub = DesignProblem(dims, ch, flags, u, problem.beta, problem.max_outer_iters,
                                problem.seed, problem.an_tol, problem.jacobian, problem.init)
            sol, report = coordinate_descent(sub, init=sol)
            total_failures += report.multiplier_failures
            u_prev = u
        eps = _legit_mses(sub, sol)
        history.append(float(eps.sum()))
        if np.all(np.abs(eps - prev) <= problem.beta):
            converged = True
            break
        prev = eps
        D_l, D_e = _all_worst_cases(sub, sol, tau_l, tau_e)
    final = SolverReport(
        iterations_used=it,
        final_smse=history[-1],
        constraint_residuals=report.constraint_residuals,
        converged=converged and report.converged,
        multiplier_solve_residual=report.multiplier_solve_residual,
        smse_history=history,
        monotone=report.monotone,
        eve_mse=report.eve_mse,
        power=report.power,
        multiplier_failures=total_failures,
    )
    worst = WorstCaseErrors(D_l, D_e)
    if strict and not final.converged:
        raise NoConvergence(f"no convergence after {it} outer iterations", (sol, worst, final))
    return sol, worst, final
