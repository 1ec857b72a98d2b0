"""
Transmit power and mean-square-error evaluators, plus Monte-Carlo oracles.

Signals from the cooperating BSs add coherently at each receiver, so the
useful part of user ``l``'s observation is ``H_l d`` with
``H_l = sum_t C_tl V_t``. CSI errors enter the closed forms through a
per-link scalar ``s`` (see :class:`UncertaintyInput`).
"""
from dataclasses import dataclass, field

import numpy as np

from .numerics import fro2, herm, hermitian_solve

__all__ = [
    "TransceiverSolution",
    "RobustFlags",
    "UncertaintyInput",
    "ShapeMismatch",
    "transmit_power",
    "transmit_powers",
    "effective_channel",
    "mse_legitimate",
    "mse_eavesdropper",
    "smse",
    "eve_mmse_filter",
    "eve_filters",
    "trace_property_oracle",
    "monte_carlo_power",
    "monte_carlo_mse_legitimate",
    "monte_carlo_mse_eavesdropper",
]

IMAG_TOL = 1e-9


class ShapeMismatch(ValueError):
    """Array shapes do not conform to the system dimensions."""


@dataclass
class TransceiverSolution:
    """
    Precoders, AN shapers, receive filters and Lagrange multipliers.

    Shapes: ``V (K_T, N_T, N_s)``, ``W (K_T, N_T, N_T)``, ``R (K_R, N_s, N_R)``,
    ``E (K_E, N_s, N_E)``, ``lambda_e (K_E,)``, ``lambda_t (K_T,)``.
    """

    V: np.ndarray
    W: np.ndarray
    R: np.ndarray
    E: np.ndarray
    lambda_e: np.ndarray = None
    lambda_t: np.ndarray = None

    def __post_init__(self):
        if self.lambda_e is None:
            self.lambda_e = np.zeros(self.E.shape[0])
        if self.lambda_t is None:
            self.lambda_t = np.zeros(self.V.shape[0])

    def copy(self):
        return TransceiverSolution(
            self.V.copy(), self.W.copy(), self.R.copy(), self.E.copy(),
            np.array(self.lambda_e, dtype=float), np.array(self.lambda_t, dtype=float),
        )

    @classmethod
    def zeros(cls, dims):
        return cls(
            np.zeros((dims.K_T, dims.N_T, dims.N_s), complex),
            np.zeros((dims.K_T, dims.N_T, dims.N_T), complex),
            np.zeros((dims.K_R, dims.N_s, dims.N_R), complex),
            np.zeros((dims.K_E, dims.N_s, dims.N_E), complex),
        )

    def check(self, dims):
        want = {
            "V": (dims.K_T, dims.N_T, dims.N_s),
            "W": (dims.K_T, dims.N_T, dims.N_T),
            "R": (dims.K_R, dims.N_s, dims.N_R),
            "E": (dims.K_E, dims.N_s, dims.N_E),
        }
        for name, shape in want.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise ShapeMismatch(f"{name} has shape {got}, expected {shape}")

    # text serialization -------------------------------------------------
    FORMAT = "securemimo-solution"
    VERSION = 1

    def to_text(self):
        """
        Versioned plain-text dump.

        A header line is followed by one block per array: ``name shape...``
        then one ``re im`` pair per entry in row-major order.
        """
        out = [f"{self.FORMAT} {self.VERSION}"]
        arrays = [("V", self.V), ("W", self.W), ("R", self.R), ("E", self.E),
                  ("lambda_e", np.asarray(self.lambda_e, complex)),
                  ("lambda_t", np.asarray(self.lambda_t, complex))]
        for name, arr in arrays:
            arr = np.asarray(arr, dtype=complex)
            out.append(" ".join([name, str(arr.ndim)] + [str(s) for s in arr.shape]))
            for z in arr.ravel(order="C"):
                out.append(f"{z.real:.17g} {z.imag:.17g}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        head = lines[0].split()
        if len(head) != 2 or head[0] != cls.FORMAT:
            raise ValueError("not a solution file")
        if int(head[1]) != cls.VERSION:
            raise ValueError(f"unsupported solution format version {head[1]}")
        pos = 1
        arrays = {}
        while pos < len(lines):
            if not lines[pos].strip():
                pos += 1
                continue
            parts = lines[pos].split()
            name, ndim = parts[0], int(parts[1])
            shape = tuple(int(s) for s in parts[2:2 + ndim])
            n = int(np.prod(shape)) if shape else 1
            vals = np.array([[float(x) for x in lines[pos + 1 + i].split()] for i in range(n)]).reshape(n, 2)
            arrays[name] = (vals[:, 0] + 1j * vals[:, 1]).reshape(shape)
            pos += 1 + n
        return cls(arrays["V"], arrays["W"], arrays["R"], arrays["E"],
                   arrays["lambda_e"].real.copy(), arrays["lambda_t"].real.copy())


@dataclass(frozen=True)
class RobustFlags:
    """Switch the error-variance terms on (1) or off (0) per side."""

    chi_l: int = 0
    chi_e: int = 0

    def __post_init__(self):
        if self.chi_l not in (0, 1) or self.chi_e not in (0, 1):
            raise ValueError("robust flags must be 0 or 1")


@dataclass
class UncertaintyInput:
    """
    Per-link error scalars ``s_tl (K_T, K_R)`` and ``s_te (K_T, K_E)``.

    ``s`` is the coefficient in ``E||R D X||^2 = s ||R||^2 ||X||^2``. For
    stochastic errors it is the per-entry variance ``sigma^2 / N_T``; for a
    fixed error realization it is ``||D||^2`` (an upper bound).
    """

    s_tl: np.ndarray
    s_te: np.ndarray = field(default=None)

    def __post_init__(self):
        self.s_tl = np.asarray(self.s_tl, dtype=float)
        self.s_te = np.zeros((self.s_tl.shape[0], 0)) if self.s_te is None else np.asarray(self.s_te, dtype=float)
        if np.any(self.s_tl < 0) or np.any(self.s_te < 0):
            raise ValueError("uncertainty scalars must be >= 0")

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros((dims.K_T, dims.K_R)), np.zeros((dims.K_T, dims.K_E)))

    @classmethod
    def from_channels(cls, channels, dims):
        """Scalars implied by the channel set's stochastic error models."""
        return cls(
            channels.leg_error.per_entry_variance(dims.K_T, dims.K_R, dims.N_T),
            channels.eve_error.per_entry_variance(dims.K_T, dims.K_E, dims.N_T),
        )

    @classmethod
    def from_deltas(cls, Delta_tl, Delta_te):
        return cls(fro2(Delta_tl), fro2(Delta_te))


def transmit_power(V_t, W_t, sigma_zt):
    """``tr(V V^H) + sigma_z^2 tr(W W^H)``."""
    return float(fro2(np.asarray(V_t)) + sigma_zt ** 2 * fro2(np.asarray(W_t)))


def transmit_powers(sol, dims):
    """Per-BS transmit powers, shape ``(K_T,)``."""
    return fro2(sol.V) + dims.an_var * fro2(sol.W)


def effective_channel(Ch, V):
    """``sum_t Ch[t] @ V[t]`` for a ``(K_T, rows, N_T)`` channel stack."""
    return np.einsum("trn,tns->rs", Ch, V)


def _real(z, what):
    z = complex(z)
    if abs(z.imag) > IMAG_TOL * (1.0 + abs(z.real)):
        raise FloatingPointError(f"{what}: imaginary residue {z.imag:.3e}")
    return z.real


def _mse(F, Ch, V, W, an_var, noise_var, chi, s, N_s, what):
    """Shared closed form for one receiver with filter ``F`` and channels ``Ch[t]``."""
    D = F @ effective_channel(Ch, V) - np.eye(N_s)
    FC = np.einsum("sr,trn->tsn", F, Ch)
    FCW = FC @ W
    an = np.einsum("t,tij,tij->", an_var, FCW, FCW.conj())
    fnorm = np.trace(F @ herm(F))
    val = np.trace(D @ herm(D)) + an + noise_var * fnorm
    if chi:
        tx = fro2(V) + an_var * fro2(W)
        val = val + fnorm * np.sum(s * tx)
    return max(_real(val, what), 0.0)


def mse_legitimate(sol, channels, dims, flags, u, l):
    """
    Closed-form MSE of legitimate user ``l``.

    ``N_s - 2 Re tr(R H) + ||R H||^2 + sum_t sz_t^2 ||R C_tl W_t||^2
    + sn_l^2 ||R||^2 + chi_l sum_t s_tl ||R||^2 P_t``
    with ``H = sum_t C_tl V_t`` and ``P_t`` the BS transmit power.
    """
    sol.check(dims)
    channels.check(dims)
    return _mse(sol.R[l], channels.C_hat[:, l], sol.V, sol.W, dims.an_var,
                dims.noise_var_legit[l], flags.chi_l, u.s_tl[:, l], dims.N_s, "mse_legitimate")


def mse_eavesdropper(sol, channels, dims, flags, u, e):
    """Closed-form MSE at eavesdropper ``e``; mirrors :func:`mse_legitimate`."""
    sol.check(dims)
    channels.check(dims)
    return _mse(sol.E[e], channels.G_hat[:, e], sol.V, sol.W, dims.an_var,
                dims.noise_var_eve[e], flags.chi_e, u.s_te[:, e], dims.N_s, "mse_eavesdropper")


def smse(sol, channels, dims, flags, u):
    """Sum of the legitimate users' MSEs."""
    return float(sum(mse_legitimate(sol, channels, dims, flags, u, l) for l in range(dims.K_R)))


def eve_mmse_filter(V, G, sigma_ne):
    """
    Linear MMSE filter of an eavesdropper that ignores artificial noise.

    Parameters
    ----------
    V : (K_T, N_T, N_s) precoders
    G : (K_T, N_E, N_T) channels from every BS to this eavesdropper
    sigma_ne : float
        Noise standard deviation.

    Returns
    -------
    E : (N_s, N_E) ndarray
        ``H^H (H H^H + sigma^2 I)^{-1}`` with ``H = sum_t G_t V_t``.
    """
    H = effective_channel(np.asarray(G), np.asarray(V))
    A = H @ herm(H) + sigma_ne ** 2 * np.eye(H.shape[0])
    return herm(hermitian_solve(A, H))


def eve_filters(V, G_all, noise_var_eve):
    """Filters for all eavesdroppers from a ``(K_T, K_E, N_E, N_T)`` stack."""
    K_E = G_all.shape[1]
    N_s = V.shape[2]
    out = np.zeros((K_E, N_s, G_all.shape[2]), dtype=complex)
    for e in range(K_E):
        out[e] = eve_mmse_filter(V, G_all[:, e], np.sqrt(noise_var_eve[e]))
    return out


def trace_property_oracle(U, Vm, sigma, trials, rng, return_stderr=False):
    """
    Monte-Carlo check of ``E tr(X U X^H Vm) = sigma^2 tr(U) tr(Vm)``.

    ``X`` has i.i.d. CN(0, sigma^2) entries, shape ``(Vm.rows, U.rows)``.
    Returns ``(lhs, rhs)`` or ``(lhs, rhs, stderr)``.
    """
    U = np.asarray(U, dtype=complex)
    Vm = np.asarray(Vm, dtype=complex)
    rows, cols = Vm.shape[0], U.shape[0]
    rhs = float(np.real(sigma ** 2 * np.trace(U) * np.trace(Vm)))
    if sigma == 0 or trials == 0:
        return (0.0, rhs, 0.0) if return_stderr else (0.0, rhs)
    vals = []
    chunk = 20000
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        X = sigma * np.sqrt(0.5) * (rng.standard_normal((n, rows, cols)) + 1j * rng.standard_normal((n, rows, cols)))
        vals.append(np.real(np.einsum("nij,jk,nlk,li->n", X, U, X.conj(), Vm)))
        done += n
    vals = np.concatenate(vals)
    lhs = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return (lhs, rhs, se) if return_stderr else (lhs, rhs)


def _cn(rng, shape, var=1.0):
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def monte_carlo_power(V_t, W_t, sigma_zt, draws, rng):
    """Sample mean and stderr of ``||V d + W z||^2`` with unit-power data."""
    N_s = V_t.shape[1]
    N_T = W_t.shape[1]
    d = _cn(rng, (draws, N_s))
    z = _cn(rng, (draws, N_T), sigma_zt ** 2)
    x = d @ V_t.T + z @ W_t.T
    p = np.sum(np.abs(x) ** 2, axis=1)
    return float(p.mean()), float(p.std(ddof=1) / np.sqrt(draws))


def _mc_receiver(F, Ch, V, W, an_var, noise_var, err_model, draws, rng, chunk=10000):
    """Sample ``||d - F y||^2`` where ``y = sum_t (Ch_t + D_t)(V_t d + W_t z_t) + n``."""
    K_T, rows, N_T = Ch.shape
    N_s = V.shape[2]
    kind = err_model.kind
    evar = np.broadcast_to(np.asarray(err_model.value, float), (K_T,)) if kind != "perfect" else np.zeros(K_T)
    if kind == "norm_bounded":
        raise ValueError("Monte-Carlo MSE oracle expects stochastic or perfect errors")
    out = []
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        d = _cn(rng, (n, N_s))
        y = _cn(rng, (n, rows), noise_var)
        for t in range(K_T):
            x = d @ V[t].T
            if an_var[t] > 0:
                x = x + _cn(rng, (n, N_T), an_var[t]) @ W[t].T
            Ct = Ch[t][None, :, :]
            if evar[t] > 0:
                Ct = Ct + _cn(rng, (n, rows, N_T), evar[t] / N_T)
            y = y + np.einsum("nrk,nk->nr", np.broadcast_to(Ct, (n, rows, N_T)), x)
        err = d - y @ F.T
        out.append(np.sum(np.abs(err) ** 2, axis=1))
        done += n
    vals = np.concatenate(out)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))


def monte_carlo_mse_legitimate(sol, channels, dims, l, draws, rng):
    """Monte-Carlo ``(mean, stderr)`` of user ``l``'s MSE under the channel set's legitimate error model."""
    err = channels.leg_error
    if err.kind == "stochastic":
        err = type(err)("stochastic", np.broadcast_to(np.asarray(err.value, float), (dims.K_T, dims.K_R))[:, l])
    return _mc_receiver(sol.R[l], channels.C_hat[:, l], sol.V, sol.W, dims.an_var,
                        dims.noise_var_legit[l], err, draws, rng)


def monte_carlo_mse_eavesdropper(sol, channels, dims, e, draws, rng):
    """Monte-Carlo ``(mean, stderr)`` of eavesdropper ``e``'s MSE with its filter held fixed."""
    err = channels.eve_error
    if err.kind == "stochastic":
        err = type(err)("stochastic", np.broadcast_to(np.asarray(err.value, float), (dims.K_T, dims.K_E))[:, e])
    return _mc_receiver(sol.E[e], channels.G_hat[:, e], sol.V, sol.W, dims.an_var,
                        dims.noise_var_eve[e], err, draws, rng)
