"""
Channels, CSI-error realizations, pathloss and node placement.

Channel stacks use the layout ``C_hat[t, l]`` (shape ``(K_T, K_R, N_R, N_T)``)
and ``G_hat[t, e]`` (shape ``(K_T, K_E, N_E, N_T)``).
"""
from dataclasses import dataclass, field
import math

import numpy as np

__all__ = [
    "SystemDims",
    "ErrorModel",
    "ChannelSet",
    "NetworkLayout",
    "draw_rayleigh_channel",
    "draw_error",
    "draw_channel_set",
    "perturb_channels",
    "okumura_hata_loss_db",
    "okumura_hata_gain",
    "generate_system_scenario",
    "dbm_to_mw",
]


def dbm_to_mw(p_dbm):
    return 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


@dataclass
class SystemDims:
    """
    Problem dimensions and power/noise parameters.

    ``sigma_nl`` / ``sigma_ne`` are noise standard deviations and may be a
    scalar or one value per receiver; ``sigma_zt`` is the artificial-noise
    standard deviation (scalar or per BS). Powers are in linear units
    consistent with ``P_T`` (mW throughout this package).
    """

    K_T: int
    K_R: int
    K_E: int
    N_T: int
    N_R: int
    N_E: int
    N_s: int
    P_T: float = 1.0
    sigma_nl: object = 0.1
    sigma_ne: object = 0.1
    sigma_zt: object = 0.3
    Gamma: float = 0.5

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self):
        out = []
        for name in ("K_T", "K_R", "N_T", "N_R", "N_E", "N_s"):
            if int(getattr(self, name)) < 1:
                out.append(f"{name} must be >= 1")
        if int(self.K_E) < 0:
            out.append("K_E must be >= 0")
        if self.N_s > min(self.N_T, self.N_R):
            out.append(f"N_s={self.N_s} exceeds min(N_T, N_R)={min(self.N_T, self.N_R)}")
        if not self.P_T > 0:
            out.append("P_T must be positive")
        if not (0 < self.Gamma <= self.N_s):
            out.append(f"Gamma={self.Gamma} must lie in (0, N_s={self.N_s}]: eavesdropper MSE never exceeds tr(I)")
        if np.any(np.asarray(self.sigma_zt, dtype=float) ** 2 >= self.P_T):
            out.append("sigma_zt^2 leaves no power for the precoder (must be < P_T)")
        for name in ("sigma_nl", "sigma_ne", "sigma_zt"):
            if np.any(np.asarray(getattr(self, name), dtype=float) < 0):
                out.append(f"{name} must be >= 0")
        return out

    @property
    def noise_var_legit(self):
        return np.broadcast_to(np.asarray(self.sigma_nl, dtype=float) ** 2, (self.K_R,)).copy()

    @property
    def noise_var_eve(self):
        return np.broadcast_to(np.asarray(self.sigma_ne, dtype=float) ** 2, (self.K_E,)).copy()

    @property
    def an_var(self):
        return np.broadcast_to(np.asarray(self.sigma_zt, dtype=float) ** 2, (self.K_T,)).copy()


@dataclass
class ErrorModel:
    """
    CSI-error description for one side of the network.

    ``kind`` is ``"perfect"``, ``"stochastic"`` or ``"norm_bounded"``;
    ``value`` holds sigma^2 (stochastic) or tau (norm bounded), either a
    scalar or one entry per ``(t, receiver)`` link.
    """

    kind: str = "perfect"
    value: object = 0.0

    KINDS = ("perfect", "stochastic", "norm_bounded")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown error model {self.kind!r}")
        if np.any(np.asarray(self.value, dtype=float) < 0):
            raise ValueError("error variance / radius must be >= 0")

    @classmethod
    def perfect(cls):
        return cls("perfect", 0.0)

    @classmethod
    def stochastic(cls, sigma_sq):
        return cls("stochastic", sigma_sq)

    @classmethod
    def norm_bounded(cls, tau):
        return cls("norm_bounded", tau)

    def link_values(self, K_T, K_rx):
        if self.kind == "perfect":
            return np.zeros((K_T, K_rx))
        return np.broadcast_to(np.asarray(self.value, dtype=float), (K_T, K_rx)).copy()

    def per_entry_variance(self, K_T, K_rx, n_cols):
        """
        Coefficient ``s`` of the trace identity ``E tr(D U D^H V) = s tr(U) tr(V)``.

        Stochastic errors are drawn with per-entry variance ``sigma^2 / n_cols``
        (so that ``E[D D^H] = sigma^2 I``) and therefore ``s = sigma^2 / n_cols``.
        For norm-bounded errors ``tau`` itself is returned, which upper-bounds
        ``||R D V||^2 / (||R||^2 ||V||^2)`` over the ball.
        """
        vals = self.link_values(K_T, K_rx)
        if self.kind == "stochastic":
            return vals / n_cols
        return vals


@dataclass
class ChannelSet:
    C_hat: np.ndarray
    G_hat: np.ndarray
    leg_error: ErrorModel = field(default_factory=ErrorModel.perfect)
    eve_error: ErrorModel = field(default_factory=ErrorModel.perfect)

    def check(self, dims):
        want_c = (dims.K_T, dims.K_R, dims.N_R, dims.N_T)
        want_g = (dims.K_T, dims.K_E, dims.N_E, dims.N_T)
        if self.C_hat.shape != want_c:
            raise ValueError(f"C_hat has shape {self.C_hat.shape}, expected {want_c}")
        if self.G_hat.shape != want_g:
            raise ValueError(f"G_hat has shape {self.G_hat.shape}, expected {want_g}")
        if not (np.all(np.isfinite(self.C_hat)) and np.all(np.isfinite(self.G_hat))):
            raise ValueError("channel matrices contain non-finite entries")


def _cn(rng, shape, var):
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_rayleigh_channel(rows, cols, pathloss_gain, rng):
    """I.i.d. CN(0, pathloss_gain) entries."""
    if not pathloss_gain > 0:
        raise ValueError("pathloss_gain must be positive")
    return _cn(rng, (rows, cols), pathloss_gain)


def draw_error(model, rows, cols, rng, value=None):
    """
    One CSI-error realization of shape ``(rows, cols)``.

    ``value`` overrides the model's scalar (used for per-link values).
    Stochastic errors have i.i.d. CN(0, sigma^2/cols) entries; norm-bounded
    errors are uniform on the Frobenius ball of radius sqrt(tau).
    """
    if model.kind == "perfect":
        return np.zeros((rows, cols), dtype=complex)
    v = float(model.value if value is None else value)
    if model.kind == "stochastic":
        return _cn(rng, (rows, cols), v / cols)
    direction = _cn(rng, (rows, cols), 1.0)
    nrm = np.linalg.norm(direction)
    dim = 2 * rows * cols
    radius = math.sqrt(v) * rng.uniform() ** (1.0 / dim)
    return direction * (radius / nrm)


def draw_channel_set(dims, rng, leg_error=None, eve_error=None, gains_legit=None, gains_eve=None):
    """
    Estimated channels for a whole scenario.

    ``gains_legit`` (``(K_T, K_R)``) and ``gains_eve`` (``(K_T, K_E)``)
    default to 1, i.e. every link has the same pathloss.
    """
    gl = np.ones((dims.K_T, dims.K_R)) if gains_legit is None else np.asarray(gains_legit, float)
    ge = np.ones((dims.K_T, dims.K_E)) if gains_eve is None else np.asarray(gains_eve, float)
    C = _cn(rng, (dims.K_T, dims.K_R, dims.N_R, dims.N_T), 1.0) * np.sqrt(gl)[:, :, None, None]
    G = _cn(rng, (dims.K_T, dims.K_E, dims.N_E, dims.N_T), 1.0) * np.sqrt(ge)[:, :, None, None]
    return ChannelSet(C, G, leg_error or ErrorModel.perfect(), eve_error or ErrorModel.perfect())


def perturb_channels(channels, rng, leg_error=None, eve_error=None):
    """
    True channels ``C = C_hat + D`` for one error realization.

    The error models default to the ones stored in ``channels``.
    """
    leg = channels.leg_error if leg_error is None else leg_error
    eve = channels.eve_error if eve_error is None else eve_error
    K_T, K_R, N_R, N_T = channels.C_hat.shape
    K_E, N_E = channels.G_hat.shape[1], channels.G_hat.shape[2]
    lv = leg.link_values(K_T, K_R)
    ev = eve.link_values(K_T, K_E)
    C = channels.C_hat.copy()
    G = channels.G_hat.copy()
    for t in range(K_T):
        for l in range(K_R):
            C[t, l] += draw_error(leg, N_R, N_T, rng, lv[t, l])
        for e in range(K_E):
            G[t, e] += draw_error(eve, N_E, N_T, rng, ev[t, e])
    return C, G


def okumura_hata_loss_db(distance_m, freq_hz, h_bs_m=30.0, h_ue_m=1.5):
    """Urban Okumura-Hata loss (dB) with the small/medium-city mobile correction."""
    d_km = np.maximum(np.asarray(distance_m, dtype=float) / 1000.0, 0.001)
    f_mhz = freq_hz / 1e6
    lf = math.log10(f_mhz)
    a_hue = (1.1 * lf - 0.7) * h_ue_m - (1.56 * lf - 0.8)
    return (
        69.55
        + 26.16 * lf
        - 13.82 * math.log10(h_bs_m)
        - a_hue
        + (44.9 - 6.55 * math.log10(h_bs_m)) * np.log10(d_km)
    )


def okumura_hata_gain(distance_m, freq_hz, h_bs_m=30.0, h_ue_m=1.5):
    """Linear power gain ``10^(-L/10)``."""
    if np.any(np.asarray(distance_m) < 1.0):
        raise ValueError("distance must be >= 1 m")
    return 10.0 ** (-okumura_hata_loss_db(distance_m, freq_hz, h_bs_m, h_ue_m) / 10.0)


@dataclass
class NetworkLayout:
    bs_positions: np.ndarray
    sync_area: np.ndarray
    user_positions: np.ndarray
    eve_positions: np.ndarray
    carrier_freq: float = 700e6
    side_m: float = 0.0

    def to_text(self):
        """One node per line: ``kind index x y``."""
        lines = [f"# carrier_freq_hz {self.carrier_freq:.6g} side_m {self.side_m:.6f}"]
        sync = set(int(i) for i in self.sync_area)
        for i, (x, y) in enumerate(self.bs_positions):
            kind = "bs_sync" if i in sync else "bs"
            lines.append(f"{kind} {i} {x:.3f} {y:.3f}")
        for i, (x, y) in enumerate(self.user_positions):
            lines.append(f"user {i} {x:.3f} {y:.3f}")
        for i, (x, y) in enumerate(self.eve_positions):
            lines.append(f"eve {i} {x:.3f} {y:.3f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        bs, sync, users, eves = {}, [], {}, {}
        freq, side = 700e6, 0.0
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                meta = dict(zip(parts[1::2], parts[2::2]))
                freq = float(meta.get("carrier_freq_hz", freq))
                side = float(meta.get("side_m", side))
                continue
            kind, idx, x, y = parts[0], int(parts[1]), float(parts[2]), float(parts[3])
            if kind in ("bs", "bs_sync"):
                bs[idx] = (x, y)
                if kind == "bs_sync":
                    sync.append(idx)
            elif kind == "user":
                users[idx] = (x, y)
            elif kind == "eve":
                eves[idx] = (x, y)
            else:
                raise ValueError(f"unknown node kind {kind!r}")

        def arr(d):
            return np.array([d[i] for i in sorted(d)], dtype=float).reshape(-1, 2)

        return cls(arr(bs), np.array(sorted(sync), dtype=int), arr(users), arr(eves), freq, side)

    def distances(self, points):
        diff = self.bs_positions[:, None, :] - np.asarray(points)[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


def _disc_points(rng, center, radius, count, side):
    pts = []
    while len(pts) < count:
        r = radius * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2 * math.pi)
        p = (center[0] + r * math.cos(phi), center[1] + r * math.sin(phi))
        if 0.0 <= p[0] <= side and 0.0 <= p[1] <= side:
            pts.append(p)
    return np.array(pts).reshape(-1, 2)


def generate_system_scenario(rng, n_bs=100, area_km2=10.0, sync_size=20, n_members=9,
                             n_eves=2, radius_m=500.0, carrier_freq=700e6):
    """
    Place BSs, a user group and eavesdroppers in a square region.

    BSs are i.i.d. uniform (a Poisson field conditioned on its count). The
    synchronization area is the ``sync_size`` BSs nearest the centre. The
    team leader is uniform over the cells of the synchronization area
    (rejection sampling on the nearest BS); members and eavesdroppers are
    uniform in the disc of ``radius_m`` around the leader. Users are returned
    leader first.
    """
    if area_km2 <= 0 or n_bs < 1 or sync_size < 1 or n_members < 0 or n_eves < 0:
        raise ValueError("invalid scenario parameters")
    if sync_size > n_bs:
        raise ValueError("sync area larger than the BS population")
    side = math.sqrt(area_km2) * 1000.0
    bs = rng.uniform(0.0, side, size=(n_bs, 2))
    centre = np.array([side / 2, side / 2])
    order = np.argsort(np.hypot(*(bs - centre).T), kind="stable")
    sync = np.sort(order[:sync_size])
    sync_set = set(int(i) for i in sync)
    while True:
        leader = rng.uniform(0.0, side, size=2)
        nearest = int(np.argmin(np.hypot(*(bs - leader).T)))
        if nearest in sync_set:
            break
    members = _disc_points(rng, leader, radius_m, n_members, side)
    eves = _disc_points(rng, leader, radius_m, n_eves, side)
    users = np.vstack([leader[None, :], members])
    return NetworkLayout(bs, sync, users, eves, carrier_freq, side)
