"""
Monte-Carlo link simulation of designed transceivers.

A policy label ``"DESIGN@EVAL"`` names the design rule (``NR``, ``R-SE``,
``R-NBE``, ``Perfect``) and the CSI-error model applied when evaluating
(``SE``, ``NBE``, ``none``). One design is computed per channel-estimate
draw and evaluated over several independent error realizations.
"""
from dataclasses import dataclass, field, replace
import csv
import io
import math

import numpy as np

from .channel import (
    ErrorModel,
    SystemDims,
    draw_channel_set,
    ChannelSet,
    generate_system_scenario,
    okumura_hata_gain,
    perturb_channels,
)
from .clustering import ClusterRequest, greedy_cluster
from .design import DesignProblem, NoConvergence, coordinate_descent, nbe_design
from .mse import (
    RobustFlags,
    UncertaintyInput,
    eve_filters,
    mse_legitimate,
)
from .numerics import SingularMatrix, make_rng

__all__ = [
    "OddLength",
    "TargetNotBracketed",
    "qpsk_modulate",
    "qpsk_demodulate",
    "LinkTrialResult",
    "run_link_trial",
    "SnrSweep",
    "LinkTemplate",
    "ExperimentResult",
    "SecurityGapResult",
    "parse_policy",
    "design_for_policy",
    "sweep",
    "security_gap",
    "SystemLevelParams",
    "system_level_run",
    "CSV_COLUMNS",
    "SCHEMA_VERSION",
    "write_csv",
    "blank_row",
]

SCHEMA_VERSION = 1
DESIGNS = ("NR", "R-SE", "R-NBE", "Perfect")
EVALS = ("SE", "NBE", "none")


class OddLength(ValueError):
    """QPSK needs an even number of bits."""


class TargetNotBracketed(ValueError):
    """A BER curve never crosses its target inside the sweep."""


# ---------------------------------------------------------------------------
# QPSK

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def qpsk_modulate(bits):
    """
    Gray-mapped unit-energy QPSK.

    Bit pairs ``(b0, b1)`` map to ``((1 - 2 b0) + 1j (1 - 2 b1)) / sqrt(2)``,
    so ``[0, 0] -> (1 + 1j) / sqrt(2)``.
    """
    b = np.asarray(bits, dtype=np.int8).ravel()
    if b.size % 2:
        raise OddLength(f"bit count {b.size} is odd")
    pairs = b.reshape(-1, 2)
    return ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) * _INV_SQRT2


def qpsk_demodulate(symbols):
    """Hard decisions, inverse of :func:`qpsk_modulate`."""
    s = np.asarray(symbols).ravel()
    out = np.empty((s.size, 2), dtype=np.int8)
    out[:, 0] = s.real < 0
    out[:, 1] = s.imag < 0
    return out.ravel()


# ---------------------------------------------------------------------------
# single trial


@dataclass
class LinkTrialResult:
    bit_errors_legit: np.ndarray
    bit_errors_eve: np.ndarray
    n_bits: int
    sq_err_legit: np.ndarray
    sq_err_eve: np.ndarray
    n_symbols: int


def _cn(rng, shape, var):
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def run_link_trial(sol, C_true, G_true, dims, n_symbols, rng, eve_filter=None):
    """
    Send ``n_symbols`` QPSK vectors through the true channels.

    The BSs transmit ``V_t d + W_t z_t``. Users apply ``R_l`` and
    eavesdroppers apply ``E_e``. When ``eve_filter`` is omitted it is the
    AN-unaware MMSE filter computed from the true eavesdropper channels.

    Returns
    -------
    LinkTrialResult
        Bit-error counts and summed squared errors ``||d - d_hat||^2`` per
        user and per eavesdropper. Each receiver handles
        ``n_bits = 2 N_s n_symbols`` bits.
    """
    K_T, N_s = dims.K_T, dims.N_s
    n_bits = 2 * N_s * n_symbols
    if n_symbols == 0:
        return LinkTrialResult(np.zeros(dims.K_R, int), np.zeros(dims.K_E, int), 0,
                               np.zeros(dims.K_R), np.zeros(dims.K_E), 0)
    bits = rng.integers(0, 2, size=n_bits, dtype=np.int8)
    d = qpsk_modulate(bits).reshape(n_symbols, N_s).T  # (N_s, n)
    x = np.einsum("tns,sk->tnk", sol.V, d)
    an_var = dims.an_var
    for t in range(K_T):
        if an_var[t] > 0:
            x[t] += sol.W[t] @ _cn(rng, (dims.N_T, n_symbols), an_var[t])
    bits_ref = bits.reshape(n_symbols, N_s, 2)

    def receive(Ch, F, noise_var):
        y = np.einsum("trn,tnk->rk", Ch, x) + _cn(rng, (Ch.shape[1], n_symbols), noise_var)
        dh = F @ y
        err = np.sum(np.abs(d - dh) ** 2)
        hard = qpsk_demodulate(dh.T.ravel()).reshape(n_symbols, N_s, 2)
        return int(np.count_nonzero(hard != bits_ref)), float(err)

    be_l = np.zeros(dims.K_R, dtype=np.int64)
    se_l = np.zeros(dims.K_R)
    nv_l = dims.noise_var_legit
    for l in range(dims.K_R):
        be_l[l], se_l[l] = receive(C_true[:, l], sol.R[l], nv_l[l])
    be_e = np.zeros(dims.K_E, dtype=np.int64)
    se_e = np.zeros(dims.K_E)
    if dims.K_E:
        E = eve_filters(sol.V, G_true, dims.noise_var_eve) if eve_filter is None else eve_filter
        nv_e = dims.noise_var_eve
        for e in range(dims.K_E):
            be_e[e], se_e[e] = receive(G_true[:, e], E[e], nv_e[e])
    return LinkTrialResult(be_l, be_e, n_bits, se_l, se_e, n_symbols)


# ---------------------------------------------------------------------------
# physical-layer sweeps


@dataclass
class SnrSweep:
    points: list
    trials_per_point: int = 10
    symbols_per_trial: int = 1000
    error_draws: int = 4

    def __post_init__(self):
        self.points = [float(p) for p in self.points]
        if any(b < a for a, b in zip(self.points, self.points[1:])):
            raise ValueError("SNR points must be sorted ascending")
        if self.trials_per_point < 1 or self.error_draws < 1:
            raise ValueError("trials and error draws must be >= 1")
        if self.symbols_per_trial < 0:
            raise ValueError("symbols_per_trial must be >= 0")


@dataclass
class LinkTemplate:
    """
    Everything a physical-layer point needs except the SNR.

    Noise variances are set from the SNR as ``P_T / SNR``. The four error
    parameters serve both the robust designs and the evaluation errors.
    """

    dims: SystemDims
    sigma_tl2: float = 0.04
    sigma_te2: float = 0.09
    tau_tl: float = 0.04
    tau_te: float = 0.09
    beta: float = 1e-4
    max_outer_iters: int = 50
    nbe_max_outer_iters: int = 30
    init: str = "eigen"

    def dims_at(self, snr_db):
        nv = self.dims.P_T / 10.0 ** (snr_db / 10.0)
        return replace(self.dims, sigma_nl=math.sqrt(nv), sigma_ne=math.sqrt(nv))

    def eval_errors(self, kind):
        if kind == "SE":
            return ErrorModel.stochastic(self.sigma_tl2), ErrorModel.stochastic(self.sigma_te2)
        if kind == "NBE":
            return ErrorModel.norm_bounded(self.tau_tl), ErrorModel.norm_bounded(self.tau_te)
        return ErrorModel.perfect(), ErrorModel.perfect()


def parse_policy(label):
    """Split ``"DESIGN@EVAL"`` into its two parts."""
    if "@" not in label:
        raise ValueError(f"policy {label!r} must look like DESIGN@EVAL")
    design, ev = label.split("@", 1)
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}; choose from {DESIGNS}")
    if ev not in EVALS:
        raise ValueError(f"unknown evaluation errors {ev!r}; choose from {EVALS}")
    return design, ev


def design_for_policy(design, dims, C_hat, G_hat, template, seed):
    """
    Run one design rule on estimated channels.

    Returns ``(solution, converged)``.
    """
    if design == "R-SE":
        ch = ChannelSet(C_hat, G_hat, ErrorModel.stochastic(template.sigma_tl2), ErrorModel.stochastic(template.sigma_te2))
        prob = DesignProblem(dims, ch, RobustFlags(1, 1), beta=template.beta,
                             max_outer_iters=template.max_outer_iters, seed=seed, init=template.init)
        sol, rep = coordinate_descent(prob)
        return sol, rep.converged
    if design == "R-NBE":
        ch = ChannelSet(C_hat, G_hat, ErrorModel.norm_bounded(template.tau_tl), ErrorModel.norm_bounded(template.tau_te))
        prob = DesignProblem(dims, ch, RobustFlags(1, 1), beta=template.beta,
                             max_outer_iters=template.max_outer_iters, seed=seed, init=template.init)
        sol, _, rep = nbe_design(prob, max_outer_iters=template.nbe_max_outer_iters)
        return sol, rep.converged
    ch = ChannelSet(C_hat, G_hat)
    prob = DesignProblem(dims, ch, RobustFlags(0, 0), u=UncertaintyInput.zeros(dims), beta=template.beta,
                         max_outer_iters=template.max_outer_iters, seed=seed, init=template.init)
    sol, rep = coordinate_descent(prob)
    return sol, rep.converged


@dataclass
class ExperimentResult:
    """Rows of aggregated statistics plus run metadata."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, name, **match):
        return np.array([r[name] for r in self.rows if all(r.get(k) == v for k, v in match.items())], dtype=float)


def _binom_hw(errors, n):
    if n == 0:
        return float("nan"), float("nan")
    p = errors / n
    return p, 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n)


def _normal_hw(samples):
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        return float("nan"), float("nan")
    if s.size == 1:
        return float(s[0]), 0.0
    return float(s.mean()), float(1.96 * s.std(ddof=1) / math.sqrt(s.size))


def _trial_seed(seed, *key):
    return int(make_rng(seed, *key).integers(0, 2**62))


def sweep(template, snr_sweep, policy, seed, experiment="custom", x_name="snr_db", on_point=None):
    """
    BER and MSE of one policy over an SNR sweep.

    For every point and trial the estimated channels are redrawn from a
    substream keyed by ``(point, trial)`` that does not depend on the
    policy, so different policies see the same channels. Non-converged
    designs are still evaluated and counted in ``n_nonconverged``.

    Returns
    -------
    ExperimentResult
    """
    design, ev = parse_policy(policy)
    dims0 = template.dims
    result = ExperimentResult(metadata={"seed": int(seed), "policy": policy})
    for ip, snr_db in enumerate(snr_sweep.points):
        dims = template.dims_at(snr_db)
        err_l = np.zeros(dims.K_R, dtype=np.int64)
        err_e = np.zeros(dims.K_E, dtype=np.int64)
        n_bits = 0
        mse_l, mse_e, mse_cf = [], [], []
        nonconv = 0
        for it in range(snr_sweep.trials_per_point):
            ch_rng = make_rng(seed, 1, ip, it)
            est = draw_channel_set(dims0, ch_rng)
            try:
                sol, ok = design_for_policy(design, dims, est.C_hat, est.G_hat, template, _trial_seed(seed, 2, ip, it))
            except (SingularMatrix, NoConvergence):
                nonconv += 1
                continue
            nonconv += 0 if ok else 1
            leg, eve = template.eval_errors(ev)
            # closed-form expectation over stochastic errors, nominal otherwise
            cf_set = ChannelSet(est.C_hat, est.G_hat, leg, eve)
            if ev == "SE":
                cf_flags, cf_u = RobustFlags(1, 0), UncertaintyInput.from_channels(cf_set, dims)
            else:
                cf_flags, cf_u = RobustFlags(), UncertaintyInput.zeros(dims)
            mse_cf.append(np.mean([mse_legitimate(sol, cf_set, dims, cf_flags, cf_u, l)
                                   for l in range(dims.K_R)]))
            n_sym = snr_sweep.symbols_per_trial // snr_sweep.error_draws
            for k in range(snr_sweep.error_draws):
                ev_rng = make_rng(seed, 3, ip, it, k)
                C, G = perturb_channels(est, ev_rng, leg, eve)
                res = run_link_trial(sol, C, G, dims, n_sym, ev_rng)
                err_l += res.bit_errors_legit
                err_e += res.bit_errors_eve
                n_bits += res.n_bits
                if n_sym:
                    mse_l.append(float(np.mean(res.sq_err_legit)) / n_sym)
                    if dims.K_E:
                        mse_e.append(float(np.mean(res.sq_err_eve)) / n_sym)
        ber_l, ber_l_hw = _binom_hw(int(err_l.sum()), n_bits * dims.K_R)
        ber_e, ber_e_hw = _binom_hw(int(err_e.sum()), n_bits * dims.K_E) if dims.K_E else (float("nan"),) * 2
        m_l, m_l_hw = _normal_hw(mse_l)
        m_e, m_e_hw = _normal_hw(mse_e)
        row = blank_row(experiment, policy, "point", x_name, snr_db)
        row.update(
            ber_legit=ber_l, ber_legit_hw=ber_l_hw, ber_eve=ber_e, ber_eve_hw=ber_e_hw,
            mse_legit=m_l, mse_legit_hw=m_l_hw, mse_eve=m_e, mse_eve_hw=m_e_hw,
            mse_legit_cf=float(np.mean(mse_cf)) if mse_cf else float("nan"),
            n_trials=snr_sweep.trials_per_point, n_nonconverged=nonconv,
        )
        result.rows.append(row)
        if on_point is not None:
            on_point(row)
    return result


# ---------------------------------------------------------------------------
# security gap


@dataclass
class SecurityGapResult:
    snr_min_legit_db: float
    snr_max_eve_db: float
    gap_db: float
    target_ber_legit: float
    target_ber_eve: float


def _log_cross(x0, x1, y0, y1, target, floor):
    l0, l1, lt = (math.log10(max(v, floor)) for v in (y0, y1, target))
    if l1 == l0:
        return x0
    return x0 + (lt - l0) * (x1 - x0) / (l1 - l0)


def security_gap(snr_db, ber_legit, ber_eve, target_legit=1e-4, target_eve=0.3, floor=1e-12):
    """
    ``SNR_min^L - SNR_max^E`` from sampled BER curves.

    ``SNR_min^L`` is where the legitimate curve first falls to
    ``target_legit``. ``SNR_max^E`` is where the eavesdropper curve last
    sits at or above ``target_eve``, extended to its crossing with the next
    sample. Both use linear interpolation of ``log10(BER)`` in dB. BER values
    of zero are clipped to ``floor``.

    Raises
    ------
    TargetNotBracketed
        If a curve does not cross its target between two samples.
    """
    x = np.asarray(snr_db, dtype=float)
    bl = np.asarray(ber_legit, dtype=float)
    be = np.asarray(ber_eve, dtype=float)
    if not (x.size == bl.size == be.size) or x.size < 2:
        raise ValueError("curves need matching lengths of at least 2")
    below = np.flatnonzero(bl <= target_legit)
    if below.size == 0 or below[0] == 0:
        raise TargetNotBracketed(f"legitimate BER does not cross {target_legit} inside the sweep")
    i = int(below[0])
    s_leg = _log_cross(x[i - 1], x[i], bl[i - 1], bl[i], target_legit, floor)
    above = np.flatnonzero(be >= target_eve)
    if above.size == 0 or above[-1] == x.size - 1:
        raise TargetNotBracketed(f"eavesdropper BER does not cross {target_eve} inside the sweep")
    j = int(above[-1])
    s_eve = _log_cross(x[j], x[j + 1], be[j], be[j + 1], target_eve, floor)
    return SecurityGapResult(float(s_leg), float(s_eve), float(s_leg - s_eve), target_legit, target_eve)


# ---------------------------------------------------------------------------
# system level


@dataclass
class SystemLevelParams:
    n_bs: int = 100
    area_km2: float = 10.0
    sync_size: int = 20
    n_members: int = 9
    n_eves: int = 2
    radius_m: float = 500.0
    carrier_freq: float = 700e6
    h_bs_m: float = 30.0
    h_ue_m: float = 1.5
    tx_power_dbm: float = 46.0
    bandwidth_hz: float = 10e6
    noise_figure_db: float = 9.0
    N_T: int = 16
    N_R: int = 8
    N_E: int = 4
    N_s: int = 2
    an_var: float = 0.04
    Gamma: float = 0.5
    tau_tl: float = 0.04
    tau_te: float = 0.09
    beta: float = 1e-4
    max_outer_iters: int = 50
    nbe_max_outer_iters: int = 30
    n_groups: int = 30
    symbols_per_group: int = 2000
    error_draws: int = 2

    @property
    def noise_dbm(self):
        return -174.0 + 10.0 * math.log10(self.bandwidth_hz) + self.noise_figure_db

    def snr_gain(self, gains):
        """Pathloss gains converted to received SNR at full BS power."""
        return np.asarray(gains) * 10.0 ** ((self.tx_power_dbm - self.noise_dbm) / 10.0)


def _cluster(policy, layout, gains_u, K_prime):
    if policy == "MBSFN":
        return set(int(b) for b in layout.sync_area)
    users = list(range(gains_u.shape[1]))
    req = ClusterRequest(layout.sync_area, users, K_prime if policy == "Greedy" else 1)
    return greedy_cluster(req, gains_u, phase2=(policy == "Greedy"))


def system_level_run(params, policy, seed, K_prime=10, on_group=None):
    """
    Per-group BER for one clustering policy.

    Each group draws its layout from a substream that depends only on the
    group index, so all policies see the same layouts. Gains are in SNR
    units (noise power 1, full BS power 1); signals from BSs outside the
    cluster add to each receiver's noise. Errors scale with each link's
    gain: ``tau * g``. Designs are robust against norm-bounded errors and
    evaluated under norm-bounded errors.

    Returns
    -------
    list of dict
        ``group``, ``cluster_size``, ``ber_legit``, ``ber_eve``, ``converged``.
    """
    if policy not in ("MBSFN", "SCPTM", "Greedy"):
        raise ValueError(f"unknown clustering policy {policy!r}")
    out = []
    for g in range(params.n_groups):
        rng = make_rng(seed, 10, g)
        layout = generate_system_scenario(rng, params.n_bs, params.area_km2, params.sync_size,
                                          params.n_members, params.n_eves, params.radius_m, params.carrier_freq)
        snr_u = params.snr_gain(okumura_hata_gain(np.maximum(layout.distances(layout.user_positions), 1.0),
                                                  params.carrier_freq, params.h_bs_m, params.h_ue_m))
        snr_e = params.snr_gain(okumura_hata_gain(np.maximum(layout.distances(layout.eve_positions), 1.0),
                                                  params.carrier_freq, params.h_bs_m, params.h_ue_m))
        S = np.array(sorted(_cluster(policy, layout, snr_u, K_prime)), dtype=int)
        others = np.setdiff1d(np.arange(params.n_bs), S)
        nv_l = 1.0 + snr_u[others].sum(axis=0)
        nv_e = 1.0 + snr_e[others].sum(axis=0)
        K_R, K_E = snr_u.shape[1], snr_e.shape[1]
        dims = SystemDims(K_T=len(S), K_R=K_R, K_E=K_E, N_T=params.N_T, N_R=params.N_R, N_E=params.N_E,
                          N_s=params.N_s, P_T=1.0, sigma_nl=np.sqrt(nv_l), sigma_ne=np.sqrt(nv_e),
                          sigma_zt=math.sqrt(params.an_var), Gamma=params.Gamma)
        gl, ge = snr_u[S], snr_e[S]
        ch_rng = make_rng(seed, 11, g)
        est = draw_channel_set(dims, ch_rng, gains_legit=gl, gains_eve=ge)
        leg = ErrorModel.norm_bounded(params.tau_tl * gl)
        eve = ErrorModel.norm_bounded(params.tau_te * ge)
        est = ChannelSet(est.C_hat, est.G_hat, leg, eve)
        prob = DesignProblem(dims, est, RobustFlags(1, 1), beta=params.beta,
                             max_outer_iters=params.max_outer_iters, seed=_trial_seed(seed, 12, g))
        try:
            sol, _, rep = nbe_design(prob, max_outer_iters=params.nbe_max_outer_iters)
            ok = rep.converged
        except SingularMatrix:
            out.append(dict(group=g, cluster_size=len(S), ber_legit=float("nan"), ber_eve=float("nan"), converged=False))
            continue
        el = ee = nb = 0
        n_sym = params.symbols_per_group // params.error_draws
        for k in range(params.error_draws):
            ev_rng = make_rng(seed, 13, g, k)
            C, G = perturb_channels(est, ev_rng)
            res = run_link_trial(sol, C, G, dims, n_sym, ev_rng)
            el += int(res.bit_errors_legit.sum())
            ee += int(res.bit_errors_eve.sum())
            nb += res.n_bits
        row = dict(group=g, cluster_size=len(S), ber_legit=el / max(nb * K_R, 1),
                   ber_eve=ee / max(nb * K_E, 1) if K_E else float("nan"), converged=bool(ok))
        out.append(row)
        if on_group is not None:
            on_group(row)
    return out


# ---------------------------------------------------------------------------
# CSV

CSV_COLUMNS = [
    "schema_version", "experiment", "policy", "kind", "x_name", "x_value",
    "ber_legit", "ber_legit_hw", "ber_eve", "ber_eve_hw",
    "mse_legit", "mse_legit_hw", "mse_eve", "mse_eve_hw", "mse_legit_cf",
    "snr_min_legit_db", "snr_max_eve_db", "gap_db",
    "n_trials", "n_nonconverged", "cluster_size",
]


def blank_row(experiment, policy, kind, x_name, x_value):
    row = {c: "" for c in CSV_COLUMNS}
    row.update(schema_version=SCHEMA_VERSION, experiment=experiment, policy=policy, kind=kind,
               x_name=x_name, x_value=x_value)
    return row


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(round(v, 12))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(rows, path_or_buf=None):
    """Write rows with the fixed column set; returns the text when no target is given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
    return text
