"""Mean-square errors, residual self-interference, and rate reporting.

The solver's tracked quantity is the penalized sum MSE: the sum of every
user's stream-recovery MSE plus a per-cell penalty nu_g times the residual
self-interference (RSI) power that the cell's precoders leave at its own
receive array.  Sum rate is reported alongside as the conventional
log-det measure with everything that is not the desired signal treated as
noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import covariance
from .model import Realization, bs_node, dl_node, ul_node
from .state import BeamformingState

log = logging.getLogger(__name__)

ASIC_DEPTH_CAP_DB = 200.0


@dataclass(frozen=True)
class ObjectiveReport:
    """All scalar figures of merit of one (realization, state) pair."""

    sum_mse_dl: float
    sum_mse_ul: float
    rsi_watts: tuple            # per cell, W
    asic_depth_db: tuple        # per cell, dB
    loss: float                 # penalized sum MSE
    sum_rate: float             # bits/s/Hz, downlink + uplink
    sum_rate_dl: float
    sum_rate_ul: float

    @property
    def sum_mse(self) -> float:
        return self.sum_mse_dl + self.sum_mse_ul


def nu_from_asic(l_db: float) -> float:
    """RSI penalty weight matched to an analog cancellation depth in dB."""
    return 10.0 ** (-l_db / 5.0)


def _nu_per_cell(realization: Realization, nu) -> np.ndarray:
    arr = np.asarray(nu, dtype=float)
    if arr.ndim == 0:
        arr = np.full(realization.cell_count, float(arr))
    if arr.shape != (realization.cell_count,):
        raise ValueError(f"nu must be scalar or per-cell, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("nu must be >= 0")
    return arr


def _mse(c, channel, precoder, combiner, coefficient, streams):
    quad = np.trace(combiner.conj().T @ c @ combiner).real
    cross = np.trace(combiner.conj().T @ channel @ precoder).real
    return float(quad - 2.0 * coefficient * cross + streams)


def mse_downlink(realization: Realization, state: BeamformingState, k: int, g: int) -> float:
    """Stream-recovery MSE of downlink user (k, g) under its current combiner."""
    c = covariance.rx_covariance_dl(realization, state, k, g)
    return _mse(c, realization.channels.est(dl_node(g, k), bs_node(g)),
                state.dl_precoders[g][k], state.dl_combiners[g][k],
                state.dl_coefficients[g][k], realization.antennas.dl_streams)


def mse_uplink(realization: Realization, state: BeamformingState, k: int, g: int) -> float:
    """Stream-recovery MSE of uplink user (k, g), decoded at BS g."""
    c = covariance.rx_covariance_ul(realization, state, g)
    return _mse(c, realization.channels.est(bs_node(g), ul_node(g, k)),
                state.ul_precoders[g][k], state.ul_combiners[g][k],
                state.ul_coefficients[g][k], realization.antennas.ul_streams)


def rsi_power(realization: Realization, state: BeamformingState, g: int) -> float:
    """Self-interference power received at BS g through the true SI channel.

    Depends only on the cell's own downlink precoders and coefficients; the
    transmit-distortion diagonal is included.
    """
    h = realization.channels.true(bs_node(g), bs_node(g))
    kappa = realization.hardware.kappa_bs
    total = 0.0
    for k in range(realization.topology.dl_counts[g]):
        alpha = state.dl_coefficients[g][k]
        v = state.dl_precoders[g][k]
        gram = v @ v.conj().T
        total += alpha ** 2 * (np.trace(h @ gram @ h.conj().T).real
                               + kappa * np.trace(h @ np.diag(np.diag(gram)) @ h.conj().T).real)
    return float(total)


def asic_depth(realization: Realization, state: BeamformingState, g: int) -> float:
    """Cancellation depth 10 log10(l_g tr(T_g) / rsi) in dB, capped at +200.

    Measures how far below the (path-scaled) transmitted power the residual
    SI lands.  Returns the cap for a numerically vanished residual and 0 for
    a silent cell.
    """
    t_g = covariance.cell_tx_covariance(realization, state, g)
    numerator = realization.hardware.si_gain[g] * float(np.trace(t_g).real)
    if numerator <= 0.0:
        return 0.0
    rsi = rsi_power(realization, state, g)
    if rsi < 1e-30 * numerator:
        return ASIC_DEPTH_CAP_DB
    return min(10.0 * math.log10(numerator / rsi), ASIC_DEPTH_CAP_DB)


def loss(realization: Realization, state: BeamformingState, nu) -> float:
    """Penalized sum MSE: all stream MSEs plus nu_g-weighted RSI powers."""
    nu_arr = _nu_per_cell(realization, nu)
    total = sum(mse_downlink(realization, state, k, g) for g, k in realization.dl_users())
    total += sum(mse_uplink(realization, state, k, g) for g, k in realization.ul_users())
    total += sum(nu_arr[g] * rsi_power(realization, state, g)
                 for g in range(realization.cell_count))
    return float(total)


def _rate_bits(c: np.ndarray, signal: np.ndarray) -> float:
    """log2 det(I + S Q^-1) with Q = C - S, regularized if Q is singular."""
    q = c - signal
    sign, logdet_q = np.linalg.slogdet(q)
    if sign.real <= 0 or not np.isfinite(logdet_q):
        q = q + 1e-15 * np.trace(q).real * np.eye(q.shape[0])
        log.warning("singular noise covariance regularized in rate computation")
        sign, logdet_q = np.linalg.slogdet(q)
    _, logdet_c = np.linalg.slogdet(q + signal)
    return float((logdet_c - logdet_q) / math.log(2.0))


def sum_rate(realization: Realization, state: BeamformingState) -> float:
    """Network sum rate in bits/s/Hz with interference treated as noise."""
    report = evaluate(realization, state, nu=0.0)
    return report.sum_rate


def evaluate(realization: Realization, state: BeamformingState, nu,
             with_rates: bool = True) -> ObjectiveReport:
    """Compute every reported metric, sharing covariance assembly.

    with_rates=False skips the log-det rate terms (reported as nan), which
    roughly halves the cost of per-iteration bookkeeping inside the solver.
    """
    nu_arr = _nu_per_cell(realization, nu)
    ant = realization.antennas
    hw = realization.hardware
    links = realization.channels
    tx_cov = covariance._tx_covariances(realization, state)

    sum_mse_dl = 0.0
    rate_dl = 0.0
    for g, k in realization.dl_users():
        c = covariance._rx_covariance_given(tx_cov, realization, dl_node(g, k),
                                            hw.beta_ue, hw.noise_ue_w)
        h = links.est(dl_node(g, k), bs_node(g))
        alpha = state.dl_coefficients[g][k]
        v = state.dl_precoders[g][k]
        sum_mse_dl += _mse(c, h, v, state.dl_combiners[g][k], alpha, ant.dl_streams)
        if with_rates:
            hv = h @ v
            rate_dl += _rate_bits(c, alpha ** 2 * (hv @ hv.conj().T))

    sum_mse_ul = 0.0
    rate_ul = 0.0
    for g in range(realization.cell_count):
        if realization.topology.ul_counts[g] == 0:
            continue
        c = covariance._rx_covariance_given(tx_cov, realization, bs_node(g),
                                            hw.beta_bs, hw.noise_bs_w)
        for k in range(realization.topology.ul_counts[g]):
            h = links.est(bs_node(g), ul_node(g, k))
            gamma = state.ul_coefficients[g][k]
            v = state.ul_precoders[g][k]
            sum_mse_ul += _mse(c, h, v, state.ul_combiners[g][k], gamma, ant.ul_streams)
            if with_rates:
                hv = h @ v
                rate_ul += _rate_bits(c, gamma ** 2 * (hv @ hv.conj().T))

    rsi = tuple(rsi_power(realization, state, g) for g in range(realization.cell_count))
    depth = tuple(asic_depth(realization, state, g) for g in range(realization.cell_count))
    total_loss = sum_mse_dl + sum_mse_ul + float(np.dot(nu_arr, rsi))
    nan = float("nan")
    return ObjectiveReport(
        sum_mse_dl=float(sum_mse_dl),
        sum_mse_ul=float(sum_mse_ul),
        rsi_watts=rsi,
        asic_depth_db=depth,
        loss=total_loss,
        sum_rate=float(rate_dl + rate_ul) if with_rates else nan,
        sum_rate_dl=float(rate_dl) if with_rates else nan,
        sum_rate_ul=float(rate_ul) if with_rates else nan,
    )
