"""Transmit and receive covariance assembly under hardware distortion.

Every transmitter injects a distortion term proportional to the diagonal of
its transmit covariance, and every receiver adds a distortion proportional to
the diagonal of what it receives, plus thermal noise and an aggregate
CSI-error power.  The two helper forms f1/f2 bundle the four resulting
quadratic contributions of a (channel, matrix) pair and are the building
blocks of the solver updates.
"""

from __future__ import annotations

import numpy as np

from .model import Realization, bs_node, dl_node, ul_node
from .state import BeamformingState


def _diag(matrix: np.ndarray) -> np.ndarray:
    return np.diag(np.diag(matrix))


# ---------------------------------------------------------------------------
# transmit side
# ---------------------------------------------------------------------------


def tx_covariance_dl(alpha: float, precoder: np.ndarray, kappa: float) -> np.ndarray:
    """Per-user downlink transmit covariance alpha^2 (VV^H + kappa diag(VV^H))."""
    gram = precoder @ precoder.conj().T
    return alpha ** 2 * (gram + kappa * _diag(gram))


def tx_covariance_ul(gamma: float, precoder: np.ndarray, kappa: float) -> np.ndarray:
    """Uplink transmit covariance gamma^2 (VV^H + kappa diag(VV^H))."""
    return tx_covariance_dl(gamma, precoder, kappa)


def cell_tx_covariance(realization: Realization, state: BeamformingState, g: int) -> np.ndarray:
    """Total transmit covariance of BS g (sum over its downlink users)."""
    n = realization.antennas.bs_tx
    total = np.zeros((n, n), dtype=complex)
    for k in range(realization.topology.dl_counts[g]):
        total += tx_covariance_dl(state.dl_coefficients[g][k], state.dl_precoders[g][k],
                                  realization.hardware.kappa_bs)
    return total


def _tx_covariances(realization: Realization, state: BeamformingState):
    """Transmit covariance of every transmitting node, keyed by node."""
    out = {}
    for g in range(realization.cell_count):
        out[bs_node(g)] = cell_tx_covariance(realization, state, g)
    for g, k in realization.ul_users():
        out[ul_node(g, k)] = tx_covariance_ul(state.ul_coefficients[g][k],
                                              state.ul_precoders[g][k],
                                              realization.hardware.kappa_ue)
    return out


# ---------------------------------------------------------------------------
# aggregate CSI-error power
# ---------------------------------------------------------------------------


def csi_error_variance(realization: Realization, state: BeamformingState, rx) -> float:
    """Aggregate estimation-error power seen at a receiver.

    Each imperfectly known link contributes err_var * tr(T) of its
    transmitter, which follows from E{Delta T Delta^H} = err_var tr(T) I for
    an i.i.d. error matrix Delta.  Perfectly known links (the SI channel)
    contribute nothing.
    """
    tx_cov = _tx_covariances(realization, state)
    total = 0.0
    for tx, t in tx_cov.items():
        if (rx, tx) in realization.channels.links:
            total += realization.channels.err_var(rx, tx) * float(np.trace(t).real)
    return total


# ---------------------------------------------------------------------------
# receive side
# ---------------------------------------------------------------------------


def rx_covariance_dl(realization: Realization, state: BeamformingState,
                     k: int, g: int) -> np.ndarray:
    """Received-signal covariance at downlink user (k, g), estimated channels.

    Sum of every transmitter's covariance propagated through its estimated
    channel, the receiver distortion diagonal, thermal noise, and the
    aggregate CSI-error power.
    """
    return _rx_covariance(realization, state, dl_node(g, k),
                          realization.hardware.beta_ue, realization.hardware.noise_ue_w)


def rx_covariance_ul(realization: Realization, state: BeamformingState, g: int) -> np.ndarray:
    """Received-signal covariance at BS g.

    Identical structure to the downlink case except that the perfectly known
    self-interference channel enters with its true matrix.
    """
    return _rx_covariance(realization, state, bs_node(g),
                          realization.hardware.beta_bs, realization.hardware.noise_bs_w)


def _rx_covariance(realization, state, rx, beta, noise_w):
    return _rx_covariance_given(_tx_covariances(realization, state), realization,
                                rx, beta, noise_w)


def _rx_covariance_given(tx_cov, realization, rx, beta, noise_w):
    # shared-form assembly so batch evaluation can reuse one tx_cov dict
    links = realization.channels
    m = realization.antennas.ue_rx if rx[0] == "dl" else realization.antennas.bs_rx
    base = np.zeros((m, m), dtype=complex)
    sigma_hat = 0.0
    for tx, t in tx_cov.items():
        if (rx, tx) not in links.links:
            continue
        # the SI link stores its true matrix as the estimate (perfect CSI),
        # so the estimate is the right channel for every term
        h = links.est(rx, tx)
        base += h @ t @ h.conj().T
        sigma_hat += links.err_var(rx, tx) * float(np.trace(t).real)
    return base + beta * _diag(base) + (noise_w + sigma_hat) * np.eye(m)


# ---------------------------------------------------------------------------
# distortion-aware quadratic forms
# ---------------------------------------------------------------------------


def f1(y: np.ndarray, x: np.ndarray, sigma_t: float, sigma_r: float) -> np.ndarray:
    """Matrix form Y X X^H Y^H with transmit/receive distortion diagonals.

    sigma_t is the distortion factor of the node transmitting through the
    channel inside Y, sigma_r that of the receiving node represented by X.
    """
    gram = x @ x.conj().T
    ygy = y @ gram @ y.conj().T
    ydy = y @ _diag(gram) @ y.conj().T
    return ygy + sigma_t * _diag(ygy) + sigma_r * ydy + sigma_r * sigma_t * _diag(ydy)


def f2(z: np.ndarray, y: np.ndarray, x: np.ndarray,
       sigma_t: float, sigma_r: float) -> float:
    """Scalar form tr(Z^H Y (XX^H + sigma_t diag) Y^H Z) plus its receive-side diagonal.

    Equals tr(X^H f1(Y^H, Z, sigma_t, sigma_r) X); both forms appear in the
    power-coefficient and precoder updates.
    """
    gram = x @ x.conj().T
    inner = y @ (gram + sigma_t * _diag(gram)) @ y.conj().T
    value = np.trace(z.conj().T @ inner @ z) + sigma_r * np.trace(z.conj().T @ _diag(inner) @ z)
    return float(value.real)
