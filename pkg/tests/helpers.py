"""Shared test utilities: small scenarios, random states, and independent oracles.

The Monte-Carlo estimator here simulates the physical signal chain (symbols,
transmit distortion, channel-estimate errors, noise, receive distortion)
without touching the analytic covariance code, so it can serve as an
independent oracle for it.
"""

import math

import numpy as np

from ibfdsim import jpaim, objective
from ibfdsim.model import (Realization, ScenarioConfig, bs_node, build_realization,
                           dl_node, ul_node)
from ibfdsim.state import BeamformingState


def cn(rng, shape):
    """i.i.d. circularly symmetric complex normal draws, unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def small_config(**overrides) -> ScenarioConfig:
    """A desk-scale scenario used where antenna counts do not matter."""
    base = dict(cells=2, dl_users=1, ul_users=1, bs_tx_antennas=4, bs_rx_antennas=4,
                ue_tx_antennas=2, ue_rx_antennas=2, dl_streams=1, ul_streams=1)
    base.update(overrides)
    return ScenarioConfig(**base)


def random_small_realization(rng, **overrides) -> Realization:
    """Random small instance: sizes, SI gain, and seed drawn from `rng`."""
    cfg = small_config(
        cells=int(rng.integers(1, 3)),
        dl_users=int(rng.integers(1, 3)),
        ul_users=int(rng.integers(1, 3)),
        asic_db=float(rng.choice([0.0, 40.0, 120.0])),
        **overrides,
    )
    return build_realization(cfg, int(rng.integers(0, 2 ** 31)))


def random_state(realization: Realization, seed: int, coef_scale=1.0) -> BeamformingState:
    """Arbitrary dense state (nonzero combiners) for algebraic identity tests."""
    rng = np.random.default_rng(seed)
    ant = realization.antennas
    topo = realization.topology
    hw = realization.hardware

    def block(rows, cols, count):
        return [cn(rng, (rows, cols)) for _ in range(count)]

    dl_pre, dl_comb, dl_coef, ul_pre, ul_comb, ul_coef = [], [], [], [], [], []
    for g in range(topo.cell_count):
        k_d, k_u = topo.dl_counts[g], topo.ul_counts[g]
        dl_pre.append(block(ant.bs_tx, ant.dl_streams, k_d))
        dl_comb.append(block(ant.ue_rx, ant.dl_streams, k_d))
        scale = math.sqrt(hw.p_bs_w / max(ant.dl_streams * k_d, 1))
        dl_coef.append(coef_scale * scale * rng.uniform(0.3, 1.0, size=k_d))
        ul_pre.append(block(ant.ue_tx, ant.ul_streams, k_u))
        ul_comb.append(block(ant.bs_rx, ant.ul_streams, k_u))
        ul_coef.append(coef_scale * math.sqrt(hw.p_ue_w / ant.ul_streams)
                       * rng.uniform(0.3, 1.0, size=k_u))
    return BeamformingState(dl_pre, dl_comb, dl_coef, ul_pre, ul_comb, ul_coef)


def solved_state(realization: Realization, iterations=3, nu=None) -> BeamformingState:
    """State after a few solver iterations: realistic scales, nonzero combiners."""
    cfg = jpaim.SolverConfig(nu=nu, max_iterations=iterations, threshold=1e-3)
    return jpaim.run(realization, cfg, collect_metrics=False).final_state


# ---------------------------------------------------------------------------
# Monte-Carlo oracle for receive covariances and stream MSEs
# ---------------------------------------------------------------------------


def mc_estimates(realization: Realization, state: BeamformingState, draws: int, seed: int):
    """Sample receive covariances and MSEs from the simulated signal chain.

    Per draw: unit-power symbols, transmit distortion with per-antenna variance
    kappa * diag of the undistorted transmit covariance, true channels redrawn
    as estimate + error at the stored per-element error variance, thermal
    noise, and receive distortion whose per-antenna variance is beta times the
    empirical undistorted receive power.  Returns ({node: C_hat}, {user: mse}).
    """
    rng = np.random.default_rng(seed)
    hw = realization.hardware
    ant = realization.antennas
    links = realization.channels

    tx, sym = {}, {}
    for g in range(realization.cell_count):
        x = np.zeros((draws, ant.bs_tx), dtype=complex)
        dvar = np.zeros(ant.bs_tx)
        for k in range(realization.topology.dl_counts[g]):
            v = state.dl_precoders[g][k]
            a = state.dl_coefficients[g][k]
            s = cn(rng, (draws, v.shape[1]))
            sym[("dl", g, k)] = s
            x += s @ (a * v).T
            dvar += a * a * np.sum(np.abs(v) ** 2, axis=1)
        x += cn(rng, (draws, ant.bs_tx)) * np.sqrt(hw.kappa_bs * dvar)
        tx[bs_node(g)] = x
    for g, k in realization.ul_users():
        v = state.ul_precoders[g][k]
        gam = state.ul_coefficients[g][k]
        s = cn(rng, (draws, v.shape[1]))
        sym[("ul", g, k)] = s
        x = s @ (gam * v).T
        dvar = hw.kappa_ue * gam * gam * np.sum(np.abs(v) ** 2, axis=1)
        tx[ul_node(g, k)] = x + cn(rng, (draws, v.shape[0])) * np.sqrt(dvar)

    def receive(rx, rows, beta, noise_w):
        y = cn(rng, (draws, rows)) * math.sqrt(noise_w)
        for (r, t), link in sorted(links.links.items()):
            if r != rx:
                continue
            y = y + tx[t] @ link.est.T
            if link.err_var > 0.0:
                delta = cn(rng, (draws,) + link.est.shape) * math.sqrt(link.err_var)
                y = y + np.einsum("dij,dj->di", delta, tx[t])
        dvar = beta * np.mean(np.abs(y) ** 2, axis=0)
        return y + cn(rng, (draws, rows)) * np.sqrt(dvar)

    cov, mse = {}, {}
    for g, k in realization.dl_users():
        y = receive(dl_node(g, k), ant.ue_rx, hw.beta_ue, hw.noise_ue_w)
        cov[dl_node(g, k)] = np.einsum("di,dj->ij", y, y.conj()) / draws
        err = y @ state.dl_combiners[g][k].conj() - sym[("dl", g, k)]
        mse[("dl", g, k)] = float(np.mean(np.sum(np.abs(err) ** 2, axis=1)))
    for g in range(realization.cell_count):
        y = receive(bs_node(g), ant.bs_rx, hw.beta_bs, hw.noise_bs_w)
        cov[bs_node(g)] = np.einsum("di,dj->ij", y, y.conj()) / draws
        for k in range(realization.topology.ul_counts[g]):
            err = y @ state.ul_combiners[g][k].conj() - sym[("ul", g, k)]
            mse[("ul", g, k)] = float(np.mean(np.sum(np.abs(err) ** 2, axis=1)))
    return cov, mse


# ---------------------------------------------------------------------------
# finite-difference stationarity of the block updates
# ---------------------------------------------------------------------------


def _fd_ratio(fun, mats, skip_zero=False):
    """Central-difference gradient of `fun` over the real/imag parts of `mats`,
    reported as ||grad|| * ||block|| / |fun| (dimensionless).

    Each block Lagrangian is a quadratic polynomial in its variables, so the
    central difference has no truncation error at any step size and the step
    only needs to beat the roundoff floor of evaluating the loss (which on
    SI-dominated instances is assembled from large canceling terms).  A
    generous step tied to the block-wide scale keeps the difference well
    above that floor; a per-matrix step would shrink to nothing on a nearly
    silenced user's matrix and report pure cancellation noise."""
    block_norm = math.sqrt(sum(float(np.sum(np.abs(m) ** 2)) for m in mats))
    sizes = sum(m.size for m in mats)
    block_rms = block_norm / math.sqrt(sizes) if sizes else 0.0
    base = abs(fun())
    grad_sq = 0.0
    for m in mats:
        rms = float(np.sqrt(np.mean(np.abs(m) ** 2)))
        h = 1e-3 * max(rms, block_rms, 1e-9)
        flat = m.reshape(-1)
        for i in range(flat.size):
            if skip_zero and flat[i] == 0.0:
                continue  # clamped at the boundary; one-sided optimality only
            for step in (h, 1j * h) if np.iscomplexobj(m) else (h,):
                orig = flat[i]
                flat[i] = orig + step
                up = fun()
                flat[i] = orig - step
                down = fun()
                flat[i] = orig
                grad_sq += ((up - down) / (2.0 * h)) ** 2
    return math.sqrt(grad_sq) * block_norm / max(base, 1e-30)


def combiner_stationarity(realization, state, nu) -> float:
    mats = [u for cell in state.dl_combiners for u in cell]
    mats += [u for cell in state.ul_combiners for u in cell]
    return _fd_ratio(lambda: objective.loss(realization, state, nu), mats)


def precoder_stationarity(realization, state, nu, update: jpaim.PrecoderUpdate) -> float:
    hw = realization.hardware

    def lagrangian():
        val = objective.loss(realization, state, nu)
        for g in range(realization.cell_count):
            val += update.dl_multipliers[g] * (state.dl_cell_power(g) - hw.p_bs_w)
        for i, (g, k) in enumerate(realization.ul_users()):
            val += update.ul_multipliers[i] * (state.ul_power(g, k) - hw.p_ue_w)
        return val

    mats = [v for cell in state.dl_precoders for v in cell]
    mats += [v for cell in state.ul_precoders for v in cell]
    return _fd_ratio(lagrangian, mats)


def coefficient_stationarity(realization, state, nu, update: jpaim.PowerUpdate) -> float:
    # the power sub-problem minimizes the sum MSE subject to the budgets; its
    # Lagrangian carries no RSI penalty term (that term belongs to the
    # precoder stage), so stationarity is measured against the MSE-only loss
    hw = realization.hardware
    zero_nu = np.zeros(realization.cell_count)

    def lagrangian():
        val = objective.loss(realization, state, zero_nu)
        for g in range(realization.cell_count):
            val += update.dl_multipliers[g] * (state.dl_cell_power(g) - hw.p_bs_w)
        for i, (g, k) in enumerate(realization.ul_users()):
            val += update.ul_multipliers[i] * (state.ul_power(g, k) - hw.p_ue_w)
        return val

    mats = [a for a in state.dl_coefficients if a.size]
    mats += [a for a in state.ul_coefficients if a.size]
    if not mats:
        return 0.0
    return _fd_ratio(lagrangian, mats, skip_zero=True)
