"""Joint power-allocation and interference-management (JPAIM) solver.

Alternating block-coordinate minimization of the penalized sum MSE: linear
MMSE combiners, then downlink/uplink precoder directions through a single
eigendecomposition per cell with a bisected power multiplier, then the scalar
power coefficients with their own multipliers (closed form on the uplink,
bisection against the cell budget on the downlink).  Every block solves its
subproblem exactly, so the tracked loss is non-increasing and the loop stops
once the per-iteration improvement drops below a threshold.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import covariance, objective
from .model import Realization, bs_node, dl_node, ul_node
from .state import BeamformingState


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs; nu=None derives the RSI penalty from the cell's SI gain."""

    nu: object = None                 # scalar, per-cell sequence, or None
    threshold: float = 1e-4           # stop once the loss decrease falls below this
    max_iterations: int = 100
    bisection_rel_tol: float = 1e-8   # relative power error at the budget
    bisection_max_steps: int = 200    # doubling steps when hunting a bracket
    init_seed: int = 0                # seeds the random initial precoders

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1e-3:
            raise ValueError("threshold must lie in (0, 1e-3]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not 0.0 < self.bisection_rel_tol <= 1e-6:
            raise ValueError("bisection_rel_tol must lie in (0, 1e-6]")
        if self.bisection_max_steps < 1:
            raise ValueError("bisection_max_steps must be >= 1")


@dataclass
class IterationRecord:
    """One solver iteration: loss after the combiner step, then that
    iteration's multipliers and post-update powers."""

    iteration: int
    loss: float
    sum_mse: float
    rsi_watts: tuple
    sum_rate: float               # nan when metric collection is off
    elapsed_ms: float
    dl_cell_power: tuple          # per cell, after the full iteration
    ul_user_power: tuple          # flattened over (cell, user)
    dl_precoder_multipliers: tuple    # per cell
    ul_precoder_multipliers: tuple    # flattened over (cell, user)
    dl_power_multipliers: tuple       # per cell
    ul_power_multipliers: tuple       # flattened over (cell, user)


@dataclass
class RunTrace:
    """Full solver run: per-iteration records plus the final state and report.

    records[0] is the initial state before any update; record t holds the
    loss measured right after iteration t's combiner update, which is the
    quantity the stopping rule watches.
    """

    records: list
    final_state: BeamformingState
    final_report: objective.ObjectiveReport
    converged: bool
    iterations: int
    nu: tuple

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])


@dataclass
class PrecoderUpdate:
    state: BeamformingState
    dl_multipliers: tuple         # per cell
    ul_multipliers: tuple         # flattened over (cell, user)
    dl_scalar_power: tuple        # per cell, from the eigen-domain expression
    dl_matrix_power: tuple        # per cell, from the assembled precoders
    ul_scalar_power: tuple
    ul_matrix_power: tuple


@dataclass
class PowerUpdate:
    state: BeamformingState
    dl_multipliers: tuple         # per cell
    ul_multipliers: tuple         # flattened over (cell, user)


def resolve_nu(realization: Realization, config: SolverConfig) -> np.ndarray:
    """Per-cell RSI penalty weights; the default ties them to the SI gain.

    A cell whose analog stage leaves gain l_g gets nu_g = l_g^2, which equals
    10**(-l_db/5) for a cancellation depth of l_db decibels.
    """
    if config.nu is None:
        return np.array([l * l for l in realization.hardware.si_gain])
    return objective._nu_per_cell(realization, config.nu)


def initialize(realization: Realization, config: SolverConfig,
               rng: np.random.Generator | None = None) -> BeamformingState:
    """Random unit-column precoders, zero combiners, budget-splitting coefficients.

    alpha = sqrt(P_bs / (b_d K_d)) shares the cell budget over users and
    streams; gamma = sqrt(P_ue / b_u).  With unit-norm precoder columns the
    initial state meets the power budgets exactly.
    """
    if rng is None:
        rng = np.random.default_rng([config.init_seed, realization.seed])
    ant = realization.antennas
    hw = realization.hardware
    topo = realization.topology

    def unit_matrix(rows, cols):
        m = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
        return m / np.linalg.norm(m, axis=0, keepdims=True)

    dl_pre, dl_comb, dl_coef = [], [], []
    ul_pre, ul_comb, ul_coef = [], [], []
    for g in range(topo.cell_count):
        k_d = topo.dl_counts[g]
        dl_pre.append([unit_matrix(ant.bs_tx, ant.dl_streams) for _ in range(k_d)])
        dl_comb.append([np.zeros((ant.ue_rx, ant.dl_streams), dtype=complex)
                        for _ in range(k_d)])
        alpha = math.sqrt(hw.p_bs_w / (ant.dl_streams * k_d)) if k_d else 0.0
        dl_coef.append(np.full(k_d, alpha))
    for g in range(topo.cell_count):
        k_u = topo.ul_counts[g]
        ul_pre.append([unit_matrix(ant.ue_tx, ant.ul_streams) for _ in range(k_u)])
        ul_comb.append([np.zeros((ant.bs_rx, ant.ul_streams), dtype=complex)
                        for _ in range(k_u)])
        ul_coef.append(np.full(k_u, math.sqrt(hw.p_ue_w / ant.ul_streams)))
    return BeamformingState(dl_pre, dl_comb, dl_coef, ul_pre, ul_comb, ul_coef)


# ---------------------------------------------------------------------------
# block updates
# ---------------------------------------------------------------------------


def update_combiners(realization: Realization, state: BeamformingState) -> BeamformingState:
    """Linear MMSE combiners U = coef * C^-1 H V for every user."""
    new = state.copy()
    tx_cov = covariance._tx_covariances(realization, state)
    hw = realization.hardware
    links = realization.channels
    try:
        for g, k in realization.dl_users():
            c = covariance._rx_covariance_given(tx_cov, realization, dl_node(g, k),
                                                hw.beta_ue, hw.noise_ue_w)
            hv = links.est(dl_node(g, k), bs_node(g)) @ state.dl_precoders[g][k]
            new.dl_combiners[g][k] = state.dl_coefficients[g][k] * np.linalg.solve(c, hv)
        for g in range(realization.cell_count):
            if realization.topology.ul_counts[g] == 0:
                continue
            c = covariance._rx_covariance_given(tx_cov, realization, bs_node(g),
                                                hw.beta_bs, hw.noise_bs_w)
            for k in range(realization.topology.ul_counts[g]):
                hv = links.est(bs_node(g), ul_node(g, k)) @ state.ul_precoders[g][k]
                new.ul_combiners[g][k] = state.ul_coefficients[g][k] * np.linalg.solve(c, hv)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular received covariance ({exc}); check the noise configuration") from exc
    return new


def compute_omegas(realization: Realization, state: BeamformingState):
    """Interference-plus-distortion matrices seen from each transmitter.

    For BS g this aggregates, over every receiver in the network, the f1 form
    of the estimated channel from g and that receiver's combiner (the SI link
    contributes through its true matrix, stored as its estimate).  The uplink
    variant does the same from each uplink user's antennas.
    """
    hw = realization.hardware
    links = realization.channels
    ant = realization.antennas

    omega_bs = []
    for g in range(realization.cell_count):
        total = np.zeros((ant.bs_tx, ant.bs_tx), dtype=complex)
        for j, i in realization.dl_users():
            h = links.est(dl_node(j, i), bs_node(g))
            total += covariance.f1(h.conj().T, state.dl_combiners[j][i],
                                   hw.kappa_bs, hw.beta_ue)
        for j, i in realization.ul_users():
            h = links.est(bs_node(j), bs_node(g))
            total += covariance.f1(h.conj().T, state.ul_combiners[j][i],
                                   hw.kappa_bs, hw.beta_bs)
        omega_bs.append(total)

    omega_ul = []
    for g in range(realization.cell_count):
        per_cell = []
        for k in range(realization.topology.ul_counts[g]):
            total = np.zeros((ant.ue_tx, ant.ue_tx), dtype=complex)
            for j, i in realization.dl_users():
                h = links.est(dl_node(j, i), ul_node(g, k))
                total += covariance.f1(h.conj().T, state.dl_combiners[j][i],
                                       hw.kappa_ue, hw.beta_ue)
            for j, i in realization.ul_users():
                h = links.est(bs_node(j), ul_node(g, k))
                total += covariance.f1(h.conj().T, state.ul_combiners[j][i],
                                       hw.kappa_ue, hw.beta_bs)
            per_cell.append(total)
        omega_ul.append(per_cell)
    return omega_bs, omega_ul


def _bisect_budget(power_fn, budget, rel_tol, max_steps, what):
    """Smallest multiplier meeting a strictly decreasing power expression.

    Assumes power_fn(0) > budget.  Doubles an upper bracket first, then
    bisects until the power matches the budget to rel_tol; returns the
    feasible endpoint if the interval degenerates first.
    """
    hi = 1.0
    for _ in range(max_steps):
        if power_fn(hi) <= budget:
            break
        hi *= 2.0
    else:
        raise RuntimeError(f"{what}: no feasible multiplier after {max_steps} doublings "
                           "(degenerate all-zero power expression?)")
    lo = 0.0
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        val = power_fn(mid)
        if abs(val - budget) <= rel_tol * budget:
            return mid
        if val > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    return hi  # feasible side


def _eigen_domain_solution(m: np.ndarray, channels_combiners, budget, rel_tol, max_steps, what):
    """Shared downlink/uplink precoder core.

    Diagonalize the quadratic-term matrix once, express each user's power in
    the eigenbasis, pick the multiplier by bisection if the unconstrained
    solution overshoots the budget, and return the eigen-domain ingredients
    for assembly.
    """
    d, q = np.linalg.eigh(m)
    d = np.clip(d, 0.0, None)  # PSD up to rounding
    b_list = [q.conj().T @ h.conj().T @ u for h, u in channels_combiners]
    g_diags = [np.sum(np.abs(b) ** 2, axis=1) for b in b_list]

    def scalar_power(w):
        total = 0.0
        for g_diag in g_diags:
            denom = (d + w) ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(g_diag > 0.0, g_diag / denom, 0.0)
            total += float(np.sum(terms))
        return total

    multiplier = 0.0
    if scalar_power(0.0) > budget:
        multiplier = _bisect_budget(scalar_power, budget, rel_tol, max_steps, what)
    return d, q, b_list, multiplier, scalar_power(multiplier)


def update_precoders(realization: Realization, state: BeamformingState,
                     config: SolverConfig) -> PrecoderUpdate:
    """Penalized-MSE-optimal precoder directions at fixed combiners and coefficients.

    Downlink: per cell, V_k = (1/alpha_k) (Omega_g + nu_g S_g + w_g I)^-1 H^H U_k
    with S_g the distortion-aware SI Gram matrix and w_g >= 0 the smallest
    multiplier keeping the cell inside its power budget.  Uplink: the same
    form per user against P_ue without any SI term.
    """
    nu = resolve_nu(realization, config)
    hw = realization.hardware
    links = realization.channels
    omega_bs, omega_ul = compute_omegas(realization, state)
    new = state.copy()

    dl_mult, dl_scalar, dl_matrix = [], [], []
    for g in range(realization.cell_count):
        k_d = realization.topology.dl_counts[g]
        if k_d == 0:
            dl_mult.append(0.0)
            dl_scalar.append(0.0)
            dl_matrix.append(0.0)
            continue
        h_si = links.true(bs_node(g), bs_node(g))
        gram_si = h_si.conj().T @ h_si
        m = omega_bs[g] + nu[g] * (gram_si + hw.kappa_bs * np.diag(np.diag(gram_si)))
        active = [k for k in range(k_d) if state.dl_coefficients[g][k] > 0.0]
        pairs = [(links.est(dl_node(g, k), bs_node(g)), state.dl_combiners[g][k])
                 for k in active]
        d, q, b_list, w, p_scalar = _eigen_domain_solution(
            m, pairs, hw.p_bs_w, config.bisection_rel_tol, config.bisection_max_steps,
            f"downlink precoder cell {g}")
        denom = d + w
        safe = np.where(denom > 0.0, denom, 1.0)
        for k, b in zip(active, b_list):
            scaled = np.where(denom[:, None] > 0.0, b / safe[:, None], 0.0)
            new.dl_precoders[g][k] = (q @ scaled) / state.dl_coefficients[g][k]
        dl_mult.append(w)
        dl_scalar.append(p_scalar)
        dl_matrix.append(new.dl_cell_power(g))

    ul_mult, ul_scalar, ul_matrix = [], [], []
    for g, k in realization.ul_users():
        gamma = state.ul_coefficients[g][k]
        if gamma <= 0.0:
            ul_mult.append(0.0)
            ul_scalar.append(0.0)
            ul_matrix.append(0.0)
            continue
        pairs = [(links.est(bs_node(g), ul_node(g, k)), state.ul_combiners[g][k])]
        d, q, b_list, w, p_scalar = _eigen_domain_solution(
            omega_ul[g][k], pairs, hw.p_ue_w, config.bisection_rel_tol,
            config.bisection_max_steps, f"uplink precoder user ({g},{k})")
        denom = d + w
        safe = np.where(denom > 0.0, denom, 1.0)
        scaled = np.where(denom[:, None] > 0.0, b_list[0] / safe[:, None], 0.0)
        new.ul_precoders[g][k] = (q @ scaled) / gamma
        ul_mult.append(w)
        ul_scalar.append(p_scalar)
        ul_matrix.append(new.ul_power(g, k))

    return PrecoderUpdate(state=new, dl_multipliers=tuple(dl_mult),
                          ul_multipliers=tuple(ul_mult),
                          dl_scalar_power=tuple(dl_scalar), dl_matrix_power=tuple(dl_matrix),
                          ul_scalar_power=tuple(ul_scalar), ul_matrix_power=tuple(ul_matrix))


def _coefficient_terms(realization: Realization, state: BeamformingState):
    """Per-user (numerator, curvature, precoder power) triples for the scalar update.

    numerator = Re tr(U^H H V) on the user's own estimated link; curvature is
    the f2 aggregate over every receiver, i.e. the quadratic coefficient of
    this user's scalar in the sum MSE.
    """
    hw = realization.hardware
    links = realization.channels

    def curvature(tx, precoder, kappa):
        total = 0.0
        for j, i in realization.dl_users():
            total += covariance.f2(state.dl_combiners[j][i], links.est(dl_node(j, i), tx),
                                   precoder, kappa, hw.beta_ue)
        for j, i in realization.ul_users():
            total += covariance.f2(state.ul_combiners[j][i], links.est(bs_node(j), tx),
                                   precoder, kappa, hw.beta_bs)
        return total

    dl_terms = []
    for g in range(realization.cell_count):
        rows = []
        for k in range(realization.topology.dl_counts[g]):
            v = state.dl_precoders[g][k]
            h = links.est(dl_node(g, k), bs_node(g))
            numer = float(np.trace(state.dl_combiners[g][k].conj().T @ h @ v).real)
            rows.append((numer, curvature(bs_node(g), v, hw.kappa_bs),
                         float(np.linalg.norm(v) ** 2)))
        dl_terms.append(rows)

    ul_terms = []
    for g, k in realization.ul_users():
        v = state.ul_precoders[g][k]
        h = links.est(bs_node(g), ul_node(g, k))
        numer = float(np.trace(state.ul_combiners[g][k].conj().T @ h @ v).real)
        ul_terms.append((numer, curvature(ul_node(g, k), v, hw.kappa_ue),
                         float(np.linalg.norm(v) ** 2)))
    return dl_terms, ul_terms


def update_power_coefficients(realization: Realization, state: BeamformingState,
                              config: SolverConfig) -> PowerUpdate:
    """MSE-optimal scalar coefficients under the power constraints.

    Each coefficient is numer / (curvature + lambda * ||V||_F^2) with numer
    clamped at zero (a user whose combiner points away from its signal is
    silenced).  The uplink multiplier has a closed form; the downlink cells
    share one multiplier found by bisection, started from the quadratic-bound
    upper end and widened by doubling if that bound is unavailable.
    """
    new = state.copy()
    hw = realization.hardware
    dl_terms, ul_terms = _coefficient_terms(realization, state)

    dl_mult = []
    for g in range(realization.cell_count):
        rows = dl_terms[g]
        if not rows:
            dl_mult.append(0.0)
            continue

        def coeffs(lam):
            out = np.zeros(len(rows))
            for k, (numer, chi, vpow) in enumerate(rows):
                denom = chi + lam * vpow
                if numer > 0.0 and denom > 0.0:
                    out[k] = numer / denom
            return out

        def power(lam):
            c = coeffs(lam)
            return float(sum(c[k] ** 2 * rows[k][2] for k in range(len(rows))))

        lam = 0.0
        if power(0.0) > hw.p_bs_w:
            lam = _downlink_multiplier(rows, hw.p_bs_w, power, config)
        new.dl_coefficients[g] = coeffs(lam)
        dl_mult.append(lam)

    ul_mult = []
    for (g, k), (numer, chi, vpow) in zip(realization.ul_users(), ul_terms):
        if numer <= 0.0 or vpow <= 0.0:
            new.ul_coefficients[g][k] = 0.0
            ul_mult.append(0.0)
            continue
        # sqrt factors kept apart: vpow * p_ue underflows for a collapsed user
        lam = max(0.0, -chi / vpow + numer / (math.sqrt(vpow) * math.sqrt(hw.p_ue_w)))
        denom = chi + lam * vpow
        new.ul_coefficients[g][k] = numer / denom if denom > 0.0 else 0.0
        ul_mult.append(lam)

    return PowerUpdate(state=new, dl_multipliers=tuple(dl_mult), ul_multipliers=tuple(ul_mult))


def _downlink_multiplier(rows, budget, power_fn, config: SolverConfig) -> float:
    """Bisect the common cell multiplier, bracketing with the quadratic bound.

    The bound is the positive root of a*lam^2 + 2*b*lam + c with a the total
    precoder power, b the total curvature, and c the curvature-to-power
    mismatch against the budget; when the root is missing or does not bracket,
    the bracket is widened by doubling instead.
    """
    a = sum(r[2] for r in rows)
    b = sum(r[1] for r in rows)
    c = sum(r[1] ** 2 / r[2] for r in rows if r[2] > 0.0) \
        - sum(max(r[0], 0.0) ** 2 for r in rows) / budget
    hi = None
    disc = (b / a) ** 2 - c / a if a > 0.0 else -1.0
    if disc >= 0.0:
        root = -b / a + math.sqrt(disc)
        if root > 0.0 and power_fn(root) <= budget:
            hi = root
    if hi is None:
        hi = 1.0
        for _ in range(config.bisection_max_steps):
            if power_fn(hi) <= budget:
                break
            hi *= 2.0
        else:
            raise RuntimeError("downlink power multiplier: bracketing failed; "
                               "power expression is inconsistent with the budget")
    lo = 0.0
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        val = power_fn(mid)
        if abs(val - budget) <= config.bisection_rel_tol * budget:
            return mid
        if val > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    return hi


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def run(realization: Realization, config: SolverConfig,
        rng: np.random.Generator | None = None, collect_metrics: bool = True) -> RunTrace:
    """Run the alternating solver until the loss decrease falls below threshold.

    Per iteration: combiners, loss snapshot, precoders, power coefficients.
    The snapshot sequence is non-increasing; non-convergence within
    max_iterations is reported in the trace, not raised.
    """
    nu = resolve_nu(realization, config)
    state = initialize(realization, config, rng)

    def snapshot(iteration, rep, elapsed_ms, pre=None, pw=None):
        return IterationRecord(
            iteration=iteration,
            loss=rep.loss,
            sum_mse=rep.sum_mse,
            rsi_watts=rep.rsi_watts,
            sum_rate=rep.sum_rate,
            elapsed_ms=elapsed_ms,
            dl_cell_power=tuple(state.dl_cell_power(g) for g in range(realization.cell_count)),
            ul_user_power=tuple(state.ul_power(g, k) for g, k in realization.ul_users()),
            dl_precoder_multipliers=pre.dl_multipliers if pre else (0.0,) * realization.cell_count,
            ul_precoder_multipliers=pre.ul_multipliers if pre else tuple(
                0.0 for _ in realization.ul_users()),
            dl_power_multipliers=pw.dl_multipliers if pw else (0.0,) * realization.cell_count,
            ul_power_multipliers=pw.ul_multipliers if pw else tuple(
                0.0 for _ in realization.ul_users()),
        )

    t0 = time.perf_counter()
    rep = objective.evaluate(realization, state, nu, with_rates=collect_metrics)
    records = [snapshot(0, rep, (time.perf_counter() - t0) * 1e3)]

    converged = False
    iterations = 0
    prev_loss = rep.loss
    for t in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        state = update_combiners(realization, state)
        rep = objective.evaluate(realization, state, nu, with_rates=collect_metrics)
        pre = update_precoders(realization, state, config)
        state = pre.state
        pw = update_power_coefficients(realization, state, config)
        state = pw.state
        records.append(snapshot(t, rep, (time.perf_counter() - t0) * 1e3, pre, pw))
        iterations = t
        if prev_loss - rep.loss < config.threshold:
            converged = True
            break
        prev_loss = rep.loss

    final_report = objective.evaluate(realization, state, nu, with_rates=True)
    return RunTrace(records=records, final_state=state, final_report=final_report,
                    converged=converged, iterations=iterations, nu=tuple(nu))
