"""
Partially collapsed Gibbs / Metropolis-Hastings sampler.

One sweep, per block m (outcome, omics views, covariates):
    (gamma, eta) with A integrated out -> sigma2 (A integrated out) -> A -> lambda2 -> tau2
then (b, r) per grouped view, b_l0 / q / q_r per block, U over all blocks and the
outcome intercept. Every step reads the current ChainState and mutates it in place.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg, stats
from threadpoolctl import threadpool_limits

from bipnet.collapsed_likelihood import (
    batched_log_density,
    capacitance_cholesky,
    eta_log_weights,
    inclusion_log_prob,
    woodbury_terms,
)
from bipnet.model_core import (
    COVARIATES,
    DEFAULT_OPTIONS,
    OUTCOME,
    ConfigError,
    DrawLog,
    GroupDesign,
    NumericalError,
    PosteriorSummary,
    group_offsets,
    init_chain,
    substream,
)
from bipnet.predict import compute_mpp

logger = logging.getLogger(__name__)

A_FLOOR = 1e-12
PROB_CLIP = 1e-12

# substream step codes
GAMMA_ETA, SIGMA2, LOADINGS, LAMBDA2, TAU2, GROUP, B0, Q, Q_R, LATENT, INTERCEPT = range(11)


@dataclass
class SweepDiagnostics:
    accept_gamma: list
    propose_gamma: list
    accept_group: list
    propose_group: list
    accept_b0: list
    log_joint: float


@dataclass
class BlockData:
    """Model blocks for one fit: data matrices, centred outcome and group designs in block order."""

    X: list
    kinds: list
    names: list
    membership: list

    @classmethod
    def from_viewset(cls, data, groups, use_groups=True):
        kinds = data.block_kinds()
        membership = [groups.for_block(m, kinds) if use_groups else None for m in range(len(kinds))]
        return cls(X=data.blocks(), kinds=kinds, names=data.block_names(), membership=membership)


def _log_odds(q):
    q = np.clip(q, PROB_CLIP, 1.0 - PROB_CLIP)
    return np.log(q) - np.log1p(-q)


def _accept(log_ratio, rng):
    if np.isnan(log_ratio):
        raise NumericalError("NaN Metropolis-Hastings log ratio")
    return np.log(rng.random()) < min(0.0, log_ratio)


def _cross_products(U, X):
    return U.T @ U, U.T @ X, np.einsum("ij,ij->j", X, X)


def sample_inverse_gaussian(mu, lam, rng, size=None):
    """Inverse Gaussian draws by the chi-square transformation with a root choice.

    The larger root is computed directly and the smaller one as mu^2 / larger,
    which avoids cancellation when mu / lam is large.
    """
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    shape = np.broadcast(mu, lam).shape if size is None else size
    y = rng.standard_normal(shape) ** 2
    my = mu * y
    big = mu + mu / (2.0 * lam) * (my + np.sqrt(4.0 * lam * my + my * my))
    small = mu * mu / big
    u = rng.random(shape)
    return np.where(u <= mu / (mu + small), small, big)


def _eta_extra(blk, P, hp, options):
    """log of the lambda2 prior / pseudo-prior ratio for eta = 1 (exact variant only)."""
    if not options.exact_pseudo_prior or P is None or blk.b is None:
        return None
    s = group_offsets(blk, P)
    return hp.alpha * np.log1p(s / blk.b0[:, None]) - s * blk.lambda2


def step_gamma_eta(state, m, X, hp, rng, options=DEFAULT_OPTIONS, P=None):
    """Component-wise MH update of (gamma_l, eta_l.) with the loadings integrated out.

    An active component that survives its deactivation proposal gets a Gibbs
    refresh of eta_l. from the same collapsed inclusion probabilities.
    Returns (accepted, proposed).
    """
    blk = state.blocks[m]
    if blk.kind == COVARIATES:
        return 0, 0
    forced = blk.kind == OUTCOME
    n, p = X.shape
    UtU, UtX, xtx = _cross_products(state.U, X)
    log_w1, log_w0 = eta_log_weights(hp.q_eta, _eta_extra(blk, P, hp, options))
    log_w1 = np.broadcast_to(log_w1, blk.eta.shape)
    log_odds_q = _log_odds(blk.q)

    accepted = 0
    for l in range(state.r):
        eta1 = blk.eta.copy()
        eta1[l] = True
        eta0 = blk.eta.copy()
        eta0[l] = False
        # terms of the other components cancel in every ratio below
        mvn1 = batched_log_density(UtU, UtX, xtx, n, blk.tau2 * eta1, blk.sigma2)
        mvn0 = batched_log_density(UtU, UtX, xtx, n, blk.tau2 * eta0, blk.sigma2)

        if forced:
            if blk.gamma[l]:
                log_ratio = (mvn0 - mvn1).sum() - log_odds_q
            else:
                log_ratio = (mvn1 - mvn0).sum() + log_odds_q
            if _accept(log_ratio, rng):
                blk.gamma[l] = not blk.gamma[l]
                blk.eta[l] = blk.gamma[l]
                accepted += 1
            continue

        g1 = mvn1 + log_w1[l]
        g0 = mvn0 + log_w0
        log_p, log_1mp = inclusion_log_prob(g1, g0)
        if not blk.gamma[l]:
            eta_new = rng.random(p) < np.exp(log_p)
            g_new = np.where(eta_new, g1, g0)
            log_fwd = np.where(eta_new, log_p, log_1mp).sum()
            log_ratio = (g_new - mvn0).sum() + log_odds_q - log_fwd
            if _accept(log_ratio, rng):
                blk.gamma[l] = True
                blk.eta[l] = eta_new
                accepted += 1
        else:
            g_cur = np.where(blk.eta[l], g1, g0)
            log_rev = np.where(blk.eta[l], log_p, log_1mp).sum()
            log_ratio = (mvn0 - g_cur).sum() - log_odds_q + log_rev
            if _accept(log_ratio, rng):
                blk.gamma[l] = False
                blk.eta[l] = False
                accepted += 1
            else:
                blk.eta[l] = rng.random(p) < np.exp(log_p)

    blk.A[~blk.eta] = 0.0
    return accepted, state.r


def sigma2_conditional(state, m, X, hp):
    """Shape and rate of the A-marginalised inverse-gamma conditional of sigma2_j."""
    blk = state.blocks[m]
    UtU, UtX, xtx = _cross_products(state.U, X)
    _, quad = woodbury_terms(UtU, UtX, xtx, blk.tau2 * blk.eta)
    return hp.a0 + 0.5 * X.shape[0], hp.b0 + 0.5 * quad


def step_sigma2(state, m, X, hp, rng):
    shape, rate = sigma2_conditional(state, m, X, hp)
    state.blocks[m].sigma2 = np.atleast_1d(stats.invgamma.rvs(shape, scale=rate, random_state=rng))


def loading_conditional(state, m, X, options=DEFAULT_OPTIONS):
    """Per-feature precision factor and rhs of the loading conditional.

    Returns (active feature mask, Cholesky factors, conditional means, indicator mask).
    Covariance of a_j is sigma2_j * prec_j^-1 on the eta-active rows.
    """
    blk = state.blocks[m]
    mask = blk.eta.T
    active = mask.any(axis=1)
    mk = mask[active].astype(float)
    if options.loading_conditional == "conjugate":
        d = 1.0 / blk.tau2.T[active]
    else:
        d = np.ones_like(mk)
    UtU, UtX, _ = _cross_products(state.U, X)
    idx = np.arange(state.r)
    prec = mk[:, :, None] * mk[:, None, :] * UtU[None, :, :]
    prec[:, idx, idx] += mk * d + (1.0 - mk)
    rhs = mk * UtX.T[active]
    L = capacitance_cholesky(prec)
    mean = np.linalg.solve(np.swapaxes(L, 1, 2), np.linalg.solve(L, rhs[:, :, None]))[:, :, 0]
    return active, L, mean, mk


def step_loadings(state, m, X, rng, options=DEFAULT_OPTIONS):
    blk = state.blocks[m]
    if not blk.eta.any():
        blk.A = np.zeros_like(blk.A)
        return
    active, L, mean, mk = loading_conditional(state, m, X, options)
    z = rng.standard_normal(mean.shape)
    noise = np.linalg.solve(np.swapaxes(L, 1, 2), z[:, :, None])[:, :, 0]
    draw = (mean + noise * np.sqrt(blk.sigma2[active])[:, None]) * mk
    A = np.zeros_like(blk.A)
    A[:, active] = draw.T
    blk.A = A


def step_lambda2(state, m, hp, rng, P=None):
    blk = state.blocks[m]
    s = group_offsets(blk, P)
    shape = np.where(blk.eta, hp.alpha + 1.0, hp.alpha)
    rate = np.where(blk.eta, blk.b0[:, None] + s + blk.tau2, blk.b0[:, None])
    blk.lambda2 = rng.gamma(shape, 1.0 / rate)


def step_tau2(state, m, rng):
    blk = state.blocks[m]
    a = np.maximum(np.abs(blk.A), A_FLOOR)
    mu = np.sqrt(2.0 * blk.lambda2 * blk.sigma2[None, :]) / a
    inv_tau2 = sample_inverse_gaussian(mu, 2.0 * blk.lambda2, rng)
    prior = rng.exponential(1.0 / blk.lambda2)
    blk.tau2 = np.where(blk.eta, 1.0 / inv_tau2, prior)


def group_log_target(b_l, b0_l, P_active, lambda2_active, alpha):
    """log target of b_l.: lambda2 prior terms of the eta-active features of component l."""
    s = P_active @ b_l
    return float((alpha * np.log(b0_l + s) - lambda2_active * s).sum())


def step_group(state, m, hp, rng, P):
    """Add/remove MH over (r_lk, b_lk); proposal Gamma(alpha_b, beta_b) equals the slab prior."""
    blk = state.blocks[m]
    if P is None or blk.b is None:
        return 0, 0
    K = P.shape[1]
    log_odds_qr = _log_odds(blk.q_r)
    accepted = 0
    for l in range(state.r):
        act = blk.eta[l]
        P_act, lam_act = P[act], blk.lambda2[l, act]
        current = group_log_target(blk.b[l], blk.b0[l], P_act, lam_act, hp.alpha)
        for k in range(K):
            b_new = blk.b[l].copy()
            if blk.r_ind[l, k]:
                b_new[k] = 0.0
                prior_term = -log_odds_qr
            else:
                b_new[k] = rng.gamma(hp.alpha_b, 1.0 / hp.beta_b)
                prior_term = log_odds_qr
            proposed = group_log_target(b_new, blk.b0[l], P_act, lam_act, hp.alpha)
            if _accept(proposed - current + prior_term, rng):
                blk.b[l] = b_new
                blk.r_ind[l, k] = not blk.r_ind[l, k]
                current = proposed
                accepted += 1
    return accepted, state.r * K


def step_b0(state, m, hp, rng, P=None):
    """Conjugate gamma proposal for b_l0 with an independence-MH correction for group offsets."""
    blk = state.blocks[m]
    shape = hp.alpha0_shape + hp.alpha * blk.p
    rate = hp.beta_b + blk.lambda2.sum(axis=1)
    proposal = rng.gamma(shape, 1.0 / rate)
    u = rng.random(state.r)
    s = group_offsets(blk, P)
    weighted = blk.eta & (s > 0)
    if not weighted.any():
        blk.b0 = proposal
        return state.r

    def log_weight(b):
        return hp.alpha * np.where(weighted, np.log1p(s / b[:, None]), 0.0).sum(axis=1)

    keep = np.log(u) < log_weight(proposal) - log_weight(blk.b0)
    blk.b0 = np.where(keep, proposal, blk.b0)
    return int(keep.sum())


def step_q(state, m, hp, rng):
    blk = state.blocks[m]
    if blk.kind == COVARIATES:
        return
    on = int(blk.gamma.sum())
    blk.q = float(rng.beta(hp.a + on, hp.b + state.r - on))


def step_qr(state, m, hp, rng):
    blk = state.blocks[m]
    if blk.r_ind is None:
        return
    on = int(blk.r_ind.sum())
    blk.q_r = float(rng.beta(hp.a + on, hp.b + blk.r_ind.size - on))


def step_U(state, X_blocks, rng):
    """Rows of U given every block's loadings: N(Sigma_u A D x_i, Sigma_u)."""
    A = np.concatenate([blk.A for blk in state.blocks], axis=1)
    w = 1.0 / np.concatenate([blk.sigma2 for blk in state.blocks])
    X = np.concatenate(X_blocks, axis=1)
    AD = A * w
    prec = AD @ A.T + np.eye(state.r)
    factor = linalg.cho_factor(prec, lower=True)
    mean = linalg.cho_solve(factor, AD @ X.T).T
    z = rng.standard_normal(mean.shape)
    noise = linalg.solve_triangular(factor[0], z.T, lower=True, trans="T").T
    state.U = mean + noise


def step_alpha0(state, y, rng):
    """Flat-prior intercept: N(mean(y - U a^0), sigma2^0 / n)."""
    outcome = state.blocks[0]
    resid = y - state.U @ outcome.A[:, 0]
    state.alpha0 = float(rng.normal(resid.mean(), np.sqrt(outcome.sigma2[0] / y.shape[0])))


def log_joint(state, X_blocks, hp, membership):
    """Unnormalised log posterior, for monitoring only."""
    total = -0.5 * np.sum(state.U ** 2)
    for blk, X, P in zip(state.blocks, X_blocks, membership):
        resid = X - state.U @ blk.A
        total += np.sum(-0.5 * np.log(2 * np.pi * blk.sigma2) - 0.5 * resid ** 2 / blk.sigma2)
        total += stats.invgamma.logpdf(blk.sigma2, hp.a0, scale=hp.b0).sum()
        slab = np.sqrt(blk.tau2 * blk.sigma2[None, :])
        total += stats.norm.logpdf(blk.A[blk.eta], scale=slab[blk.eta]).sum()
        total += stats.expon.logpdf(blk.tau2, scale=1.0 / blk.lambda2).sum()
        rate = blk.b0[:, None] + np.where(blk.eta, group_offsets(blk, P), 0.0)
        total += stats.gamma.logpdf(blk.lambda2, hp.alpha, scale=1.0 / rate).sum()
        if blk.kind != COVARIATES:
            total += stats.beta.logpdf(blk.q, hp.a, hp.b)
            total += stats.bernoulli.logpmf(blk.gamma, blk.q).sum()
        if blk.kind not in (OUTCOME, COVARIATES):
            inside = np.broadcast_to(blk.gamma[:, None], blk.eta.shape)
            total += stats.bernoulli.logpmf(blk.eta[inside], hp.q_eta).sum()
    return float(total)


def sweep(state, data, hp, seed, chain=0, it=0, options=DEFAULT_OPTIONS, update_intercept=True):
    """One full pass over every parameter; returns the sweep's diagnostics."""

    def rng_for(m, step):
        return substream(seed, chain, it, m, step)

    n_blocks = len(state.blocks)
    X_blocks = list(data.X)
    X_blocks[0] = data.X[0] - state.alpha0
    diag = SweepDiagnostics(accept_gamma=[0] * n_blocks, propose_gamma=[0] * n_blocks,
                            accept_group=[0] * n_blocks, propose_group=[0] * n_blocks,
                            accept_b0=[0] * n_blocks, log_joint=np.nan)

    for m in range(n_blocks):
        X, P = X_blocks[m], data.membership[m]
        diag.accept_gamma[m], diag.propose_gamma[m] = step_gamma_eta(
            state, m, X, hp, rng_for(m, GAMMA_ETA), options, P)
        step_sigma2(state, m, X, hp, rng_for(m, SIGMA2))
        step_loadings(state, m, X, rng_for(m, LOADINGS), options)
        step_lambda2(state, m, hp, rng_for(m, LAMBDA2), P)
        step_tau2(state, m, rng_for(m, TAU2))

    for m in range(n_blocks):
        P = data.membership[m]
        if P is not None:
            diag.accept_group[m], diag.propose_group[m] = step_group(state, m, hp, rng_for(m, GROUP), P)
        diag.accept_b0[m] = step_b0(state, m, hp, rng_for(m, B0), P)
        step_q(state, m, hp, rng_for(m, Q))
        step_qr(state, m, hp, rng_for(m, Q_R))

    step_U(state, X_blocks, rng_for(n_blocks, LATENT))
    if update_intercept:
        step_alpha0(state, data.X[0][:, 0], rng_for(n_blocks, INTERCEPT))
    diag.log_joint = log_joint(state, X_blocks, hp, data.membership)
    return diag


class _Accumulator:
    def __init__(self, state, n_keep):
        self.k = 0
        self.U = np.zeros_like(state.U)
        self.sigma2 = [np.zeros_like(blk.sigma2) for blk in state.blocks]
        self.A = [np.zeros_like(blk.A) for blk in state.blocks]
        self.alpha0 = 0.0
        self.gamma = [np.zeros((n_keep,) + blk.gamma.shape, dtype=bool) for blk in state.blocks]
        self.eta = [np.zeros((n_keep,) + blk.eta.shape, dtype=bool) for blk in state.blocks]
        self.r_ind = [None if blk.r_ind is None else np.zeros((n_keep,) + blk.r_ind.shape, dtype=bool)
                      for blk in state.blocks]

    def add(self, state):
        self.U += state.U
        self.alpha0 += state.alpha0
        for m, blk in enumerate(state.blocks):
            self.sigma2[m] += blk.sigma2
            self.A[m] += blk.A
            self.gamma[m][self.k] = blk.gamma
            self.eta[m][self.k] = blk.eta
            if blk.r_ind is not None:
                self.r_ind[m][self.k] = blk.r_ind
        self.k += 1

    def summary(self, data):
        k = self.k
        draws = DrawLog(gamma=self.gamma, eta=self.eta, r_ind=self.r_ind)
        mpp = compute_mpp(draws)
        return PosteriorSummary(
            block_names=list(data.names), block_kinds=list(data.kinds),
            mpp_gamma=mpp["gamma"], mpp_eta=mpp["eta"], mpp_group=mpp["group"],
            U_bar=self.U / k, sigma2_bar=[s / k for s in self.sigma2], A_bar=[a / k for a in self.A],
            alpha0_hat=self.alpha0 / k, draws=draws,
        )


def trace_rates(trace):
    """Per-block acceptance rates over a list of SweepDiagnostics."""

    def rate(acc, prop):
        acc, prop = np.sum(acc, axis=0), np.sum(prop, axis=0)
        return [float(a / p) if p else None for a, p in zip(acc, prop)]

    n_sweeps = len(trace)
    return {
        "accept_gamma": rate([d.accept_gamma for d in trace], [d.propose_gamma for d in trace]),
        "accept_group": rate([d.accept_group for d in trace], [d.propose_group for d in trace]),
        "accept_b0_per_sweep": [float(x) / n_sweeps for x in np.sum([d.accept_b0 for d in trace], axis=0)],
        "gamma_proposals": [int(x) for x in np.sum([d.propose_gamma for d in trace], axis=0)],
        "final_log_joint": float(trace[-1].log_joint),
    }


def run_chain(data, groups, hp, seed=None, chain=0, options=DEFAULT_OPTIONS, use_groups=True,
              update_intercept=True):
    """Run one chain; returns (PosteriorSummary, list of SweepDiagnostics)."""
    seed = hp.seed if seed is None else seed
    if groups is None or not use_groups:
        groups = GroupDesign.empty(data.M)
    blocks = BlockData.from_viewset(data, groups)
    state = init_chain(hp, data, groups, substream(seed, chain))
    acc = _Accumulator(state, hp.n_retained)
    keep = set(range(hp.burn_in, hp.n_iter, hp.thin))
    check_every_sweep = logger.isEnabledFor(logging.DEBUG)
    trace = []
    started = time.perf_counter()

    with threadpool_limits(limits=1):
        for it in range(hp.n_iter):
            try:
                diag = sweep(state, blocks, hp, seed, chain, it, options, update_intercept)
            except NumericalError as exc:
                raise NumericalError(str(exc), iteration=it) from exc
            if check_every_sweep:
                state.check_invariants()
            trace.append(diag)
            if it in keep:
                acc.add(state)
            if options.log_every and (it + 1) % options.log_every == 0:
                logger.info("chain %d sweep %d/%d: gamma accepts %s, log joint %.2f",
                            chain, it + 1, hp.n_iter, diag.accept_gamma, diag.log_joint)

    state.check_invariants()
    summary = acc.summary(blocks)
    summary.diagnostics = trace_rates(trace)
    summary.diagnostics["wall_time_sec"] = time.perf_counter() - started
    summary.diagnostics["chains"] = 1
    return summary, trace


def merge_chains(summaries):
    """Pool independent chains: draws concatenated, means weighted by retained-draw counts."""
    if len(summaries) == 1:
        return summaries[0]
    weights = np.array([s.n_retained for s in summaries], dtype=float)
    weights /= weights.sum()

    def pooled(get):
        return sum(w * get(s) for w, s in zip(weights, summaries))

    draws = summaries[0].draws
    for s in summaries[1:]:
        draws = draws.concat(s.draws)
    mpp = compute_mpp(draws)
    n_blocks = len(summaries[0].block_names)
    merged = PosteriorSummary(
        block_names=summaries[0].block_names, block_kinds=summaries[0].block_kinds,
        mpp_gamma=mpp["gamma"], mpp_eta=mpp["eta"], mpp_group=mpp["group"],
        U_bar=pooled(lambda s: s.U_bar),
        sigma2_bar=[pooled(lambda s, m=m: s.sigma2_bar[m]) for m in range(n_blocks)],
        A_bar=[pooled(lambda s, m=m: s.A_bar[m]) for m in range(n_blocks)],
        alpha0_hat=float(pooled(lambda s: s.alpha0_hat)), draws=draws,
    )
    merged.diagnostics = {"chains": len(summaries),
                          "per_chain": [s.diagnostics for s in summaries]}
    return merged


def bip_threads():
    value = os.environ.get("BIP_THREADS")
    if value is None:
        return os.cpu_count() or 1
    try:
        threads = int(value)
    except ValueError:
        threads = 0
    if threads < 1:
        raise ConfigError(f"BIP_THREADS must be a positive integer, got {value!r}")
    return threads


def run_chains(data, groups, hp, options=DEFAULT_OPTIONS, use_groups=True, update_intercept=True):
    """Run hp.n_chains chains (in parallel when allowed) and pool them."""
    if hp.n_chains == 1:
        summary, _ = run_chain(data, groups, hp, chain=0, options=options, use_groups=use_groups,
                               update_intercept=update_intercept)
        return summary
    n_jobs = min(hp.n_chains, bip_threads())
    logger.info("running %d chains on %d workers", hp.n_chains, n_jobs)
    results = Parallel(n_jobs=n_jobs)(
        delayed(run_chain)(data, groups, hp, chain=c, options=options, use_groups=use_groups,
                           update_intercept=update_intercept)
        for c in range(hp.n_chains)
    )
    return merge_chains([summary for summary, _ in results])
