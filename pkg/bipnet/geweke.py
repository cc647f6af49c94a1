"""
Getting-it-right check for the sampler.

Marginal draws of a few scalar functionals are produced two ways: independent
forward draws (parameters from the prior, data from the likelihood) and the
successive-conditional chain that alternates one sampler sweep with a fresh
data draw. With a correct sampler both sets share one distribution, which is
checked with two-sample Kolmogorov-Smirnov tests.
"""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd
from scipy import stats

from bipnet.model_core import GroupDesign, Hyperparameters, SamplerOptions, ViewSet, init_chain, substream
from bipnet.sampler import BlockData, sweep

logger = logging.getLogger(__name__)

# proper, moderately informative priors keep the tiny model numerically tame
GEWEKE_HP = Hyperparameters(r=2, q_eta=0.3, a=2.0, b=2.0, a0=3.0, b0=2.0, alpha=3.0,
                            alpha_b=3.0, beta_b=2.0, alpha0_shape=3.0, n_iter=1, burn_in=0)
GEWEKE_OPTIONS = SamplerOptions(loading_conditional="conjugate", exact_pseudo_prior=True, log_every=0)
FUNCTIONALS = ("sum_gamma", "sum_tau2", "mean_a2", "q")
KS_ALPHA = 0.01


def tiny_design(n=10, p=(4, 4), n_groups=1):
    """Shape-only ViewSet plus a group design that puts every feature in each group."""
    data = ViewSet(views=[np.zeros((n, width)) for width in p], outcome=np.zeros(n))
    membership = [np.ones((width, n_groups)) for width in p]
    names = [[f"G{k + 1}" for k in range(n_groups)] for _ in p]
    return data, GroupDesign(membership=membership, group_names=names)


def simulate_blocks(state, rng):
    """Fresh data for every block given the current parameters (intercept held at zero)."""
    blocks = []
    for blk in state.blocks:
        mean = state.U @ blk.A
        blocks.append(mean + rng.standard_normal(mean.shape) * np.sqrt(blk.sigma2))
    return blocks


def functionals(state):
    gamma = sum(int(blk.gamma.sum()) for blk in state.blocks)
    tau2 = sum(float(blk.tau2.sum()) for blk in state.blocks)
    a2 = np.concatenate([blk.A.ravel() ** 2 for blk in state.blocks]).mean()
    return {"sum_gamma": gamma, "sum_tau2": tau2, "mean_a2": float(a2), "q": state.blocks[1].q}


def forward_samples(n_samples, hp=GEWEKE_HP, seed=0, design=None):
    data, groups = design or tiny_design()
    rows = []
    for i in range(n_samples):
        state = init_chain(hp, data, groups, substream(seed, 0, i), from_prior=True)
        rows.append(functionals(state))
    return pd.DataFrame(rows)


def successive_conditional_samples(n_samples, hp=GEWEKE_HP, options=GEWEKE_OPTIONS, seed=1,
                                   thin=5, design=None):
    """Alternate a full sweep with a fresh data draw; keep every `thin`-th state."""
    data, groups = design or tiny_design()
    blocks = BlockData.from_viewset(data, groups)
    state = init_chain(hp, data, groups, substream(seed, 0), from_prior=True)
    data_rng = substream(seed, 1)
    rows = []
    for it in range(n_samples * thin):
        blocks.X = simulate_blocks(state, data_rng)
        sweep(state, blocks, hp, seed, chain=0, it=it, options=options, update_intercept=False)
        if (it + 1) % thin == 0:
            rows.append(functionals(state))
        if (it + 1) % 5000 == 0:
            logger.info("successive-conditional sweep %d/%d", it + 1, n_samples * thin)
    return pd.DataFrame(rows)


def compare(forward, chain, alpha=KS_ALPHA):
    """KS statistic and p-value per functional, with the pass flag at level alpha."""
    rows = []
    for name in FUNCTIONALS:
        result = stats.ks_2samp(forward[name], chain[name])
        rows.append({"functional": name, "forward_mean": forward[name].mean(),
                     "chain_mean": chain[name].mean(), "ks_stat": result.statistic,
                     "p_value": result.pvalue, "passed": result.pvalue > alpha})
    return pd.DataFrame(rows)
