"""
Posterior-mode loadings and outcome prediction by Bayesian model averaging.

Prediction uses the predictor blocks only (omics views and covariates); the
outcome block never enters the latent-score estimate of a new sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from bipnet.model_core import (
    Hyperparameters,
    SamplerOptions,
    StandardizationRecord,
    ValidationError,
    standardize_new,
)

logger = logging.getLogger(__name__)

MPM_THRESHOLD = 0.5


@dataclass
class FittedModel:
    summary: object
    standardization: StandardizationRecord
    hp: Hyperparameters
    options: SamplerOptions
    train_blocks: list
    use_groups: bool = True
    group_names: list | None = None

    def __post_init__(self):
        if self.summary.n_retained < 1:
            raise ValidationError("fitted model has no retained draws")
        if len(self.train_blocks) != len(self.summary.block_names):
            raise ValidationError("training blocks do not match the posterior summary")

    @property
    def n_predictors(self):
        return sum(X.shape[1] for X in self.train_blocks[1:])


def mode_loadings(U_bar, X, sigma2_hat, eta, variant="scaled"):
    """a_j = [sigma2_j] (U_S'U_S + I)^-1 U_S' x_j on each feature's active set S, zero elsewhere."""
    eta = np.asarray(eta, dtype=bool)
    r, p = eta.shape
    out = np.zeros((r, p))
    mask = eta.T
    active = mask.any(axis=1)
    if not active.any():
        return out
    mk = mask[active].astype(float)
    UtU = U_bar.T @ U_bar
    prec = mk[:, :, None] * mk[:, None, :] * UtU[None, :, :]
    idx = np.arange(r)
    prec[:, idx, idx] += 1.0
    rhs = mk * (U_bar.T @ X[:, active]).T
    coef = np.linalg.solve(prec, rhs[:, :, None])[:, :, 0] * mk
    if variant == "scaled":
        coef = coef * np.asarray(sigma2_hat)[active][:, None]
    out[:, active] = coef.T
    return out


def latent_scores(A, sigma2, X):
    """(A D A' + I)^-1 A D x for each row x of X (or for a single vector)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != A.shape[1]:
        raise ValidationError(f"expected {A.shape[1]} predictor features, got {X.shape[1]}")
    AD = A / sigma2
    prec = AD @ A.T + np.eye(A.shape[0])
    U = linalg.solve(prec, AD @ X.T, assume_a="pos").T
    return U[0] if single else U


def median_model_eta(fitted, m):
    """Indicator pattern of the median probability model (MPP > 0.5) for block m."""
    return fitted.summary.mpp_eta[m] > MPM_THRESHOLD


def posterior_mode_loadings(fitted, m, eta=None):
    summary = fitted.summary
    if eta is None:
        eta = median_model_eta(fitted, m)
    return mode_loadings(summary.U_bar, fitted.train_blocks[m], summary.sigma2_bar[m], eta,
                         fitted.options.posterior_mode_variant)


def attach_mode_loadings(fitted):
    fitted.summary.A_mode = [posterior_mode_loadings(fitted, m) for m in range(len(fitted.train_blocks))]
    return fitted


def _predictor_sigma2(fitted):
    return np.concatenate(fitted.summary.sigma2_bar[1:])


def estimate_latent_new(fitted, x_new, A_blocks=None):
    """Latent scores of new samples from the concatenated, standardized predictor vector(s)."""
    if A_blocks is None:
        if fitted.summary.A_mode is None:
            attach_mode_loadings(fitted)
        A_blocks = fitted.summary.A_mode[1:]
    return latent_scores(np.concatenate(A_blocks, axis=1), _predictor_sigma2(fitted), x_new)


def bma_predict(fitted, x_new):
    """Average of U_new A^0 over retained draws, each with its own indicator pattern.

    x_new holds standardized predictors concatenated in block order; the result is on
    the original outcome scale.
    """
    X = np.atleast_2d(np.asarray(x_new, dtype=float))
    if X.shape[1] != fitted.n_predictors:
        raise ValidationError(f"expected {fitted.n_predictors} predictor features, got {X.shape[1]}")
    draws = fitted.summary.draws
    n_blocks = len(fitted.train_blocks)
    sigma2 = _predictor_sigma2(fitted)
    mode_cache = [dict() for _ in range(n_blocks)]
    score_cache = {}
    total = np.zeros(X.shape[0])

    for d in range(draws.n_draws):
        keys, A_d = [], []
        for m in range(n_blocks):
            eta = draws.eta[m][d]
            key = eta.tobytes()
            if key not in mode_cache[m]:
                mode_cache[m][key] = posterior_mode_loadings(fitted, m, eta)
            keys.append(key)
            A_d.append(mode_cache[m][key])
        if not A_d[0].any():
            continue
        pred_key = tuple(keys)
        if pred_key not in score_cache:
            U_new = latent_scores(np.concatenate(A_d[1:], axis=1), sigma2, X)
            score_cache[pred_key] = U_new @ A_d[0][:, 0]
        total += score_cache[pred_key]

    logger.debug("BMA over %d draws, %d distinct models", draws.n_draws, len(score_cache))
    offset = fitted.summary.alpha0_hat + fitted.standardization.outcome_mean
    return offset + total / draws.n_draws


def compute_mpp(draws):
    """Fraction of retained draws in which each indicator is on."""
    if draws.n_draws < 1:
        raise ValidationError("no retained draws to summarise")
    return {
        "gamma": [g.mean(axis=0) for g in draws.gamma],
        "eta": [e.mean(axis=0) for e in draws.eta],
        "group": [None if r is None else r.mean(axis=0) for r in draws.r_ind],
    }


def concat_predictors(data):
    return np.concatenate(data.predictor_blocks(), axis=1)


def predict_viewset(fitted, raw):
    """Standardize raw new samples with the training record and predict their outcome."""
    data = standardize_new(fitted.standardization, raw)
    return bma_predict(fitted, concat_predictors(data))

