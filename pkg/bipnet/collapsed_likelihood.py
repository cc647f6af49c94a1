"""
Feature-wise marginal likelihood with the loadings integrated out.

x_j ~ N(0, sigma2_j * Sigma_j), Sigma_j = U D(tau_j) U' + I_n. Inactive entries
carry tau = 0, so the full U can be used with a masked tau and every feature is
evaluated in one batched r x r factorization (capacitance matrix
C_j = I_r + D^1/2 U'U D^1/2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from bipnet.model_core import NumericalError, ValidationError

logger = logging.getLogger(__name__)

JITTER = 1e-10
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class CollapsedContext:
    U_active: np.ndarray     # n x r_gamma
    tau_active: np.ndarray   # r_gamma, tau2 masked by eta
    sigma2_j: float

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U_active, dtype=float))
        tau = np.asarray(self.tau_active, dtype=float).reshape(-1)
        if U.shape[1] != tau.shape[0]:
            raise ValidationError(f"U_active has {U.shape[1]} columns but tau_active has {tau.shape[0]} entries")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(tau)) and np.isfinite(self.sigma2_j)):
            raise ValidationError("collapsed context contains non-finite values")
        if np.any(tau < 0):
            raise ValidationError("tau entries must be non-negative")
        if self.sigma2_j <= 0:
            raise ValidationError("sigma2_j must be positive")
        object.__setattr__(self, "U_active", U)
        object.__setattr__(self, "tau_active", tau)


def capacitance_cholesky(C):
    """Batched Cholesky of SPD stacks; one jittered retry before giving up."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        logger.warning("capacitance factorization failed, retrying with jitter %.0e", JITTER)
    try:
        return np.linalg.cholesky(C + JITTER * np.eye(C.shape[-1]))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("capacitance matrix is not positive definite after jitter") from exc


def woodbury_terms(UtU, UtX, xtx, tau_eff):
    """log|Sigma_j| and x_j' Sigma_j^-1 x_j for every feature.

    UtU: r x r, UtX: r x p, xtx: p, tau_eff: r x p (tau2 * eta, zero = spike).
    """
    s = np.sqrt(tau_eff.T)                                   # p x r
    C = s[:, :, None] * UtU[None, :, :] * s[:, None, :]
    C = C + np.eye(UtU.shape[0])
    L = capacitance_cholesky(C)
    w = s * UtX.T                                             # p x r
    v = np.linalg.solve(L, w[:, :, None])[:, :, 0]
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    quad = xtx - np.einsum("pr,pr->p", v, v)
    return logdet, np.maximum(quad, 0.0)


def batched_log_density(UtU, UtX, xtx, n, tau_eff, sigma2):
    """log N(x_j; 0, sigma2_j Sigma_j) for all features at once."""
    logdet, quad = woodbury_terms(UtU, UtX, xtx, tau_eff)
    out = -0.5 * (n * LOG_2PI + n * np.log(sigma2) + logdet + quad / sigma2)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite collapsed log-density")
    return out


def indicator_log_prior(gamma, eta, log_w1, log_w0):
    """sum over active components of log p(eta_lj | gamma_l), per feature."""
    terms = np.where(eta, log_w1, log_w0)
    return np.where(gamma[:, None], terms, 0.0).sum(axis=0)


def eta_log_weights(q_eta, extra=None):
    """Bernoulli log weights for eta=1 / eta=0, optionally with a per-entry log factor on eta=1."""
    log_w1 = np.log(q_eta) if extra is None else np.log(q_eta) + extra
    return log_w1, np.log1p(-q_eta)


def log_collapsed_density(x_j, ctx):
    x = np.asarray(x_j, dtype=float).reshape(-1)
    if x.shape[0] != ctx.U_active.shape[0]:
        raise ValidationError(f"x_j has length {x.shape[0]}, U_active has {ctx.U_active.shape[0]} rows")
    if not np.all(np.isfinite(x)):
        raise ValidationError("x_j contains non-finite values")
    U = ctx.U_active
    val = batched_log_density(U.T @ U, (U.T @ x)[:, None], np.array([x @ x]), x.shape[0],
                              ctx.tau_active[:, None], np.array([ctx.sigma2_j]))
    return float(val[0])


def _check_config(gamma, eta_j):
    gamma = np.asarray(gamma, dtype=bool)
    eta_j = np.asarray(eta_j, dtype=bool)
    if gamma.shape != eta_j.shape:
        raise ValidationError("gamma and eta column must have the same length")
    if np.any(eta_j & ~gamma):
        raise ValidationError("invalid indicator configuration: eta=1 inside an inactive component")
    return gamma, eta_j


def log_Gj(x_j, U, gamma, eta_j, tau2_j, sigma2_j, q_eta, eta_prior=True, extra=None):
    """log[ MVN(x_j; 0, sigma2_j Sigma_j) * prod_l p(eta_lj | gamma_l) ].

    eta_prior=False drops the indicator product (the outcome block, where eta tracks gamma).
    extra is an optional per-component log factor on the eta=1 weight.
    """
    gamma, eta_j = _check_config(gamma, eta_j)
    tau2_j = np.asarray(tau2_j, dtype=float)
    ctx = CollapsedContext(U_active=U, tau_active=np.where(eta_j, tau2_j, 0.0), sigma2_j=sigma2_j)
    out = log_collapsed_density(x_j, ctx)
    if eta_prior:
        log_w1, log_w0 = eta_log_weights(q_eta, extra)
        out += float(indicator_log_prior(gamma, eta_j[:, None],
                                         np.broadcast_to(log_w1, eta_j.shape)[:, None], log_w0)[0])
    return out


def inclusion_log_prob(log_g1, log_g0):
    """log P and log(1 - P) from the two G_j branches, normalised with log-sum-exp."""
    norm = np.logaddexp(log_g1, log_g0)
    return log_g1 - norm, log_g0 - norm


def feature_inclusion_prob(x_j, U, gamma_on, eta_base_j, l, tau2_j, sigma2_j, q_eta, extra=None):
    """P_lj = G(eta_lj=1) / (G(eta_lj=1) + G(eta_lj=0)) with component l switched on."""
    gamma_on = np.asarray(gamma_on, dtype=bool).copy()
    gamma_on[l] = True
    eta1 = np.asarray(eta_base_j, dtype=bool).copy()
    eta0 = eta1.copy()
    eta1[l], eta0[l] = True, False
    g1 = log_Gj(x_j, U, gamma_on, eta1, tau2_j, sigma2_j, q_eta, extra=extra)
    g0 = log_Gj(x_j, U, gamma_on, eta0, tau2_j, sigma2_j, q_eta, extra=extra)
    log_p, _ = inclusion_log_prob(g1, g0)
    return float(np.exp(log_p))
