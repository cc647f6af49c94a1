"""
Domain types shared by every stage of the pipeline: data views, group designs,
hyperparameters, sampler state and posterior summaries.

Block indexing follows the model: block 0 is the outcome (one column), blocks
1..M are the omics views and block M+1, when present, holds clinical covariates.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

OUTCOME = "outcome"
OMICS = "omics"
COVARIATES = "covariates"

INIT_TAU2 = 1.0
INIT_B0 = 0.1
SIGMA2_INIT_RANGE = (1e-8, 1e8)
STANDARDIZE_TOL = 1e-8


class BipError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(BipError, ValueError):
    pass


class ConfigError(BipError, ValueError):
    pass


class NumericalError(BipError, ArithmeticError):
    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


# Configuration

@dataclass(frozen=True)
class Hyperparameters:
    r: int = 4
    q_eta: float = 0.05
    a: float = 1.0
    b: float = 1.0
    a0: float = 0.01
    b0: float = 0.01
    alpha: float = 1.0
    alpha_b: float = 1.0
    beta_b: float = 1.0
    alpha0_shape: float = 1.0
    n_iter: int = 5000
    burn_in: int = 2500
    thin: int = 1
    seed: int = 42
    n_chains: int = 1

    def validate(self):
        if int(self.r) != self.r or self.r < 1:
            raise ConfigError(f"r must be a positive integer, got {self.r}")
        if not 0.0 < self.q_eta < 1.0:
            raise ConfigError(f"q_eta must lie in (0, 1), got {self.q_eta}")
        for key in ("a", "b", "a0", "b0", "alpha", "alpha_b", "beta_b", "alpha0_shape"):
            value = getattr(self, key)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{key} must be strictly positive, got {value}")
        if self.n_iter < 1 or self.thin < 1 or self.n_chains < 1:
            raise ConfigError("n_iter, thin and n_chains must all be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError(f"burn_in must satisfy 0 <= burn_in < n_iter, got {self.burn_in} / {self.n_iter}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        return self

    @property
    def n_retained(self):
        return len(range(self.burn_in, self.n_iter, self.thin))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SamplerOptions:
    """Switches for conditionals that admit more than one reading.

    loading_conditional: "supplement" draws a_j with precision (U'U + I)/sigma2,
        "conjugate" uses (U'U + D(tau)^-1)/sigma2.
    exact_pseudo_prior: add the lambda^2 prior / pseudo-prior ratio to the
        (gamma, eta) target so the scheme stays exact when groups are active.
    posterior_mode_variant: "scaled" keeps the leading sigma2 factor of the
        posterior-mode loading formula, "conditional" drops it.
    """

    loading_conditional: str = "supplement"
    exact_pseudo_prior: bool = False
    posterior_mode_variant: str = "scaled"
    log_every: int = 500

    def validate(self):
        if self.loading_conditional not in ("supplement", "conjugate"):
            raise ConfigError(f"unknown loading_conditional {self.loading_conditional!r}")
        if self.posterior_mode_variant not in ("scaled", "conditional"):
            raise ConfigError(f"unknown posterior_mode_variant {self.posterior_mode_variant!r}")
        return self

    def to_dict(self):
        return asdict(self)


DEFAULT_OPTIONS = SamplerOptions()


def substream(seed, *counters):
    """Counter-keyed Philox generator; same counters always give the same draws.

    The key is the seed as two 32-bit words, the counter count, then the counters;
    distinct (seed, counters) tuples give distinct keys.
    """
    seed = int(seed)
    entropy = [seed & 0xFFFFFFFF, seed >> 32, len(counters)] + [int(c) for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


# Observed data

@dataclass
class ViewSet:
    views: list
    outcome: np.ndarray | None = None
    covariates: np.ndarray | None = None
    view_names: list | None = None
    feature_names: list | None = None
    covariate_names: list | None = None
    sample_ids: list | None = None

    def __post_init__(self):
        self.views = [np.asarray(X, dtype=float) for X in self.views]
        if self.outcome is not None:
            self.outcome = np.asarray(self.outcome, dtype=float).reshape(-1)
        if self.covariates is not None:
            self.covariates = np.asarray(self.covariates, dtype=float)
        if self.view_names is None:
            self.view_names = [f"X{m + 1}" for m in range(len(self.views))]
        if self.feature_names is None:
            self.feature_names = [[f"{name}_{j + 1}" for j in range(X.shape[1])]
                                  for name, X in zip(self.view_names, self.views)]
        if self.covariates is not None and self.covariate_names is None:
            self.covariate_names = [f"Z_{j + 1}" for j in range(self.covariates.shape[1])]
        if self.sample_ids is None and self.views:
            self.sample_ids = [f"s{i + 1}" for i in range(self.views[0].shape[0])]

    @property
    def n(self):
        return self.views[0].shape[0]

    @property
    def M(self):
        return len(self.views)

    @property
    def has_covariates(self):
        return self.covariates is not None

    def block_kinds(self):
        kinds = [OUTCOME] + [OMICS] * self.M
        if self.has_covariates:
            kinds.append(COVARIATES)
        return kinds

    def block_names(self):
        names = [OUTCOME] + list(self.view_names)
        if self.has_covariates:
            names.append(COVARIATES)
        return names

    def blocks(self):
        """Data matrices in block order; the outcome enters as an n x 1 column."""
        if self.outcome is None:
            raise ValidationError("outcome is required to build model blocks")
        out = [self.outcome[:, None]] + list(self.views)
        if self.has_covariates:
            out.append(self.covariates)
        return out

    def predictor_blocks(self):
        """Blocks 1..M+1, i.e. everything known for a new sample."""
        out = list(self.views)
        if self.has_covariates:
            out.append(self.covariates)
        return out


@dataclass
class StandardizationRecord:
    view_means: list
    view_sds: list
    covariate_mean: np.ndarray | None
    covariate_sd: np.ndarray | None
    outcome_mean: float
    center_outcome: bool
    view_names: list
    feature_names: list
    covariate_names: list | None


def _check_finite(name, X):
    if not np.all(np.isfinite(X)):
        bad = int(np.sum(~np.isfinite(X)))
        raise ValidationError(f"{name} contains {bad} NaN/Inf entries")


def _column_moments(name, X, names):
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    flat = sd <= STANDARDIZE_TOL * np.maximum(1.0, np.abs(mean))
    if np.any(flat):
        offenders = [names[j] for j in np.flatnonzero(flat)]
        raise ValidationError(f"zero-variance feature in {name}: {', '.join(offenders[:10])}")
    return mean, sd


def _check_dimensions(raw):
    if raw.M < 1:
        raise ValidationError("at least one feature view is required")
    n = raw.views[0].shape[0]
    for name, X, names in zip(raw.view_names, raw.views, raw.feature_names):
        if X.ndim != 2:
            raise ValidationError(f"view {name} must be a 2-D matrix")
        if X.shape[0] != n:
            raise ValidationError(f"dimension mismatch: view {name} has {X.shape[0]} samples, expected {n}")
        if X.shape[1] < 1:
            raise ValidationError(f"view {name} has no features")
        if len(names) != X.shape[1]:
            raise ValidationError(f"view {name}: {len(names)} feature names for {X.shape[1]} columns")
        _check_finite(f"view {name}", X)
    if raw.outcome is not None:
        if raw.outcome.shape[0] != n:
            raise ValidationError(f"dimension mismatch: outcome has {raw.outcome.shape[0]} samples, expected {n}")
        _check_finite("outcome", raw.outcome)
    if raw.covariates is not None:
        if raw.covariates.ndim != 2 or raw.covariates.shape[0] != n:
            raise ValidationError(f"dimension mismatch: covariates must be {n} x p")
        _check_finite("covariates", raw.covariates)


def validate_and_standardize(raw, center_outcome=True):
    """Column-standardize views (and covariates); centre the outcome if asked.

    Returns the standardized ViewSet and the record needed to transform new samples.
    """
    _check_dimensions(raw)
    if raw.outcome is None:
        raise ValidationError("training data needs an outcome")
    if raw.n < 2:
        raise ValidationError("at least two samples are needed to standardize")

    means, sds, views = [], [], []
    for name, X, names in zip(raw.view_names, raw.views, raw.feature_names):
        mu, sd = _column_moments(f"view {name}", X, names)
        means.append(mu)
        sds.append(sd)
        views.append((X - mu) / sd)

    cov_mean = cov_sd = covariates = None
    if raw.covariates is not None:
        cov_mean, cov_sd = _column_moments("covariates", raw.covariates, raw.covariate_names)
        covariates = (raw.covariates - cov_mean) / cov_sd

    outcome_mean = float(raw.outcome.mean()) if center_outcome else 0.0
    record = StandardizationRecord(
        view_means=means, view_sds=sds,
        covariate_mean=cov_mean, covariate_sd=cov_sd,
        outcome_mean=outcome_mean, center_outcome=center_outcome,
        view_names=list(raw.view_names),
        feature_names=[list(f) for f in raw.feature_names],
        covariate_names=None if raw.covariate_names is None else list(raw.covariate_names),
    )
    data = ViewSet(views=views, outcome=raw.outcome - outcome_mean, covariates=covariates,
                   view_names=list(raw.view_names), feature_names=[list(f) for f in raw.feature_names],
                   covariate_names=record.covariate_names, sample_ids=raw.sample_ids)
    logger.debug("standardized %d views, n=%d, outcome mean %.4f", raw.M, raw.n, outcome_mean)
    return data, record


def standardize_new(record, raw):
    """Apply training means/SDs to new samples (the outcome, if any, is left as is)."""
    if raw.M != len(record.view_means):
        raise ValidationError(f"expected {len(record.view_means)} views, got {raw.M}")
    views = []
    for name, X, mu, sd in zip(record.view_names, raw.views, record.view_means, record.view_sds):
        if X.ndim != 2 or X.shape[1] != mu.shape[0]:
            raise ValidationError(f"view {name}: expected {mu.shape[0]} features, got {X.shape[-1]}")
        _check_finite(f"view {name}", X)
        views.append((X - mu) / sd)
    covariates = None
    if record.covariate_mean is not None:
        if raw.covariates is None:
            raise ValidationError("model was fitted with covariates but none were given")
        if raw.covariates.shape[1] != record.covariate_mean.shape[0]:
            raise ValidationError("covariates: column count differs from training")
        _check_finite("covariates", raw.covariates)
        covariates = (raw.covariates - record.covariate_mean) / record.covariate_sd
    return ViewSet(views=views, outcome=raw.outcome, covariates=covariates,
                   view_names=list(record.view_names), feature_names=record.feature_names,
                   covariate_names=record.covariate_names, sample_ids=raw.sample_ids)


# Group structure

@dataclass
class GroupDesign:
    """Per-view binary membership matrices P^(m) (features x groups); None = ungrouped."""

    membership: list
    group_names: list

    @property
    def present(self):
        return any(P is not None for P in self.membership)

    def for_block(self, m, kinds):
        if kinds[m] != OMICS:
            return None
        return self.membership[m - 1]

    @classmethod
    def empty(cls, M):
        return cls(membership=[None] * M, group_names=[None] * M)


def make_group_design(feature_names, tables):
    """Build P^(m) from (feature, group) tables, one per view (None for no groups)."""
    membership, group_names = [], []
    for m, (names, table) in enumerate(zip(feature_names, tables)):
        if table is None:
            membership.append(None)
            group_names.append(None)
            continue
        table = pd.DataFrame(table)
        if table.shape[1] < 2:
            raise ValidationError(f"group table for view {m + 1} needs (feature, group) columns")
        feats = table.iloc[:, 0].astype(str)
        groups = table.iloc[:, 1].astype(str)
        index = {name: j for j, name in enumerate(names)}
        unknown = sorted(set(feats) - set(index))
        if unknown:
            raise ValidationError(f"group table for view {m + 1} names unknown features: {', '.join(unknown[:10])}")
        labels = list(pd.unique(groups))
        col = {g: k for k, g in enumerate(labels)}
        P = np.zeros((len(names), len(labels)))
        P[feats.map(index).to_numpy(), groups.map(col).to_numpy()] = 1.0
        membership.append(P)
        group_names.append(labels)
    return GroupDesign(membership=membership, group_names=group_names)


# Sampler state

@dataclass
class BlockState:
    kind: str
    A: np.ndarray          # r x p loadings
    gamma: np.ndarray      # r component indicators
    eta: np.ndarray        # r x p feature indicators
    sigma2: np.ndarray     # p residual variances
    tau2: np.ndarray       # r x p
    lambda2: np.ndarray    # r x p
    q: float
    b0: np.ndarray         # r baseline shrinkage b_l0
    b: np.ndarray | None = None        # r x K group effects
    r_ind: np.ndarray | None = None    # r x K group indicators
    q_r: float | None = None

    @property
    def p(self):
        return self.A.shape[1]

    @property
    def grouped(self):
        return self.b is not None

    def copy(self):
        return BlockState(
            kind=self.kind, A=self.A.copy(), gamma=self.gamma.copy(), eta=self.eta.copy(),
            sigma2=self.sigma2.copy(), tau2=self.tau2.copy(), lambda2=self.lambda2.copy(),
            q=self.q, b0=self.b0.copy(),
            b=None if self.b is None else self.b.copy(),
            r_ind=None if self.r_ind is None else self.r_ind.copy(),
            q_r=self.q_r,
        )


@dataclass
class ChainState:
    U: np.ndarray
    blocks: list
    alpha0: float = 0.0

    @property
    def r(self):
        return self.U.shape[1]

    def copy(self):
        return ChainState(U=self.U.copy(), blocks=[blk.copy() for blk in self.blocks], alpha0=self.alpha0)

    def check_invariants(self):
        """Raise AssertionError if any structural sparsity rule is broken."""
        for m, blk in enumerate(self.blocks):
            assert not np.any(blk.eta & ~blk.gamma[:, None]), f"block {m}: eta=1 inside inactive component"
            assert np.all(blk.A[~blk.eta] == 0.0), f"block {m}: nonzero loading with eta=0"
            if blk.kind == COVARIATES:
                assert blk.gamma.all(), "covariate components must all be active"
                assert blk.eta.all(), "covariate features must all be included"
            if blk.kind == OUTCOME:
                assert np.array_equal(blk.eta[:, 0], blk.gamma), "outcome eta must track gamma"
            if blk.grouped:
                assert np.array_equal(blk.b > 0, blk.r_ind), f"block {m}: b_lk > 0 must match r_lk"
                assert np.all(blk.b >= 0)
            assert np.all(blk.sigma2 > 0) and np.all(blk.tau2 > 0) and np.all(blk.lambda2 > 0)
        return True


def group_offsets(blk, P):
    """s_lj = P_j' b_l, the group part of the lambda^2 rate (r x p, zero when ungrouped)."""
    if P is None or blk.b is None:
        return np.zeros_like(blk.tau2)
    return blk.b @ P.T


def _draw_block(kind, p, hp, rng, P, from_prior):
    r = hp.r
    if kind == COVARIATES:
        q = 1.0
        gamma = np.ones(r, dtype=bool)
        eta = np.ones((r, p), dtype=bool)
    else:
        q = rng.beta(hp.a, hp.b)
        gamma = rng.random(r) < q
        if kind == OUTCOME:
            eta = gamma[:, None].copy()
        else:
            eta = (rng.random((r, p)) < hp.q_eta) & gamma[:, None]

    b = r_ind = q_r = None
    if P is not None:
        K = P.shape[1]
        q_r = rng.beta(hp.a, hp.b)
        r_ind = rng.random((r, K)) < q_r
        b = np.where(r_ind, rng.gamma(hp.alpha_b, 1.0 / hp.beta_b, size=(r, K)), 0.0)

    if from_prior:
        b0 = rng.gamma(hp.alpha0_shape, 1.0 / hp.beta_b, size=r)
    else:
        b0 = np.full(r, INIT_B0)
    offset = np.zeros((r, p)) if P is None else b @ P.T
    rate = b0[:, None] + np.where(eta, offset, 0.0)
    lambda2 = rng.gamma(hp.alpha, 1.0 / rate)

    # inverse-gamma as 1 / gamma; the gamma variate is clipped before inversion
    precision = rng.gamma(hp.a0, 1.0 / hp.b0, size=p)
    if from_prior:
        sigma2 = 1.0 / np.maximum(precision, np.finfo(float).tiny)
        tau2 = rng.exponential(1.0 / lambda2)
    else:
        low, high = SIGMA2_INIT_RANGE
        sigma2 = 1.0 / np.clip(precision, 1.0 / high, 1.0 / low)
        tau2 = np.full((r, p), INIT_TAU2)
    A = np.where(eta, rng.normal(size=(r, p)) * np.sqrt(tau2 * sigma2[None, :]), 0.0)
    return BlockState(kind=kind, A=A, gamma=gamma, eta=eta, sigma2=sigma2, tau2=tau2,
                      lambda2=lambda2, q=float(q), b0=b0, b=b, r_ind=r_ind,
                      q_r=None if q_r is None else float(q_r))


def init_chain(hp, data, groups, rng, from_prior=False):
    """Starting state: tau2 = 1, b_l0 = 0.1, everything else drawn from its prior.

    With from_prior=True tau2 and b_l0 are drawn from their priors as well, which
    gives an exact forward draw of all parameters.
    """
    kinds = data.block_kinds()
    widths = [1] + [X.shape[1] for X in data.views]
    if data.has_covariates:
        widths.append(data.covariates.shape[1])
    blocks = [_draw_block(kind, p, hp, rng, groups.for_block(m, kinds), from_prior)
              for m, (kind, p) in enumerate(zip(kinds, widths))]
    U = rng.normal(size=(data.n, hp.r))
    state = ChainState(U=U, blocks=blocks, alpha0=0.0)
    state.check_invariants()
    return state


# Posterior summaries

@dataclass
class DrawLog:
    """Indicator draws of every retained sweep, stacked along axis 0."""

    gamma: list            # per block: n_keep x r
    eta: list              # per block: n_keep x r x p
    r_ind: list            # per block: n_keep x r x K, or None

    @property
    def n_draws(self):
        return self.gamma[0].shape[0]

    def concat(self, other):
        return DrawLog(
            gamma=[np.concatenate([a, b]) for a, b in zip(self.gamma, other.gamma)],
            eta=[np.concatenate([a, b]) for a, b in zip(self.eta, other.eta)],
            r_ind=[None if a is None else np.concatenate([a, b]) for a, b in zip(self.r_ind, other.r_ind)],
        )


@dataclass
class PosteriorSummary:
    block_names: list
    block_kinds: list
    mpp_gamma: list
    mpp_eta: list
    mpp_group: list
    U_bar: np.ndarray
    sigma2_bar: list
    A_bar: list
    alpha0_hat: float
    draws: DrawLog
    A_mode: list | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_retained(self):
        return self.draws.n_draws

    @property
    def r(self):
        return self.U_bar.shape[1]
