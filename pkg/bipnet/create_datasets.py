"""
Simulated two-view datasets with a known sparse factor structure
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from bipnet.data_io import write_csv_atomic, write_json_atomic, write_matrix
from bipnet.model_core import ConfigError, ValidationError, ViewSet

RANDOM_STATE = 42
N_COMPONENTS = 4
N_SIGNAL_GROUPS = 10
GROUP_SIZE = 10
N_NETWORK = N_SIGNAL_GROUPS * GROUP_SIZE
MAIN_CONNECTED_CORR = 0.7
CONNECTED_CORR = 0.49
EFFECT_LOW, EFFECT_HIGH = 0.3, 0.5
MAIN_EFFECT_SCALE = 2.0
MAX_ZEROED_PER_GROUP = 5
NOISE_GROUP = "noise"

OUTCOME_COEFS = {
    1: np.array([1.0, 1.0, 0.0, 0.0]),
    2: np.array([1.0, 0.0, 1.0, 0.0]),
    3: np.array([1.0, 0.0, 1.0, 1.0]),
}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int = 1
    setting: int | None = None
    overlap: bool = True
    n: int = 200
    p1: int = 500
    p2: int = 500
    seed: int = RANDOM_STATE
    iid_noise: bool = False
    n_test: int = 0

    def validate(self):
        if self.scenario not in (1, 2, 3):
            raise ConfigError(f"scenario must be 1, 2 or 3, got {self.scenario}")
        if self.setting is not None:
            if self.scenario != 1:
                raise ConfigError("setting only applies to scenario 1")
            if self.setting not in (1, 2, 3, 4, 5):
                raise ConfigError(f"setting must be in 1..5, got {self.setting}")
        if min(self.p1, self.p2) < N_NETWORK:
            raise ConfigError(f"p1 and p2 must be at least {N_NETWORK}")
        if self.n < 2 or self.n_test < 0:
            raise ConfigError("n must be >= 2 and n_test >= 0")
        return self

    @property
    def effective_setting(self):
        if self.scenario != 1:
            return None
        return 1 if self.setting is None else self.setting

    def label(self):
        if self.scenario == 1:
            return f"scenario1_setting{self.effective_setting}"
        return f"scenario{self.scenario}_{'overlap' if self.overlap else 'disjoint'}"


@dataclass
class GroundTruth:
    loadings: list          # per view, 4 x p
    U: np.ndarray           # (n + n_test) x 4
    a: np.ndarray
    group_index: list       # per view, group id per feature (N_SIGNAL_GROUPS = noise group)

    @property
    def signal(self):
        """Indices of features with a nonzero loading on any component, per view."""
        return [np.flatnonzero(np.any(A != 0, axis=0)) for A in self.loadings]

    def signal_mask(self, v):
        mask = np.zeros(self.loadings[v].shape[1], dtype=bool)
        mask[self.signal[v]] = True
        return mask

    def signal_groups(self, v):
        return np.unique(self.group_index[v][self.signal[v]])

    def group_signal_mask(self, v):
        mask = np.zeros(N_SIGNAL_GROUPS + 1, dtype=bool)
        mask[self.signal_groups(v)] = True
        return mask


@dataclass
class SimulatedData:
    spec: ScenarioSpec
    X: list
    y: np.ndarray
    truth: GroundTruth
    X_test: list | None = None
    y_test: np.ndarray | None = None

    @property
    def view_names(self):
        return [f"X{v + 1}" for v in range(len(self.X))]

    def feature_names(self):
        return [[f"{name}_{j + 1}" for j in range(X.shape[1])] for name, X in zip(self.view_names, self.X)]

    def to_viewset(self):
        return ViewSet(views=self.X, outcome=self.y, view_names=self.view_names,
                       feature_names=self.feature_names())

    def test_viewset(self):
        if self.X_test is None:
            raise ValidationError("dataset was generated without a test split")
        ids = [f"t{i + 1}" for i in range(self.y_test.shape[0])]
        return ViewSet(views=self.X_test, outcome=self.y_test, view_names=self.view_names,
                       feature_names=self.feature_names(), sample_ids=ids)

    def group_tables(self):
        tables = []
        for names, index in zip(self.feature_names(), self.truth.group_index):
            labels = [group_label(k) for k in index]
            tables.append(pd.DataFrame({"feature": names, "group": labels}))
        return tables

    def truth_manifest(self):
        names = self.feature_names()
        views = {}
        for v, view in enumerate(self.view_names):
            views[view] = {
                "n_features": int(self.X[v].shape[1]),
                "signal": [int(j) for j in self.truth.signal[v]],
                "signal_features": [names[v][j] for j in self.truth.signal[v]],
                "signal_groups": [group_label(k) for k in self.truth.signal_groups(v)],
            }
        return {
            "scenario": self.spec.scenario,
            "setting": self.spec.effective_setting,
            "overlap": self.spec.overlap,
            "iid_noise": self.spec.iid_noise,
            "seed": self.spec.seed,
            "a": [float(x) for x in self.truth.a],
            "views": views,
        }


def group_label(k):
    return NOISE_GROUP if k == N_SIGNAL_GROUPS else f"G{k + 1}"


def build_block_covariance(p):
    """Ten 10 x 10 hub blocks (main-connected 0.7, connected-connected 0.49), identity after."""
    if p < N_NETWORK:
        raise ConfigError(f"block covariance needs p >= {N_NETWORK}, got {p}")
    block = np.full((GROUP_SIZE, GROUP_SIZE), CONNECTED_CORR)
    block[0, :] = block[:, 0] = MAIN_CONNECTED_CORR
    np.fill_diagonal(block, 1.0)
    cov = np.eye(p)
    for g in range(N_SIGNAL_GROUPS):
        sl = slice(g * GROUP_SIZE, (g + 1) * GROUP_SIZE)
        cov[sl, sl] = block
    return cov


def group_assignment(p):
    index = np.full(p, N_SIGNAL_GROUPS)
    index[:N_NETWORK] = np.arange(N_NETWORK) // GROUP_SIZE
    return index


def _effects(rng, shape):
    return rng.uniform(EFFECT_LOW, EFFECT_HIGH, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _double_main(A):
    main = np.arange(0, N_NETWORK, GROUP_SIZE)
    A[:, main] *= MAIN_EFFECT_SCALE
    return A


def _load(rng, p, rows, cols):
    """4 x p loadings with effects on the given (component, column range) pairs."""
    A = np.zeros((N_COMPONENTS, p))
    for l, sl in zip(rows, cols):
        A[l, sl] = _effects(rng, A[l, sl].shape)
    return _double_main(A)


def _zero_within_groups(rng, A, n_groups):
    for g in range(n_groups):
        count = rng.integers(0, MAX_ZEROED_PER_GROUP + 1)
        cols = g * GROUP_SIZE + rng.choice(GROUP_SIZE, size=count, replace=False)
        A[:, cols] = 0.0
    return A


def scenario1_loadings(rng, p, setting):
    all_comps = range(N_COMPONENTS)
    if setting in (1, 3):
        A = _load(rng, p, all_comps, [slice(0, N_NETWORK)] * N_COMPONENTS)
    elif setting in (2, 4):
        A = _load(rng, p, all_comps, [slice(0, 30)] * N_COMPONENTS)
    else:
        A = _load(rng, p, all_comps, [slice(25 * l, 25 * (l + 1)) for l in all_comps])
    if setting == 3:
        A = _zero_within_groups(rng, A, N_SIGNAL_GROUPS)
    elif setting == 4:
        A = _zero_within_groups(rng, A, 3)
    return A


def scenario2_loadings(rng, p, comps, overlap):
    if overlap:
        cols = [slice(0, N_NETWORK)] * 2
    else:
        cols = [slice(0, 50), slice(50, N_NETWORK)]
    return _load(rng, p, comps, cols)


def scenario3_loadings(rng, p, individual, overlap):
    if overlap:
        cols = [slice(0, 50), slice(0, 50)]
    else:
        cols = [slice(0, 25), slice(25, 50)]
    return _load(rng, p, [0, 1, individual], cols + [slice(50, N_NETWORK)])


def _noise(rng, n, p, iid):
    Z = rng.standard_normal((n, p))
    if iid:
        return Z
    L = np.linalg.cholesky(build_block_covariance(N_NETWORK))
    Z[:, :N_NETWORK] = Z[:, :N_NETWORK] @ L.T
    return Z


def _generate(spec, loadings):
    rng = np.random.default_rng([spec.seed, 1])
    n_total = spec.n + spec.n_test
    U = rng.standard_normal((n_total, N_COMPONENTS))
    a = OUTCOME_COEFS[spec.scenario]
    X = [U @ A + _noise(rng, n_total, A.shape[1], spec.iid_noise) for A in loadings]
    y = U @ a + rng.standard_normal(n_total)
    truth = GroundTruth(loadings=loadings, U=U, a=a,
                        group_index=[group_assignment(A.shape[1]) for A in loadings])
    n = spec.n
    sim = SimulatedData(spec=spec, X=[x[:n] for x in X], y=y[:n], truth=truth)
    if spec.n_test:
        sim.X_test = [x[n:] for x in X]
        sim.y_test = y[n:]
    return sim


def gen_scenario1(spec):
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    loadings = [scenario1_loadings(rng, p, spec.effective_setting) for p in (spec.p1, spec.p2)]
    return _generate(spec, loadings)


def gen_scenario2(spec):
    """View 1 loads on components 1-2 only, view 2 on components 3-4 only."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    loadings = [scenario2_loadings(rng, spec.p1, [0, 1], spec.overlap),
                scenario2_loadings(rng, spec.p2, [2, 3], spec.overlap)]
    return _generate(spec, loadings)


def gen_scenario3(spec):
    """Components 1-2 shared by both views, 3 individual to view 1, 4 individual to view 2."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    loadings = [scenario3_loadings(rng, spec.p1, 2, spec.overlap),
                scenario3_loadings(rng, spec.p2, 3, spec.overlap)]
    return _generate(spec, loadings)


GENERATORS = {1: gen_scenario1, 2: gen_scenario2, 3: gen_scenario3}


def simulate(spec):
    spec.validate()
    return GENERATORS[spec.scenario](spec)


def write_dataset(sim, out_dir):
    """X1.csv, X2.csv, y.csv, groups_<view>.csv and truth.json; the test split goes to test/."""
    out_dir = Path(out_dir)
    names = sim.feature_names()
    ids = [f"s{i + 1}" for i in range(sim.y.shape[0])]
    for view, X, feats, table in zip(sim.view_names, sim.X, names, sim.group_tables()):
        write_matrix(X, ids, feats, out_dir / f"{view}.csv")
        write_csv_atomic(table, out_dir / f"groups_{view}.csv", index=False)
    write_matrix(sim.y[:, None], ids, ["y"], out_dir / "y.csv")
    write_json_atomic(sim.truth_manifest(), out_dir / "truth.json")
    if sim.X_test is not None:
        test_ids = [f"t{i + 1}" for i in range(sim.y_test.shape[0])]
        for view, X, feats in zip(sim.view_names, sim.X_test, names):
            write_matrix(X, test_ids, feats, out_dir / "test" / f"{view}.csv")
        write_matrix(sim.y_test[:, None], test_ids, ["y"], out_dir / "test" / "y.csv")
    return out_dir
