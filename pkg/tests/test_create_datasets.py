import numpy as np
import pytest

from bipnet.create_datasets import (
    N_NETWORK,
    NOISE_GROUP,
    ScenarioSpec,
    _noise,
    build_block_covariance,
    group_assignment,
    simulate,
    write_dataset,
)
from bipnet.data_io import read_json, read_matrix
from bipnet.model_core import ConfigError

SMALL = dict(n=40, p1=120, p2=110)


def loadings(**spec):
    return simulate(ScenarioSpec(**{**SMALL, **spec})).truth.loadings


class TestBlockCovariance:
    def test_hub_structure(self):
        cov = build_block_covariance(150)
        assert cov[0, 0] == 1.0
        assert cov[0, 5] == pytest.approx(0.7)
        assert cov[3, 7] == pytest.approx(0.49)
        assert cov[10, 11] == pytest.approx(0.7)
        assert cov[5, 15] == 0.0
        np.testing.assert_array_equal(cov[N_NETWORK:, N_NETWORK:], np.eye(50))
        assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_structured_noise_correlation(self):
        Z = _noise(np.random.default_rng(0), 20_000, 110, iid=False)
        corr = np.corrcoef(Z, rowvar=False)
        assert corr[0, 1] == pytest.approx(0.7, abs=0.03)
        assert corr[2, 3] == pytest.approx(0.49, abs=0.03)
        assert abs(corr[0, 10]) < 0.03
        assert abs(corr[100, 105]) < 0.03

    def test_too_few_features(self):
        with pytest.raises(ConfigError):
            build_block_covariance(50)


def test_group_assignment():
    index = group_assignment(130)
    assert index[0] == 0 and index[9] == 0 and index[10] == 1 and index[99] == 9
    assert np.all(index[N_NETWORK:] == 10)


class TestScenarioOne:
    def test_setting1_all_network_variables(self):
        for A in loadings(scenario=1, setting=1):
            assert np.all(A[:, :N_NETWORK] != 0)
            assert np.all(A[:, N_NETWORK:] == 0)

    def test_main_variables_doubled(self):
        A = loadings(scenario=1, setting=1)[0]
        main = np.abs(A[:, ::10][:, :10])
        others = np.abs(np.delete(A[:, :N_NETWORK], np.arange(0, N_NETWORK, 10), axis=1))
        assert main.min() >= 0.6 and main.max() <= 1.0
        assert others.min() >= 0.3 and others.max() <= 0.5

    def test_setting2_first_thirty(self):
        A = loadings(scenario=1, setting=2)[1]
        assert np.all(A[:, :30] != 0) and np.all(A[:, 30:] == 0)

    def test_setting3_zeroes_within_groups(self):
        sim = simulate(ScenarioSpec(scenario=1, setting=3, **SMALL))
        signal = sim.truth.signal[0]
        assert signal.max() < N_NETWORK
        counts = np.bincount(signal // 10, minlength=10)
        assert np.all(counts >= 5)

    def test_setting4_only_first_three_groups_thinned(self):
        A = loadings(scenario=1, setting=4)[0]
        assert np.all(A[:, 30:] == 0)
        assert np.any(A[:, :30] != 0)

    def test_setting5_disjoint_supports(self):
        A = loadings(scenario=1, setting=5)[0]
        nonzero = A[:, :N_NETWORK] != 0
        np.testing.assert_array_equal(nonzero.sum(axis=0), 1)
        for l in range(4):
            assert np.all(nonzero[l, 25 * l:25 * (l + 1)])


class TestOtherScenarios:
    def test_scenario2_views_use_separate_components(self):
        A1, A2 = loadings(scenario=2)
        assert np.all(A1[2:] == 0) and np.all(A1[:2, :N_NETWORK] != 0)
        assert np.all(A2[:2] == 0) and np.all(A2[2:, :N_NETWORK] != 0)

    def test_scenario2_disjoint(self):
        A1, _ = loadings(scenario=2, overlap=False)
        assert np.all(A1[0, :50] != 0) and np.all(A1[0, 50:] == 0)
        assert np.all(A1[1, :50] == 0) and np.all(A1[1, 50:N_NETWORK] != 0)

    def test_scenario3_shared_and_individual(self):
        A1, A2 = loadings(scenario=3)
        assert np.all(A1[:2, :50] != 0) and np.all(A2[:2, :50] != 0)
        assert np.all(A1[2, 50:N_NETWORK] != 0) and np.all(A1[3] == 0)
        assert np.all(A2[3, 50:N_NETWORK] != 0) and np.all(A2[2] == 0)

    def test_outcome_coefficients(self):
        assert list(simulate(ScenarioSpec(scenario=3, **SMALL)).truth.a) == [1.0, 0.0, 1.0, 1.0]


class TestSimulate:
    def test_shapes_and_split(self):
        sim = simulate(ScenarioSpec(scenario=1, n=40, p1=120, p2=110, n_test=15))
        assert [X.shape for X in sim.X] == [(40, 120), (40, 110)]
        assert [X.shape for X in sim.X_test] == [(15, 120), (15, 110)]
        assert sim.y.shape == (40,) and sim.y_test.shape == (15,)
        assert sim.test_viewset().sample_ids[0] == "t1"

    def test_same_seed_same_data(self):
        a = simulate(ScenarioSpec(seed=9, **SMALL))
        b = simulate(ScenarioSpec(seed=9, **SMALL))
        np.testing.assert_array_equal(a.X[0], b.X[0])
        np.testing.assert_array_equal(a.y, b.y)

    def test_test_split_shares_loadings(self):
        a = simulate(ScenarioSpec(seed=9, **SMALL))
        b = simulate(ScenarioSpec(seed=9, n_test=10, **SMALL))
        np.testing.assert_array_equal(a.truth.loadings[0], b.truth.loadings[0])

    def test_truth_manifest(self):
        sim = simulate(ScenarioSpec(scenario=1, setting=2, **SMALL))
        truth = sim.truth_manifest()
        assert truth["setting"] == 2
        assert truth["views"]["X1"]["signal_groups"] == ["G1", "G2", "G3"]
        assert truth["views"]["X2"]["signal_features"][:2] == ["X2_1", "X2_2"]

    def test_group_tables_label_noise(self):
        table = simulate(ScenarioSpec(**SMALL)).group_tables()[0]
        assert table["group"].iloc[0] == "G1"
        assert table["group"].iloc[-1] == NOISE_GROUP

    @pytest.mark.parametrize("spec", [
        ScenarioSpec(scenario=4),
        ScenarioSpec(scenario=2, setting=1),
        ScenarioSpec(scenario=1, setting=6),
        ScenarioSpec(p1=80),
        ScenarioSpec(n_test=-1),
    ])
    def test_invalid_spec(self, spec):
        with pytest.raises(ConfigError):
            simulate(spec)


def test_write_dataset(tmp_path):
    sim = simulate(ScenarioSpec(n_test=5, **SMALL))
    write_dataset(sim, tmp_path)
    values, ids, cols = read_matrix(tmp_path / "X1.csv")
    np.testing.assert_allclose(values, sim.X[0], rtol=1e-9)
    assert ids[0] == "s1" and cols[0] == "X1_1"
    assert (tmp_path / "groups_X2.csv").exists()
    assert (tmp_path / "test" / "y.csv").exists()
    assert read_json(tmp_path / "truth.json")["scenario"] == 1
    assert not list(tmp_path.glob("*.tmp"))
