"""Synthetic catalogs, data generation, corruption and ROC/AUC."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cfacar.network import GeneSetCollection
from cfacar.simulation import (
    BenchSpec,
    corrupt_catalog,
    generate_dataset,
    roc_from_posterior,
    run_comparison,
    run_robustness,
    scenario_from_catalogs,
    synthetic_catalogs,
    write_simulated_inputs,
)

TINY = dict(q=4, n_genes=200, n_functions=12, replicates=2, n_case_experiments=4,
            replicates_per_experiment=2, n_controls=6,
            sampler={"iterations": 30, "burn_in": 15, "chains": 1})


@pytest.fixture(scope="module")
def catalogs():
    return synthetic_catalogs(q=5, n_genes=300, n_functions=15, seed=2)


class TestRoc:
    def test_hand_case(self):
        res = roc_from_posterior([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
        assert res.points == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        assert res.auc == pytest.approx(0.75)

    def test_ties_move_diagonally(self):
        assert roc_from_posterior([0.5, 0.5, 0.5], [1, 0, 0]).auc == pytest.approx(0.5)

    def test_perfect_and_reversed(self):
        assert roc_from_posterior([0.9, 0.1], [1, 0]).auc == 1.0
        assert roc_from_posterior([0.1, 0.9], [1, 0]).auc == 0.0

    def test_degenerate_truth(self):
        res = roc_from_posterior([0.2, 0.4], [0, 0])
        assert res.degenerate and np.isnan(res.auc)

    def test_cells_restrict_evaluation(self):
        post = np.array([[0.9, 0.99], [0.1, 0.98]])
        truth = np.array([[1, 0], [0, 0]])
        cells = np.array([[True, False], [True, False]])
        assert roc_from_posterior(post, truth).auc == pytest.approx(1 / 3)
        assert roc_from_posterior(post, truth, cells).auc == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            roc_from_posterior([0.1, 0.2], [1])

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), st.booleans()), min_size=2, max_size=30))
    def test_auc_equals_mann_whitney(self, cells):
        post = np.array([c[0] for c in cells])
        truth = np.array([c[1] for c in cells])
        if truth.all() or not truth.any():
            return
        u = stats.mannwhitneyu(post[truth], post[~truth]).statistic
        assert roc_from_posterior(post, truth).auc == pytest.approx(u / (truth.sum() * (~truth).sum()))


class TestCatalogs:
    def test_deterministic(self):
        a = synthetic_catalogs(q=4, n_genes=200, n_functions=10, seed=5)
        b = synthetic_catalogs(q=4, n_genes=200, n_functions=10, seed=5)
        assert dict(a[0]) == dict(b[0]) and dict(a[1]) == dict(b[1])

    def test_default_network_is_sparse_and_connected_to_neighbours(self):
        pw, fn = synthetic_catalogs(seed=1)
        sc = scenario_from_catalogs(pw, fn, 3.5)
        W = sc.network.W
        assert sc.network.q == 10
        density = np.count_nonzero(W) / (10 * 9)
        assert 0.2 < density < 0.7
        assert 300 <= sc.mask.mask.shape[0] <= 900


class TestCorruption:
    def test_zero_fraction_is_identity(self, catalogs):
        pw, _ = catalogs
        assert dict(corrupt_catalog(pw, 0.0)) == dict(pw)

    def test_moves_requested_number_of_genes(self, catalogs):
        pw, _ = catalogs
        out = corrupt_catalog(pw, 0.08, seed=3)
        genes = pw.genes()
        changed = [g for g in genes if {p for p, s in pw if g in s} != {p for p, s in out if g in s}]
        assert len(changed) == round(0.08 * len(genes))
        for g in changed:
            # a moved gene leaves all old pathways and joins as many new ones as exist
            old = {p for p, s in pw if g in s}
            new = {p for p, s in out if g in s}
            assert len(new) == min(len(old), len(pw) - len(old)) and not (old & new)

    def test_seeded(self, catalogs):
        pw, _ = catalogs
        assert dict(corrupt_catalog(pw, 0.1, seed=4)) == dict(corrupt_catalog(pw, 0.1, seed=4))

    def test_invalid_fraction(self, catalogs):
        with pytest.raises(ValueError):
            corrupt_catalog(catalogs[0], 1.5)

    def test_emptied_pathway_dropped(self):
        cat = GeneSetCollection({"A": {"g1", "g2"}, "B": {"g1", "g3"}})
        out = corrupt_catalog(cat, 1.0)
        # g1 is in every pathway so it is dropped; g2 and g3 swap pathways
        assert dict(out) == {"A": frozenset({"g3"}), "B": frozenset({"g2"})}


class TestGenerate:
    def test_layout_and_truth(self, catalogs):
        sc = scenario_from_catalogs(*catalogs, snr=2.0, n_case_experiments=7, replicates_per_experiment=3,
                                    n_controls=9, seed=1)
        data, truth, params = generate_dataset(sc, return_params=True)
        assert data.n == 7 * 3 + 9
        assert data.experiment_ids[-1] == "control"
        assert truth.shape == (sc.network.q, 8)
        np.testing.assert_array_equal(truth[:, :7].sum(axis=0), 1)
        assert truth[:, 7].sum() == 0
        # every pathway is targeted once before any repeats
        assert len(set(params["targets"][: min(7, sc.network.q)])) == min(7, sc.network.q)
        assert set(np.unique(params["Rho"])) == {0.0, 2.0}
        np.testing.assert_allclose(data.Y[:, data.is_control].mean(axis=1), 0.0, atol=1e-12)

    def test_gamma_true_default(self, catalogs):
        sc = scenario_from_catalogs(*catalogs, snr=1.0)
        from cfacar.network import gamma_support

        assert sc.gamma_true == pytest.approx(0.9 * gamma_support(sc.network)[1])

    def test_seeded(self, catalogs):
        a = generate_dataset(scenario_from_catalogs(*catalogs, snr=1.0, seed=3))[0]
        b = generate_dataset(scenario_from_catalogs(*catalogs, snr=1.0, seed=3))[0]
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_negative_snr(self, catalogs):
        with pytest.raises(ValueError):
            scenario_from_catalogs(*catalogs, snr=-1.0)


class TestBench:
    def test_spec_validation(self):
        with pytest.raises(ValueError, match="unknown scenario keys"):
            BenchSpec.from_dict({"snrs": [1.0]})
        with pytest.raises(ValueError):
            BenchSpec(kind="other")
        with pytest.raises(ValueError):
            BenchSpec(models=["pca"])

    def test_comparison_rows(self):
        spec = BenchSpec(snr=[3.5], **TINY)
        rows = run_comparison(spec)
        assert [(r["snr"], r["model"]) for r in rows] == [(3.5, "cfa-car"), (3.5, "efa")]
        for r in rows:
            assert r["n_ok"] == 2 and len(r["aucs"]) == 2
            assert 0.0 <= r["mean_auc"] <= 1.0
        assert rows == run_comparison(spec)

    def test_robustness_rows(self):
        spec = BenchSpec(kind="corruption", corruption=[0.1], models=["cfa-car"], **TINY)
        rows = run_robustness(spec)
        assert [r["corruption"] for r in rows] == [0.0, 0.1]

    def test_simulated_inputs(self, tmp_path):
        spec = BenchSpec(**{k: v for k, v in TINY.items() if k != "replicates"})
        paths = write_simulated_inputs(tmp_path, spec)
        for p in paths.values():
            assert open(p).read()
