import math

import numpy as np
import pytest
from scipy import stats
from sklearn.metrics import adjusted_rand_score

from windfleet.clustering import (
    GaussianComponent,
    MixtureModel,
    _sw_pvalue,
    _sw_weights,
    assign,
    fit_dpgmm,
    responsibilities,
    shapiro_wilk,
    should_adopt_split,
    smooth_labels,
    subcluster,
)
from windfleet.datagen import mixture_points
from windfleet.errors import DegenerateDataError, DomainError

CENTERS4 = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]]


def planted4(seed):
    return mixture_points(60, CENTERS4, 1.0, seed=seed)


def two_component_model(separation=100.0):
    comps = [
        GaussianComponent(0.5, np.array([0.0]), np.array([[1.0]])),
        GaussianComponent(0.5, np.array([separation]), np.array([[1.0]])),
    ]
    return MixtureModel(
        components=comps,
        truncation=2,
        concentration=0.5,
        final_elbo_delta=0.0,
        iterations_run=1,
        seed=0,
        converged=True,
        n_points=2,
        elbo_trace=np.array([0.0]),
    )


class TestFit:
    def test_recovers_planted_mixture(self):
        X, truth = planted4(3)
        model = fit_dpgmm(X, truncation=6, tol=1e-5, seed=3)
        assert len(model.effective_components()) == 4
        za = assign(model, {i: X[i] for i in range(len(X))})
        labels = [za.labels[i] for i in range(len(X))]
        assert adjusted_rand_score(truth, labels) >= 0.95

    def test_identical_points_single_dominant_component(self):
        X = np.full((12, 2), 3.7) + np.random.default_rng(0).normal(0, 1e-13, (12, 2))
        model = fit_dpgmm(X, truncation=6, seed=0)
        eff = model.effective_components()
        assert len(eff) == 1
        assert model.components[eff[0]].mean == pytest.approx([3.7, 3.7], abs=1e-9)

    def test_too_few_points_rejected(self):
        with pytest.raises(DegenerateDataError):
            fit_dpgmm(np.zeros((1, 2)))
        with pytest.raises(DegenerateDataError):
            fit_dpgmm(np.random.default_rng(0).normal(size=(3, 4)))

    def test_parameter_validation(self):
        X = np.random.default_rng(0).normal(size=(10, 2))
        with pytest.raises(DomainError):
            fit_dpgmm(X, truncation=0)
        with pytest.raises(DomainError):
            fit_dpgmm(X, tol=0.0)

    def test_weights_sum_to_one_and_covariances_spd(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            X = rng.normal(size=(int(rng.integers(8, 120)), 2)) * rng.uniform(0.5, 4)
            model = fit_dpgmm(X, truncation=6, seed=trial)
            assert model.weights.sum() == pytest.approx(1.0, abs=1e-9)
            for comp in model.components:
                assert np.array_equal(comp.covariance, comp.covariance.T)
                assert np.linalg.eigvalsh(comp.covariance).min() > 0
            assert len(model.effective_components()) <= model.truncation

    def test_elbo_never_decreases(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            n = int(rng.integers(10, 200))
            d = int(rng.choice([1, 2, 4]))
            X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3)
            model = fit_dpgmm(X, truncation=6, seed=trial)
            deltas = np.diff(model.elbo_trace)
            if deltas.size:
                assert deltas.min() >= -1e-8

    def test_bit_reproducible_for_fixed_seed(self):
        X, _ = planted4(5)
        a = fit_dpgmm(X, seed=9)
        b = fit_dpgmm(X, seed=9)
        assert np.array_equal(a.elbo_trace, b.elbo_trace)
        for ca, cb in zip(a.components, b.components):
            assert ca.weight == cb.weight
            assert np.array_equal(ca.mean, cb.mean)
            assert np.array_equal(ca.covariance, cb.covariance)

    def test_hitting_max_iter_flags_nonconvergence(self):
        X, _ = planted4(1)
        model = fit_dpgmm(X, max_iter=2, seed=1)
        assert not model.converged
        assert model.iterations_run == 2

    def test_one_dimensional_input(self):
        X = np.concatenate([np.zeros(10), np.full(10, 50.0)])
        model = fit_dpgmm(X, truncation=2, seed=0)
        assert len(model.effective_components()) == 2


class TestResponsibilities:
    def test_point_at_component_mean_dominates(self):
        model = two_component_model(separation=100.0)
        r = responsibilities(model, [0.0])
        assert r[0] > 0.999

    def test_equidistant_point_splits_evenly(self):
        model = two_component_model(separation=10.0)
        r = responsibilities(model, [5.0])
        assert r == pytest.approx([0.5, 0.5])

    def test_sums_to_one(self):
        X, _ = planted4(2)
        model = fit_dpgmm(X, seed=2)
        rng = np.random.default_rng(0)
        for _ in range(10):
            r = responsibilities(model, rng.normal(5, 8, size=2))
            assert r.sum() == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        model = two_component_model()
        with pytest.raises(DomainError):
            responsibilities(model, [1.0, 2.0])

    def test_argmax_invariant_under_affine_rescaling(self):
        X, _ = planted4(4)
        model = fit_dpgmm(X, seed=4)
        rng = np.random.default_rng(1)
        for _ in range(20):
            r = responsibilities(model, rng.normal(5, 8, size=2))
            scaled = 3.7 * r + 0.2
            assert np.argmax(r) == np.argmax(scaled)


class TestAssign:
    def test_labels_are_argmax(self):
        X, _ = planted4(6)
        model = fit_dpgmm(X, seed=6)
        points = {i: X[i] for i in range(len(X))}
        za = assign(model, points)
        for key, point in points.items():
            assert za.labels[key] == int(np.argmax(responsibilities(model, point)))
            assert za.responsibilities[key].sum() == pytest.approx(1.0)

    def test_tie_breaks_toward_lower_index(self):
        model = two_component_model(separation=10.0)
        za = assign(model, {"x": np.array([5.0])})
        assert za.labels["x"] == 0


class TestSubcluster:
    def test_nested_mixture_found(self):
        rng = np.random.default_rng(0)
        far = rng.normal([50, 50], 1.0, size=(20, 2))
        nested = np.vstack(
            [rng.normal([0, 0], 0.5, size=(12, 2)), rng.normal([6, 0], 0.5, size=(12, 2))]
        )
        X = np.vstack([far, nested])
        model = fit_dpgmm(X, seed=0)
        points = {i: X[i] for i in range(len(X))}
        za = assign(model, points)
        nested_zone = za.labels[len(far)]
        sub = subcluster(points, za, nested_zone, seed=0)
        assert len(sub.effective_components()) == 2
        subza = assign(sub, {i: points[i] for i, l in za.labels.items() if l == nested_zone})
        assert should_adopt_split(sub, subza)

    def test_plain_gaussian_zone_stays_single(self):
        rng = np.random.default_rng(1)
        far = rng.normal([50, 50], 1.0, size=(15, 2))
        plain = rng.normal([0, 0], 1.0, size=(15, 2))
        X = np.vstack([far, plain])
        model = fit_dpgmm(X, seed=1)
        points = {i: X[i] for i in range(len(X))}
        za = assign(model, points)
        zone = za.labels[len(far)]
        sub = subcluster(points, za, zone, seed=1)
        assert len(sub.effective_components()) == 1

    def test_three_member_zone_rejected(self):
        points = {i: np.array([float(i), 0.0]) for i in range(3)}
        za = assign(two_component_model(), {k: v[:1] for k, v in points.items()})
        with pytest.raises(DegenerateDataError):
            subcluster({k: v[:1] for k, v in points.items()}, za, za.labels[0], seed=0)


class TestShapiroWilk:
    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(42)
        vectors = [
            np.arange(1.0, 13.0),
            rng.normal(size=3),
            rng.normal(size=5),
            rng.normal(size=25),
            rng.exponential(size=50),
            rng.normal(2.0, 5.0, size=500),
            rng.uniform(size=5000),
        ]
        for x in vectors:
            w, p = shapiro_wilk(x)
            ref = stats.shapiro(x)
            assert w == pytest.approx(ref.statistic, abs=1e-3)
            assert p == pytest.approx(ref.pvalue, abs=1e-3)
            assert 0 < w <= 1.0

    def test_sample_size_limits(self):
        with pytest.raises(DomainError):
            shapiro_wilk([1.0, 2.0])
        with pytest.raises(DomainError):
            shapiro_wilk(np.random.default_rng(0).normal(size=5001))

    def test_zero_variance_rejected(self):
        with pytest.raises(DomainError):
            shapiro_wilk(np.ones(10))

    def test_monte_carlo_calibration_n5000(self):
        # 10000 standard-normal samples of n=5000: rejections at 0.05 should
        # land at 5% +/- 2
        n, reps = 5000, 10000
        a = _sw_weights(n)
        rng = np.random.default_rng(2024)
        rejections = 0
        batch = 250
        for _ in range(reps // batch):
            x = np.sort(rng.standard_normal((batch, n)), axis=1)
            num = (x @ a) ** 2
            den = ((x - x.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
            for w in num / den:
                rejections += _sw_pvalue(min(float(w), 1.0), n) <= 0.05
        rate = rejections / reps
        assert 0.03 <= rate <= 0.07


class TestSmoothLabels:
    def test_clear_majority_replaces(self):
        grid = np.zeros((3, 3), dtype=int)
        grid[1, 1] = 1
        out = smooth_labels(grid)
        assert out[1, 1] == 0

    def test_corner_tie_keeps_original(self):
        grid = np.array([[1, 0], [2, 1]])
        # corner (0,0) sees 0, 2, 1: three-way tie, keeps label 1
        assert smooth_labels(grid)[0, 0] == 1

    def test_uniform_grid_is_fixed_point(self):
        grid = np.full((4, 5), 3, dtype=int)
        assert np.array_equal(smooth_labels(grid), grid)

    def test_idempotent_once_settled(self):
        rng = np.random.default_rng(0)
        grid = rng.integers(0, 3, size=(6, 6))
        grid[2, 3] = -1
        for _ in range(20):
            new = smooth_labels(grid)
            if np.array_equal(new, grid):
                break
            grid = new
        settled = smooth_labels(grid)
        assert np.array_equal(settled, grid)
        assert np.array_equal(smooth_labels(settled), settled)

    def test_absent_cells_ignored_and_preserved(self):
        grid = np.array([[0, -1, 0], [0, 1, 0], [0, 0, -1]])
        out = smooth_labels(grid)
        assert out[0, 1] == -1
        assert out[2, 2] == -1
        assert out[1, 1] == 0


class TestSerialization:
    def test_json_roundtrip_preserves_values(self):
        X, _ = planted4(8)
        model = fit_dpgmm(X, seed=8)
        clone = MixtureModel.from_json(model.to_json())
        assert clone.truncation == model.truncation
        assert clone.concentration == model.concentration
        assert clone.seed == model.seed
        assert clone.n_points == model.n_points
        for a, b in zip(model.components, clone.components):
            assert b.weight == a.weight
            assert np.array_equal(a.mean, b.mean)
            assert np.array_equal(a.covariance, b.covariance)
