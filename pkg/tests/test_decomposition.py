"""Variance decomposition: bridge estimator, regional routes, bias, ledger IO."""

import math

import numpy as np
import pytest

from expovar.decomposition import (
    BiasReport,
    Ledger,
    bias_report,
    decompose_bridge,
    decompose_regional,
    load_ledger_csv,
    write_ledger_csv,
)
from expovar.errors import DataError


def one_bridge_ledger(codes, losses, catalog=("c0", "c1", "c2", "c3")):
    codes = np.asarray(codes).reshape(-1, 1)
    losses = np.asarray(losses, dtype=float).reshape(-1, 1)
    return Ledger(
        asset_ids=("B001",),
        class_ids=(tuple(catalog),),
        class_codes=codes,
        losses=losses,
    )


class TestBridgeDecomposition:
    def test_hand_trace_four_realizations(self):
        # classes (A,A,B,B), losses (1,3,5,7): conditional means 2 and 6 with
        # ddof-1 variances 2 and 2, weights one half each
        led = one_bridge_ledger([0, 0, 1, 1], [1.0, 3.0, 5.0, 7.0], ("A", "B"))
        d = decompose_bridge(led, "B001")
        assert d.mean == 4.0
        assert d.baseline_var == 2.0
        assert d.exposure_var == 4.0
        assert d.total_var == 6.0
        assert d.scope == "B001"
        by_id = {c.class_id: c for c in d.class_stats}
        assert by_id["A"].pi == 0.5 and by_id["B"].pi == 0.5
        assert by_id["A"].mean == 2.0 and by_id["B"].mean == 6.0
        assert by_id["A"].var == 2.0 and by_id["B"].var == 2.0
        assert d.diagnostics["single_realization_classes"] == 0

    def test_divisor_convention_vs_direct_variance(self):
        # the estimator total (6.0) deliberately differs from the divisor-R
        # direct variance (5.0) at small R; they reconcile as R grows
        losses = np.array([1.0, 3.0, 5.0, 7.0])
        led = one_bridge_ledger([0, 0, 1, 1], losses, ("A", "B"))
        d = decompose_bridge(led, "B001")
        assert float(np.var(losses)) == 5.0
        assert d.total_var == 6.0

    def test_two_point_mixture_exposure(self):
        rng = np.random.default_rng(7)
        r = 100_000
        codes = (rng.random(r) < 0.7).astype(int)
        losses = np.where(codes == 1, 20.0, 10.0)
        d = decompose_bridge(one_bridge_ledger(codes, losses, ("lo", "hi")), "B001")
        assert d.baseline_var == 0.0
        assert d.exposure_var == pytest.approx(0.3 * 0.7 * (20.0 - 10.0) ** 2, rel=0.02)

    def test_single_class_limit(self):
        rng = np.random.default_rng(11)
        losses = rng.normal(5.0, 2.0, size=500)
        d = decompose_bridge(one_bridge_ledger(np.zeros(500, int), losses, ("only",)), "B001")
        assert d.exposure_var == 0.0
        assert d.baseline_var == pytest.approx(float(np.var(losses, ddof=1)), rel=1e-12)
        assert d.mean == pytest.approx(float(losses.mean()), rel=1e-12)

    def test_single_realization_class_gets_zero_variance_and_diagnostic(self):
        led = one_bridge_ledger([0, 0, 1], [1.0, 3.0, 9.0], ("A", "B"))
        d = decompose_bridge(led, "B001")
        by_id = {c.class_id: c for c in d.class_stats}
        assert by_id["B"].var == 0.0
        assert by_id["B"].count == 1
        assert d.diagnostics["single_realization_classes"] == 1

    def test_too_few_realizations(self):
        led = one_bridge_ledger([0], [1.0], ("A",))
        with pytest.raises(DataError, match="at least 2"):
            decompose_bridge(led, "B001")

    def test_unknown_asset(self):
        led = one_bridge_ledger([0, 0], [1.0, 2.0], ("A",))
        with pytest.raises(DataError, match="B999"):
            decompose_bridge(led, "B999")

    def test_consistency_with_direct_variance_at_large_r(self):
        rng = np.random.default_rng(23)
        r = 1_000_000
        probs = np.array([0.2, 0.3, 0.5])
        mus = np.array([1.0, 4.0, 10.0])
        sds = np.array([0.5, 2.0, 1.0])
        codes = rng.choice(3, size=r, p=probs)
        losses = mus[codes] + sds[codes] * rng.standard_normal(r)
        d = decompose_bridge(one_bridge_ledger(codes, losses), "B001")
        direct = float(np.var(losses, ddof=1))
        assert abs(d.total_var - direct) / direct < 0.01

    def test_identity_and_nonnegativity_random(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            r = int(rng.integers(2, 40))
            k = int(rng.integers(1, 5))
            codes = rng.integers(0, k, size=r)
            losses = rng.normal(0.0, 3.0, size=r)
            d = decompose_bridge(one_bridge_ledger(codes, losses), "B001")
            assert d.total_var == d.baseline_var + d.exposure_var
            assert d.baseline_var >= 0.0
            assert d.exposure_var >= 0.0
            assert math.isclose(sum(c.pi for c in d.class_stats), 1.0, abs_tol=1e-12)


def two_bridge_ledger(codes1, codes2, losses1, losses2):
    return Ledger(
        asset_ids=("B001", "B002"),
        class_ids=(("a0", "a1"), ("b0", "b1")),
        class_codes=np.column_stack([codes1, codes2]),
        losses=np.column_stack([losses1, losses2]),
    )


class TestRegionalDecomposition:
    def test_independent_classes_have_near_zero_cross_terms(self):
        rng = np.random.default_rng(41)
        r = 100_000
        c1 = (rng.random(r) < 0.4).astype(int)
        c2 = (rng.random(r) < 0.6).astype(int)
        vals1 = np.array([3.0, 9.0])
        vals2 = np.array([2.0, 12.0])
        led = two_bridge_ledger(c1, c2, vals1[c1], vals2[c2])
        decomp, report = decompose_regional(led, method="pairwise")
        # deterministic losses per class: every joint cell is constant, so the
        # conditional covariance vanishes identically
        assert report.baseline_cross_sum == 0.0
        # exposure cross term is a sample covariance of two independent series
        se = math.sqrt(float(np.var(vals1[c1]) * np.var(vals2[c2])) / r)
        assert abs(report.exposure_cross_sum) <= 2.0 * 3.0 * se
        assert decomp.total_var == decomp.baseline_var + decomp.exposure_var

    def test_shared_field_adds_twice_the_covariance(self):
        rng = np.random.default_rng(43)
        r = 20_000
        shared = rng.standard_normal(r)
        y1 = 10.0 + shared + 0.5 * rng.standard_normal(r)
        y2 = 20.0 + shared + 0.5 * rng.standard_normal(r)
        led = Ledger(
            asset_ids=("B001", "B002"),
            class_ids=(("only",), ("only",)),
            class_codes=np.zeros((r, 2), dtype=int),
            losses=np.column_stack([y1, y2]),
        )
        decomp, report = decompose_regional(led, method="pairwise")
        assert decomp.exposure_var == 0.0
        cov = float(np.cov(y1, y2, ddof=1)[0, 1])
        assert report.baseline_cross_sum == pytest.approx(2.0 * cov, rel=1e-9)
        expected = report.per_bridge_baseline_sum + 2.0 * cov
        assert decomp.baseline_var == pytest.approx(expected, rel=1e-9)
        # against the population covariance of 1.0 from the shared draw
        se = math.sqrt((1.25 * 1.25 + 1.0) / r)
        assert abs(cov - 1.0) <= 3.0 * se

    def test_brute_force_joint_enumeration_three_bridges(self):
        rng = np.random.default_rng(47)
        r = 1_000_000
        # dependent joint class distribution over 2^3 combos
        weights = np.arange(1.0, 9.0)
        p_joint = weights / weights.sum()
        combos = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
        idx = rng.choice(8, size=r, p=p_joint)
        codes = combos[idx]
        mu = np.array([[1.0, 5.0], [2.0, 8.0], [3.0, 4.0]])
        sd = np.array([[0.5, 1.5], [1.0, 0.3], [0.7, 1.2]])
        z0 = rng.standard_normal(r)
        losses = np.empty((r, 3))
        for b in range(3):
            zb = rng.standard_normal(r)
            cb = codes[:, b]
            losses[:, b] = mu[b, cb] + sd[b, cb] * (0.6 * z0 + 0.8 * zb)
        led = Ledger(
            asset_ids=("B1", "B2", "B3"),
            class_ids=(("x", "y"),) * 3,
            class_codes=codes,
            losses=losses,
        )
        # brute force over the 8 joint classes with in-cell analytics
        cond_mean = np.array([mu[(0, 1, 2), c].sum() for c in combos])
        exposure_true = float(
            p_joint @ (cond_mean - p_joint @ cond_mean) ** 2
        )
        base_true = 0.0
        for p, c in zip(p_joint, combos):
            s = sd[(0, 1, 2), c]
            var_cells = float((s**2).sum())
            cov_cells = 0.36 * (s[0] * s[1] + s[0] * s[2] + s[1] * s[2])
            base_true += p * (var_cells + 2.0 * cov_cells)
        for method in ("pairwise", "direct"):
            decomp, report = decompose_regional(led, method=method)
            assert decomp.exposure_var == pytest.approx(exposure_true, rel=0.02)
            assert decomp.baseline_var == pytest.approx(base_true, rel=0.02)
            assert report.method == method

    def test_single_asset_matches_bridge_estimator_exactly(self):
        rng = np.random.default_rng(53)
        codes = rng.integers(0, 3, size=200)
        losses = rng.normal(4.0, 2.0, size=200)
        led = one_bridge_ledger(codes, losses)
        ref = decompose_bridge(led, "B001")
        for method in ("pairwise", "direct"):
            decomp, _ = decompose_regional(led, method=method)
            assert decomp.mean == ref.mean
            assert decomp.baseline_var == ref.baseline_var
            assert decomp.exposure_var == ref.exposure_var
            assert decomp.total_var == ref.total_var

    def test_route_agreement_on_moderate_sample(self):
        rng = np.random.default_rng(59)
        r = 50_000
        c1 = rng.integers(0, 2, size=r)
        c2 = rng.integers(0, 2, size=r)
        y1 = np.array([1.0, 4.0])[c1] + 0.3 * rng.standard_normal(r)
        y2 = np.array([2.0, 3.0])[c2] + 0.3 * rng.standard_normal(r)
        led = two_bridge_ledger(c1, c2, y1, y2)
        d_pair, _ = decompose_regional(led, method="pairwise")
        d_dir, _ = decompose_regional(led, method="direct")
        assert d_dir.baseline_var == pytest.approx(d_pair.baseline_var, rel=0.02)
        assert d_dir.exposure_var == pytest.approx(d_pair.exposure_var, rel=0.02)

    def test_auto_selects_pairwise_for_small_portfolios(self):
        led = two_bridge_ledger([0, 1, 0], [1, 0, 1], [1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        _, report = decompose_regional(led, method="auto")
        assert report.method == "pairwise"

    def test_permutation_invariance(self):
        rng = np.random.default_rng(61)
        r = 500
        c1 = rng.integers(0, 2, size=r)
        c2 = rng.integers(0, 2, size=r)
        y1 = rng.normal(size=r)
        y2 = rng.normal(size=r)
        led = two_bridge_ledger(c1, c2, y1, y2)
        perm = rng.permutation(r)
        led_p = two_bridge_ledger(c1[perm], c2[perm], y1[perm], y2[perm])
        for method in ("pairwise", "direct"):
            a, _ = decompose_regional(led, method=method)
            b, _ = decompose_regional(led_p, method=method)
            assert a.mean == pytest.approx(b.mean, rel=1e-12)
            assert a.baseline_var == pytest.approx(b.baseline_var, rel=1e-12)
            assert a.exposure_var == pytest.approx(b.exposure_var, rel=1e-12)

    def test_nonnegativity_random_portfolios(self):
        rng = np.random.default_rng(67)
        for _ in range(15):
            r = int(rng.integers(3, 60))
            b = int(rng.integers(1, 5))
            codes = rng.integers(0, 3, size=(r, b))
            losses = rng.normal(0.0, 2.0, size=(r, b))
            led = Ledger(
                asset_ids=tuple(f"B{j}" for j in range(b)),
                class_ids=(("u", "v", "w"),) * b,
                class_codes=codes,
                losses=losses,
            )
            for method in ("pairwise", "direct"):
                d, _ = decompose_regional(led, method=method)
                assert d.baseline_var >= 0.0
                assert d.exposure_var >= 0.0
                assert d.total_var == d.baseline_var + d.exposure_var

    def test_small_joint_cells_counted(self):
        led = two_bridge_ledger([0, 0, 1], [0, 1, 1], [1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        _, report = decompose_regional(led, method="pairwise")
        # all three occupied joint cells hold a single realization each
        assert report.small_cell_count == 3

    def test_unknown_method(self):
        led = two_bridge_ledger([0, 1], [1, 0], [1.0, 2.0], [3.0, 4.0])
        with pytest.raises(DataError, match="unknown decomposition method"):
            decompose_regional(led, method="exact")


class TestBiasReport:
    @staticmethod
    def dyadic_ledger(rng, shift=0.0):
        r = 8
        codes = rng.integers(0, 2, size=(r, 2))
        losses = rng.integers(0, 64, size=(r, 2)).astype(float) / 8.0 + shift
        return codes, losses

    def test_identical_ledgers_have_zero_bias(self):
        rng = np.random.default_rng(71)
        codes, losses = self.dyadic_ledger(rng)
        led = Ledger(("B1", "B2"), (("a", "b"), ("a", "b")), codes, losses)
        rep = bias_report(led, led)
        assert rep.regional == 0.0
        assert all(v == 0.0 for v in rep.per_asset.values())
        assert isinstance(rep, BiasReport)

    def test_translated_truth_gives_exact_negative_shift(self):
        rng = np.random.default_rng(73)
        codes, losses = self.dyadic_ledger(rng)
        imputed = Ledger(("B1", "B2"), (("a", "b"),) * 2, codes, losses)
        shifted = losses.copy()
        shifted[:, 0] += 0.5
        truth = Ledger(("B1", "B2"), (("a", "b"),) * 2, codes, shifted)
        rep = bias_report(imputed, truth)
        assert rep.regional == -0.5
        assert rep.per_asset["B1"] == -0.5
        assert rep.per_asset["B2"] == 0.0

    def test_analytic_two_class_bias(self):
        rng = np.random.default_rng(79)
        r = 200_000
        codes_imp = (rng.random(r) < 0.5).astype(int)
        losses_imp = np.where(codes_imp == 1, 20.0, 10.0) + 0.1 * rng.standard_normal(r)
        codes_tru = np.ones(r, dtype=int)
        losses_tru = 20.0 + 0.1 * rng.standard_normal(r)
        imputed = Ledger(("B1",), (("lo", "hi"),), codes_imp.reshape(-1, 1),
                         losses_imp.reshape(-1, 1))
        truth = Ledger(("B1",), (("lo", "hi"),), codes_tru.reshape(-1, 1),
                       losses_tru.reshape(-1, 1))
        rep = bias_report(imputed, truth)
        se = math.sqrt(25.0 / r) * 2  # dominated by the mixture spread
        assert abs(rep.regional - (-5.0)) <= 3.0 * se + 0.01
        assert rep.regional_pct == pytest.approx(-25.0, abs=0.5)

    def test_asset_set_mismatch(self):
        rng = np.random.default_rng(83)
        codes, losses = self.dyadic_ledger(rng)
        a = Ledger(("B1", "B2"), (("a", "b"),) * 2, codes, losses)
        b = Ledger(("B1", "B3"), (("a", "b"),) * 2, codes, losses)
        with pytest.raises(DataError, match="identical asset sets"):
            bias_report(a, b)

    def test_seed_mismatch(self):
        rng = np.random.default_rng(89)
        codes, losses = self.dyadic_ledger(rng)
        a = Ledger(("B1", "B2"), (("a", "b"),) * 2, codes, losses, seed=1)
        b = Ledger(("B1", "B2"), (("a", "b"),) * 2, codes, losses, seed=2)
        with pytest.raises(DataError, match="one seed"):
            bias_report(a, b)


class TestLedgerIO:
    def test_round_trip_preserves_decomposition(self, tmp_path):
        rng = np.random.default_rng(97)
        r = 50
        codes = rng.integers(0, 2, size=(r, 3))
        losses = rng.normal(10.0, 3.0, size=(r, 3))
        led = Ledger(
            asset_ids=("B1", "B2", "B3"),
            class_ids=(("0a1b2c3d", "deadbeef"),) * 3,
            class_codes=codes,
            losses=losses,
        )
        path = tmp_path / "ledger.csv"
        write_ledger_csv(led, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + r * 3
        assert lines[0] == "realization_id,asset_id,class_hash,loss"
        back = load_ledger_csv(path)
        assert back.asset_ids == led.asset_ids
        assert np.array_equal(back.losses, led.losses)
        # reloaded catalogs renumber classes by first appearance, which only
        # reorders the final reductions
        for method in ("pairwise", "direct"):
            a, _ = decompose_regional(led, method=method)
            b, _ = decompose_regional(back, method=method)
            assert a.baseline_var == pytest.approx(b.baseline_var, rel=1e-12)
            assert a.exposure_var == pytest.approx(b.exposure_var, rel=1e-12)

    def test_load_rejects_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("realization_id,asset_id,loss\n0,B1,1.0\n")
        with pytest.raises(DataError, match="class_hash"):
            load_ledger_csv(path)

    def test_load_rejects_missing_realization(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text(
            "realization_id,asset_id,class_hash,loss\n"
            "0,B1,aa,1.0\n2,B1,aa,2.0\n"
        )
        with pytest.raises(DataError, match="B1"):
            load_ledger_csv(path)

    def test_ledger_validation(self):
        with pytest.raises(DataError, match="shapes disagree"):
            Ledger(("B1",), (("a",),), np.zeros((3, 1), int), np.zeros((4, 1)))
        with pytest.raises(DataError, match="duplicate"):
            Ledger(("B1", "B1"), (("a",),) * 2, np.zeros((2, 2), int), np.zeros((2, 2)))
        with pytest.raises(DataError, match="outside catalog"):
            Ledger(("B1",), (("a",),), np.ones((2, 1), int), np.zeros((2, 1)))
        with pytest.raises(DataError, match="non-finite"):
            Ledger(("B1",), (("a",),), np.zeros((2, 1), int),
                   np.array([[1.0], [np.nan]]))
