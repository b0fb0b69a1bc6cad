import itertools

import numpy as np
import pytest

from scarseg.errors import FormatError
from scarseg.metrics import (
    DegenerateInputError,
    EvalReport,
    UndefinedStatisticError,
    bland_altman,
    dice_coeff,
    pearson_r,
    read_report_csv,
    scar_burden,
    wilcoxon_signed_rank,
    write_report_csv,
)


def brute_force_wilcoxon_p(diff):
    """Literal enumeration of all 2^n sign assignments of the averaged ranks."""
    diff = np.asarray(diff, dtype=float)
    diff = diff[diff != 0.0]
    n = len(diff)
    absd = np.abs(diff)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and absd[order[j + 1]] == absd[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    w_plus = ranks[diff > 0].sum()
    w_minus = ranks[diff < 0].sum()
    w = min(w_plus, w_minus)
    total = ranks.sum()
    low = high = 0
    for signs in itertools.product((0, 1), repeat=n):
        wp = sum(r for s, r in zip(signs, ranks) if s)
        if wp <= w:
            low += 1
        if wp >= total - w:
            high += 1
    return min(low + high, 2**n) / 2**n


class TestDice:
    def test_identical_masks(self):
        m = np.array([[1, 0], [1, 1]])
        assert dice_coeff(m, m) == 1.0

    def test_disjoint_masks(self):
        assert dice_coeff(np.array([1, 1, 0, 0]), np.array([0, 0, 1, 1])) == 0.0

    def test_hand_value(self):
        assert dice_coeff(np.array([1, 1, 0, 0]), np.array([1, 0, 0, 0])) == pytest.approx(2 / 3)

    def test_empty_conventions(self):
        z = np.zeros(4)
        assert dice_coeff(z, z) == 1.0
        assert dice_coeff(np.array([1, 0, 0, 0]), z) == 0.0
        assert dice_coeff(z, np.array([1, 0, 0, 0])) == 0.0

    def test_symmetric_and_permutation_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            a = rng.random(40) < 0.3
            b = rng.random(40) < 0.3
            assert dice_coeff(a, b) == dice_coeff(b, a)
            perm = rng.permutation(40)
            assert dice_coeff(a[perm], b[perm]) == dice_coeff(a, b)


class TestBurden:
    def test_hand_value(self):
        myo = np.zeros(16)
        myo[:10] = 1
        mask = np.zeros(16)
        mask[:3] = 1
        assert scar_burden(mask, myo) == pytest.approx(0.3)

    def test_zero_and_full(self):
        myo = np.ones(8)
        assert scar_burden(np.zeros(8), myo) == 0.0
        assert scar_burden(myo, myo) == 1.0

    def test_mask_clipped_to_myocardium(self):
        myo = np.array([1, 1, 0, 0])
        mask = np.array([1, 0, 1, 1])  # pixels outside M do not count
        assert scar_burden(mask, myo) == pytest.approx(0.5)

    def test_empty_myocardium_rejected(self):
        with pytest.raises(ValueError):
            scar_burden(np.zeros(4), np.zeros(4))


class TestPearson:
    def test_perfect_correlation(self):
        x = np.array([0.5, 1.0, 2.5, 4.0])
        assert pearson_r(x, x) == pytest.approx(1.0)
        assert pearson_r(x, -x) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert pearson_r([1, 2, 3], [1, 2, 4]) == pytest.approx(0.981981, abs=1e-5)

    def test_affine_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            x = rng.normal(size=12)
            y = rng.normal(size=12)
            base = pearson_r(x, y)
            a, b = float(rng.uniform(0.1, 5)), float(rng.normal())
            assert abs(pearson_r(a * x + b, y) - base) < 1e-12
            assert abs(pearson_r(x, a * y + b) - base) < 1e-12

    def test_constant_input_rejected(self):
        with pytest.raises(UndefinedStatisticError):
            pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            pearson_r([1.0], [2.0])


class TestBlandAltman:
    def test_identical_lists(self):
        assert bland_altman([0.1, 0.4, 0.7], [0.1, 0.4, 0.7]) == (0.0, 0.0, 0.0)

    def test_constant_difference(self):
        mean, lo, hi = bland_altman([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
        assert (mean, lo, hi) == (1.0, 1.0, 1.0)

    def test_hand_value_two_differences(self):
        mean, lo, hi = bland_altman([0.0, 2.0], [0.0, 0.0])
        assert mean == pytest.approx(1.0)
        assert lo == pytest.approx(-1.77186, abs=1e-4)
        assert hi == pytest.approx(3.77186, abs=1e-4)

    def test_ordering_invariant(self):
        rng = np.random.default_rng(2)
        gt = rng.random(20)
        pred = rng.random(20)
        mean, lo, hi = bland_altman(gt, pred)
        assert lo <= mean <= hi

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            bland_altman([1.0], [0.5])


class TestWilcoxon:
    def test_all_positive_n5(self):
        res = wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5)
        assert res.method == "exact"
        assert res.n_effective == 5
        assert res.statistic == 0.0
        assert res.p_value == 0.0625

    def test_all_positive_n6(self):
        res = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [0] * 6)
        assert res.p_value == 0.03125

    def test_identical_inputs_degenerate(self):
        with pytest.raises(DegenerateInputError):
            wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])

    def test_zero_differences_dropped(self):
        res = wilcoxon_signed_rank([1.0, 2.0, 5.0, 5.0], [0.0, 0.0, 5.0, 5.0])
        assert res.n_effective == 2

    def test_exact_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(150):
            n = int(rng.integers(1, 13))
            a = rng.integers(-4, 5, size=n).astype(float)  # integer diffs force ties
            b = np.zeros(n)
            if not np.any(a != 0):
                continue
            res = wilcoxon_signed_rank(a, b)
            assert res.method == "exact"
            assert res.p_value == brute_force_wilcoxon_p(a)

    def test_normal_approximation_close_to_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(40):
            n = int(rng.integers(15, 21))
            d = rng.normal(size=n)
            d[d == 0] = 0.5
            exact = wilcoxon_signed_rank(d, np.zeros(n), method="exact")
            approx = wilcoxon_signed_rank(d, np.zeros(n), method="approx")
            assert approx.method == "normal-approximation"
            assert abs(exact.p_value - approx.p_value) < 0.01

    def test_auto_switches_to_approximation(self):
        rng = np.random.default_rng(5)
        d = rng.normal(size=30)
        res = wilcoxon_signed_rank(d, np.zeros(30))
        assert res.method == "normal-approximation"
        assert 0.0 < res.p_value <= 1.0

    def test_p_capped_at_one(self):
        # symmetric single pair: W = 0, both tails cover everything
        res = wilcoxon_signed_rank([1.0], [0.0])
        assert res.p_value == 1.0

    def test_exact_refused_above_25(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank(np.arange(1.0, 27.0), np.zeros(26), method="exact")

    def test_bad_method(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([1.0], [0.0], method="bogus")


class TestEvalReport:
    def _report(self):
        report = EvalReport()
        report.add(0, 0.8, 0.2, 0.25)
        report.add(1, 0.9, 0.1, 0.05)
        report.add(2, 0.7, 0.3, 0.35)
        return report

    def test_aggregates_recompute_from_rows(self):
        report = self._report()
        agg = report.aggregates()
        assert agg["median_dice"] == 0.8
        assert agg["mean_dice"] == pytest.approx(0.8)
        assert agg["pearson_r"] == pytest.approx(pearson_r(report.gt_burdens(),
                                                           report.pred_burdens()))
        mean, lo, hi = bland_altman(report.gt_burdens(), report.pred_burdens())
        assert agg["ba_mean_diff"] == mean
        assert (agg["ba_loa_low"], agg["ba_loa_high"]) == (lo, hi)

    def test_csv_roundtrip(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        back, agg = read_report_csv(path)
        assert [(r.sample_id, r.dice, r.gt_burden, r.pred_burden) for r in back.rows] == \
            [(r.sample_id, r.dice, r.gt_burden, r.pred_burden) for r in report.rows]
        assert agg == report.aggregates()

    def test_degenerate_pearson_written_empty(self, tmp_path):
        report = EvalReport()
        report.add(0, 1.0, 0.2, 0.2)
        report.add(1, 1.0, 0.2, 0.2)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        assert ",pearson_r,\n" in path.read_text().replace("#agg", "\n#agg")
        _, agg = read_report_csv(path)
        assert agg["pearson_r"] is None

    def test_malformed_rows_rejected(self, tmp_path):
        path = tmp_path / "report.csv"
        path.write_text("id,dice,gt_burden,pred_burden\n1,0.5,0.1\n")
        with pytest.raises(FormatError, match="line 2"):
            read_report_csv(path)
        path.write_text("wrong,header\n")
        with pytest.raises(FormatError, match="line 1"):
            read_report_csv(path)
