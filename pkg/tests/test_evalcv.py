import numpy as np
import pytest

from milcount.evalcv import (
    MetricsRow,
    aggregate_rows,
    dataset_metrics,
    make_splits,
    read_rows,
    read_split_csvs,
    slide_metrics,
    write_report,
    write_split_csvs,
)
from milcount.rngstreams import stream

# Published baseline CV results (seed, fold, val MAE, test MAE).
BASELINE_ROWS = [
    (1, 0, 5.96923, 4.826603),
    (1, 1, 5.498918, 5.844899),
    (1, 2, 4.464537, 6.729179),
    (1, 3, 5.728894, 5.510531),
    (1, 4, 5.477101, 5.172348),
    (2, 0, 6.054219, 4.85636),
    (2, 1, 5.486026, 5.957081),
    (2, 2, 4.483994, 6.686223),
    (2, 3, 5.831154, 5.625135),
    (2, 4, 5.576954, 5.315472),
    (3, 0, 6.038404, 4.878861),
    (3, 1, 5.474431, 5.807431),
    (3, 2, 4.501625, 6.74711),
    (3, 3, 5.733176, 5.579336),
    (3, 4, 5.493796, 5.267458),
]

# Published attention-model CV results; seed 3 reran fold 1 only.
ATTENTION_ROWS = [
    (1, 0, 15.7161, 7.9102),
    (1, 1, 13.1708, 16.709),
    (1, 2, 15.0519, 9.1602),
    (1, 3, 14.0468, 9.8206),
    (1, 4, 14.0468, 9.8206),
    (3, 1, 15.79, 7.9979),
]


def rows_of(tuples):
    return [MetricsRow(seed=s, fold=f, val_mae=v, test_mae=t) for s, f, v, t in tuples]


class TestSlideMetrics:
    def test_perfect_prediction(self):
        y = np.arange(14, dtype=float)
        mae, mse = slide_metrics(np.log1p(y), y)
        assert mae == pytest.approx(0.0, abs=1e-12)
        assert mse == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        # One bin predicted as count 15 against truth 0: mae 15/14, mse 225/14.
        pred = np.zeros(14)
        pred[3] = np.log1p(15.0)
        y = np.zeros(14)
        mae, mse = slide_metrics(pred, y)
        assert mae == pytest.approx(15.0 / 14.0, rel=1e-12)
        assert mse == pytest.approx(225.0 / 14.0, rel=1e-12)

    def test_negative_log_predictions_clamp_to_zero_counts(self):
        mae, _ = slide_metrics(np.full(14, -5.0), np.zeros(14))
        assert mae == 0.0

    def test_dataset_mean_over_slides(self):
        p1 = (np.log1p(np.full(14, 2.0)), np.zeros(14))  # mae 2
        p2 = (np.zeros(14), np.zeros(14))  # mae 0
        mae, mse = dataset_metrics([p1, p2])
        assert mae == pytest.approx(1.0)
        assert mse == pytest.approx(2.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dataset_metrics([])


def synthetic_ids(n=80, augmented=False, rng_seed=0):
    rng = stream(rng_seed, "init")
    ids = []
    for i in range(n):
        label = np.zeros(14, dtype=int)
        label[int(rng.integers(0, 14))] += int(rng.integers(1, 5))
        label[int(rng.integers(0, 14))] += 1
        ids.append(("img%03d" % i, label))
    if augmented:
        ids += [(sid + suf, lab) for sid, lab in list(ids) for suf in ("_b12", "_b08", "_blur3")]
    return ids


class TestSplits:
    def test_partition_per_fold(self):
        ids = synthetic_ids()
        all_ids = {sid for sid, _ in ids}
        splits = make_splits(ids, k=5, seed=0)
        assert len(splits) == 5
        for s in splits:
            parts = set(s.train) | set(s.val) | set(s.test)
            assert parts == all_ids
            assert len(s.train) + len(s.val) + len(s.test) == len(all_ids)
            assert not (set(s.train) & set(s.val))
            assert not (set(s.train) & set(s.test))
            assert not (set(s.val) & set(s.test))

    def test_each_slide_tested_once(self):
        ids = synthetic_ids()
        splits = make_splits(ids, k=5, seed=0)
        tested = [sid for s in splits for sid in s.test]
        assert sorted(tested) == sorted(sid for sid, _ in ids)

    def test_val_is_next_fold(self):
        ids = synthetic_ids()
        splits = make_splits(ids, k=5, seed=0)
        for i in range(5):
            assert set(splits[i].val) == set(splits[(i + 1) % 5].test)

    def test_augmented_follow_source(self):
        ids = synthetic_ids(augmented=True)
        splits = make_splits(ids, k=5, seed=3)
        for s in splits:
            for role in ("train", "val", "test"):
                members = set(getattr(s, role))
                for sid in members:
                    for suf in ("_b12", "_b08", "_blur3"):
                        if sid.endswith(suf):
                            assert sid[: -len(suf)] in members

    def test_stratification_balance(self):
        ids = synthetic_ids(n=100)
        splits = make_splits(ids, k=5, seed=0)
        # Round-robin dealing keeps each stratum within 1 across folds.
        strata = {}
        for sid, lab in ids:
            strata.setdefault(int(np.argmax(lab)), []).append(sid)
        fold_of = {sid: i for i, s in enumerate(splits) for sid in s.test}
        for members in strata.values():
            counts = np.bincount([fold_of[sid] for sid in members], minlength=5)
            assert counts.max() - counts.min() <= 1

    def test_deterministic_and_seed_sensitive(self):
        ids = synthetic_ids()
        a = make_splits(ids, k=5, seed=0)
        b = make_splits(ids, k=5, seed=0)
        c = make_splits(ids, k=5, seed=1)
        assert a == b
        assert a != c

    def test_orphan_augmented_rejected(self):
        ids = [("a", np.ones(14, dtype=int)), ("b_b12", np.ones(14, dtype=int))]
        with pytest.raises(ValueError, match="source"):
            make_splits(ids, k=1, seed=0)

    def test_too_few_slides(self):
        ids = synthetic_ids(n=3)
        with pytest.raises(ValueError, match="at least"):
            make_splits(ids, k=5, seed=0)

    def test_csv_roundtrip(self, tmp_path):
        splits = make_splits(synthetic_ids(augmented=True), k=5, seed=0)
        write_split_csvs(splits, str(tmp_path))
        assert read_split_csvs(str(tmp_path), k=5) == splits

    def test_csv_header_checked(self, tmp_path):
        write_split_csvs(make_splits(synthetic_ids(), k=5, seed=0), str(tmp_path))
        (tmp_path / "fold0_train.csv").write_text("nope\n")
        with pytest.raises(ValueError, match="header"):
            read_split_csvs(str(tmp_path), k=5)


class TestAggregation:
    def test_full_grid_seed_means(self):
        per_seed = aggregate_rows(rows_of(BASELINE_ROWS), group_by="seed")
        expected = {
            "seed1": (5.427736, 5.616712),
            "seed2": (5.486469, 5.688054),
            "seed3": (5.448286, 5.656039),
        }
        for g in per_seed:
            val, test = expected[g.group]
            assert abs(g.mean["val_mae"] - val) < 1e-5
            assert abs(g.mean["test_mae"] - test) < 1e-5
            assert g.n == 5 and g.std["val_mae"] is not None

    def test_full_grid_overall_is_mean_of_seed_means(self):
        (overall,) = aggregate_rows(rows_of(BASELINE_ROWS), group_by="overall")
        assert abs(overall.mean["val_mae"] - 5.454164) < 1e-5
        assert abs(overall.mean["test_mae"] - 5.653602) < 1e-5
        assert overall.n == 3

    def test_partial_grid_uses_primary_seed(self):
        (overall,) = aggregate_rows(rows_of(ATTENTION_ROWS), group_by="overall")
        assert round(overall.mean["val_mae"], 2) == 14.41
        assert round(overall.std["val_mae"], 2) == 0.99
        assert round(overall.mean["test_mae"], 2) == 10.68
        assert round(overall.std["test_mae"], 2) == 3.46
        assert overall.n == 5  # seed-3 rerun of fold 1 excluded

    def test_single_row_std_empty(self):
        (g,) = aggregate_rows(rows_of(ATTENTION_ROWS[:1]), group_by="seed")
        assert g.std["val_mae"] is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_rows([])


class TestReportIO:
    def test_roundtrip(self, tmp_path):
        rows = rows_of(BASELINE_ROWS)
        path = str(tmp_path / "report.csv")
        write_report(rows, path)
        back = read_rows(path)
        assert len(back) == len(rows)
        assert {(r.seed, r.fold) for r in back} == {(r.seed, r.fold) for r in rows}
        for r, b in zip(sorted(rows, key=lambda r: (r.seed, r.fold)), back):
            assert b.val_mae == pytest.approx(r.val_mae, abs=1e-6)
            assert np.isnan(b.val_mse)  # unreported metrics survive as NaN

    def test_summary_rows_present(self, tmp_path):
        path = str(tmp_path / "report.csv")
        write_report(rows_of(ATTENTION_ROWS), path)
        text = open(path).read()
        assert "mean,overall" in text
        assert "std,overall" in text
        assert "mean,seed1" in text
