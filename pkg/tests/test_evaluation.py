import numpy as np
import pytest

from oracles import margin_predict_oracle
from taillight import evaluation
from taillight.errors import IncompleteMatrix, SingleTask, TooFewClasses


class TestDecisionMargin:
    def test_simple(self):
        assert evaluation.decision_margin([0.7, 0.2, 0.1]) == pytest.approx(0.5)

    def test_tie(self):
        assert evaluation.decision_margin([0.5, 0.5]) == 0.0

    def test_value_not_index_difference(self):
        assert evaluation.decision_margin([3.1, 2.0, 2.9]) == pytest.approx(0.2)

    def test_too_few(self):
        with pytest.raises(TooFewClasses):
            evaluation.decision_margin([1.0])


class TestPredict:
    def test_single_class(self):
        g = np.random.default_rng(0).normal(size=(2, 1, 4))
        out = evaluation.predict_batch(np.ones(4), g, np.array([[0.5, 0.5]]), [3])
        assert out.tolist() == [3]

    def test_identical_rows_reduce_to_argmax(self):
        rng = np.random.default_rng(1)
        g = rng.normal(size=(2, 4, 8))
        rows = np.tile([0.25, 0.75], (4, 1))
        x = rng.normal(size=(6, 8))
        got = evaluation.predict_batch(x, g, rows, [0, 1, 2, 3])
        shared_logits = np.einsum("k,kcd,nd->nc", rows[0], g, x)
        np.testing.assert_array_equal(got, np.argmax(shared_logits, axis=1))

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(2)
        ids = [0, 1, 2]
        g = rng.normal(size=(3, 3, 5))
        rows = {i: np.abs(rng.normal(size=3)) for i in ids}
        for cid in ids:
            rows[cid] /= rows[cid].sum()
        row_matrix = np.stack([rows[c] for c in ids])
        for _ in range(50):
            x = rng.normal(size=5)
            want = margin_predict_oracle(x, g, rows)
            got = evaluation.predict_batch(x, g, row_matrix, ids)[0]
            assert got == want


class TestMarginDisagreement:
    def test_single_class_is_zero(self):
        g = np.ones((1, 1, 3))
        assert evaluation.margin_disagreement_rate(np.ones((4, 3)), g, np.ones((1, 1)), [0]) == 0.0

    def test_identical_rows_count_foreign_argmax(self):
        # One layer, two orthogonal class vectors, both rows identical:
        # the margin winner is always row 0, so samples of class 1 disagree.
        g = np.eye(2)[None, :, :]
        rows = np.ones((2, 1))
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        rate = evaluation.margin_disagreement_rate(x, g, rows, [0, 1])
        assert rate == 0.5


class TestAccuracyMetrics:
    def _matrix(self, entries, totals):
        t = len(totals)
        m = evaluation.AccuracyMatrix(task_count=t)
        for (after, on), acc in entries.items():
            m.record(after, on, int(round(acc * totals[on])), totals[on])
        return m

    def test_a_last_single_task(self):
        m = self._matrix({(0, 0): 0.5}, [4])
        assert evaluation.a_last(m) == 0.5

    def test_a_last_all_correct(self):
        m = self._matrix({(0, 0): 1.0, (1, 0): 1.0, (1, 1): 1.0}, [5, 5])
        assert evaluation.a_last(m) == 1.0

    def test_a_last_is_sample_weighted(self):
        # 10-sample task at 0.9 and 30-sample task at 0.5:
        # micro average = (9 + 15) / 40 = 0.6
        m = self._matrix({(0, 0): 0.9, (1, 0): 0.9, (1, 1): 0.5}, [10, 30])
        assert evaluation.a_last(m) == pytest.approx(0.6)
        per_task = [m.accuracy(1, i) for i in range(2)]
        weights = np.array([10, 30]) / 40
        assert evaluation.a_last(m) == pytest.approx(float(np.dot(per_task, weights)))

    def test_a_last_incomplete(self):
        m = evaluation.AccuracyMatrix(task_count=2)
        m.record(0, 0, 1, 2)
        with pytest.raises(IncompleteMatrix):
            evaluation.a_last(m)

    def test_f_avg_two_tasks(self):
        m = self._matrix({(0, 0): 0.8, (1, 0): 0.7, (1, 1): 0.9}, [10, 10])
        assert evaluation.f_avg(m) == pytest.approx(0.1)

    def test_f_avg_clamped_at_zero(self):
        m = self._matrix({(0, 0): 0.6, (1, 0): 0.8, (1, 1): 0.9}, [10, 10])
        assert evaluation.f_avg(m) == 0.0

    def test_f_avg_three_tasks(self):
        m = self._matrix(
            {
                (0, 0): 0.9,
                (1, 0): 0.85, (1, 1): 0.9,
                (2, 0): 0.8, (2, 1): 0.6, (2, 2): 0.95,
            },
            [10, 10, 10],
        )
        # drops: task0 max(0.9, 0.85) - 0.8 = 0.1; task1 0.9 - 0.6 = 0.3
        assert evaluation.f_avg(m) == pytest.approx(0.2)

    def test_f_avg_single_task(self):
        with pytest.raises(SingleTask):
            evaluation.f_avg(self._matrix({(0, 0): 1.0}, [4]))


class TestHeadTailBreakdown:
    def test_partition_and_deltas(self):
        acc = {0: 0.9, 1: 0.5, 2: 0.7}
        counts = {0: 100, 1: 3, 2: 5}
        base = {0: 0.9, 1: 0.3, 2: 0.6}
        got = evaluation.head_tail_breakdown(acc, counts, tail_threshold=10, baseline_accuracy=base)
        assert got.tail_ids == {1, 2}
        assert got.head_accuracy == pytest.approx(0.9)
        assert got.tail_accuracy == pytest.approx(0.6)
        assert got.deltas == {0: pytest.approx(0.0), 1: pytest.approx(0.2), 2: pytest.approx(0.1)}

    def test_no_tail_classes(self):
        got = evaluation.head_tail_breakdown({0: 1.0}, {0: 50}, tail_threshold=10)
        assert got.tail_accuracy is None
        assert got.head_accuracy == 1.0

    def test_baseline_equals_candidate(self):
        acc = {0: 0.4, 1: 0.6}
        got = evaluation.head_tail_breakdown(acc, {0: 5, 1: 50}, 10, baseline_accuracy=acc)
        assert all(d == 0.0 for d in got.deltas.values())


class TestCsvRoundTrips:
    def test_per_class(self, tmp_path):
        records = [
            {"id": 0, "label": "ant", "count": 100, "is_tail": False,
             "acc": 1 / 3, "delta": -0.125},
            {"id": 1, "label": "bee", "count": 2, "is_tail": True,
             "acc": 0.7071067811865476, "delta": None},
        ]
        path = tmp_path / "per_class.csv"
        evaluation.write_per_class_csv(path, records)
        assert evaluation.read_per_class_csv(path) == records

    def test_weight_centers(self, tmp_path):
        path = tmp_path / "centers.csv"
        evaluation.write_weight_centers_csv(path, {0: 0.1, 3: 2 / 3})
        import csv as csv_mod

        with path.open() as fh:
            rows = list(csv_mod.DictReader(fh))
        assert float(rows[1]["center"]) == 2 / 3

    def test_similarity_matrix(self, tmp_path):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(3, 3))
        path = tmp_path / "sim.csv"
        evaluation.write_text_similarity_csv(path, [0, 1, 2], m)
        back = evaluation.read_matrix_csv(path)
        np.testing.assert_array_equal(back, m)
