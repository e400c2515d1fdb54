import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tss import eval as eval_mod
from tss import tensor
from tss.eval import ResultMatrix, RunResult


def brute_force_macro_f1(preds, labels, n_classes):
    """Confusion-matrix oracle with explicit per-sample loops."""
    conf = [[0] * n_classes for _ in range(n_classes)]
    for p, t in zip(preds, labels):
        conf[t][p] += 1
    total = 0.0
    for c in range(n_classes):
        tp = conf[c][c]
        fp = sum(conf[r][c] for r in range(n_classes)) - tp
        fn = sum(conf[c]) - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return total / n_classes


class TestMacroF1:
    def test_perfect(self):
        y = np.array([0, 1, 2, 1])
        assert eval_mod.macro_f1(y, y, 3) == 1.0

    def test_collapsed_binary_predictor(self):
        preds = np.zeros(10, dtype=int)
        labels = np.array([0, 1] * 5)
        assert abs(eval_mod.macro_f1(preds, labels, 2) - 1 / 3) < 1e-12

    def test_matches_brute_force_oracle(self):
        rng = tensor.make_rng(1)
        preds = rng.integers(0, 4, size=200)
        labels = rng.integers(0, 4, size=200)
        got = eval_mod.macro_f1(preds, labels, 4)
        assert abs(got - brute_force_macro_f1(preds, labels, 4)) < 1e-12

    def test_absent_class_counts_as_zero(self):
        preds = np.array([0, 0])
        labels = np.array([0, 0])
        # classes 1 and 2 absent from both: F1 contribution 0, still averaged
        assert abs(eval_mod.macro_f1(preds, labels, 3) - 1 / 3) < 1e-12

    @given(st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_sample_order_invariant(self, seed):
        rng = tensor.make_rng(seed)
        preds = rng.integers(0, 3, size=50)
        labels = rng.integers(0, 3, size=50)
        perm = rng.permutation(50)
        assert eval_mod.macro_f1(preds, labels, 3) == \
            eval_mod.macro_f1(preds[perm], labels[perm], 3)

    def test_relabeling_equivariant(self):
        rng = tensor.make_rng(42)
        preds = rng.integers(0, 3, size=60)
        labels = rng.integers(0, 3, size=60)
        relab = np.array([2, 0, 1])
        assert abs(eval_mod.macro_f1(preds, labels, 3)
                   - eval_mod.macro_f1(relab[preds], relab[labels], 3)) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            eval_mod.macro_f1(np.zeros(0, int), np.zeros(0, int), 2)


def matrix(rows, metric="accuracy"):
    m = ResultMatrix(metric)
    for r in rows:
        m.add_row(r)
    return m


class TestForgettingRate:
    def test_worked_example_drop(self):
        # task 1 scores 0.5 at its own time and 0.3 after the final task
        m = matrix([[0.5], [0.3, 0.9]])
        assert eval_mod.forgetting_rate(m) == 0.2

    def test_worked_example_backward_transfer(self):
        m = matrix([[0.5], [0.82, 0.9]])
        assert abs(eval_mod.forgetting_rate(m) - (-0.32)) < 1e-12

    def test_constant_columns_give_exact_zero(self):
        m = matrix([[0.7], [0.7, 0.6], [0.7, 0.6, 0.8]])
        assert eval_mod.forgetting_rate(m) == 0.0

    def test_mean_over_earlier_tasks(self):
        m = matrix([[0.5], [0.5, 0.6], [0.3, 0.5, 0.9]])
        assert abs(eval_mod.forgetting_rate(m) - (0.2 + 0.1) / 2) < 1e-15
        assert eval_mod.per_task_forgetting(m) == pytest.approx([0.2, 0.1])

    def test_single_task_rejected(self):
        with pytest.raises(ValueError):
            eval_mod.forgetting_rate(matrix([[0.5]]))

    def test_bad_row_length_rejected(self):
        m = ResultMatrix("accuracy")
        m.add_row([0.5])
        with pytest.raises(ValueError):
            m.add_row([0.5, 0.5, 0.5])


class TestTransferDelta:
    def test_self_comparison_is_zero(self):
        one = matrix([[0.4], [0.4, 0.5], [0.4, 0.5, 0.6]])
        deltas, mean = eval_mod.transfer_delta(one, one)
        assert deltas == [0.0, 0.0, 0.0]
        assert mean == 0.0

    def test_per_task_length(self):
        a = matrix([[0.5], [0.6, 0.7]])
        b = matrix([[0.4], [0.4, 0.6]])
        deltas, mean = eval_mod.transfer_delta(a, b)
        assert len(deltas) == 2
        assert deltas == pytest.approx([0.2, 0.1])
        assert mean == pytest.approx(0.15)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            eval_mod.transfer_delta(matrix([[0.5]]), matrix([[0.5], [0.5, 0.5]]))


def run_result(variant, seed, rows, kind="similar", metric="accuracy"):
    return RunResult(
        variant=variant, stream_kind=kind,
        stream_config={"kind": kind, "n_tasks": len(rows), "seed": seed},
        seed=seed, matrices={metric: matrix(rows, metric)},
    )


class TestReports:
    def test_single_variant_single_task_csv(self, tmp_path):
        path = tmp_path / "report.csv"
        eval_mod.write_csv([run_result("tss", 1, [[0.75]])], path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == eval_mod.CSV_COLUMNS
        assert len(rows) == 2
        assert len(rows[1]) == 8

    def test_csv_schema_and_delta_column(self, tmp_path):
        runs = [run_result("tss", 1, [[0.5], [0.6, 0.7]]),
                run_result("one", 1, [[0.4], [0.4, 0.6]])]
        path = tmp_path / "report.csv"
        eval_mod.write_csv(runs, path)
        rows = list(csv.reader(path.open()))
        assert all(len(r) == 8 for r in rows)
        tss_rows = [r for r in rows if r[0] == "tss"]
        assert [float(r[7]) for r in tss_rows] == pytest.approx([0.2, 0.1])
        one_rows = [r for r in rows if r[0] == "one"]
        assert all(r[7] == "" for r in one_rows)

    def test_json_round_trips_matrices(self, tmp_path):
        run = run_result("tss", 3, [[0.5], [0.6, 0.7]])
        out = eval_mod.emit_report([run], tmp_path)
        loaded = json.loads(out["results"].read_text())
        back = RunResult.from_json(loaded["runs"][0])
        assert back.matrices["accuracy"].values == run.matrices["accuracy"].values
        assert back.variant == "tss" and back.seed == 3

    def test_summary_has_one_row_per_variant(self, tmp_path):
        runs = [run_result("tss", s, [[0.5], [0.6, 0.7]]) for s in (1, 2)] + \
               [run_result("one", s, [[0.4], [0.4, 0.6]]) for s in (1, 2)]
        out = eval_mod.emit_report(runs, tmp_path)
        text = out["summary"].read_text()
        body = [l for l in text.splitlines() if l.startswith("|") and "---" not in l]
        assert len(body) == 3  # header + 2 variants
        assert any(l.startswith("| one") for l in body)
        assert any(l.startswith("| tss") for l in body)

    def test_summary_mean_matches_hand_average(self):
        runs = [run_result("tss", 1, [[0.5], [0.6, 0.7]]),
                run_result("tss", 2, [[0.3], [0.4, 0.5]])]
        text = eval_mod.render_summary(runs)
        row = next(l for l in text.splitlines() if l.startswith("| tss"))
        mean_cell = row.split("|")[3].strip().split(" ")[0]
        hand = ((0.6 + 0.7) / 2 + (0.4 + 0.5) / 2) / 2
        assert abs(float(mean_cell) - hand) < 1e-12

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            eval_mod.emit_report([], tmp_path)
