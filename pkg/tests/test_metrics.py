import csv

import numpy as np
import pytest

from posegraph.grids import JointTrack
from posegraph.metrics import emit_report, pck, pck_curve


def track(positions, visibility=None):
    return JointTrack(np.asarray(positions, dtype=np.float64), visibility)


class TestPck:
    def test_perfect_prediction(self, rng):
        gt = track(rng.uniform(0, 20, (3, 4, 2)))
        report = pck(gt, gt, 0.2)
        assert report.mean == 1.0
        assert np.all(report.per_part == 1.0)
        assert report.counts.sum() == 12

    def test_hand_case_threshold_four(self):
        # box 10 wide x 20 tall -> threshold 0.2 * 20 = 4; errors 3px and 5px
        gt = track([[[0.0, 0.0], [10.0, 20.0]], [[0.0, 0.0], [10.0, 20.0]]])
        pred = track([[[3.0, 0.0], [10.0, 20.0]], [[5.0, 0.0], [10.0, 20.0]]])
        report = pck(pred, gt, 0.2)
        assert report.per_part[0] == pytest.approx(0.5)
        assert report.per_part[1] == 1.0
        assert report.mean == pytest.approx(0.75)

    def test_boundary_inclusive(self):
        gt = track([[[0.0, 0.0], [10.0, 20.0]]])
        pred = track([[[4.0, 0.0], [10.0, 20.0]]])  # exactly at alpha*max(h,w)
        assert pck(pred, gt, 0.2).per_part[0] == 1.0

    def test_invisible_joints_excluded(self):
        vis = np.array([[True, True, False]])
        gt = track([[[0.0, 0.0], [10.0, 10.0], [5.0, 5.0]]], vis)
        pred = track([[[0.0, 0.0], [10.0, 10.0], [99.0 - 60, 20.0]]], vis)
        report = pck(pred, gt, 0.2)
        assert report.counts[2] == 0
        assert report.mean == 1.0

    def test_degenerate_frame_skipped_with_warning(self):
        vis = np.array([[True, False], [True, True]])
        gt = track([[[1.0, 1.0], [2.0, 2.0]], [[1.0, 1.0], [9.0, 9.0]]], vis)
        pred = track([[[1.0, 1.0], [2.0, 2.0]], [[1.0, 1.0], [9.0, 9.0]]], vis)
        with pytest.warns(UserWarning, match="degenerate"):
            report = pck(pred, gt, 0.2)
        assert report.counts.sum() == 2  # only frame 1 counted

    def test_translation_invariance(self, rng):
        gt_pos = rng.uniform(0, 20, (2, 5, 2))
        pred_pos = gt_pos + rng.normal(0, 2, gt_pos.shape)
        a = pck(track(pred_pos), track(gt_pos), 0.2)
        b = pck(track(pred_pos + 37.0), track(gt_pos + 37.0), 0.2)
        np.testing.assert_array_equal(a.per_part, b.per_part)

    def test_invalid_alpha(self, rng):
        gt = track(rng.uniform(0, 20, (1, 3, 2)))
        with pytest.raises(ValueError):
            pck(gt, gt, 0.0)


class TestPckCurve:
    def test_monotone_in_alpha(self, rng):
        for _ in range(100):
            gt_pos = rng.uniform(0, 30, (2, 5, 2))
            pred = track(gt_pos + rng.normal(0, 3, gt_pos.shape))
            reports = pck_curve(pred, track(gt_pos), [0.05, 0.1, 0.2, 0.5])
            means = [r.mean for r in reports]
            assert all(b >= a for a, b in zip(means, means[1:]))

    def test_saturation_at_large_alpha(self, rng):
        gt_pos = rng.uniform(5, 25, (2, 4, 2))
        pred = track(np.clip(gt_pos + rng.normal(0, 5, gt_pos.shape), 0, 47))
        assert pck_curve(pred, track(gt_pos), [10.0])[0].mean == 1.0

    def test_unsorted_alphas_rejected(self, rng):
        gt = track(rng.uniform(0, 20, (1, 3, 2)))
        with pytest.raises(ValueError):
            pck_curve(gt, gt, [0.2, 0.1])


class TestEmitReport:
    def _reports(self, rng, models=("baseline", "s-infer", "st-infer")):
        gt_pos = rng.uniform(0, 30, (4, 3, 2))
        gt = track(gt_pos)
        out = {}
        for i, name in enumerate(models):
            pred = track(gt_pos + rng.normal(0, 1 + i, gt_pos.shape))
            out[name] = pck_curve(pred, gt, [0.05, 0.1, 0.2], ("head", "lwri", "rwri"))
        return out

    def test_long_csv_has_parts_plus_mean_rows(self, rng, tmp_path):
        reports = {"baseline": self._reports(rng)["baseline"]}
        emit_report(reports, tmp_path)
        with open(tmp_path / "pck.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3 * (3 + 1)  # alphas x (parts + mean)
        assert {r["part"] for r in rows} == {"head", "lwri", "rwri", "mean"}

    def test_round_trip_six_decimals(self, rng, tmp_path):
        reports = self._reports(rng)
        emit_report(reports, tmp_path)
        with open(tmp_path / "pck.csv") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            if row["part"] == "mean":
                continue
            rep = reports[row["model"]][[0.05, 0.1, 0.2].index(float(row["alpha"]))]
            want = rep.per_part[rep.part_names.index(row["part"])]
            assert abs(float(row["accuracy"]) - want) < 5e-7

    def test_grouped_comparison_table(self, rng, tmp_path):
        emit_report(self._reports(rng), tmp_path)
        with open(tmp_path / "pck_table_alpha0.2.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["model", "head", "lwri", "rwri", "mean"]
        assert [r[0] for r in rows[1:]] == ["baseline", "s-infer", "st-infer"]

    def test_svg_charts_per_part_and_deterministic(self, rng, tmp_path):
        reports = self._reports(rng)
        first = emit_report(reports, tmp_path / "a")
        again = emit_report(reports, tmp_path / "b")
        svgs = [p for p in first if p.suffix == ".svg"]
        assert {p.name for p in svgs} == {"pck_head.svg", "pck_lwri.svg", "pck_rwri.svg", "pck_mean.svg"}
        for p1, p2 in zip(first, again):
            assert p1.read_bytes() == p2.read_bytes()

    def test_misaligned_models_rejected(self, rng, tmp_path):
        reports = self._reports(rng)
        reports["st-infer"] = reports["st-infer"][:2]
        with pytest.raises(ValueError):
            emit_report(reports, tmp_path)
