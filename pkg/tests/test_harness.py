import json
from dataclasses import replace

import numpy as np
import pytest
from conftest import TINY_LOC, tiny_split
from hypothesis import given
from hypothesis import strategies as st

from fovdistill import harness as hs
from fovdistill.distill import DistillConfig
from fovdistill.errors import InvalidArgument
from fovdistill.nets import LocationModel, TrainConfig, save_checkpoint


class _Perfect:
    def predict_uv(self, split, yaws=None):
        return split.uv


class _Offset:
    """Predicts gt shifted by fixed per-sample pixel offsets along u."""

    def __init__(self, du):
        self.du = np.asarray(du, dtype=np.float64)

    def predict_uv(self, split, yaws=None):
        return split.uv + np.stack([self.du, np.zeros_like(self.du)], axis=1)


class _OracleYaw:
    def predict_yaw(self, split):
        return split.theta


class _PriorYaw:
    def predict_yaw(self, split):
        return split.prior


class _YawAware:
    """Location stub that is exact only when handed the true yaw."""

    def predict_uv(self, split, yaws=None):
        yaws = split.theta if yaws is None else yaws
        return split.uv + np.stack([np.abs(yaws - split.theta), np.zeros(len(split))], axis=1)


class TestMedian:
    def test_lower_middle(self):
        assert hs.lower_median([1, 2, 3, 10]) == 2.0
        assert hs.lower_median([3, 1, 2]) == 2.0
        assert hs.lower_median([5.0]) == 5.0

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
    def test_is_an_element(self, xs):
        m = hs.lower_median(xs)
        assert m in xs
        assert sum(x <= m for x in xs) >= (len(xs) + 1) // 2


class TestReport:
    def test_perfect_predictor(self):
        r = hs.eval_localization(_Perfect(), tiny_split(6))
        assert r.mean_m == 0.0 and r.median_m == 0.0

    @pytest.mark.parametrize("errs, mean, median", [([1, 2, 3], 2.0, 2.0), ([1, 2, 3, 10], 4.0, 2.0)])
    def test_examples(self, errs, mean, median):
        split = tiny_split(len(errs), res=1.0)
        r = hs.eval_localization(_Offset(errs), split)
        assert r.mean_m == pytest.approx(mean, abs=1e-12)
        assert r.median_m == pytest.approx(median, abs=1e-12)

    def test_res_doubles_errors(self):
        a = hs.eval_localization(_Offset([1, 2, 3]), tiny_split(3, res=0.5))
        b = hs.eval_localization(_Offset([1, 2, 3]), tiny_split(3, res=1.0))
        assert [2 * x["error_m"] for x in a.records] == [x["error_m"] for x in b.records]

    def test_aggregates_recompute(self):
        r = hs.eval_localization(_Offset([0.5, 4, 1, 2.5, 3]), tiny_split(5))
        again = hs.EvalReport.from_records(r.split, r.records)
        assert again == r

    def test_json_round_trip(self):
        r = hs.eval_3dof(_PriorYaw(), _YawAware(), tiny_split(5))
        text = r.dumps()
        assert hs.EvalReport.from_json(json.loads(text)).dumps() == text

    def test_oracle_orientation_reduces_to_location_only(self):
        split = tiny_split(6)
        loc = hs.eval_localization(_YawAware(), split)
        full = hs.eval_3dof(_OracleYaw(), _YawAware(), split)
        assert (full.mean_m, full.median_m) == (loc.mean_m, loc.median_m)
        assert full.mean_deg == 0.0

    def test_prior_orientation_errors_equal_prior_noise(self):
        split = tiny_split(6)
        r = hs.eval_3dof(_PriorYaw(), _YawAware(), split)
        np.testing.assert_allclose([x["error_deg"] for x in r.records], np.abs(split.prior - split.theta),
                                   atol=1e-9)

    def test_model_and_checkpoint(self, tmp_path):
        m = LocationModel.create(TINY_LOC, 0)
        save_checkpoint(m, tmp_path)
        split = tiny_split(4)
        assert hs.eval_localization(m, split) == hs.eval_localization(tmp_path, split)

    def test_incompatible_checkpoint(self):
        from fovdistill.nets import LocationConfig

        with pytest.raises(InvalidArgument):
            hs.eval_localization(LocationModel.create(LocationConfig(), 0), tiny_split(2))


class TestAblation:
    @pytest.fixture
    def teacher(self):
        return LocationModel.create(TINY_LOC, 0)

    @pytest.fixture
    def base(self):
        return DistillConfig(epochs=1, batch=2, max_batches=1)

    def test_unknown_suite(self, teacher, tiny_data, base):
        with pytest.raises(InvalidArgument):
            hs.run_ablation("nope", teacher, tiny_data, base)

    def test_empty_seeds(self, teacher, tiny_data, base):
        with pytest.raises(InvalidArgument):
            hs.run_ablation("loss_kind", teacher, tiny_data, base, seeds=())

    def test_rows_and_determinism(self, teacher, tiny_data, base):
        a = hs.run_ablation("loss_kind", teacher, tiny_data, base, seeds=(0, 1))
        b = hs.run_ablation("loss_kind", teacher, tiny_data, base, seeds=(0, 1))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
        assert [r["variant"] for r in a["rows"]] == ["baseline", "CE", "KLD"]
        cell = a["rows"][1]["test_cross.mean_m"]
        assert cell["min"] <= cell["median"] <= cell["max"] and len(cell["per_seed"]) == 2

    def test_fov_suite_rows(self, teacher, tiny_data):
        base = DistillConfig(epochs=0)
        t = hs.run_ablation("fov", teacher, tiny_data, base, seeds=(0,))
        assert [r["variant"] for r in t["rows"]] == ["baseline"] + [f"fov{f}" for f in range(60, 331, 30)]

    @pytest.mark.parametrize("suite", sorted(hs.SUITES))
    def test_every_suite_has_baseline(self, suite, teacher, tiny_data):
        t = hs.run_ablation(suite, teacher, tiny_data, DistillConfig(epochs=0), seeds=(0,),
                            pretrain=TrainConfig(epochs=0))
        assert t["rows"][0]["variant"] == "baseline"

    def test_augmentation_rows(self, teacher, tiny_data):
        t = hs.run_ablation("augmentation", teacher, tiny_data, DistillConfig(epochs=0), seeds=(0,),
                            pretrain=TrainConfig(epochs=1, batch=4))
        assert [r["variant"] for r in t["rows"]] == ["baseline", "distilled", "supervised", "augmentation"]

    def test_full_fov_augmentation_matches_plain_run(self, tiny_data):
        cfg = TrainConfig(epochs=2, batch=4, lr=1e-3)
        plain = hs.run_supervised(tiny_data, TINY_LOC, cfg, 3)
        full = hs.run_supervised(tiny_data, TINY_LOC, cfg, 3, augment_fov=(360.0, 360.0))
        narrow = hs.run_supervised(tiny_data, TINY_LOC, cfg, 3, augment_fov=(60.0, 60.0))
        assert full["log"] == plain["log"]
        assert narrow["log"] != plain["log"]

    def test_cache_reuses_runs(self, teacher, tiny_data, base):
        cache = {}
        a = hs.run_ablation("loss_kind", teacher, tiny_data, base, seeds=(0,), cache=cache)
        n = len(cache)
        b = hs.run_ablation("mask_kind", teacher, tiny_data, base, seeds=(0,), cache=cache)
        assert len(cache) == n + 2  # the default FoV/CE run is shared
        assert a["rows"][1]["test_cross.mean_m"] == b["rows"][1]["test_cross.mean_m"]

    def test_table_outputs(self, teacher, tiny_data, tmp_path):
        t = hs.run_ablation("loss_kind", teacher, tiny_data, DistillConfig(epochs=0), seeds=(0, 1))
        hs.write_table(t, tmp_path)
        assert json.loads((tmp_path / "loss_kind.json").read_text()) == json.loads(json.dumps(t))
        lines = (tmp_path / "loss_kind.txt").read_text().splitlines()
        assert len(lines) == 2 + 3
        col = lines[1].index("test_same.mean_m")
        assert all(len(line) > col for line in lines[2:])


class TestExport:
    def test_pgm_scaling(self):
        data = hs.to_pgm(np.array([[0.0, 1.0], [2.0, 4.0]]))
        header, pix = data[:11], data[11:]
        assert header == b"P5\n2 2\n255\n"
        assert list(pix) == [0, 64, 128, 255]

    def test_pgm_constant(self):
        assert hs.to_pgm(np.full((2, 3), 7.0))[-6:] == bytes(6)

    def test_pgm_rejects_rank(self):
        with pytest.raises(InvalidArgument):
            hs.to_pgm(np.zeros((2, 2, 2, 2)))

    def test_csv_exact(self, rng):
        a = rng.normal(size=(3, 4))
        back = np.array([[float(x) for x in line.split(",")] for line in hs.to_csv(a).splitlines()])
        assert np.array_equal(back, a)

    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(InvalidArgument):
            hs.export_tensor(np.zeros((2, 2)), tmp_path / "x.png")


class TestExperimentConfig:
    def test_round_trip(self):
        cfg = hs.benchmark_config("d", "o")
        assert hs.ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg

    def test_validation(self, tmp_path):
        with pytest.raises(InvalidArgument):
            replace(hs.benchmark_config(), seeds=()).validate()
        with pytest.raises(InvalidArgument):
            replace(hs.benchmark_config(), stage="train").validate()
        with pytest.raises(InvalidArgument):
            hs.benchmark_config(str(tmp_path / "missing")).validate(check_paths=True)
        hs.benchmark_config(str(tmp_path)).validate(check_paths=True)
