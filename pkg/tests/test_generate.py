import numpy as np
import pytest
import torch

from mimeforge.errors import ConfigError
from mimeforge.generate import (
    ConditionPath,
    extrapolation_set,
    morph,
    sample,
    sweep,
    traversal_experiment,
    validation_nrmse,
    write_step_metadata_csv,
)


class TestConditionPath:
    def test_linear_interpolation(self):
        a, b = np.full(6, 0.5), np.full(6, 1.0)
        path = ConditionPath.from_knots([(0.0, a), (1.0, b)])
        np.testing.assert_allclose(path.at(0.5), 0.75)
        np.testing.assert_allclose(path.at(0.0), a)
        np.testing.assert_allclose(path.at(1.0), b)

    def test_multi_knot(self):
        path = ConditionPath.from_knots([(0.0, np.zeros(6)), (0.25, np.ones(6)), (1.0, np.ones(6) * 3)])
        np.testing.assert_allclose(path.at(0.125), 0.5)
        np.testing.assert_allclose(path.at(0.625), 2.0)

    def test_validation_errors(self):
        with pytest.raises(ConfigError, match="span"):
            ConditionPath.from_knots([(0.1, np.zeros(6)), (1.0, np.ones(6))])
        with pytest.raises(ConfigError, match="strictly increase"):
            ConditionPath.from_knots([(0.0, np.zeros(6)), (0.5, np.ones(6)), (0.5, np.ones(6)), (1.0, np.ones(6))])
        with pytest.raises(ConfigError, match="6-component"):
            ConditionPath.from_knots([(0.0, np.zeros(3)), (1.0, np.ones(3))])
        with pytest.raises(ConfigError, match="2 knots"):
            ConditionPath.from_knots([(0.0, np.zeros(6))])

    def test_json_round_trip(self):
        path = ConditionPath.from_knots([(0.0, np.full(6, 0.5)), (1.0, np.full(6, 0.9))])
        again = ConditionPath.from_json_obj(path.to_json_obj())
        np.testing.assert_array_equal(again.at(0.3), path.at(0.3))

    def test_malformed_json(self):
        with pytest.raises(ConfigError, match="malformed"):
            ConditionPath.from_json_obj([{"time": 0.0}])


class TestMorphAndSample:
    def test_morph_deterministic(self, small_model, tiny_dataset):
        out1 = morph(tiny_dataset.muaps[0], tiny_dataset.conditions[1], small_model)
        out2 = morph(tiny_dataset.muaps[0], tiny_dataset.conditions[1], small_model)
        np.testing.assert_array_equal(out1, out2)
        assert out1.shape == tiny_dataset.muaps[0].shape

    def test_sample_seeded(self, small_model):
        c = np.full(6, 0.75)
        a = sample(c, 11, small_model)
        b = sample(c, 11, small_model)
        other = sample(c, 12, small_model)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a - other).max() > 0


class TestSweep:
    def test_constant_path_constant_output(self, small_model, tiny_dataset):
        path = ConditionPath.constant(tiny_dataset.conditions[0])
        res = sweep(small_model, path, 4, muap=tiny_dataset.muaps[0])
        for i in range(1, 4):
            np.testing.assert_array_equal(res.muaps[i], res.muaps[0])
        assert np.all(res.distances == 0.0)

    def test_two_steps_equal_endpoint_morphs(self, small_model, tiny_dataset):
        a, b = tiny_dataset.conditions[0], tiny_dataset.conditions[5]
        path = ConditionPath.from_knots([(0.0, a), (1.0, b)])
        res = sweep(small_model, path, 2, muap=tiny_dataset.muaps[0])
        np.testing.assert_array_equal(res.muaps[0], morph(tiny_dataset.muaps[0], a, small_model))
        np.testing.assert_array_equal(res.muaps[1], morph(tiny_dataset.muaps[0], b, small_model))

    def test_latent_computed_once(self, small_model, tiny_dataset):
        small_model.encode_calls = 0
        path = ConditionPath.constant(tiny_dataset.conditions[0])
        sweep(small_model, path, 7, muap=tiny_dataset.muaps[0])
        assert small_model.encode_calls == 1

    def test_latent_origin(self, small_model):
        z = torch.zeros(1, small_model.cfg.latent_dim)
        path = ConditionPath.from_knots([(0.0, np.full(6, 0.5)), (1.0, np.full(6, 1.0))])
        res = sweep(small_model, path, 3, latent=z)
        assert res.muaps.shape[0] == 3

    def test_origin_argument_validation(self, small_model, tiny_dataset):
        path = ConditionPath.constant(np.full(6, 0.75))
        with pytest.raises(ConfigError, match="exactly one"):
            sweep(small_model, path, 3)
        with pytest.raises(ConfigError, match="exactly one"):
            sweep(small_model, path, 3, muap=tiny_dataset.muaps[0], latent=torch.zeros(1, 4))
        with pytest.raises(ConfigError, match="steps"):
            sweep(small_model, path, 1, muap=tiny_dataset.muaps[0])


class TestTraversal:
    def test_insufficient_grid_points(self, small_model, tiny_dataset):
        with pytest.raises(ConfigError, match=">= 3"):
            traversal_experiment(tiny_dataset, [0], small_model, axis="velocity", steps=5)

    def test_even_steps_rejected(self, small_model, tiny_dataset):
        with pytest.raises(ConfigError, match="odd"):
            traversal_experiment(tiny_dataset, [0], small_model, axis="velocity", steps=4)

    def test_unknown_axis(self, small_model, tiny_dataset):
        with pytest.raises(ConfigError, match="axis"):
            traversal_experiment(tiny_dataset, [0], small_model, axis="depth", steps=5)


def test_traversal_on_three_point_grid(small_cylinder, ranges, small_model):
    from mimeforge.dataset import build_dataset, make_motor_units

    grid = {
        "fibre_count": [200.0],
        "nmj": [0.5],
        "velocity": [3.0, 3.5, 4.0],
        "length_ratio": [1.0],
    }
    ds = build_dataset(small_cylinder, make_motor_units(1, seed=5), grid, ranges, window=48)
    res = traversal_experiment(ds, [0], small_model, axis="velocity", steps=5)
    assert res.gt_steps == [0, 2, 4]
    defined = ~np.isnan(res.mean_nrmse)
    assert defined.tolist() == [True, False, True, False, True]
    assert np.all(res.mean_nrmse[defined] >= 0.0)
    assert np.all(np.isfinite(res.mean_nrmse[defined]))
    assert len(res.per_mu_rows) == 5
    assert res.muaps.shape == (5, 8, 8, 48)


class TestExtrapolation:
    def test_zero_distance_matches_sample(self, small_model):
        base = np.full((1, 6), 0.8)
        recs = extrapolation_set(small_model, base, max_rel_distance=0.0, n=1, seed=9)
        np.testing.assert_array_equal(recs[0].muap, sample(base[0], 9, small_model))
        assert recs[0].distance == 0.0

    def test_records_carry_tags_and_stay_finite(self, small_model):
        recs = extrapolation_set(small_model, None, max_rel_distance=1.0, n=5, seed=3)
        assert len(recs) == 5
        assert recs[0].distance == 0.0 and recs[-1].distance == 1.0
        for r in recs:
            assert r.conditions.shape == (6,)
            assert np.all(np.isfinite(r.muap))
        # the last record's conditions overshoot the normalized range
        assert recs[-1].conditions.max() > 1.0 or recs[-1].conditions.min() < 0.5


def test_validation_nrmse_runs(small_model, tiny_dataset):
    err = validation_nrmse(tiny_dataset, [0, 1], small_model, seed=1, pairs_per_mu=4)
    assert np.isfinite(err) and err >= 0.0


def test_validation_nrmse_needs_pairs(small_model, tiny_dataset):
    with pytest.raises(ConfigError, match="pairs"):
        validation_nrmse(tiny_dataset, [], small_model)


def test_step_metadata_csv(tmp_path):
    rows = [{"step": 0, "fraction": 0.0, "nrmse_percent": ""}]
    write_step_metadata_csv(rows, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "step,fraction,nrmse_percent"
