import time

import numpy as np
import pytest

from roadlayout.errors import ConfigError
from roadlayout.rng import split
from roadlayout.sampler import (
    CooccurrenceTables,
    PriorConfig,
    estimate_cooccurrence,
    load_prior_config,
    sample_batch,
    sample_scene,
)
from roadlayout.schema import default_schema, validate

ZERO = dict(
    side_road_left=0.0, side_road_right=0.0, main_road_ends=0.0,
    crosswalk_near_intersection=0.0, crosswalk_near_midblock=0.0, crosswalk_far=0.0,
    crosswalk_left=0.0, crosswalk_right=0.0, oneway_main=0.0, delimiter_median=0.0,
    sidewalk_left=0.0, sidewalk_right=0.0, delimiter_with_sidewalk=0.0,
    delimiter_without_sidewalk=0.0, main_road_curved=0.0,
)


def test_degenerate_prior_forces_oneway():
    onehot0 = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    prior = PriorConfig(
        **ZERO, lanes_left_two_way=onehot0, lanes_left_one_way=onehot0, lanes_right=onehot0
    )
    s = sample_scene(prior, 3)
    d = s.to_dict()
    assert d["oneway_main"] is True
    assert d["lanes_left_count"] == d["lanes_right_count"] == 0
    assert sum(s.binary) == 1
    assert sum(v is not None for v in s.continuous) == 1
    assert validate(s).feasible


def test_seed_42_is_deterministic():
    assert sample_scene(PriorConfig(), 42) == sample_scene(PriorConfig(), 42)


def test_batch_element_uses_split_seed():
    batch = sample_batch(PriorConfig(), 77, 1)
    assert batch[0] == sample_scene(PriorConfig(), split(77, 0))
    longer = sample_batch(PriorConfig(), 77, 5)
    assert longer[0] == batch[0]
    assert longer.seeds[3] == split(77, 3)


def test_batch_rejects_empty():
    with pytest.raises(ValueError):
        sample_batch(PriorConfig(), 0, 0)


def test_ten_thousand_samples_feasible():
    t0 = time.perf_counter()
    batch = sample_batch(PriorConfig(), 1, 10_000)
    bad = sum(not validate(s).feasible for s in batch)
    assert bad == 0
    assert time.perf_counter() - t0 < 10.0


def test_prior_frequencies_roughly_match():
    batch = sample_batch(PriorConfig(), 5, 4000)
    freq = np.mean([s.get("side_road_left") for s in batch])
    assert abs(freq - 0.3) < 0.03


def test_always_true_pair_closed_form():
    prior = PriorConfig(sidewalk_left=1.0, sidewalk_right=1.0)
    batch = sample_batch(prior, 9, 96)
    tabs = estimate_cooccurrence(batch)
    idx = default_schema().index
    a = 1.0 / (96 + 4)
    expected = np.array([[a, a], [a, 1 - 3 * a]])
    np.testing.assert_allclose(tabs.table(idx["sidewalk_left"], idx["sidewalk_right"]), expected)


def test_tables_normalized_and_symmetric(scenes):
    tabs = estimate_cooccurrence(scenes)
    np.testing.assert_allclose(tabs.tables.sum(axis=(2, 3)), 1.0, atol=1e-12)
    np.testing.assert_array_equal(tabs.tables, tabs.tables.transpose(1, 0, 3, 2))
    assert (tabs.tables > 0).all()


def test_tables_round_trip(scenes):
    tabs = estimate_cooccurrence(scenes)
    back = CooccurrenceTables.from_dict(tabs.to_dict())
    np.testing.assert_array_equal(back.tables, tabs.tables)
    assert back.n_samples == len(scenes)


def test_prior_validation():
    with pytest.raises(ConfigError):
        PriorConfig(side_road_left=1.5)
    with pytest.raises(ConfigError):
        PriorConfig(lanes_right=(1.0, 0.0))
    with pytest.raises(ConfigError):
        PriorConfig(lane_width_range=(2.0, 4.0))
    with pytest.raises(ConfigError):
        PriorConfig.from_mapping({"no_such_key": 1})


def test_load_prior_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[prior]\nside_road_left = 0.9\n\n[crf]\nrestarts = 3\n')
    prior = load_prior_config(path)
    assert prior.side_road_left == 0.9
    assert prior.side_road_right == PriorConfig().side_road_right
    path.write_text("[weird]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_prior_config(path)
    with pytest.raises(ConfigError):
        load_prior_config(tmp_path / "missing.toml")
