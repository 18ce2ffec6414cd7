import numpy as np
import pytest

from remap.arch import Dense, serialize, validate
from remap.sampler import (DEFAULT_GRIDS, DEFAULT_TRANSITIONS, InsufficientDiversity,
                           SamplerError, TransitionModel, is_grid_layer,
                           sample_architecture, sample_batch)


def forced(probs, max_depth=12, grids=None):
    return TransitionModel(probs=probs, grids=grids or DEFAULT_GRIDS, max_depth=max_depth)


class TestTransitionModel:
    def test_default_rows_sum_to_one(self):
        model = TransitionModel()
        for state, row in model.probs.items():
            assert sum(row.values()) == pytest.approx(1.0, abs=1e-9)

    def test_default_dense_row_never_goes_spatial(self):
        row = DEFAULT_TRANSITIONS["Dense"]
        assert row.get("Conv2D", 0) == 0
        assert row.get("MaxPool", 0) == 0

    def test_bad_row_sum_rejected(self):
        with pytest.raises(SamplerError):
            forced({"START": {"Dense": 0.5}})

    def test_unknown_state_rejected(self):
        with pytest.raises(SamplerError):
            forced({"START": {"Perceptron": 1.0}})

    def test_end_reachability_diagnostic(self):
        model = forced({"START": {"Conv2D": 1.0}, "Conv2D": {"Conv2D": 1.0}})
        assert model.end_unreachable_states() == ["START", "Conv2D"]
        assert TransitionModel().end_unreachable_states() == []

    def test_config_round_trip(self, tmp_path):
        import json
        model = TransitionModel(max_depth=7)
        path = tmp_path / "chain.json"
        path.write_text(json.dumps(model.to_config_dict()))
        again = TransitionModel.from_config(path)
        assert again.probs == model.probs
        assert again.grids == model.grids
        assert again.max_depth == 7


class TestSampleArchitecture:
    def test_forced_single_dense(self):
        model = forced({"START": {"Dense": 1.0}, "Dense": {"END": 1.0}})
        arch = sample_architecture(model, seed=42)
        assert len(arch.layers) == 1
        assert isinstance(arch.layers[0], Dense)
        assert arch.layers[0].units in DEFAULT_GRIDS["Dense"]["units"]

    def test_max_depth_zero_is_head_only(self):
        model = TransitionModel(max_depth=0)
        arch = sample_architecture(model, seed=0)
        assert arch.layers == ()

    def test_forced_conv_chain_runs_to_depth(self):
        model = forced({"START": {"Conv2D": 1.0}, "Conv2D": {"Conv2D": 1.0}}, max_depth=3)
        arch = sample_architecture(model, seed=7)
        assert len(arch.layers) == 3
        assert all(l.kind == "Conv2D" for l in arch.layers)

    def test_determinism(self):
        model = TransitionModel()
        for seed in (0, 1, 99, 2 ** 63 - 1):
            a = sample_architecture(model, seed)
            b = sample_architecture(model, seed)
            assert serialize(a) == serialize(b)

    def test_provenance_sampled(self):
        arch = sample_architecture(TransitionModel(), seed=500)
        assert arch.provenance == "sampled"

    def test_dead_end_returns_partial(self):
        # Dense first, then only spatial kinds offered: masking empties the row.
        model = forced({"START": {"Dense": 1.0}, "Dense": {"Conv2D": 1.0}})
        arch = sample_architecture(model, seed=3)
        assert len(arch.layers) == 1
        assert validate(arch) == []

    def test_small_input_masks_oversized_kernels(self):
        # on a 2x2 input no conv kernel from the grid fits; walk must not emit one
        model = forced({"START": {"Conv2D": 0.9, "Dense": 0.1},
                        "Conv2D": {"END": 1.0}, "Dense": {"END": 1.0}})
        for seed in range(30):
            arch = sample_architecture(model, seed, input_shape=(2, 2, 1))
            assert all(l.kind != "Conv2D" for l in arch.layers)
            assert validate(arch) == []

    def test_grid_membership(self):
        for seed in range(50):
            arch = sample_architecture(TransitionModel(), seed)
            for layer in arch.layers:
                assert is_grid_layer(layer)


class TestSampleBatch:
    def test_batch_of_100_distinct_valid(self, default_model):
        batch = sample_batch(default_model, 100, base_seed=2024)
        assert len(batch) == 100
        assert len({serialize(a) for a in batch}) == 100
        assert all(validate(a) == [] for a in batch)

    def test_singleton(self, default_model):
        assert len(sample_batch(default_model, 1, base_seed=5)) == 1

    def test_insufficient_diversity(self):
        grids = dict(DEFAULT_GRIDS)
        grids["Dense"] = {"units": [16]}
        model = forced({"START": {"Dense": 1.0}, "Dense": {"END": 1.0}}, grids=grids)
        with pytest.raises(InsufficientDiversity):
            sample_batch(model, 2, base_seed=0)

    def test_n_must_be_positive(self, default_model):
        with pytest.raises(SamplerError):
            sample_batch(default_model, 0, base_seed=0)


def test_thousand_seed_sweep_validity(default_model):
    for seed in range(1000):
        arch = sample_architecture(default_model, seed)
        assert validate(arch) == []
        flattened = False
        for layer in arch.layers:
            if layer.kind == "Dense":
                flattened = True
            assert not (flattened and layer.kind in ("Conv2D", "MaxPool"))


def test_empirical_transition_frequencies():
    """Unmasked draws through the sampler's own draw path track the declared
    row probabilities within 0.03 per cell."""
    from remap.sampler import draw_next_state

    rng = np.random.default_rng(8)
    for state, row in DEFAULT_TRANSITIONS.items():
        counts = {target: 0 for target in row}
        for _ in range(10_000):
            counts[draw_next_state(row, rng)] += 1
        for target, p in row.items():
            assert abs(counts[target] / 10_000 - p) <= 0.03
