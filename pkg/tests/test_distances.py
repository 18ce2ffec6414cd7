import math

import numpy as np
import pytest

from remap.arch import Activation, Conv2D, Dense, Dropout, MaxPool
from remap.distances import (DistanceMatrix, DistanceError, LengthMismatch,
                             MissingPredictions, append_row, distance_matrix,
                             from_csv, label_cost, layer_mass_profile,
                             prediction_distance, structural_distance, to_csv)
from remap.sampler import TransitionModel, sample_architecture

from .conftest import arch_of
from .oracles import oracle_structural_distance


class TestPredictionDistance:
    def test_identity(self):
        p = np.array([1, 2, 3])
        assert prediction_distance(p, p) == 0.0

    def test_one_of_four(self):
        assert prediction_distance([0, 1, 2, 3], [0, 1, 2, 9]) == 0.25

    def test_all_differ(self):
        assert prediction_distance([0, 0, 0], [1, 2, 3]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            prediction_distance([0, 1], [0, 1, 2])
        with pytest.raises(LengthMismatch):
            prediction_distance([], [])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        p, q = rng.integers(0, 5, 40), rng.integers(0, 5, 40)
        perm = rng.permutation(40)
        assert prediction_distance(p, q) == prediction_distance(p[perm], q[perm])


class TestMassProfile:
    def test_masses_and_positions(self):
        arch = arch_of([Conv2D(8, 3, 1), Activation("relu"), Dense(16)])
        profile = layer_mass_profile(arch)
        assert len(profile.entries) == 4  # three layers + head
        conv, act, dense, head = profile.entries
        assert conv.mass == pytest.approx(math.log10(1 + 80))
        assert act.mass == 1.0
        assert dense.mass == pytest.approx(math.log10(1 + (12 * 12 * 8 + 1) * 16))
        assert head.mass == pytest.approx(math.log10(1 + 17 * 10))
        assert [e.position for e in profile.entries] == [0.0, 1 / 3, 2 / 3, 1.0]

    def test_head_only_profile(self):
        profile = layer_mass_profile(arch_of([], input_shape=(4, 4, 1)))
        assert len(profile.entries) == 1
        assert profile.entries[0].position == 0.0
        assert profile.entries[0].kind == "Head"

    def test_masses_positive_and_positions_nondecreasing(self, corpus):
        for arch in corpus:
            profile = layer_mass_profile(arch)
            positions = [e.position for e in profile.entries]
            assert all(e.mass > 0 for e in profile.entries)
            assert positions == sorted(positions)

    def test_label_costs(self):
        p = layer_mass_profile(arch_of([Conv2D(8, 3, 1), Conv2D(8, 3, 1), MaxPool(2),
                                        Activation("relu"), Dropout(0.5), Dense(16)]))
        conv0, conv1, pool, act, drop, dense, head = p.entries
        assert label_cost(conv0, conv1) == 0.0  # same kind, same hyperparams
        assert label_cost(conv0, pool) == 0.25  # same group, different kind
        assert label_cost(conv0, act) is None   # cross-group
        assert label_cost(dense, head) == 0.25  # head sits in the dense group
        assert label_cost(act, drop) is None


class TestStructuralDistance:
    def test_identity_exact(self, corpus):
        for arch in corpus[:10]:
            assert structural_distance(arch, arch) == 0.0

    def test_symmetry_exact(self, corpus):
        for a, b in zip(corpus[:8], corpus[8:16]):
            assert structural_distance(a, b) == structural_distance(b, a)

    def test_cross_group_bodies_pay_full_penalty(self):
        """Bodies in unrelated groups cannot transport at all: with identical
        heads (cost 0) the distance is exactly nu*(mass_a + mass_b) over the
        unmatched body layers."""
        a = arch_of([Activation("relu")], input_shape=(6, 6, 1))
        b = arch_of([Dropout(0.5)], input_shape=(6, 6, 1))
        # both bodies mass 1.0, cross-group; heads identical (same fan-in,
        # same classes) and aligned at position 1 -> free
        assert structural_distance(a, b) == pytest.approx(2.0, abs=1e-9)
        assert structural_distance(a, b) == pytest.approx(
            oracle_structural_distance(a, b), abs=1e-12)

    def test_conv_vs_dense_hand_computed_optimum(self):
        """a = [Conv2D(8,3,1)] on 14x14x1 vs b = [Dense(8)] on 8x8x1.

        The conv body is unassignable (no spatial layer in b). The heads
        match at cost 0 for min(head_a, head_b); the head_a surplus flows to
        b's Dense body at cost 0.25 + |1-0| = 1.25 (cheaper than the 2nu
        two-sided penalty); whatever Dense demand remains is unassigned.
        """
        a = arch_of([Conv2D(8, 3, 1)], input_shape=(14, 14, 1))
        b = arch_of([Dense(8)], input_shape=(8, 8, 1))
        mass_conv = math.log10(1 + 80)
        mass_dense = math.log10(1 + (64 + 1) * 8)
        head_a = math.log10(1 + (12 * 12 * 8 + 1) * 10)
        head_b = math.log10(1 + (8 + 1) * 10)
        surplus = head_a - head_b
        expected = (mass_conv                      # conv unassigned
                    + 1.25 * surplus               # head surplus -> dense body
                    + (mass_dense - surplus))      # leftover dense demand
        assert structural_distance(a, b) == pytest.approx(expected, abs=1e-9)
        assert structural_distance(a, b) == pytest.approx(
            oracle_structural_distance(a, b), abs=1e-12)

    def test_two_vs_three_entry_instance_matches_oracle(self):
        a = arch_of([Conv2D(16, 3, 1)])
        b = arch_of([Conv2D(16, 3, 1), Conv2D(16, 3, 1)])
        assert structural_distance(a, b) == pytest.approx(
            oracle_structural_distance(a, b), abs=1e-9)

    def test_oracle_agreement_on_random_small_pairs(self):
        """50 random pairs of <=3-layer architectures agree with the exact
        rational transport oracle within 1e-9."""
        model = TransitionModel(max_depth=3)
        archs = [sample_architecture(model, seed) for seed in range(40)]
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b = archs[rng.integers(40)], archs[rng.integers(40)]
            assert structural_distance(a, b) == pytest.approx(
                oracle_structural_distance(a, b), abs=1e-9)

    def test_nonnegative(self, corpus):
        rng = np.random.default_rng(3)
        for _ in range(30):
            a, b = corpus[rng.integers(len(corpus))], corpus[rng.integers(len(corpus))]
            assert structural_distance(a, b) >= 0.0

    def test_triangle_inequality_sampled(self, corpus):
        rng = np.random.default_rng(7)
        cache = {}

        def d(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                cache[key] = structural_distance(corpus[key[0]], corpus[key[1]])
            return cache[key]

        for _ in range(300):
            i, j, k = rng.integers(0, len(corpus), size=3)
            assert d(i, k) <= d(i, j) + d(j, k) + 1e-9

    def test_appending_dense_changes_distance_boundedly(self, corpus):
        """Adding one Dense(16) at the end moves the distance by at most the
        new layer's mass (penalty nu=1 per unit) plus bounded position/head
        adjustments; checked against the explicit feasible-plan bound."""
        from remap.distances import UNASSIGNED_PENALTY as NU
        for arch in corpus[:10]:
            try:
                child = arch.with_layers([*arch.layers, Dense(16)], "variation")
            except Exception:
                continue
            from remap.arch import validate
            if validate(child):
                continue
            d = structural_distance(arch, child)
            pa = layer_mass_profile(arch)
            pb = layer_mass_profile(child)
            new_dense_mass = pb.entries[-2].mass
            # feasible plan: match common body layers and min head mass in
            # order, leave the new dense + head-mass gap unassigned
            shift_cost = sum(
                ea.mass * abs(ea.position - eb.position)
                for ea, eb in zip(pa.entries[:-1], pb.entries[:-2]))
            head_gap = abs(pa.entries[-1].mass - pb.entries[-1].mass)
            head_shift = min(pa.entries[-1].mass, pb.entries[-1].mass) * abs(
                pa.entries[-1].position - pb.entries[-1].position)
            bound = NU * new_dense_mass + shift_cost + head_shift + NU * head_gap
            assert d <= bound + 1e-9
            assert d <= NU * new_dense_mass + 1.0 + NU * head_gap + 1e-9


class TestDistanceMatrix:
    def items(self, corpus, n=6, with_preds=True):
        rng = np.random.default_rng(11)
        out = []
        for arch in corpus[:n]:
            preds = rng.integers(0, 10, size=30) if with_preds else None
            out.append((arch, preds))
        return out

    def test_identical_models_zero_matrix(self):
        arch = arch_of([Conv2D(8, 3, 1)])
        m = distance_matrix([(arch, None), (arch, None)], "structural", ids=["x", "y"])
        assert m.values.tolist() == [[0.0, 0.0], [0.0, 0.0]]

    def test_symmetry_on_corpus(self, corpus):
        m = distance_matrix(self.items(corpus, 20), "structural")
        assert np.array_equal(m.values, m.values.T)
        assert np.all(np.diag(m.values) == 0)
        assert np.all(np.isfinite(m.values))

    def test_entries_match_single_calls(self, corpus):
        items = self.items(corpus, 8)
        for metric in ("structural", "prediction"):
            m = distance_matrix(items, metric)
            rng = np.random.default_rng(5)
            for _ in range(10):
                i, j = rng.integers(0, 8, size=2)
                if metric == "structural":
                    expected = structural_distance(items[i][0], items[j][0])
                else:
                    expected = prediction_distance(items[i][1], items[j][1])
                if i == j:
                    expected = 0.0
                assert m.values[i, j] == expected

    def test_missing_predictions(self, corpus):
        with pytest.raises(MissingPredictions):
            distance_matrix(self.items(corpus, 4, with_preds=False), "prediction")

    def test_needs_two_models(self, corpus):
        with pytest.raises(DistanceError):
            distance_matrix(self.items(corpus, 1), "structural")

    def test_append_row_equals_rebuild(self, corpus):
        items = self.items(corpus, 7)
        m = distance_matrix(items[:6], "structural")
        extended = append_row(m, items[:6], items[6])
        rebuilt = distance_matrix(items, "structural")
        assert np.array_equal(extended.values, rebuilt.values)
        assert extended.ids == rebuilt.ids
        # existing entries untouched
        assert np.array_equal(extended.values[:6, :6], m.values)

    def test_append_duplicate_gives_zero_cell(self, corpus):
        items = self.items(corpus, 5)
        m = distance_matrix(items, "structural")
        extended = append_row(m, items, items[2], new_id="twin")
        assert extended.values[5, 2] == 0.0
        assert np.array_equal(extended.values, extended.values.T)

    def test_csv_round_trip(self, corpus):
        m = distance_matrix(self.items(corpus, 6), "prediction")
        again = from_csv(to_csv(m), metric="prediction")
        assert again.ids == m.ids
        assert np.array_equal(again.values, m.values)


def test_prediction_metric_axioms():
    rng = np.random.default_rng(13)
    vectors = [rng.integers(0, 6, size=25) for _ in range(30)]
    for _ in range(300):
        i, j, k = rng.integers(0, 30, size=3)
        dij = prediction_distance(vectors[i], vectors[j])
        dji = prediction_distance(vectors[j], vectors[i])
        assert dij == dji
        assert prediction_distance(vectors[i], vectors[i]) == 0.0
        dik = prediction_distance(vectors[i], vectors[k])
        djk = prediction_distance(vectors[j], vectors[k])
        assert dik <= dij + djk + 1e-12
