import numpy as np
import pytest

from domain import ValidationError
from pose_cells import CANConfig
from view_cells import ViewCell, ViewCellConfig, ViewCellStore, active_injection, cosine_distance


class TestCosineDistance:
    def test_anchors(self):
        a = np.array([1.0, 2.0, 3.0])
        assert cosine_distance(a, a) == pytest.approx(0.0, abs=1e-12)
        assert cosine_distance(a, -a) == pytest.approx(2.0, abs=1e-12)
        assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)

    def test_range_on_random_pairs(self, rng):
        a = rng.standard_normal((2000, 4))
        b = rng.standard_normal((2000, 4))
        values = np.array([cosine_distance(x, y) for x, y in zip(a, b)])
        assert values.min() >= 0.0 and values.max() <= 2.0

    @pytest.mark.slow
    def test_range_sweep(self, rng):
        for dim in (2, 3, 16):
            a = rng.standard_normal((100_000 // 3, dim)) * rng.uniform(1e-3, 1e3, size=(100_000 // 3, 1))
            b = rng.standard_normal((100_000 // 3, dim))
            values = np.array([cosine_distance(x, y) for x, y in zip(a, b)])
            assert values.min() >= 0.0 and values.max() <= 2.0
            assert cosine_distance(a[0], a[0]) == pytest.approx(0.0, abs=1e-12)

    def test_scale_invariant(self):
        assert cosine_distance([1.0, 2.0], [3.0, 1.0]) == pytest.approx(cosine_distance([2.0, 4.0], [0.3, 0.1]))

    @pytest.mark.parametrize("a, b", [
        ([0.0, 0.0], [1.0, 0.0]),
        ([np.nan, 1.0], [1.0, 0.0]),
        ([1.0, 0.0, 0.0], [1.0, 0.0]),
    ])
    def test_invalid(self, a, b):
        with pytest.raises(ValidationError):
            cosine_distance(a, b)


class TestViewCellStore:
    def test_first_frame_creates_cell(self):
        store = ViewCellStore(0.1)
        match = store.match_or_create([1.0, 0.0], (1, 2, 3), frame=0)
        assert match.is_new and match.cell_id == 0 and match.distance is None
        assert store[0].linked_pose_coords == (1, 2, 3)
        assert store[0].created_at == 0

    def test_match_and_create(self):
        store = ViewCellStore(0.1)
        store.match_or_create([1.0, 0.0], (0, 0, 0), 0)
        near = store.match_or_create([1.0, 0.05], (5, 5, 5), 1)
        assert not near.is_new and near.cell_id == 0
        assert near.distance == pytest.approx(cosine_distance([1.0, 0.0], [1.0, 0.05]))
        far = store.match_or_create([0.0, 1.0], (5, 5, 5), 2)
        assert far.is_new and far.cell_id == 1
        assert far.distance == pytest.approx(1.0)
        assert len(store) == 2

    def test_threshold_is_strict(self):
        store = ViewCellStore(1.0)
        store.match_or_create([1.0, 0.0], (0, 0, 0), 0)
        # orthogonal: distance is exactly the threshold
        match = store.match_or_create([0.0, 1.0], (0, 0, 0), 1)
        assert match.distance == 1.0
        assert match.is_new and match.cell_id == 1

    def test_tie_goes_to_lowest_id(self):
        store = ViewCellStore(0.5)
        store.match_or_create([1.0, 0.0], (0, 0, 0), 0)
        store._append(ViewCell(1, [2.0, 0.0], (1, 1, 1), 1))
        match = store.match_or_create([3.0, 0.0], (2, 2, 2), 2)
        assert match.cell_id == 0 and not match.is_new

    def test_ids_are_dense(self, rng):
        store = ViewCellStore(0.05)
        for t in range(30):
            store.match_or_create(rng.standard_normal(8), (0, 0, 0), t)
        assert [c.id for c in store.cells] == list(range(len(store)))

    @pytest.mark.slow
    def test_large_store_matches_exhaustive_search(self, rng):
        threshold = 0.3
        store = ViewCellStore(threshold)
        templates = []
        for t in range(1500):
            vec = rng.standard_normal(6) * rng.uniform(0.1, 10.0)
            before = [cosine_distance(vec, tpl) for tpl in templates]
            match = store.match_or_create(vec, (0, 0, 0), t)
            if not before:
                assert match.is_new
                templates.append(vec)
                continue
            best = min(before)
            ordered = sorted(before)
            if abs(best - threshold) < 1e-9 or (len(ordered) > 1 and ordered[1] - best < 1e-9):
                # rounding could flip the decision either way
                if match.is_new:
                    templates.append(vec)
                continue
            if best < threshold:
                assert not match.is_new
                assert match.cell_id == before.index(best)
                assert match.distance == pytest.approx(best, abs=1e-9)
            else:
                assert match.is_new and match.cell_id == len(templates)
                templates.append(vec)
        assert len(store) == len(templates)
        assert len(store) > 50

    def test_dimension_mismatch(self):
        store = ViewCellStore()
        store.match_or_create([1.0, 0.0], (0, 0, 0), 0)
        with pytest.raises(ValidationError):
            store.match_or_create([1.0, 0.0, 0.0], (0, 0, 0), 1)

    def test_unknown_id(self):
        with pytest.raises(ValidationError):
            ViewCellStore()[0]

    def test_serialization(self, rng):
        store = ViewCellStore(0.2)
        for t in range(5):
            store.match_or_create(rng.standard_normal(4), (t, t, t), t)
        restored = ViewCellStore.from_dict(store.to_dict())
        assert restored == store

    def test_serialization_rejects_gaps(self):
        data = {"match_threshold": 0.1, "cells": [
            {"id": 1, "template": [1.0], "linked_pose_coords": [0, 0, 0], "created_at": 0},
        ]}
        with pytest.raises(ValidationError):
            ViewCellStore.from_dict(data)

    def test_templates_read_only(self):
        store = ViewCellStore()
        store.match_or_create([1.0, 0.0], (0, 0, 0), 0)
        with pytest.raises(ValueError):
            store[0].template[0] = 5.0


def test_config_range():
    with pytest.raises(ValidationError):
        ViewCellConfig(0.0)
    with pytest.raises(ValidationError):
        ViewCellConfig(2.0)


def test_active_injection():
    cfg = CANConfig(injection_energy=0.25)
    cell = ViewCell(3, [1.0, 1.0], (4, 5, 6), 10)
    request = active_injection(cell, cfg)
    assert request.coords == (4, 5, 6)
    assert request.energy == 0.25
