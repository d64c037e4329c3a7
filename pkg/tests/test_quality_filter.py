import numpy as np
import pytest

from trashaug import quality_filter as qf
from trashaug.dataset import DatasetManifest, ManifestEntry
from trashaug.images import save_image
from trashaug.vae import ShapeMismatchError


def brightness_manifest(root, n, bright, prefix, seed=0):
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        base = 0.8 if bright else 0.2
        img = np.clip(base + rng.normal(0, 0.05, (128, 128, 3)), 0, 1).astype(np.float32)
        save_image(img, root / f"{prefix}{i}.png")
        entries.append(
            ManifestEntry(f"{prefix}{i}", f"{prefix}{i}.png", "bag", "generated", "train")
        )
    return DatasetManifest(root, entries)


@pytest.fixture(scope="module")
def separable(tmp_path_factory):
    root = tmp_path_factory.mktemp("separable")
    good = brightness_manifest(root, 24, True, "g", seed=1)
    bad = brightness_manifest(root, 24, False, "b", seed=2)
    model = qf.train_filter(good, bad, qf.FilterTrainConfig(epochs=3, seed=0))
    return good, bad, model


class TestLabelStore:
    def rec(self, image_id="img1", verdict="good", annotator="alice", t=1.0):
        return qf.LabelRecord(image_id, verdict, annotator, t)

    def test_append_and_resolve(self, tmp_path):
        store = qf.LabelStore(tmp_path / "labels.jsonl")
        store.append(self.rec())
        assert store.verdicts() == {"img1": "good"}

    def test_idempotent(self, tmp_path):
        store = qf.LabelStore(tmp_path / "labels.jsonl")
        assert store.append(self.rec()) is True
        assert store.append(self.rec(t=2.0)) is False
        assert len(store.records()) == 1

    def test_latest_timestamp_wins_per_annotator(self, tmp_path):
        store = qf.LabelStore(tmp_path / "labels.jsonl")
        store.append(self.rec(verdict="good", t=1.0))
        store.append(self.rec(verdict="bad", t=2.0))
        assert store.verdicts() == {"img1": "bad"}

    def test_majority_across_annotators(self, tmp_path):
        store = qf.LabelStore(tmp_path / "labels.jsonl")
        store.append(self.rec(annotator="a", verdict="good", t=1.0))
        store.append(self.rec(annotator="b", verdict="good", t=2.0))
        store.append(self.rec(annotator="c", verdict="bad", t=3.0))
        assert store.verdicts() == {"img1": "good"}

    def test_tie_breaks_by_latest(self, tmp_path):
        store = qf.LabelStore(tmp_path / "labels.jsonl")
        store.append(self.rec(annotator="a", verdict="good", t=1.0))
        store.append(self.rec(annotator="b", verdict="bad", t=5.0))
        assert store.verdicts() == {"img1": "bad"}

    def test_bad_verdict_rejected(self):
        with pytest.raises(qf.FilterError):
            qf.LabelRecord("x", "meh", "a", 0.0)


class TestTrainFilter:
    def test_separable_fixture_fits(self, separable):
        _, _, model = separable
        assert model.training_stats["train_acc"] >= 0.95

    def test_contradictory_labels_near_chance(self, tmp_path):
        same = brightness_manifest(tmp_path, 20, True, "x", seed=3)
        model = qf.train_filter(same, same, qf.FilterTrainConfig(epochs=2, seed=0))
        assert abs(model.training_stats["train_acc"] - 0.5) <= 0.1

    def test_empty_class_rejected(self, tmp_path):
        m = brightness_manifest(tmp_path, 4, True, "y", seed=4)
        empty = DatasetManifest(tmp_path, [])
        with pytest.raises(qf.FilterError, match="nonempty"):
            qf.train_filter(m, empty, qf.FilterTrainConfig(epochs=1))

    def test_imbalance_warning(self, tmp_path):
        good = brightness_manifest(tmp_path / "g", 22, True, "g", seed=5)
        bad = brightness_manifest(tmp_path / "b", 2, False, "b", seed=6)
        model = qf.train_filter(good, bad, qf.FilterTrainConfig(epochs=1, seed=0))
        assert any("imbalance" in w for w in model.training_stats["warnings"])

    def test_threshold_must_be_open_interval(self):
        with pytest.raises(qf.FilterError, match="threshold"):
            qf.FilterTrainConfig(threshold=1.0)
        with pytest.raises(qf.FilterError, match="threshold"):
            qf.FilterTrainConfig(threshold=0.0)


class TestPredict:
    def test_untrained_in_unit_interval(self):
        import torch

        torch.manual_seed(0)
        net = qf.SmallResNetBinary()
        model = qf.FilterModel(
            state_dict=net.state_dict(), arch="small", threshold=0.5, training_stats={}
        )
        p = qf.predict(model, np.zeros((128, 128, 3), dtype=np.float32))
        assert 0.0 <= p <= 1.0

    def test_duplicate_image_identical(self, separable):
        good, _, model = separable
        img = good.load_pixels(good.entries[0])
        assert qf.predict(model, img) == qf.predict(model, img)

    def test_held_out_bright_above_threshold(self, separable, tmp_path):
        _, _, model = separable
        fresh = brightness_manifest(tmp_path, 1, True, "h", seed=9)
        p = qf.predict(model, fresh.load_pixels(fresh.entries[0]))
        assert p > model.threshold

    def test_shape_mismatch(self, separable):
        _, _, model = separable
        with pytest.raises(ShapeMismatchError):
            qf.predict(model, np.zeros((64, 64, 3)))


class TestFilterPool:
    def test_partitions_exactly(self, separable, tmp_path):
        good, bad, model = separable
        from trashaug.dataset import concat

        pool = concat([good, bad])
        accepted, rejected = qf.filter_pool(model, pool)
        assert len(accepted) + len(rejected) == len(pool)
        assert set(accepted.ids()) & set(rejected.ids()) == set()
        assert set(accepted.ids()) | set(rejected.ids()) == set(pool.ids())

    def test_matches_per_image_loop_oracle(self, separable):
        good, bad, model = separable
        from trashaug.dataset import concat

        pool = concat([good, bad])
        accepted, _ = qf.filter_pool(model, pool)
        expected = {
            e.image_id
            for e in pool
            if qf.predict(model, pool.load_pixels(e, target_size=(128, 128)))
            >= model.threshold
        }
        assert set(accepted.ids()) == expected

    def test_threshold_monotone(self, separable):
        good, bad, model = separable
        from dataclasses import replace
        from trashaug.dataset import concat

        pool = concat([good, bad])
        sizes = []
        for thr in (0.1, 0.5, 0.9):
            m = qf.FilterModel(
                state_dict=model.state_dict,
                arch=model.arch,
                threshold=thr,
                training_stats=model.training_stats,
            )
            accepted, _ = qf.filter_pool(m, pool)
            sizes.append(len(accepted))
        assert sizes[0] >= sizes[1] >= sizes[2]

    def test_provenance_kept(self, separable):
        good, _, model = separable
        accepted, rejected = qf.filter_pool(model, good)
        for e in list(accepted) + list(rejected):
            assert e.provenance == "generated"

    def test_empty_pool_rejected(self, separable, tmp_path):
        _, _, model = separable
        with pytest.raises(qf.FilterError, match="empty"):
            qf.filter_pool(model, DatasetManifest(tmp_path, []))


class TestModelRoundTrip:
    def test_save_load_same_predictions(self, separable, tmp_path):
        good, _, model = separable
        model.save(tmp_path / "filter.pt")
        back = qf.FilterModel.load(tmp_path / "filter.pt")
        img = good.load_pixels(good.entries[0])
        assert qf.predict(back, img) == pytest.approx(qf.predict(model, img), abs=1e-6)
        assert back.threshold == model.threshold
