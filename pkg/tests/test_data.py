"""Manifest, split, and synthetic-dataset tests."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from jigsawssl.data import (
    DatasetManifest,
    SplitSpec,
    generate_synthetic_images,
    load_images,
    load_manifest,
    save_manifest,
    stratified_split,
    synth_dataset,
)
from jigsawssl.errors import ManifestError, ParseError, StratifyError
from jigsawssl.jigsaw import PermutationSpec, shuffle


def write_dataset(tmp_path, entries, classes=None, make_files=True):
    if make_files:
        for rel, _ in entries:
            p = tmp_path / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(p)
    if classes is not None:
        (tmp_path / "classes.json").write_text(json.dumps(classes))
    return save_manifest(entries, tmp_path / "manifest.csv")


class TestLoadManifest:
    def test_two_rows(self, tmp_path):
        path = write_dataset(tmp_path, [("a.png", 0), ("b.png", 1)])
        mf = load_manifest(path)
        assert mf.entries == [("a.png", 0), ("b.png", 1)]
        assert mf.num_classes == 2

    def test_label_outside_declared_range(self, tmp_path):
        path = write_dataset(
            tmp_path, [("a.png", 7)], classes=[f"c{i}" for i in range(7)]
        )
        with pytest.raises(ParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 2

    def test_declared_class_table_used(self, tmp_path):
        names = ["MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"]
        path = write_dataset(tmp_path, [("a.png", 0), ("b.png", 6)], classes=names)
        mf = load_manifest(path)
        assert mf.num_classes == 7
        assert mf.class_names == names

    def test_malformed_row_reports_line(self, tmp_path):
        path = write_dataset(tmp_path, [("a.png", 0)])
        with open(path, "a") as fh:
            fh.write("b.png;1\n")
        with pytest.raises(ParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 3

    def test_missing_files_reported_collectively(self, tmp_path):
        path = write_dataset(
            tmp_path, [("a.png", 0), ("gone1.png", 1), ("gone2.png", 0)], make_files=False
        )
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(tmp_path / "a.png")
        with pytest.raises(ManifestError) as exc:
            load_manifest(path)
        assert sorted(exc.value.missing) == ["gone1.png", "gone2.png"]

    def test_duplicate_path_rejected(self, tmp_path):
        path = write_dataset(tmp_path, [("a.png", 0)])
        with open(path, "a") as fh:
            fh.write("a.png,1\n")
        with pytest.raises(ParseError):
            load_manifest(path)

    def test_bad_header(self, tmp_path):
        bad = tmp_path / "m.csv"
        bad.write_text("file,cls\na.png,0\n")
        with pytest.raises(ParseError) as exc:
            load_manifest(bad)
        assert exc.value.line == 1


class TestStratifiedSplit:
    def _manifest(self, counts):
        entries = []
        for c, n in enumerate(counts):
            entries.extend((f"c{c}_{i}.png", c) for i in range(n))
        return DatasetManifest(
            entries=entries,
            class_names=[f"c{i}" for i in range(len(counts))],
            dataset_id="t",
            root=None,
        )

    def test_exact_7_3_per_class(self):
        mf = self._manifest([10, 10, 10])
        train, test = stratified_split(mf, SplitSpec(0.7, seed=0))
        for c in range(3):
            assert sum(1 for _, l in train.entries if l == c) == 7
            assert sum(1 for _, l in test.entries if l == c) == 3

    def test_partition_property(self):
        mf = self._manifest([5, 9, 4])
        train, test = stratified_split(mf, SplitSpec(0.7, seed=1))
        merged = sorted(train.entries + test.entries)
        assert merged == sorted(mf.entries)
        assert not set(p for p, _ in train.entries) & set(p for p, _ in test.entries)

    def test_deterministic(self):
        mf = self._manifest([8, 8])
        a = stratified_split(mf, SplitSpec(0.7, seed=3))
        b = stratified_split(mf, SplitSpec(0.7, seed=3))
        assert a[0].entries == b[0].entries and a[1].entries == b[1].entries

    def test_single_sample_class_rejected(self):
        mf = self._manifest([5, 1])
        with pytest.raises(StratifyError):
            stratified_split(mf, SplitSpec(0.7, seed=0))

    @settings(max_examples=30, deadline=None)
    @given(
        counts=st.lists(st.integers(min_value=2, max_value=14), min_size=1, max_size=4),
        frac=st.floats(min_value=0.2, max_value=0.8),
        seed=st.integers(min_value=0, max_value=1000),
    )
    def test_ratio_within_one_sample_property(self, counts, frac, seed):
        mf = self._manifest(counts)
        train, test = stratified_split(mf, SplitSpec(frac, seed=seed))
        assert sorted(train.entries + test.entries) == sorted(mf.entries)
        labels_train = [l for _, l in train.entries]
        for c, n in enumerate(counts):
            got = labels_train.count(c)
            assert abs(got - frac * n) <= 1.0
            assert 1 <= got <= n - 1


class TestSyntheticDataset:
    def test_counts_and_balance(self, tmp_path):
        manifest_path = synth_dataset(4, 16, 64, seed=7, out_dir=tmp_path)
        mf = load_manifest(manifest_path)
        assert len(mf.entries) == 64
        labels = mf.labels()
        assert all((labels == c).sum() == 16 for c in range(4))
        ds = load_images(mf)
        assert ds.images.shape == (64, 64, 64, 3)
        assert ds.motif_boxes is not None and len(ds.motif_boxes) == 64

    def test_generator_pure_in_seed(self):
        a = generate_synthetic_images(2, 3, 64, seed=5)
        b = generate_synthetic_images(2, 3, 64, seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        c = generate_synthetic_images(2, 3, 64, seed=6)
        assert not np.array_equal(a[0], c[0])

    def test_shuffling_preserves_motif_patch_count(self):
        images, _, boxes = generate_synthetic_images(2, 2, 64, seed=1)
        top, left, bottom, right = boxes[0]
        mask = np.zeros((64, 64, 1), dtype=np.float32)
        mask[top:bottom, left:right] = 1.0
        spec = PermutationSpec(2, (2, 3, 1, 0))

        def patches_touching(m):
            count = 0
            for i in range(2):
                for j in range(2):
                    count += m[i * 32 : (i + 1) * 32, j * 32 : (j + 1) * 32].any()
            return count

        assert patches_touching(shuffle(mask, spec)) == patches_touching(mask)

    def test_histogram_classifier_stays_near_chance(self):
        # class signal must be spatial/textural: a per-channel histogram
        # nearest-centroid model trained on half the data must stay <= 40%
        images, labels, _ = generate_synthetic_images(4, 16, 64, seed=7)

        def feats(batch):
            out = []
            for img in batch:
                h = [np.histogram(img[..., c], bins=16, range=(0, 1))[0] for c in range(3)]
                out.append(np.concatenate(h) / img[..., 0].size)
            return np.stack(out)

        train_idx = np.concatenate([np.flatnonzero(labels == c)[:8] for c in range(4)])
        test_idx = np.concatenate([np.flatnonzero(labels == c)[8:] for c in range(4)])
        ftr, fte = feats(images[train_idx]), feats(images[test_idx])
        centroids = np.stack(
            [ftr[labels[train_idx] == c].mean(axis=0) for c in range(4)]
        )
        dists = ((fte[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        acc = float(np.mean(dists.argmin(axis=1) == labels[test_idx]))
        assert acc <= 0.40

    def test_stats_sidecar_round_trips(self, tmp_path):
        manifest_path = synth_dataset(2, 4, 64, seed=3, out_dir=tmp_path)
        mf = load_manifest(manifest_path)
        assert mf.mean is not None and mf.std is not None
        ds = load_images(mf)
        np.testing.assert_allclose(ds.mean, ds.images.mean(axis=(0, 1, 2)), atol=1e-5)
