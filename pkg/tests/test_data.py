"""Data pipeline tests: synthetic generation invariants, ingestion
normalization, site-level splitting, and batch iteration."""

import numpy as np
import pytest
from PIL import Image

from minenetcd.data import (PatchDataset, batch_iterator,
                            generate_synthetic_dataset, load_sample,
                            make_split_manifest, read_dataset_index)
from minenetcd.errors import DataError


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    index = generate_synthetic_dataset(root, n_pairs=8, size=64,
                                       change_fraction=0.15, seed=8888,
                                       patches_per_site=2)
    return root, index


class TestSyntheticGenerator:
    def test_mask_equals_differing_pixels(self, small_dataset):
        root, index = small_dataset
        for site, patches in index["sites"].items():
            for patch in patches:
                s = load_sample(root, site, patch)
                differs = np.any(s.image_a != s.image_b, axis=0)
                assert np.array_equal(differs, s.mask.astype(bool))

    def test_unchanged_pixels_identical(self, small_dataset):
        root, index = small_dataset
        site = sorted(index["sites"])[0]
        s = load_sample(root, site, index["sites"][site][0])
        still = ~s.mask.astype(bool)
        assert np.array_equal(s.image_a[:, still], s.image_b[:, still])

    def test_same_seed_byte_identical(self, tmp_path):
        roots = [tmp_path / "a", tmp_path / "b"]
        for r in roots:
            generate_synthetic_dataset(r, n_pairs=3, size=64,
                                       change_fraction=0.2, seed=4321,
                                       patches_per_site=2)
        for rel in ("site_000/patch_000/A.png", "site_000/patch_001/B.png",
                    "site_001/patch_000/mask.png", "manifest.json"):
            assert (roots[0] / rel).read_bytes() == (roots[1] / rel).read_bytes()

    def test_mean_coverage_near_requested_fraction(self, tmp_path):
        frac = 0.15
        root = tmp_path / "cov"
        index = generate_synthetic_dataset(root, n_pairs=32, size=64,
                                           change_fraction=frac, seed=99,
                                           patches_per_site=4)
        covers = []
        for site, patches in index["sites"].items():
            for patch in patches:
                covers.append(load_sample(root, site, patch).mask.mean())
        mean_cover = float(np.mean(covers))
        assert abs(mean_cover - frac) / frac < 0.2

    def test_argument_guards(self, tmp_path):
        with pytest.raises(ValueError):
            generate_synthetic_dataset(tmp_path, n_pairs=0)
        with pytest.raises(ValueError):
            generate_synthetic_dataset(tmp_path, n_pairs=1, change_fraction=1.5)


class TestLoadSample:
    def test_normalization_contract(self, small_dataset):
        root, index = small_dataset
        site = sorted(index["sites"])[0]
        s = load_sample(root, site, index["sites"][site][0])
        assert s.image_a.shape == (3, 64, 64)
        assert s.image_a.dtype == np.float32
        assert s.image_a.min() >= 0.0 and s.image_a.max() <= 1.0
        assert set(np.unique(s.mask)) <= {0, 1}

    def test_byte_128_normalizes_to_fraction(self, tmp_path):
        base = tmp_path / "site" / "patch"
        base.mkdir(parents=True)
        arr = np.full((4, 4, 3), 128, dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(base / "A.png")
        Image.fromarray(arr, "RGB").save(base / "B.png")
        Image.fromarray(np.full((4, 4), 128, dtype=np.uint8), "L").save(
            base / "mask.png")
        s = load_sample(tmp_path, "site", "patch")
        assert abs(s.image_a[0, 0, 0] - 128 / 255) < 1e-7
        assert s.mask[0, 0] == 1  # threshold at 128 is inclusive

    def test_requantization_is_lossless(self, small_dataset):
        root, index = small_dataset
        site = sorted(index["sites"])[0]
        patch = index["sites"][site][0]
        s = load_sample(root, site, patch)
        with Image.open(root / site / patch / "A.png") as img:
            source = np.asarray(img).transpose(2, 0, 1)
        assert np.array_equal(np.rint(s.image_a * 255).astype(np.uint8),
                              source)

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(DataError) as exc:
            load_sample(tmp_path, "nosite", "nopatch")
        assert "A.png" in str(exc.value)

    def test_dimension_mismatch_rejected(self, tmp_path):
        base = tmp_path / "s" / "p"
        base.mkdir(parents=True)
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(base / "A.png")
        Image.fromarray(np.zeros((7, 8, 3), np.uint8)).save(base / "B.png")
        Image.fromarray(np.zeros((8, 8), np.uint8)).save(base / "mask.png")
        with pytest.raises(DataError):
            load_sample(tmp_path, "s", "p")

    def test_non_image_payload_rejected(self, tmp_path):
        base = tmp_path / "s" / "p"
        base.mkdir(parents=True)
        (base / "A.png").write_text("not a png")
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(base / "B.png")
        Image.fromarray(np.zeros((8, 8), np.uint8)).save(base / "mask.png")
        with pytest.raises(DataError) as exc:
            load_sample(tmp_path, "s", "p")
        assert "A.png" in str(exc.value)


class TestSplitManifest:
    def test_hundred_sites_sixty_ten_thirty(self):
        sites = [f"site_{i:03d}" for i in range(100)]
        m = make_split_manifest(sites, seed=8888)
        counts = {s: len(m.sites(s)) for s in ("train", "val", "test")}
        assert counts == {"train": 60, "val": 10, "test": 30}
        all_assigned = m.sites("train") + m.sites("val") + m.sites("test")
        assert sorted(all_assigned) == sites

    def test_deterministic_in_seed(self):
        sites = [f"s{i}" for i in range(20)]
        a = make_split_manifest(sites, seed=7)
        b = make_split_manifest(list(reversed(sites)), seed=7)
        assert a.assignments == b.assignments
        c = make_split_manifest(sites, seed=8)
        assert a.assignments != c.assignments

    def test_patch_lists_follow_site_assignment(self):
        sites = [f"s{i}" for i in range(10)]
        patches = {s: [f"p{j}" for j in range(3)] for s in sites}
        m = make_split_manifest(sites, seed=1, patches_by_site=patches)
        seen = {}
        for split in ("train", "val", "test"):
            for site, patch in m.split_patches(split):
                assert m.assignments[site] == split
                seen.setdefault(site, set()).add(split)
        assert all(len(v) == 1 for v in seen.values())
        total = sum(len(m.split_patches(s)) for s in ("train", "val", "test"))
        assert total == 30

    def test_ratio_guards(self):
        sites = ["a", "b", "c"]
        with pytest.raises(ValueError):
            make_split_manifest(sites, ratios=(0.5, 0.2, 0.2))
        with pytest.raises(ValueError):
            make_split_manifest(["a", "b"])

    def test_unknown_split_rejected(self):
        m = make_split_manifest(["a", "b", "c"], seed=0)
        with pytest.raises(ValueError):
            m.sites("holdout")


class TestBatchIterator:
    def _manifest(self, n):
        sites = [f"s{i}" for i in range(max(3, n))]
        patches = {s: ["p0"] for s in sites}
        return make_split_manifest(sites, ratios=(1.0, 0.0, 0.0), seed=0,
                                   patches_by_site=patches)

    def test_partition_arithmetic(self):
        m = self._manifest(10)
        sizes = [len(b) for b in batch_iterator(m, "train", 4, seed=1)]
        assert sizes == [4, 4, 2]

    def test_seeded_order_is_stable(self):
        m = self._manifest(10)
        a = list(batch_iterator(m, "train", 3, seed=5))
        b = list(batch_iterator(m, "train", 3, seed=5))
        c = list(batch_iterator(m, "train", 3, seed=6))
        assert a == b
        assert a != c

    def test_epoch_covers_split_exactly_once(self):
        m = self._manifest(10)
        visited = [i for batch in batch_iterator(m, "train", 3, seed=2)
                   for i in batch]
        assert sorted(visited) == sorted(m.split_patches("train"))

    def test_guards(self):
        m = self._manifest(4)
        with pytest.raises(ValueError):
            list(batch_iterator(m, "nope", 2))
        with pytest.raises(ValueError):
            list(batch_iterator(m, "train", 0))


class TestPatchDataset:
    def test_indexing_and_caching(self, small_dataset):
        root, index = small_dataset
        entries = [(s, p) for s in sorted(index["sites"])
                   for p in index["sites"][s]]
        ds = PatchDataset(root, entries)
        assert len(ds) == 8
        first = ds[0]
        assert ds[0] is first  # cached
        assert first.site_id == entries[0][0]

    def test_index_reader_guards(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset_index(tmp_path)
        (tmp_path / "manifest.json").write_text("{broken")
        with pytest.raises(DataError):
            read_dataset_index(tmp_path)
