from collections import deque

import numpy as np
import pytest

from scarseg.errors import FormatError
from scarseg.numcore import PrngStream
from scarseg.phantom import (
    GenConfig,
    MANIFEST_HEADER,
    Sample,
    generate_dataset,
    generate_sample,
    load_dataset,
    read_sample,
    sample_filename,
    save_dataset,
    split_dataset,
    write_sample,
)


@pytest.fixture(scope="module")
def big_dataset():
    # 100 per class: shared by the distributional/monotonicity tests
    return generate_dataset(GenConfig(counts=(100, 100, 100), seed=11))


def _components(mask, start_value):
    """Count 4-connected components of mask==start_value."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for si in range(h):
        for sj in range(w):
            if mask[si, sj] != start_value or seen[si, sj]:
                continue
            count += 1
            queue = deque([(si, sj)])
            seen[si, sj] = True
            while queue:
                i, j = queue.popleft()
                for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                    if 0 <= ni < h and 0 <= nj < w and not seen[ni, nj] \
                            and mask[ni, nj] == start_value:
                        seen[ni, nj] = True
                        queue.append((ni, nj))
    return count


class TestGenerateSample:
    def test_scar_inside_myocardium(self, big_dataset):
        for s in big_dataset:
            assert int(((s.scar > 0) & (s.myo == 0)).sum()) == 0

    def test_image_range_and_dtype(self, big_dataset):
        for s in big_dataset:
            assert s.image.dtype == np.float32
            assert float(s.image.min()) >= 0.0
            assert float(s.image.max()) <= 1.0

    def test_difficulty0_burden_and_gap_ranges(self):
        cfg = GenConfig(counts=(0, 0, 0), seed=3)
        for k in range(30):
            s = generate_sample(cfg, 0, PrngStream(3, k))
            assert 0.15 <= s.burden() <= 0.35

    def test_burden_ranges_per_difficulty(self, big_dataset):
        ranges = {0: (0.15, 0.35), 1: (0.08, 0.15), 2: (0.01, 0.08)}
        for s in big_dataset:
            lo, hi = ranges[s.difficulty]
            b = s.burden()
            if s.difficulty == 2 and b == 0.0:
                continue  # sanctioned zero-scar hard case
            assert lo <= b < hi + 1e-12

    def test_zero_scar_cases_exist_only_in_hardest(self, big_dataset):
        zero_by_class = {0: 0, 1: 0, 2: 0}
        for s in big_dataset:
            if not (s.scar > 0).any():
                zero_by_class[s.difficulty] += 1
                assert (s.myo > 0).any()
        assert zero_by_class[0] == 0 and zero_by_class[1] == 0
        assert 4 <= zero_by_class[2] <= 35  # ~15% of 100

    def test_myocardium_is_single_annulus(self, big_dataset):
        for s in list(big_dataset)[::10]:
            myo = s.myo.astype(int)
            assert _components(myo, 1) == 1  # one 4-connected ring
            assert _components(myo, 0) == 2  # cavity + exterior

    def test_monotone_difficulty(self, big_dataset):
        by_class = {0: [], 1: [], 2: []}
        for s in big_dataset:
            by_class[s.difficulty].append(s.burden())
        means = [float(np.mean(by_class[d])) for d in (0, 1, 2)]
        assert means[0] > means[1] > means[2]

    def test_monotone_contrast_gap(self):
        # measure the rendered scar-vs-myocardium intensity gap per class
        cfg = GenConfig(counts=(0, 0, 0), seed=19)
        gaps = {0: [], 1: [], 2: []}
        for d in (0, 1, 2):
            for k in range(60):
                s = generate_sample(cfg, d, PrngStream(19, (d + 1) * 1000 + k))
                scar = s.scar > 0
                viable = (s.myo > 0) & ~scar
                if scar.sum() >= 10:
                    gaps[d].append(float(s.image[scar].mean() - s.image[viable].mean()))
        assert np.mean(gaps[0]) > np.mean(gaps[1]) > np.mean(gaps[2]) > 0

    def test_determinism(self):
        cfg = GenConfig(counts=(2, 2, 2), seed=5)
        a = generate_dataset(cfg)
        b = generate_dataset(cfg)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert np.array_equal(sa.scar, sb.scar)
            assert np.array_equal(sa.myo, sb.myo)


class TestGenerateDataset:
    def test_counts_and_ids(self):
        ds = generate_dataset(GenConfig(counts=(4, 3, 3), seed=1))
        assert len(ds) == 10
        assert [s.difficulty for s in ds] == [0] * 4 + [1] * 3 + [2] * 3
        assert ds.ids() == list(range(10))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            generate_dataset(GenConfig(counts=(0, 0, 0)))

    def test_per_sample_streams_keyed_by_id(self):
        # sample k is identical whether or not other samples are generated
        full = generate_dataset(GenConfig(counts=(2, 2, 2), seed=9))
        lone = generate_sample(GenConfig(counts=(2, 2, 2), seed=9), 1, PrngStream(9, 2))
        assert np.array_equal(full.samples[2].image, lone.image)
        assert np.array_equal(full.samples[2].scar, lone.scar)


class TestSplit:
    def test_hand_derived_4_3_3(self):
        ds = generate_dataset(GenConfig(counts=(4, 3, 3), seed=2))
        train, test = split_dataset(ds, 0.8, PrngStream(2, 77))
        # floors (3,2,2) leave one remainder seat for 8 total; the 0.4
        # fractional parts of both 3-sample classes beat 0.2, tie broken
        # toward lower difficulty: splits (3,3,2) -> train 8, test 2
        assert len(train) == 8 and len(test) == 2
        by_class = lambda d, split: sum(1 for s in split if s.difficulty == d)
        assert by_class(0, train) == 3 and by_class(1, train) == 3 and by_class(2, train) == 2

    def test_equal_classes(self):
        ds = generate_dataset(GenConfig(counts=(10, 10, 10), seed=3))
        train, test = split_dataset(ds, 0.8, PrngStream(3, 77))
        for d in (0, 1, 2):
            assert sum(1 for s in train if s.difficulty == d) == 8
            assert sum(1 for s in test if s.difficulty == d) == 2

    def test_disjoint_and_exhaustive(self):
        ds = generate_dataset(GenConfig(counts=(5, 4, 6), seed=4))
        train, test = split_dataset(ds, 0.7, PrngStream(4, 77))
        train_ids = set(train.ids())
        test_ids = set(test.ids())
        assert train_ids | test_ids == set(ds.ids())
        assert not (train_ids & test_ids)

    def test_tiny_class_goes_to_train_with_warning(self):
        ds = generate_dataset(GenConfig(counts=(4, 1, 4), seed=5))
        with pytest.warns(UserWarning, match="difficulty class 1"):
            train, test = split_dataset(ds, 0.5, PrngStream(5, 77))
        assert all(s.difficulty != 1 for s in test)

    def test_bad_fraction_rejected(self):
        ds = generate_dataset(GenConfig(counts=(2, 2, 2), seed=6))
        for frac in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                split_dataset(ds, frac, PrngStream(6, 77))


class TestSampleFiles:
    def test_roundtrip_bit_exact(self, tmp_path):
        s = generate_sample(GenConfig(seed=8), 1, PrngStream(8, 123))
        path = tmp_path / sample_filename(s.sample_id)
        write_sample(s, path)
        back = read_sample(path)
        assert back.sample_id == 123
        assert back.difficulty == s.difficulty
        assert np.array_equal(back.image, s.image) and back.image.dtype == s.image.dtype
        assert np.array_equal(back.scar, s.scar)
        assert np.array_equal(back.myo, s.myo)

    def test_truncated_file(self, tmp_path):
        s = generate_sample(GenConfig(seed=8), 0, PrngStream(8, 0))
        path = tmp_path / "s.lges"
        write_sample(s, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            read_sample(path)

    def test_bad_magic_named(self, tmp_path):
        path = tmp_path / "bad.lges"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(FormatError, match="XXXX"):
            read_sample(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.lges"
        path.write_bytes(b"LGES\x07" + b"\x00" * 64)
        with pytest.raises(FormatError, match="version"):
            read_sample(path)

    def test_trailing_garbage(self, tmp_path):
        s = generate_sample(GenConfig(seed=8), 0, PrngStream(8, 0))
        path = tmp_path / "s.lges"
        write_sample(s, path)
        path.write_bytes(path.read_bytes() + b"zz")
        with pytest.raises(FormatError, match="trailing"):
            read_sample(path)


class TestDatasetIO:
    def test_roundtrip(self, tmp_path):
        ds = generate_dataset(GenConfig(counts=(2, 2, 2), seed=10))
        save_dataset(ds, tmp_path / "data")
        back = load_dataset(tmp_path / "data")
        assert back.ids() == ds.ids()
        for sa, sb in zip(ds, back):
            assert np.array_equal(sa.image, sb.image)
            assert np.array_equal(sa.scar, sb.scar)
            assert np.array_equal(sa.myo, sb.myo)
            assert sa.difficulty == sb.difficulty

    def test_manifest_header_checked(self, tmp_path):
        ds = generate_dataset(GenConfig(counts=(1, 1, 1), seed=10))
        save_dataset(ds, tmp_path / "data")
        manifest = tmp_path / "data" / "manifest.txt"
        manifest.write_text("WRONG v9\n" + manifest.read_text().split("\n", 1)[1])
        with pytest.raises(FormatError, match=MANIFEST_HEADER):
            load_dataset(tmp_path / "data")

    def test_difficulty_mismatch_detected(self, tmp_path):
        ds = generate_dataset(GenConfig(counts=(1, 1, 1), seed=10))
        save_dataset(ds, tmp_path / "data")
        manifest = tmp_path / "data" / "manifest.txt"
        lines = manifest.read_text().splitlines()
        name, _ = lines[1].split("\t")
        lines[1] = f"{name}\t2"
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="does not match"):
            load_dataset(tmp_path / "data")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError, match="manifest"):
            load_dataset(tmp_path)


class TestGenConfigValidation:
    def test_degenerate_ranges_rejected(self):
        with pytest.raises(ValueError):
            GenConfig(inner_radius=(8.0, 8.0))
        with pytest.raises(ValueError):
            GenConfig(wall=(7.0, 4.0))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            GenConfig(counts=(-1, 2, 2))
