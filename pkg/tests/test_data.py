"""Data pipeline: generation, boundary targets, weights, crops, augmentation."""

import numpy as np
import pytest

from fuseseg.data import (IGNORE, CropRegion, DataError, augment,
                          best_crop, boundary_targets, class_frequencies,
                          contour_mask, gen_shapes, integral_table,
                          load_dataset, pixel_weights, rect_sum, write_dataset)


class TestGenShapes:
    def test_deterministic(self):
        a_img, a_lab = gen_shapes(42, size=32, num_classes=4)
        b_img, b_lab = gen_shapes(42, size=32, num_classes=4)
        assert np.array_equal(a_img, b_img) and np.array_equal(a_lab, b_lab)

    def test_different_seeds_differ(self):
        _, a = gen_shapes(1, size=32, num_classes=4)
        _, b = gen_shapes(2, size=32, num_classes=4)
        assert not np.array_equal(a, b)

    def test_labels_in_range(self):
        for seed in range(10):
            _, lab = gen_shapes(seed, size=24, num_classes=5)
            assert lab.max() < 5

    def test_rarity_ordering(self):
        # high class indices must be rarer, counted over many seeded scenes
        counts = np.zeros(5, dtype=np.int64)
        for seed in range(200):
            _, lab = gen_shapes(seed, size=32, num_classes=5)
            counts += np.bincount(lab.ravel(), minlength=5)
        assert counts[4] < counts[1]

    def test_image_range_and_shape(self):
        img, lab = gen_shapes(7, size=40, num_classes=4)
        assert img.shape == (3, 40, 40) and lab.shape == (40, 40)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_needs_three_classes(self):
        with pytest.raises(DataError):
            gen_shapes(0, size=16, num_classes=2)


def brute_force_boundary(labels, thickness, num_classes):
    """All-pairs oracle: distance from every pixel to every contour pixel."""
    h, w = labels.shape
    contour = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            if labels[y, x] == IGNORE:
                continue
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] != IGNORE \
                        and labels[ny, nx] != labels[y, x]:
                    contour[y, x] = True
    planes = np.zeros((num_classes, h, w), dtype=np.uint8)
    for c in range(num_classes):
        seeds = [(y, x) for y in range(h) for x in range(w)
                 if contour[y, x] and labels[y, x] == c]
        for y in range(h):
            for x in range(w):
                for sy, sx in seeds:
                    if (y - sy) ** 2 + (x - sx) ** 2 <= thickness ** 2:
                        planes[c, y, x] = 1
                        break
    return planes


class TestBoundaryTargets:
    def test_uniform_map_has_no_contours(self):
        labels = np.full((8, 8), 2, dtype=np.uint8)
        assert boundary_targets(labels, 3, 4).sum() == 0

    def test_half_split_thickness_one(self):
        # left class 0 / right class 1, split after column 3
        labels = np.zeros((8, 8), dtype=np.uint8)
        labels[:, 4:] = 1
        planes = boundary_targets(labels, 1, 2)
        expect0 = np.zeros((8, 8), dtype=np.uint8)
        expect0[:, 2:5] = 0
        # thickness 1 around column 3: columns 2..4 lie within distance 1
        expect0[:, 2:5] = 1
        assert np.array_equal(planes[0], expect0)
        expect1 = np.zeros((8, 8), dtype=np.uint8)
        expect1[:, 3:6] = 1
        assert np.array_equal(planes[1], expect1)

    @pytest.mark.parametrize("thickness", [1, 3, 5])
    def test_matches_brute_force(self, thickness):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            labels = rng.integers(0, 3, (8, 8)).astype(np.uint8)
            if seed % 5 == 0:
                labels[rng.integers(8), rng.integers(8)] = IGNORE
            got = boundary_targets(labels, thickness, 3)
            want = brute_force_boundary(labels, thickness, 3)
            assert np.array_equal(got, want), f"seed {seed}"

    def test_contour_mask_ignores_ignore(self):
        labels = np.zeros((4, 4), dtype=np.uint8)
        labels[:, 2:] = IGNORE
        # the only label transitions touch ignore pixels: no contours
        assert contour_mask(labels).sum() == 0

    def test_thickness_positive(self):
        with pytest.raises(DataError):
            boundary_targets(np.zeros((4, 4), dtype=np.uint8), 0, 2)


class TestFrequenciesAndWeights:
    def test_balanced_counts(self):
        labels = np.zeros((4, 4), dtype=np.uint8)
        labels[:, 2:] = 1
        freq = class_frequencies([labels], 2)
        assert freq.tolist() == [8, 8]

    def test_counts_conserve_pixels(self):
        maps = []
        rng = np.random.default_rng(0)
        for _ in range(5):
            lab = rng.integers(0, 4, (6, 6)).astype(np.uint8)
            lab[0, 0] = IGNORE
            maps.append(lab)
        freq = class_frequencies(maps, 4)
        assert freq.sum() == sum((m != IGNORE).sum() for m in maps)

    def test_recount_oracle(self):
        rng = np.random.default_rng(1)
        maps = [rng.integers(0, 3, (5, 7)).astype(np.uint8) for _ in range(4)]
        freq = class_frequencies(maps, 3)
        manual = np.zeros(3, dtype=np.int64)
        for m in maps:
            for c in range(3):
                manual[c] += (m == c).sum()
        assert np.array_equal(freq, manual)

    def test_empty_dataset_rejected(self):
        with pytest.raises(DataError):
            class_frequencies([], 3)

    def test_balanced_weights_are_one(self):
        labels = np.zeros((4, 4), dtype=np.uint8)
        labels[:, 2:] = 1
        w = pixel_weights(labels, np.array([100, 100]))
        assert np.allclose(w, 1.0)

    def test_ten_percent_class(self):
        labels = np.zeros((10, 10), dtype=np.uint8)
        labels[0] = 1  # this map's composition is irrelevant to the formula
        freq = np.array([900, 100])
        w = pixel_weights(labels, freq)
        assert np.allclose(w[labels == 1], 5.0)
        assert np.allclose(w[labels == 0], 1000 / (2 * 900))

    def test_rarer_weighs_more(self):
        labels = np.arange(4, dtype=np.uint8).reshape(2, 2)
        freq = np.array([40, 30, 20, 10])
        w = pixel_weights(labels, freq)
        assert w[0, 0] < w[0, 1] < w[1, 0] < w[1, 1]

    def test_ignore_weight_zero(self):
        labels = np.zeros((2, 2), dtype=np.uint8)
        labels[0, 0] = IGNORE
        w = pixel_weights(labels, np.array([4, 4]))
        assert w[0, 0] == 0.0

    def test_zero_frequency_class_rejected(self):
        labels = np.ones((2, 2), dtype=np.uint8)
        with pytest.raises(DataError):
            pixel_weights(labels, np.array([4, 0]))

    def test_weight_conservation(self):
        # dataset-wide sum of weights equals total counted pixels
        rng = np.random.default_rng(2)
        maps = [rng.integers(0, 4, (8, 8)).astype(np.uint8) for _ in range(6)]
        freq = class_frequencies(maps, 4)
        total = sum(pixel_weights(m, freq).sum() for m in maps)
        assert abs(total - freq.sum()) < 1e-6 * freq.sum()


class TestIntegralTable:
    def test_all_ones(self):
        table = integral_table(np.ones((4, 4)))
        assert table[4, 4] == 16.0
        assert table[0].max() == 0 and table[:, 0].max() == 0

    def test_brute_force_prefix_sums(self):
        rng = np.random.default_rng(3)
        w = rng.random((6, 9))
        table = integral_table(w)
        for y in range(7):
            for x in range(10):
                assert abs(table[y, x] - w[:y, :x].sum()) < 1e-9

    def test_monotone_for_nonnegative(self):
        rng = np.random.default_rng(4)
        table = integral_table(rng.random((5, 5)))
        assert (np.diff(table, axis=0) >= 0).all()
        assert (np.diff(table, axis=1) >= 0).all()


class TestRectSum:
    def test_full_image(self):
        rng = np.random.default_rng(5)
        w = rng.random((6, 7))
        table = integral_table(w)
        assert abs(rect_sum(table, CropRegion(0, 0, 6, 7)) - w.sum()) < 1e-9

    def test_single_pixel(self):
        rng = np.random.default_rng(6)
        w = rng.random((5, 5))
        table = integral_table(w)
        assert abs(rect_sum(table, CropRegion(2, 3, 1, 1)) - w[2, 3]) < 1e-12

    def test_thousand_random_regions(self):
        rng = np.random.default_rng(7)
        w = rng.random((16, 16))
        table = integral_table(w)
        for _ in range(1000):
            h = int(rng.integers(1, 17))
            ww = int(rng.integers(1, 17))
            y = int(rng.integers(0, 17 - h))
            x = int(rng.integers(0, 17 - ww))
            direct = w[y:y + h, x:x + ww].sum()
            assert abs(rect_sum(table, CropRegion(y, x, h, ww)) - direct) <= 1e-6 * max(direct, 1)

    def test_out_of_bounds_rejected(self):
        table = integral_table(np.ones((4, 4)))
        with pytest.raises(DataError):
            rect_sum(table, CropRegion(2, 2, 3, 3))


class TestBestCrop:
    def test_hot_pixel_is_covered(self):
        w = np.zeros((8, 8))
        w[5, 6] = 10.0
        region = best_crop(integral_table(w), 2, 2, rng_seed=0)
        assert region.y <= 5 < region.y + 2 and region.x <= 6 < region.x + 2

    def test_uniform_tie_reproducible(self):
        table = integral_table(np.ones((8, 8)))
        a = best_crop(table, 3, 3, rng_seed=11)
        b = best_crop(table, 3, 3, rng_seed=11)
        assert a == b

    def test_uniform_ties_spread(self):
        table = integral_table(np.ones((8, 8)))
        picks = {best_crop(table, 3, 3, rng_seed=s)[:2] for s in range(30)}
        assert len(picks) > 5  # seeded-uniform tie-break, not always top-left

    @pytest.mark.parametrize("size", [2, 4, 8])
    def test_exhaustive_oracle(self, size):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            w = rng.random((16, 16))
            table = integral_table(w)
            got = best_crop(table, size, size, rng_seed=seed)
            got_sum = w[got.y:got.y + size, got.x:got.x + size].sum()
            best = max(w[y:y + size, x:x + size].sum()
                       for y in range(17 - size) for x in range(17 - size))
            assert abs(got_sum - best) <= 1e-9 * max(best, 1.0)

    def test_too_large_rejected(self):
        with pytest.raises(DataError):
            best_crop(integral_table(np.ones((4, 4))), 5, 2, rng_seed=0)


class TestAugment:
    def _sample(self, seed=0, size=32, classes=4):
        return gen_shapes(seed, size=size, num_classes=classes)

    def test_reproducible(self):
        img, lab = self._sample()
        a = augment(img, lab, "random", 16, 16, seed=5)
        b = augment(img, lab, "random", 16, 16, seed=5)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_output_shape(self):
        img, lab = self._sample()
        for mode in ("random", "uniform", "integral"):
            aimg, alab = augment(img, lab, mode, 24, 24, seed=3)
            assert aimg.shape == (3, 24, 24) and alab.shape == (24, 24)

    def test_no_interpolated_labels(self):
        img, lab = self._sample()
        for seed in range(10):
            _, alab = augment(img, lab, "random", 16, 16, seed=seed)
            valid = alab[alab != IGNORE]
            assert set(np.unique(valid)) <= set(np.unique(lab))

    def test_padding_uses_ignore(self):
        img, lab = self._sample()
        # force a heavy downscale so padding must appear
        found = False
        for seed in range(40):
            _, alab = augment(img, lab, "random", 32, 32, seed=seed,
                              flip=False, scale_range=(0.5, 0.6))
            if (alab == IGNORE).any():
                found = True
        assert found

    def test_integral_mode_prefers_rare_blob(self):
        # one rare-class blob whose weight mass dominates any other window
        labels = np.zeros((32, 32), dtype=np.uint8)
        labels[20:24, 24:28] = 2
        image = np.zeros((3, 32, 32), dtype=np.float32)
        freq = np.array([100000, 0, 16], dtype=np.int64)
        freq[1] = 1  # unused class keeps the frequency table valid
        for seed in range(10):
            _, alab = augment(image, labels, "integral", 16, 16, seed=seed,
                              freq=freq, flip=False, scale_range=(1.0, 1.0))
            assert (alab == 2).sum() == 16, f"seed {seed}"

    def test_unknown_mode(self):
        img, lab = self._sample()
        with pytest.raises(DataError):
            augment(img, lab, "center", 8, 8, seed=0)


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        samples = [gen_shapes(s, size=16, num_classes=4) for s in range(3)]
        freq = class_frequencies((lab for _, lab in samples), 4)
        write_dataset(tmp_path, samples, frequencies=freq)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == 3
        for (img, lab), (limg, llab) in zip(samples, loaded):
            assert np.array_equal(lab, llab)
            # images go through 8-bit quantization
            assert np.abs(img - limg).max() <= 0.5 / 255 + 1e-6

    def test_manifest_line_count(self, tmp_path):
        samples = [gen_shapes(s, size=16, num_classes=4) for s in range(5)]
        write_dataset(tmp_path, samples)
        lines = (tmp_path / "index.txt").read_text().strip().splitlines()
        assert len(lines) == 5

    def test_frequencies_file_matches_recount(self, tmp_path):
        samples = [gen_shapes(s, size=16, num_classes=4) for s in range(4)]
        freq = class_frequencies((lab for _, lab in samples), 4)
        write_dataset(tmp_path, samples, frequencies=freq)
        recount = class_frequencies((lab for _, lab in load_dataset(tmp_path)), 4)
        recorded = np.array([int(line.split("\t")[1]) for line in
                             (tmp_path / "frequencies.txt").read_text().strip().splitlines()])
        assert np.array_equal(recount, recorded)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)
