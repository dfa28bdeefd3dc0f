import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crae import data
from crae.data import (DataError, batch_iterator, generate_dataset, make_templates, mix_images,
                       rotate90, rotation_quadruple, split_dataset)


def rotate_by_loops(img, k):
    """Independent oracle: apply out[r][c] = in[c][W-1-r] k times with plain loops."""
    out = [list(row) for row in img]
    for _ in range(k % 4):
        n = len(out)
        out = [[out[c][n - 1 - r] for c in range(n)] for r in range(n)]
    return np.array(out)


@pytest.fixture(scope="module")
def templates():
    return make_templates(4, 16, 16, seed=0)


class TestRotate:
    def test_identity(self):
        x = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(rotate90(x, 0), x)

    def test_two_by_two(self):
        x = np.array([["a", "b"], ["c", "d"]])
        assert rotate90(x, 1).tolist() == [["b", "d"], ["a", "c"]]

    @pytest.mark.parametrize("k", range(4))
    def test_matches_loop_oracle(self, k):
        x = np.random.default_rng(k).random((6, 6))
        np.testing.assert_array_equal(rotate90(x, k), rotate_by_loops(x, k))

    def test_non_square(self):
        with pytest.raises(DataError):
            rotate90(np.zeros((3, 4)), 1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.integers(0, 3))
    def test_group_law(self, seed, k1, k2):
        x = np.random.default_rng(seed).random((16, 16))
        np.testing.assert_array_equal(rotate90(rotate90(x, k2), k1), rotate90(x, (k1 + k2) % 4))
        np.testing.assert_array_equal(rotate90(rotate90(x, 1), 3), x)
        np.testing.assert_array_equal(np.sort(rotate90(x, k1), axis=None), np.sort(x, axis=None))


class TestQuadruple:
    def test_members(self):
        x = np.random.default_rng(0).random((8, 8))
        quad, z = rotation_quadruple(x)
        assert z.tolist() == [0, 1, 2, 3]
        np.testing.assert_array_equal(quad[0], x)
        for q in quad:
            np.testing.assert_array_equal(np.sort(q, axis=None), np.sort(x, axis=None))
        np.testing.assert_array_equal(rotate90(quad[1], 3), quad[0])

    def test_rotate_batch_layout(self):
        x = np.random.default_rng(1).random((3, 8, 8))
        rot, z, src = data.rotate_batch(x)
        assert rot.shape == (12, 8, 8)
        for i in range(12):
            np.testing.assert_array_equal(rot[i], rotate90(x[src[i]], z[i]))


class TestMix:
    def test_alpha_one(self):
        a, b = np.random.default_rng(0).random((2, 4, 4))
        np.testing.assert_array_equal(mix_images(a, b, 1.0), a)

    def test_half(self):
        np.testing.assert_array_equal(mix_images(np.zeros((2, 2)), np.ones((2, 2)), 0.5), np.full((2, 2), 0.5))

    @pytest.mark.parametrize("alpha", [0.3, 0.49, 1.01])
    def test_out_of_range(self, alpha):
        with pytest.raises(DataError):
            mix_images(np.zeros((2, 2)), np.ones((2, 2)), alpha)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.5, 1.0))
    def test_within_input_range(self, seed, alpha):
        a, b = np.random.default_rng(seed).random((2, 5, 5))
        m = mix_images(a, b, alpha)
        assert np.all(m >= np.minimum(a, b) - 1e-15) and np.all(m <= np.maximum(a, b) + 1e-15)


class TestTemplates:
    def test_invariants(self, templates):
        threshold = 0.15 * 16 * 16
        assert len(templates) == 4
        for t in templates:
            for k in (1, 2, 3):
                assert np.count_nonzero(t.mask != rotate90(t.mask, k)) >= threshold
        for i in range(4):
            for j in range(i + 1, 4):
                best = min(np.count_nonzero(templates[i].mask != rotate90(templates[j].mask, k))
                           for k in range(4))
                assert best >= threshold

    def test_deterministic(self, templates):
        again = make_templates(4, 16, 16, seed=0)
        for a, b in zip(templates, again):
            np.testing.assert_array_equal(a.mask, b.mask)

    @pytest.mark.parametrize("seed", range(10))
    def test_many_seeds_satisfy_checks(self, seed):
        for t in make_templates(4, 16, 16, seed=seed):
            assert data.rotation_asymmetry(t.mask) >= 0.15 * 256

    def test_too_few_classes(self):
        with pytest.raises(DataError):
            make_templates(1, 16, 16, 0)

    def test_unsatisfiable_reports(self):
        with pytest.raises(DataError, match="could not draw"):
            make_templates(50, 8, 8, 0, max_tries=200)


class TestGenerate:
    def test_clean_images_are_scaled_templates(self, templates):
        x, y = generate_dataset(templates, 5, noise_rate=0.0, max_jitter=0, seed=1)
        for img, label in zip(x, y):
            mask = templates[label].mask
            level = img[mask]
            assert np.all(level == level[0]) and 0.7 <= level[0] <= 1.0
            assert np.all(img[~mask] == 0)

    def test_balance(self, templates):
        _, y = generate_dataset(templates, 10, seed=0)
        assert len(y) == 40 and np.bincount(y).tolist() == [10] * 4

    def test_noise_rate_monte_carlo(self, templates):
        clean, _ = generate_dataset(templates, 40, noise_rate=0.0, max_jitter=2, seed=5)
        noisy, _ = generate_dataset(templates, 40, noise_rate=0.05, max_jitter=2, seed=5)
        frac = np.mean(clean != noisy)  # 40960 pixels
        assert abs(frac - 0.05) < 0.01

    def test_pixels_in_unit_interval(self, templates):
        x, _ = generate_dataset(templates, 20, noise_rate=0.2, max_jitter=3, seed=2)
        assert x.min() >= 0 and x.max() <= 1

    def test_deterministic(self, templates):
        a = generate_dataset(templates, 8, seed=9)
        b = generate_dataset(templates, 8, seed=9)
        np.testing.assert_array_equal(a[0], b[0])

    @pytest.mark.parametrize("kw", [{"noise_rate": 0.3}, {"max_jitter": 4}, {"noise_rate": -0.1}])
    def test_bad_arguments(self, templates, kw):
        with pytest.raises(DataError):
            generate_dataset(templates, 2, **kw)


@pytest.fixture(scope="module")
def dataset(templates):
    return generate_dataset(templates, 1260, seed=0)


@pytest.fixture(scope="module")
def split():
    return data.make_benchmark(seed=0)


class TestSplit:
    def test_sizes(self, dataset):
        s = split_dataset(*dataset, n_labeled=40, n_test=1000, seed=0)
        assert (len(s.labeled_y), len(s.unlabeled_y), len(s.test_y)) == (40, 4000, 1000)
        assert np.bincount(s.labeled_y).tolist() == [10] * 4
        union = np.concatenate([s.labeled_idx, s.unlabeled_idx, s.test_idx])
        assert len(np.unique(union)) == 5040

    def test_unbalanced_request(self, dataset):
        with pytest.raises(DataError):
            split_dataset(*dataset, n_labeled=41, n_test=1000, seed=0)

    def test_too_large(self, dataset):
        with pytest.raises(DataError):
            split_dataset(*dataset, n_labeled=40, n_test=5000, seed=0)

    def test_deterministic(self, dataset):
        a = split_dataset(*dataset, 40, 1000, seed=3)
        b = split_dataset(*dataset, 40, 1000, seed=3)
        np.testing.assert_array_equal(a.labeled_idx, b.labeled_idx)
        np.testing.assert_array_equal(a.unlabeled_idx, b.unlabeled_idx)


class TestBatches:
    def test_count(self, split):
        batches = list(batch_iterator(split, 32, seed=0, epoch=1))
        assert len(batches) == 125
        assert all(len(l) == 32 and len(u) == 32 for l, u in batches)

    def test_deterministic(self, split):
        a = list(batch_iterator(split, 32, seed=4, epoch=2))
        b = list(batch_iterator(split, 32, seed=4, epoch=2))
        for (la, ua), (lb, ub) in zip(a, b):
            np.testing.assert_array_equal(la.images, lb.images)
            np.testing.assert_array_equal(ua.images, ub.images)

    def test_epochs_differ(self, split):
        a = next(batch_iterator(split, 32, seed=4, epoch=1))[1]
        b = next(batch_iterator(split, 32, seed=4, epoch=2))[1]
        assert not np.array_equal(a.images, b.images)

    def test_unlabeled_multiset(self, split):
        B = 48  # 4000 = 83 * 48 + 16: the remainder is dropped
        seen = np.concatenate([u.images.reshape(len(u), -1) for _, u in batch_iterator(split, B, 0, 1)])
        assert len(seen) == 83 * B
        rows = {r.tobytes() for r in split.unlabeled_x.reshape(4000, -1)}
        assert all(r.tobytes() in rows for r in seen)
        assert len({r.tobytes() for r in seen}) == len(seen)  # no example drawn twice

    def test_unlabeled_covers_everything_when_divisible(self, split):
        seen = np.concatenate([u.images.reshape(len(u), -1) for _, u in batch_iterator(split, 32, 0, 1)])
        key = lambda a: sorted(r.tobytes() for r in a)
        assert key(seen) == key(split.unlabeled_x.reshape(4000, -1))

    def test_labeled_cycles_balanced(self, split):
        labels = np.concatenate([l.labels for l, _ in batch_iterator(split, 32, 0, 1)])
        counts = np.bincount(labels)
        assert counts.max() - counts.min() <= 10  # at most one partial cycle of 40

    def test_empty_labeled(self, split):
        empty = data.Split(split.labeled_x[:0], split.labeled_y[:0], split.unlabeled_x, split.unlabeled_y,
                           split.test_x, split.test_y, split.labeled_idx[:0], split.unlabeled_idx,
                           split.test_idx)
        with pytest.raises(DataError):
            next(batch_iterator(empty, 32, 0, 1))


def test_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(0).random((16, 16))
    path = tmp_path / "x.pgm"
    data.write_pgm(img, path)
    text = path.read_text().split()
    assert text[:4] == ["P2", "16", "16", "255"]
    np.testing.assert_allclose(data.read_pgm(path), img, atol=0.5 / 255 + 1e-12)
