import numpy as np
import pytest

from cascal import core, representation as rep


def random_view(rng, n=300, c=6):
    logits = rng.normal(0, 3, (n, c))
    return core.derive_predictions(core.LogitsTable(logits, labels=rng.integers(0, c, n)))


def two_pass_cell_stats(cell, probs, n_cells):
    """Independent oracle: explicit mean pass then variance pass per cell."""
    c = probs.shape[1]
    mean = np.zeros((n_cells, c))
    var = np.zeros((n_cells, c))
    counts = np.zeros(n_cells, dtype=np.int64)
    for k in range(n_cells):
        members = probs[cell == k]
        counts[k] = len(members)
        if len(members):
            mean[k] = members.mean(axis=0)
            var[k] = ((members - mean[k]) ** 2).mean(axis=0)
    return counts, mean, var


def test_confidence_level_thresholds():
    conf = np.array([0.3, 0.5, 0.500001, 0.8, 0.81, 1.0])
    # edges go down: exactly lo is still low, exactly hi is still mid
    assert rep.confidence_level(conf).tolist() == [0, 0, 1, 1, 2, 2]


def test_bad_thresholds_rejected():
    for bad in ((0.8, 0.5), (0.0, 0.5), (0.5, 1.0)):
        with pytest.raises(ValueError):
            rep.confidence_level(np.array([0.6]), thresholds=bad)


def test_category_shapes_and_size_total():
    rng = np.random.default_rng(20)
    view = random_view(rng, n=257, c=9)
    crep = rep.category_representation(view)
    assert crep.mean.shape == (9, 3, 9)
    assert crep.variance.shape == (9, 3, 9)
    assert crep.sizes.shape == (9, 3)
    assert crep.sizes.dtype == np.int64
    assert crep.sizes.sum() == 257


def test_confidence_shapes_and_size_total():
    rng = np.random.default_rng(21)
    view = random_view(rng, n=123, c=4)
    zrep = rep.confidence_representation(view, 10)
    assert zrep.mean.shape == (10, 4)
    assert zrep.variance.shape == (10, 4)
    assert zrep.sizes.sum() == 123
    assert zrep.bin_of.shape == (123,)
    assert zrep.n_bins == 10 and zrep.n_classes == 4


def test_hand_variance_case():
    # two rows in one cell: mean [0.5, 0.5], population variance [0.25, 0.25]
    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    counts, mean, var = two_pass_cell_stats(np.zeros(2, dtype=np.int64), probs, 1)
    np.testing.assert_allclose(mean[0], [0.5, 0.5])
    np.testing.assert_allclose(var[0], [0.25, 0.25])
    got_counts, got_mean, got_var = rep._cell_stats(np.zeros(2, dtype=np.int64), probs, 1)
    np.testing.assert_allclose(got_mean[0], [0.5, 0.5])
    np.testing.assert_allclose(got_var[0], [0.25, 0.25])
    assert got_counts[0] == 2


def test_one_pass_matches_two_pass_oracle():
    rng = np.random.default_rng(22)
    for _ in range(10):
        view = random_view(rng, n=int(rng.integers(1, 500)), c=5)
        cell = view.pred * rep.N_LEVELS + rep.confidence_level(view.conf)
        counts, mean, var = rep._cell_stats(cell, view.probs, 5 * rep.N_LEVELS)
        ocounts, omean, ovar = two_pass_cell_stats(cell, view.probs, 5 * rep.N_LEVELS)
        np.testing.assert_array_equal(counts, ocounts)
        np.testing.assert_allclose(mean, omean, atol=1e-12)
        np.testing.assert_allclose(var, ovar, atol=1e-12)


def test_permutation_invariance_is_exact():
    rng = np.random.default_rng(23)
    view = random_view(rng, n=400, c=7)
    perm = rng.permutation(400)
    shuffled = core.view_from_probs(view.probs[perm], view.labels[perm])
    a, b = rep.category_representation(view), rep.category_representation(shuffled)
    np.testing.assert_array_equal(a.sizes, b.sizes)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.variance, b.variance, atol=1e-12)
    za, zb = rep.confidence_representation(view), rep.confidence_representation(shuffled)
    np.testing.assert_array_equal(za.sizes, zb.sizes)
    np.testing.assert_allclose(za.mean, zb.mean, atol=1e-12)


def test_logit_shift_leaves_representations_unchanged():
    rng = np.random.default_rng(24)
    logits = rng.normal(0, 3, (200, 5))
    labels = rng.integers(0, 5, 200)
    v1 = core.derive_predictions(core.LogitsTable(logits, labels))
    v2 = core.derive_predictions(core.LogitsTable(logits + 11.5, labels))
    a, b = rep.category_representation(v1), rep.category_representation(v2)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.variance, b.variance, atol=1e-12)
    np.testing.assert_array_equal(a.sizes, b.sizes)


def test_empty_cells_are_zero_filled():
    # every prediction is class 0 at high confidence: all other cells empty
    probs = np.tile([0.97, 0.01, 0.02], (6, 1))
    view = core.view_from_probs(probs, np.zeros(6, dtype=int))
    crep = rep.category_representation(view)
    assert crep.sizes[0, 2] == 6
    mask = np.ones((3, 3), dtype=bool)
    mask[0, 2] = False
    assert crep.sizes[mask].sum() == 0
    assert np.all(crep.mean[mask] == 0.0)
    assert np.all(crep.variance[mask] == 0.0)


def test_representation_key_tracks_content():
    rng = np.random.default_rng(25)
    view = random_view(rng)
    other = core.view_from_probs(view.probs.copy(), view.labels)
    assert rep.representation_key(view) == rep.representation_key(other)
    bumped = core.view_from_probs(np.roll(view.probs, 1, axis=0), view.labels)
    assert rep.representation_key(view) != rep.representation_key(bumped)


def test_category_blob_round_trip(tmp_path):
    rng = np.random.default_rng(26)
    crep = rep.category_representation(random_view(rng, n=150, c=4))
    path = tmp_path / "c.crep"
    rep.save_representation(crep, path)
    back = rep.load_representation(path)
    assert isinstance(back, rep.CategoryRepresentation)
    np.testing.assert_array_equal(back.mean, crep.mean)
    np.testing.assert_array_equal(back.variance, crep.variance)
    np.testing.assert_array_equal(back.sizes, crep.sizes)


def test_confidence_blob_round_trip(tmp_path):
    rng = np.random.default_rng(27)
    zrep = rep.confidence_representation(random_view(rng, n=90, c=3), 10)
    path = tmp_path / "z.crep"
    rep.save_representation(zrep, path)
    back = rep.load_representation(path)
    assert isinstance(back, rep.ConfidenceRepresentation)
    np.testing.assert_array_equal(back.mean, zrep.mean)
    np.testing.assert_array_equal(back.bin_of, zrep.bin_of)
    np.testing.assert_array_equal(back.sizes, zrep.sizes)


def test_blob_error_paths(tmp_path):
    with pytest.raises(core.BadMagicError):
        rep.representation_from_bytes(b"XXXX" + bytes(20))
    rng = np.random.default_rng(28)
    blob = rep.representation_to_bytes(rep.category_representation(random_view(rng, n=20, c=3)))
    with pytest.raises(core.TruncatedPayloadError):
        rep.representation_from_bytes(blob[:-8])
    with pytest.raises(core.BadMagicError):
        rep.representation_from_bytes(blob[:4] + bytes([99]) + blob[5:])
    with pytest.raises(TypeError):
        rep.representation_to_bytes(object())
