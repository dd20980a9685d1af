import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascal import core


def make_table(rng, n=None, c=None, labeled=True):
    n = n or int(rng.integers(1, 40))
    c = c or int(rng.integers(2, 11))
    logits = rng.normal(0, 4, (n, c))
    labels = rng.integers(0, c, n) if labeled else None
    return core.LogitsTable(logits, labels)


# --- table validation ---------------------------------------------------------


def test_rejects_one_dimensional_logits():
    with pytest.raises(core.InvalidTableError):
        core.LogitsTable(np.array([1.0, 2.0]))


def test_rejects_single_class():
    with pytest.raises(core.InvalidTableError):
        core.LogitsTable(np.zeros((3, 1)))


def test_rejects_empty_table():
    with pytest.raises(core.InvalidTableError):
        core.LogitsTable(np.zeros((0, 4)))


def test_rejects_nan_and_names_the_row():
    bad = np.zeros((5, 3))
    bad[3, 1] = np.nan
    with pytest.raises(core.NonFiniteLogitsError, match="row 3"):
        core.LogitsTable(bad)


def test_rejects_out_of_range_label():
    with pytest.raises(core.LabelRangeError):
        core.LogitsTable(np.zeros((2, 3)), labels=[0, 3])
    with pytest.raises(core.LabelRangeError):
        core.LogitsTable(np.zeros((2, 3)), labels=[-1, 0])


def test_tables_are_immutable():
    t = core.LogitsTable(np.zeros((2, 2)), labels=[0, 1])
    with pytest.raises(ValueError):
        t.logits[0, 0] = 5.0
    with pytest.raises(ValueError):
        t.labels[0] = 1


def test_with_and_without_labels():
    t = core.LogitsTable(np.zeros((2, 2)))
    assert t.labels is None
    t2 = t.with_labels([1, 0])
    assert t2.labels.tolist() == [1, 0]
    assert t2.without_labels().labels is None


# --- softmax and views ----------------------------------------------------------


def test_softmax_two_zero_logit_gap():
    row = core.softmax_rows(np.array([[2.0, 0.0]]))[0]
    assert round(row[0], 6) == 0.880797
    assert round(row[1], 6) == 0.119203


def test_softmax_survives_huge_logits():
    row = core.softmax_rows(np.array([[1000.0, 0.0]]))[0]
    assert np.isfinite(row).all()
    np.testing.assert_allclose(row, [1.0, 0.0], atol=1e-300)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(0)
    z = rng.normal(0, 5, (20, 6))
    for c in (-17.0, 3.25, 1e4):
        np.testing.assert_allclose(
            core.softmax_rows(z), core.softmax_rows(z + c), atol=1e-12
        )


def test_temperature_never_flips_argmax():
    rng = np.random.default_rng(1)
    z = rng.normal(0, 3, (200, 8))
    base = np.argmax(z, axis=1)
    for t in (0.1, 1.0, 10.0):
        probs = core.softmax_rows(z / t)
        np.testing.assert_array_equal(np.argmax(probs, axis=1), base)


def test_derive_predictions_hand_case():
    t = core.LogitsTable(np.array([[3.0, 1.0, 0.0]]), labels=[0])
    view = core.derive_predictions(t)
    assert view.pred[0] == 0
    assert bool(view.correct[0])
    assert round(float(view.conf[0]), 4) == 0.8438


def test_argmax_tie_breaks_to_lowest_index():
    view = core.view_from_probs(np.array([[0.4, 0.4, 0.2], [0.25, 0.5, 0.25]]), None)
    assert view.pred.tolist() == [0, 1]


def test_unlabeled_view_refuses_label_ops():
    view = core.derive_predictions(core.LogitsTable(np.zeros((2, 2))))
    assert view.correct is None
    with pytest.raises(core.UnlabeledTableError):
        view.require_labels()


def test_force_argmax_restores_collapsed_ties():
    probs = np.array([[0.5, 0.5], [0.1, 0.9]])
    pred = np.array([1, 1])
    fixed = core.force_argmax(probs, pred)
    assert np.argmax(fixed, axis=1).tolist() == [1, 1]
    np.testing.assert_allclose(fixed.sum(axis=1), 1.0, atol=1e-12)
    # second row was already fine and comes back untouched
    np.testing.assert_array_equal(fixed[1], probs[1])


def test_force_argmax_no_op_returns_same_object():
    probs = np.array([[0.9, 0.1]])
    assert core.force_argmax(probs, np.array([0])) is probs


# --- content hash ----------------------------------------------------------------


def test_content_hash_sensitivity():
    rng = np.random.default_rng(2)
    t = make_table(rng, n=6, c=4)
    assert core.content_hash(t) == core.content_hash(t)
    bumped = core.LogitsTable(t.logits + 1e-9, t.labels)
    assert core.content_hash(bumped) != core.content_hash(t)
    assert core.content_hash(t.without_labels()) != core.content_hash(t)


# --- LGTS files -------------------------------------------------------------------


def test_minimal_file_is_25_bytes(tmp_path):
    path = tmp_path / "one.lgts"
    core.write_logits_file(core.LogitsTable(np.zeros((1, 2)), labels=[1]), path)
    blob = path.read_bytes()
    assert len(blob) == 25
    assert blob[:4] == b"LGTS"
    assert blob[4] == 1


def test_round_trip_small_table(tmp_path):
    rng = np.random.default_rng(3)
    t = make_table(rng, n=17, c=5)
    path = tmp_path / "t.lgts"
    core.write_logits_file(t, path)
    back = core.read_logits_file(path)
    # float32 on disk: equality after a float32 round trip
    np.testing.assert_array_equal(back.logits, t.logits.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(back.labels, t.labels)
    assert back.name == "t"


@settings(max_examples=120, deadline=None)
@given(
    n=st.integers(1, 25),
    c=st.integers(2, 12),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_property(tmp_path_factory, n, c, seed):
    rng = np.random.default_rng(seed)
    t = core.LogitsTable(
        rng.normal(0, 10, (n, c)).astype(np.float32), labels=rng.integers(0, c, n)
    )
    path = tmp_path_factory.mktemp("rt") / "x.lgts"
    core.write_logits_file(t, path)
    back = core.read_logits_file(path)
    np.testing.assert_array_equal(back.logits, t.logits)
    np.testing.assert_array_equal(back.labels, t.labels)


def test_write_requires_labels(tmp_path):
    with pytest.raises(core.UnlabeledTableError):
        core.write_logits_file(core.LogitsTable(np.zeros((1, 2))), tmp_path / "x.lgts")


def test_read_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.lgts"
    p.write_bytes(b"NOPE" + bytes(30))
    with pytest.raises(core.BadMagicError):
        core.read_logits_file(p)


def test_read_rejects_wrong_version(tmp_path):
    p = tmp_path / "v9.lgts"
    p.write_bytes(b"LGTS" + bytes([9]) + bytes(20))
    with pytest.raises(core.UnsupportedVersionError):
        core.read_logits_file(p)


def test_read_rejects_truncation(tmp_path):
    good = tmp_path / "good.lgts"
    core.write_logits_file(core.LogitsTable(np.zeros((3, 2)), labels=[0, 1, 0]), good)
    blob = good.read_bytes()
    for cut in (8, len(blob) - 1):
        p = tmp_path / f"cut{cut}.lgts"
        p.write_bytes(blob[:cut])
        with pytest.raises(core.TruncatedPayloadError):
            core.read_logits_file(p)
    p = tmp_path / "long.lgts"
    p.write_bytes(blob + b"\x00")
    with pytest.raises(core.TruncatedPayloadError):
        core.read_logits_file(p)


def test_read_rejects_label_outside_class_range(tmp_path):
    good = tmp_path / "good.lgts"
    core.write_logits_file(core.LogitsTable(np.zeros((1, 2)), labels=[1]), good)
    blob = bytearray(good.read_bytes())
    blob[-4:] = (7).to_bytes(4, "little")  # label 7 in a C=2 file
    p = tmp_path / "bad.lgts"
    p.write_bytes(bytes(blob))
    with pytest.raises(core.LabelRangeError):
        core.read_logits_file(p)


def test_read_rejects_single_class_file(tmp_path):
    payload = b"LGTS" + bytes([1])
    payload += np.array([2, 1], dtype="<u4").tobytes()
    payload += np.zeros(2, dtype="<f4").tobytes()
    payload += np.zeros(2, dtype="<u4").tobytes()
    p = tmp_path / "c1.lgts"
    p.write_bytes(payload)
    with pytest.raises(core.InvalidTableError):
        core.read_logits_file(p)
