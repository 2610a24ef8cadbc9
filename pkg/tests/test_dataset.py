import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modecausal.dataset import (
    INVALID,
    CodedDataset,
    DataError,
    SplitSpec,
    add_mode_column,
    clean,
    default_codebook,
    load_csv,
    smote,
    smote_draws,
    stratified_split,
    _round_to_codes,
)
from conftest import make_dataset

TABLE1_CODES = {
    "hhinc": list(range(1, 11)),
    "sex": [1, 2],
    "race_x": [0, 1],
    "hhveh_x": [0, 1],
    "hhsize_x": [1, 2, 3],
    "age_x": [1, 2, 3, 4],
    "distance_x": list(range(1, 9)),
    "work_purp": [0, 1],
    "Car": [0, 1],
    "Public": [0, 1],
    "Walk": [0, 1],
}


def test_default_codebook_reproduces_table1_codes():
    cb = default_codebook()
    assert list(cb.names) == list(TABLE1_CODES)
    for name, codes in TABLE1_CODES.items():
        assert list(cb[name].codes) == codes


def test_default_codebook_labels():
    cb = default_codebook()
    assert cb["race_x"].decode("White") == 0
    assert cb["race_x"].decode("Non-white") == 1
    assert cb["hhveh_x"].decode("Have a vehicle") == 1
    assert cb["age_x"].decode("64+ years") == 4


def test_load_identity_decoding(write_csv):
    cb = default_codebook().subset(["hhveh_x", "work_purp"])
    d = load_csv(write_csv("hhveh_x,work_purp\n1,0\n"), cb)
    assert d.n == 1
    assert d.values.tolist() == [[1, 0]]


def test_load_label_cell(write_csv):
    cb = default_codebook().subset(["race_x"])
    d = load_csv(write_csv("race_x\nWhite\nNon-white\n"), cb)
    assert d.column("race_x").tolist() == [0, 1]


def test_load_undecodable_cell_names_row_and_column(write_csv):
    cb = default_codebook().subset(["work_purp"])
    with pytest.raises(DataError, match=r"row 2.*work_purp.*Maybe"):
        load_csv(write_csv("work_purp\n1\nMaybe\n"), cb)


def test_load_missing_column(write_csv):
    cb = default_codebook().subset(["sex", "race_x"])
    with pytest.raises(DataError, match="race_x"):
        load_csv(write_csv("sex\n1\n"), cb)


def test_load_keeps_codebook_columns_in_order_and_skips_comments(write_csv):
    cb = default_codebook().subset(["sex", "race_x"])
    d = load_csv(write_csv("# provenance\nrace_x,extra,sex\n1,9,2\n0,9,1\n"), cb)
    assert d.columns == ("sex", "race_x")
    assert d.values.tolist() == [[2, 1], [1, 0]]


def test_invalid_label_becomes_marker_and_clean_drops_it(write_csv):
    cb = default_codebook().subset(["sex", "work_purp"])
    d = load_csv(write_csv("sex,work_purp\n1,0\nI don't know,1\n2,1\n"), cb)
    assert d.values[1, 0] == INVALID
    c = clean(d, cb)
    assert c.n == 2
    assert c.values.tolist() == [[1, 0], [2, 1]]


def test_clean_drops_out_of_range_codes():
    d = make_dataset(["a", "b"], [[0, 1], [2, 0], [1, 1]])
    assert clean(d).values.tolist() == [[0, 1], [1, 1]]


def test_clean_identity_and_all_invalid():
    d = make_dataset(["a"], [[0], [1]])
    assert clean(d) is d
    bad = make_dataset(["a"], [[5], [INVALID]])
    assert clean(bad).n == 0


@given(st.lists(st.tuples(st.integers(-1, 3), st.integers(-1, 3)), max_size=30))
def test_clean_idempotent(rows):
    d = make_dataset(["a", "b"], rows or np.zeros((0, 2)), n_levels=3)
    once = clean(d)
    assert np.array_equal(clean(once).values, once.values)
    assert once.n <= d.n


def _labels_60_40():
    return make_dataset(["y", "x"], [[0, i % 2] for i in range(60)] + [[1, i % 2] for i in range(40)])


def test_split_exact_stratum_arithmetic():
    d = _labels_60_40()
    train, test = stratified_split(d, SplitSpec((("train", 0.8), ("test", 0.2)), "y", seed=3))
    assert (train.n, test.n) == (80, 20)
    assert np.bincount(train.column("y")).tolist() == [48, 32]
    assert np.bincount(test.column("y")).tolist() == [12, 8]


def test_split_single_part_is_identity():
    d = _labels_60_40()
    (only,) = stratified_split(d, SplitSpec((("all", 1.0),), "y", seed=0))
    assert np.array_equal(only.values, d.values)


def test_split_deterministic():
    d = _labels_60_40()
    spec = SplitSpec((("a", 0.72), ("b", 0.18), ("c", 0.10)), "y", seed=11)
    first = stratified_split(d, spec)
    second = stratified_split(d, spec)
    for p, q in zip(first, second):
        assert np.array_equal(p.values, q.values)


def test_split_rejects_bad_fractions_and_tiny_strata():
    with pytest.raises(DataError):
        SplitSpec((("a", 0.5), ("b", 0.4)), "y")
    d = make_dataset(["y"], [[0], [0], [0], [1]])
    with pytest.raises(DataError, match="stratum"):
        stratified_split(d, SplitSpec((("a", 0.5), ("b", 0.5)), "y"))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(0, 2), min_size=12, max_size=80),
    st.sampled_from([(0.8, 0.2), (0.72, 0.18, 0.10), (0.5, 0.5), (0.34, 0.33, 0.33)]),
    st.integers(0, 2**31 - 1),
)
def test_split_partition_and_proportions(labels, fractions, seed):
    counts = np.bincount(labels, minlength=3)
    if (counts[counts > 0] < len(fractions)).any():
        return
    # tag each row so the partition can be checked by identity
    d = make_dataset(["y", "row"], np.column_stack([labels, np.arange(len(labels))]),
                     n_levels=[3, len(labels)])
    spec = SplitSpec(tuple((f"p{i}", f) for i, f in enumerate(fractions)), "y", seed)
    parts = stratified_split(d, spec)
    ids = np.concatenate([p.column("row") for p in parts])
    assert sorted(ids.tolist()) == list(range(len(labels)))
    for cls in range(3):
        m = counts[cls]
        for p, f in zip(parts, fractions):
            got = int((p.column("y") == cls).sum())
            assert abs(got - m * f) <= 1.0 + 1e-9


def test_smote_balanced_input_unchanged():
    d = make_dataset(["x", "y"], [[i % 3, i % 2] for i in range(20)], n_levels=[3, 2])
    assert np.array_equal(smote(d, "y", k=2, seed=0).values, d.values)


def test_smote_count_arithmetic():
    rows = [[i % 4, 0] for i in range(10)] + [[i % 4, 1] for i in range(5)]
    d = make_dataset(["x", "y"], rows, n_levels=[4, 2])
    out = smote(d, "y", k=1, seed=5)
    assert out.n == 20
    assert np.bincount(out.column("y")).tolist() == [10, 10]
    assert np.array_equal(out.values[:15], d.values)


def test_smote_interpolation_example():
    # donor (2,4), neighbor (4,4), u=0.5 -> (3,4)
    donor, nbr = np.array([2, 4]), np.array([4, 4])
    raw = donor + 0.5 * (nbr - donor)
    assert raw.tolist() == [3.0, 4.0]
    cb = make_dataset(["a", "b"], [], n_levels=[6, 6]).codebook
    assert _round_to_codes(raw[None, :], [cb["a"], cb["b"]]).tolist() == [[3, 4]]


def test_smote_rejects_small_class():
    rows = [[0, 0]] * 10 + [[1, 1]] * 2
    d = make_dataset(["x", "y"], rows)
    with pytest.raises(DataError, match="k\\+1"):
        smote(d, "y", k=2)


def test_smote_deterministic():
    rng = np.random.default_rng(0)
    rows = np.column_stack([rng.integers(0, 5, 40), rng.integers(0, 3, 40), (np.arange(40) < 28).astype(int)])
    d = make_dataset(["a", "b", "y"], rows, n_levels=[5, 3, 2])
    assert np.array_equal(smote(d, "y", 3, 9).values, smote(d, "y", 3, 9).values)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_smote_rows_lie_between_donor_and_neighbor(seed, k):
    rng = np.random.default_rng(seed)
    n = 40
    y = (rng.random(n) < 0.3).astype(int)
    y[:k + 1] = 1
    y[k + 1:2 * (k + 1)] = 0
    rows = np.column_stack([rng.integers(1, 9, n), rng.integers(0, 2, n), y])
    d = make_dataset(["dist", "veh", "y"], rows, n_levels=[10, 2, 2])
    X = d.values[:, :2]
    for draw in smote_draws(d, "y", k, seed):
        lo = np.minimum(X[draw.donor], X[draw.neighbor])
        hi = np.maximum(X[draw.donor], X[draw.neighbor])
        assert np.all(draw.raw >= lo - 1e-12) and np.all(draw.raw <= hi + 1e-12)
        assert d.values[draw.neighbor, 2] == draw.label == d.values[draw.donor, 2]
        assert 0.0 <= draw.u <= 1.0
    out = smote(d, "y", k, seed)
    assert len(set(np.bincount(out.column("y")).tolist())) == 1
    assert out.valid_mask().all()


def test_add_mode_column():
    cb = default_codebook().subset(["sex", "Car", "Public", "Walk"])
    d = CodedDataset(cb.names, [[1, 1, 0, 0], [2, 0, 0, 1], [1, 0, 1, 0]], cb)
    m = add_mode_column(d)
    assert m.columns == ("sex", "mode")
    assert m.column("mode").tolist() == [0, 2, 1]
    bad = CodedDataset(cb.names, [[1, 1, 1, 0]], cb)
    with pytest.raises(DataError, match="exactly one"):
        add_mode_column(bad)


def test_to_csv_round_trip(tmp_path):
    cb = default_codebook()
    rows = [[c[0] for c in TABLE1_CODES.values()], [c[-1] for c in TABLE1_CODES.values()]]
    d = CodedDataset(cb.names, rows, cb)
    p = tmp_path / "d.csv"
    d.to_csv(p, header_comment="hello")
    assert p.read_text().startswith("# hello\n")
    assert np.array_equal(load_csv(p, cb).values, d.values)
