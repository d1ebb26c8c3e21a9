"""Data pipeline tests: binning, vocabularies, splits, and the click simulator."""

import math

import numpy as np
import pytest

from ctrzoo.data import (
    Dataset,
    Field,
    FieldSchema,
    N_RESERVED,
    OOV_INDEX,
    RawTable,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    discretize_numeric,
    encode,
    generate_dcm,
    gumbel_sample,
    load_encoded,
    load_schema,
    read_raw,
    save_encoded,
    save_schema,
    simulate_clicks_gumbel,
    split_dataset,
    synthetic_raw_table,
    tokenize,
    write_raw,
)
from ctrzoo.errors import ConfigError, DataError, DomainError, ShapeError
from ctrzoo.tape import sigmoid


# ---------------------------------------------------------------------------
# numeric binning and tokenization


def test_discretize_hand_values():
    assert discretize_numeric(2.0) == 0
    assert discretize_numeric(math.e) == 2
    assert discretize_numeric(1.0) == -1
    assert discretize_numeric(0.0) == -2
    assert discretize_numeric(10.0) == 4  # floor(2 ln 10) = floor(4.605...)
    assert discretize_numeric(-3.5) == -5


def test_discretize_is_monotone():
    xs = np.arange(-10.0, 100.0, 0.01)
    bins = [discretize_numeric(x) for x in xs]
    assert all(b2 >= b1 for b1, b2 in zip(bins, bins[1:]))


def test_discretize_rejects_nonfinite():
    with pytest.raises(DomainError):
        discretize_numeric(float("nan"))
    with pytest.raises(DomainError):
        discretize_numeric(float("inf"))


def test_tokenize_missing_and_passthrough():
    assert tokenize("", "categorical") is None
    assert tokenize(None, "numeric") is None
    assert tokenize("adid_17", "categorical") == "adid_17"


def test_tokenize_numeric_bins_to_string():
    assert tokenize("2.5", "numeric") == str(discretize_numeric(2.5))
    assert tokenize("0", "numeric") == "-2"


def test_tokenize_bad_numeric_rejected():
    with pytest.raises(DataError):
        tokenize("not-a-number", "numeric")


# ---------------------------------------------------------------------------
# vocabulary building


def _table(rows, labels=None, kinds=None):
    n = len(rows[0])
    kinds = kinds or ["categorical"] * n
    fields = [Field(f"f{i}", k) for i, k in enumerate(kinds)]
    labels = labels if labels is not None else [0] * len(rows)
    return RawTable(fields, labels, [list(r) for r in rows])


def test_vocab_single_value_gets_size_three():
    table = _table([["x"], ["x"], ["x"]])
    vocab = build_vocab(table, min_count=1)
    assert vocab.schema().vocab_sizes == [3]
    assert vocab.encode_token(0, "x") == 2


def test_vocab_first_appearance_order():
    table = _table([["c"], ["a"], ["b"], ["a"]])
    vocab = build_vocab(table, min_count=1)
    assert vocab.maps[0] == {"c": 2, "a": 3, "b": 4}


def test_vocab_min_count_drops_rare_tokens():
    rows = [["A"]] * 12 + [["B"]] * 3
    vocab = build_vocab(_table(rows), min_count=10)
    assert "A" in vocab.maps[0]
    assert "B" not in vocab.maps[0]
    assert vocab.encode_token(0, "B") == OOV_INDEX


def test_vocab_missing_encodes_to_reserved_zero():
    vocab = build_vocab(_table([["x"], [None]]), min_count=1)
    assert vocab.encode_token(0, None) == 0


def test_vocab_rejects_bad_min_count_and_empty_table():
    with pytest.raises(ConfigError):
        build_vocab(_table([["x"]]), min_count=0)
    empty = RawTable([Field("f0")], [], [])
    with pytest.raises(DataError):
        build_vocab(empty, min_count=1)


def test_encode_round_trip_through_vocab():
    table = _table([["a", "p"], ["b", None], ["a", "q"]], labels=[1, 0, 1])
    vocab = build_vocab(table, min_count=1)
    ds = encode(table, vocab)
    assert ds.indices.tolist() == [[2, 2], [3, 0], [2, 3]]
    assert ds.labels.tolist() == [1.0, 0.0, 1.0]


# ---------------------------------------------------------------------------
# raw file reading


def test_read_raw_parses_and_skips_blank_lines(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("1\ta\t3.0\n\n0\tb\t\n")
    fields = [Field("cat"), Field("num", "numeric")]
    table = read_raw(path, fields)
    assert table.labels == [1, 0]
    assert table.rows[0] == ["a", str(discretize_numeric(3.0))]
    assert table.rows[1] == ["b", None]


def test_read_raw_reports_line_numbers(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("1\ta\n0\ta\textra\n")
    with pytest.raises(DataError, match=":2:"):
        read_raw(path, [Field("cat")])


def test_read_raw_rejects_bad_label(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("2\ta\n")
    with pytest.raises(DataError, match="label"):
        read_raw(path, [Field("cat")])


def test_read_raw_rejects_bad_numeric_with_position(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("1\t5.0\n1\toops\n")
    with pytest.raises(DataError, match=":2:"):
        read_raw(path, [Field("num", "numeric")])


def test_read_raw_rejects_empty_file(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("\n\n")
    with pytest.raises(DataError, match="no records"):
        read_raw(path, [Field("cat")])


def test_read_raw_rejects_unknown_delimiter(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("1\ta\n")
    with pytest.raises(ConfigError):
        read_raw(path, [Field("cat")], delimiter="pipe")


def test_read_raw_comma_delimiter(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("1,a,b\n0,c,d\n")
    table = read_raw(path, [Field("x"), Field("y")], delimiter="comma")
    assert table.rows == [["a", "b"], ["c", "d"]]


# ---------------------------------------------------------------------------
# dataset container and splits


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 3), dtype=np.int64), np.array([0.0, 2.0]))
    with pytest.raises(ShapeError):
        Dataset(np.zeros(4, dtype=np.int64), np.zeros(4))
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 3), dtype=np.int64), np.zeros(3))


def test_dataset_schema_check():
    ds = Dataset(np.array([[0, 5]]), np.array([1.0]))
    schema = FieldSchema.of_sizes([4, 4])
    with pytest.raises(DataError):
        ds.check_schema(schema)
    ds.check_schema(FieldSchema.of_sizes([4, 6]))


def test_split_ten_records_eight_one_one():
    ds = Dataset(np.arange(20).reshape(10, 2) % 3, np.zeros(10))
    split = split_dataset(ds, (0.8, 0.1, 0.1), seed=4)
    assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)


def test_split_sizes_are_cumulative_floors():
    ds = Dataset(np.zeros((10, 1), dtype=np.int64), np.zeros(10))
    split = split_dataset(ds, (0.5, 0.25, 0.25), seed=0)
    # boundaries floor(5.0) = 5 and floor(7.5) = 7
    assert (len(split.train), len(split.valid), len(split.test)) == (5, 2, 3)


def test_split_partitions_without_loss():
    ds = Dataset(np.arange(37)[:, None] % 5, np.zeros(37))
    split = split_dataset(ds, (0.6, 0.2, 0.2), seed=9)
    seen = np.concatenate(
        [split.train.indices[:, 0], split.valid.indices[:, 0], split.test.indices[:, 0]]
    )
    np.testing.assert_array_equal(np.sort(seen), np.sort(ds.indices[:, 0]))


def test_split_same_seed_is_identical():
    ds = Dataset(np.arange(30)[:, None], np.zeros(30))
    a = split_dataset(ds, seed=7)
    b = split_dataset(ds, seed=7)
    np.testing.assert_array_equal(a.train.indices, b.train.indices)
    np.testing.assert_array_equal(a.test.indices, b.test.indices)


def test_split_rejects_bad_ratios_and_tiny_data():
    ds = Dataset(np.arange(10)[:, None], np.zeros(10))
    with pytest.raises(ConfigError):
        split_dataset(ds, (1.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        split_dataset(ds, (0.5, 0.3, 0.3))
    with pytest.raises(ConfigError):
        split_dataset(ds, (0.5, 0.5))
    tiny = Dataset(np.zeros((2, 1), dtype=np.int64), np.zeros(2))
    with pytest.raises(DataError):
        split_dataset(tiny)


# ---------------------------------------------------------------------------
# synthetic click model


def oracle_probs_pair_loop(data):
    """Recompute click probabilities record by record with explicit loops."""
    spec = data.spec
    linear = data.truth["linear"]
    embed = data.truth.get("embed")
    out = np.empty(len(data.dataset))
    for r in range(len(data.dataset)):
        cats = data.dataset.indices[r] - N_RESERVED
        h = 0.0
        for i in range(spec.n_fields):
            h += linear[i, cats[i]]
        if embed is not None:
            for i in range(spec.n_fields):
                for j in range(i + 1, spec.n_fields):
                    h += float(np.dot(embed[i, cats[i]], embed[j, cats[j]]))
        out[r] = sigmoid((h - data.theta) / spec.noise)
    return out


def test_generated_probs_match_pair_loop_oracle():
    data = generate_dcm(SyntheticSpec(n_fields=4, categories=5, d_true=3, count=200, seed=2))
    np.testing.assert_allclose(data.probs, oracle_probs_pair_loop(data), rtol=0, atol=1e-12)


def test_linear_family_probs_match_oracle():
    spec = SyntheticSpec(n_fields=3, categories=4, family="linear", count=150, seed=6)
    data = generate_dcm(spec)
    assert "embed" not in data.truth
    np.testing.assert_allclose(data.probs, oracle_probs_pair_loop(data), rtol=0, atol=1e-12)


def test_flat_utility_gives_coin_flip_probs():
    spec = SyntheticSpec(
        n_fields=3, categories=4, linear_scale=0.0, embed_scale=0.0, count=100, seed=1
    )
    data = generate_dcm(spec)
    np.testing.assert_allclose(data.probs, np.full(100, 0.5), rtol=0, atol=1e-15)


def test_tiny_noise_makes_labels_deterministic():
    spec = SyntheticSpec(n_fields=4, categories=5, noise=1e-9, count=300, seed=3)
    data = generate_dcm(spec)
    np.testing.assert_array_equal(data.dataset.labels, (data.probs > 0.5).astype(np.float64))


def test_generation_is_bitwise_reproducible():
    spec = SyntheticSpec(n_fields=4, categories=6, count=200, seed=11)
    a = generate_dcm(spec)
    b = generate_dcm(spec)
    np.testing.assert_array_equal(a.dataset.indices, b.dataset.indices)
    np.testing.assert_array_equal(a.dataset.labels, b.dataset.labels)
    np.testing.assert_array_equal(a.probs, b.probs)
    assert a.theta == b.theta


def test_click_rate_tracks_mean_probability():
    data = generate_dcm(SyntheticSpec(count=5000, seed=4))
    p = data.probs
    three_sigma = 3.0 * math.sqrt(float(np.sum(p * (1.0 - p)))) / len(p)
    assert abs(data.dataset.labels.mean() - p.mean()) < three_sigma


def test_theta_override_is_respected():
    data = generate_dcm(SyntheticSpec(n_fields=3, categories=4, theta=1.5, count=50, seed=0))
    assert data.theta == 1.5


def test_synthetic_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(family="cubic")
    with pytest.raises(ConfigError):
        SyntheticSpec(noise=0.0)
    with pytest.raises(ConfigError):
        SyntheticSpec(d_true=0)
    with pytest.raises(ConfigError):
        SyntheticSpec(count=0)


def test_gumbel_sample_mean_near_euler_gamma():
    draws = gumbel_sample(np.random.default_rng(0), 50000)
    assert abs(draws.mean() - 0.5772156649) < 0.02


def test_gumbel_click_rates_converge_to_logistic():
    # difference of two standard Gumbels is logistic, so empirical click
    # rates at fixed utility approach sigmoid(h / k)
    levels = np.array([-1.0, 0.0, 1.2])
    reps = 20000
    h = np.repeat(levels, reps)
    clicks = simulate_clicks_gumbel(h, 0.0, 1.0, np.random.default_rng(5))
    for k, lvl in enumerate(levels):
        rate = clicks[k * reps : (k + 1) * reps].mean()
        target = sigmoid(lvl)
        assert abs(rate - target) < 3.0 * math.sqrt(target * (1.0 - target) / reps)


# ---------------------------------------------------------------------------
# file round-trips


def test_schema_file_round_trip(tmp_path):
    schema = FieldSchema.of_sizes([5, 9], names=["user", "item"])
    path = tmp_path / "schema.json"
    save_schema(schema, path)
    loaded = load_schema(path)
    assert loaded.to_dict() == schema.to_dict()


def test_encoded_file_round_trip(tmp_path):
    ds = Dataset(np.array([[2, 3, 0], [1, 0, 4]]), np.array([1.0, 0.0]))
    path = tmp_path / "encoded.tsv"
    save_encoded(ds, path)
    loaded = load_encoded(path)
    np.testing.assert_array_equal(loaded.indices, ds.indices)
    np.testing.assert_array_equal(loaded.labels, ds.labels)


def test_load_encoded_validates(tmp_path):
    path = tmp_path / "encoded.tsv"
    path.write_text("1\t2\tx\n")
    with pytest.raises(DataError, match=":1:"):
        load_encoded(path)
    path.write_text("1\t2\t3\n0\t1\n")
    with pytest.raises(DataError, match="inconsistent"):
        load_encoded(path)


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab(_table([["a", "x"], ["b", "x"]]), min_count=1)
    path = tmp_path / "vocab.json"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.maps == vocab.maps
    assert loaded.min_count == vocab.min_count


def test_write_raw_read_raw_round_trip(tmp_path):
    table = _table([["a", "p"], ["b", None]], labels=[1, 0])
    path = tmp_path / "raw.tsv"
    write_raw(table, path)
    back = read_raw(path, table.fields)
    assert back.labels == table.labels
    assert back.rows == table.rows


def test_synthetic_raw_table_matches_generated_records(tmp_path):
    data = generate_dcm(SyntheticSpec(n_fields=3, categories=4, count=50, seed=9))
    table = synthetic_raw_table(data)
    assert len(table) == 50
    assert table.labels == [int(y) for y in data.dataset.labels]
    # raw tokens are the unshifted category draws
    first = [int(t) for t in table.rows[0]]
    np.testing.assert_array_equal(first, data.dataset.indices[0] - N_RESERVED)
