import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survmoe.data import (
    DataSchema,
    PrepConfig,
    SplitSpec,
    fit_discretization,
    fit_feature_stats,
    load_csv,
    load_dataset_cache,
    prepare,
    save_dataset_cache,
    split_indices,
    standardize,
)
from survmoe.errors import ConfigurationError, IngestionError
from survmoe.kvfile import read_kv, write_kv


def write_csv(path, text):
    path.write_text(text.strip() + "\n", encoding="utf-8")
    return path


BASIC_SCHEMA = DataSchema(duration="time", event="event")


class TestLoadCsv:
    def test_three_row_file(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "time,event,a,b\n1,0,0.5,2\n2,1,1.5,3\n3,1,2.5,4")
        raw = load_csv(p, BASIC_SCHEMA)
        assert raw.n == 3
        assert raw.feature_columns == ["a", "b"]
        np.testing.assert_array_equal(raw.durations, [1, 2, 3])
        np.testing.assert_array_equal(raw.events, [0, 1, 1])

    def test_missing_event_column(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "time,a\n1,0.5")
        with pytest.raises(IngestionError, match="event"):
            load_csv(p, BASIC_SCHEMA)

    def test_unparseable_cell_names_row_and_column(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "time,event,a\n1,0,0.5\n2,1,oops")
        with pytest.raises(IngestionError, match=r"row 2.*'a'.*'oops'"):
            load_csv(p, BASIC_SCHEMA)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("", encoding="utf-8")
        with pytest.raises(IngestionError, match="empty"):
            load_csv(p, BASIC_SCHEMA)

    def test_negative_duration_rejected(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "time,event,a\n-1,0,0.5")
        with pytest.raises(IngestionError, match="negative"):
            load_csv(p, BASIC_SCHEMA)

    def test_categorical_levels_sorted_and_one_hot(self, tmp_path):
        p = write_csv(
            tmp_path / "d.csv",
            "time,event,color,a\n1,1,red,0.1\n2,0,blue,0.2\n3,1,red,0.3\n4,1,green,0.4\n"
            "5,0,blue,0.5\n6,1,green,0.6",
        )
        schema = DataSchema(duration="time", event="event", categorical=("color",))
        raw = load_csv(p, schema)
        assert raw.categorical["color"][0] == ["blue", "green", "red"]
        prepared = prepare(raw, PrepConfig(n_bins=3, scheme="uniform", fractions=(0.5, 0.25, 0.25)), seed=0)
        assert prepared.feature_names[:3] == ["color=blue", "color=green", "color=red"]
        onehot = prepared.train.x[:, :3]
        np.testing.assert_array_equal(onehot.sum(axis=1), 1.0)


class TestDiscretization:
    def test_uniform_cuts_hand_values(self):
        grid = fit_discretization(np.arange(1.0, 101.0), max_bin=4, scheme="uniform")
        np.testing.assert_allclose(grid.cuts[:3], [25.75, 50.5, 75.25])
        assert grid.cuts.shape == (4,)
        assert grid.cuts[3] == 100.0
        bins = grid.assign(np.arange(1.0, 101.0))
        assert set(bins.tolist()) == {0, 1, 2, 3, 4}

    def test_all_durations_below_first_cut(self):
        grid = fit_discretization(np.arange(1.0, 101.0), max_bin=4, scheme="uniform")
        np.testing.assert_array_equal(grid.assign([0.0, 0.5, 1.0]), [0, 0, 0])

    def test_quantile_close_to_uniform_on_uniform_data(self):
        rng = np.random.default_rng(0)
        d = rng.uniform(0.0, 50.0, size=10_000)
        q = fit_discretization(d, max_bin=10, scheme="quantile")
        u = fit_discretization(d, max_bin=10, scheme="uniform")
        span = d.max() - d.min()
        assert np.max(np.abs(q.cuts - u.cuts)) < 0.05 * span

    def test_degenerate_durations(self):
        with pytest.raises(ConfigurationError, match="degenerate"):
            fit_discretization(np.full(10, 3.0), max_bin=4, scheme="uniform")

    def test_quantile_needs_distinct_values(self):
        with pytest.raises(ConfigurationError, match="distinct"):
            fit_discretization(np.array([1.0, 1.0, 1.0, 2.0]), max_bin=3, scheme="quantile")

    @given(st.lists(st.floats(0, 1e6), min_size=2, max_size=50))
    @settings(max_examples=80, deadline=None)
    def test_assignment_monotone_and_clamped(self, durations):
        train = np.arange(0.0, 200.0)
        grid = fit_discretization(train, max_bin=9, scheme="uniform")
        d = np.sort(np.asarray(durations))
        bins = grid.assign(d)
        assert np.all(np.diff(bins) >= 0)
        assert bins.max() <= grid.max_bin
        assert bins.min() >= 0


class TestStandardize:
    def _stats_for(self, tmp_path, column):
        rows = "\n".join(f"{i + 1},1,{v}" for i, v in enumerate(column))
        p = write_csv(tmp_path / "d.csv", "time,event,a\n" + rows)
        raw = load_csv(p, BASIC_SCHEMA)
        all_rows = np.arange(raw.n)
        return raw, fit_feature_stats(raw, all_rows)

    def test_zscore_hand_values(self, tmp_path):
        raw, stats = self._stats_for(tmp_path, [1, 2, 3])
        from survmoe.data import _assemble_features

        x, _, _ = _assemble_features(raw, np.arange(3), stats)
        z = standardize(x, stats)
        np.testing.assert_allclose(z[:, 0], [-1.224744871391589, 0.0, 1.224744871391589])

    def test_constant_column_zeroed_with_warning(self, tmp_path):
        rows = "\n".join(f"{i + 1},1,7.0" for i in range(4))
        p = write_csv(tmp_path / "d.csv", "time,event,a\n" + rows)
        raw = load_csv(p, BASIC_SCHEMA)
        with pytest.warns(UserWarning, match="zero-variance"):
            stats = fit_feature_stats(raw, np.arange(4))
        from survmoe.data import _assemble_features

        x, _, _ = _assemble_features(raw, np.arange(4), stats)
        np.testing.assert_array_equal(standardize(x, stats), np.zeros((4, 1)))

    def test_test_split_uses_train_stats(self, tmp_path):
        text = "time,event,a\n" + "\n".join(f"{i + 1},1,{i}" for i in range(10))
        raw = load_csv(write_csv(tmp_path / "d.csv", text), BASIC_SCHEMA)
        prepared = prepare(raw, PrepConfig(n_bins=3, scheme="uniform"), seed=1)
        # reconstruct: test x must be (raw - train_mean) / train_std, not its own stats
        train_vals = raw.continuous["a"][prepared.train.row_ids]
        mu, sd = train_vals.mean(), train_vals.std()
        expected = (raw.continuous["a"][prepared.test.row_ids] - mu) / sd
        np.testing.assert_allclose(prepared.test.x[:, 0], expected)
        assert abs(prepared.test.x[:, 0].mean()) > 1e-12  # not self-standardized


class TestSplit:
    def test_sizes_ten_rows(self):
        train, val, test = split_indices(10, SplitSpec(seed=7))
        assert (len(train), len(val), len(test)) == (6, 2, 2)
        assert sorted([*train, *val, *test]) == list(range(10))

    def test_same_seed_identical(self):
        a = split_indices(100, SplitSpec(seed=3))
        b = split_indices(100, SplitSpec(seed=3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_different_seeds_differ(self):
        memberships = {tuple(split_indices(50, SplitSpec(seed=s))[0]) for s in range(10)}
        assert len(memberships) > 1

    def test_empty_split_rejected(self):
        with pytest.raises(ConfigurationError, match="empty"):
            split_indices(3, SplitSpec(seed=0, fractions=(0.9, 0.05, 0.05)))

    def test_bad_fractions_rejected(self):
        with pytest.raises(ConfigurationError, match="sum to 1"):
            SplitSpec(seed=0, fractions=(0.5, 0.2, 0.2))


class TestPipelineDeterminism:
    def _make_raw(self, tmp_path, n=40):
        rng = np.random.default_rng(5)
        lines = ["time,event,a,b,grp"]
        for i in range(n):
            lines.append(
                f"{rng.uniform(1, 100):.4f},{int(rng.random() < 0.6)},"
                f"{rng.normal():.4f},{rng.normal():.4f},{'x' if rng.random() < 0.5 else 'y'}"
            )
        p = write_csv(tmp_path / "d.csv", "\n".join(lines))
        schema = DataSchema(
            duration="time", event="event", categorical=("grp",), subgroups=("grp",)
        )
        return load_csv(p, schema)

    def test_byte_identical_record_stream(self, tmp_path):
        raw = self._make_raw(tmp_path)
        prep = PrepConfig(n_bins=5, scheme="quantile")
        a = prepare(raw, prep, seed=11)
        b = prepare(raw, prep, seed=11)
        for name in ("train", "val", "test"):
            assert a.split(name).fingerprint() == b.split(name).fingerprint()

    def test_cache_roundtrip(self, tmp_path):
        raw = self._make_raw(tmp_path)
        prep = PrepConfig(n_bins=5, scheme="quantile")
        cache = tmp_path / "cache.bin"
        save_dataset_cache(cache, raw, prep, seed=2)
        raw2, prep2, seed2 = load_dataset_cache(cache)
        assert seed2 == 2
        assert prep2 == prep
        a = prepare(raw, prep, seed=2)
        b = prepare(raw2, prep2, seed=2)
        for name in ("train", "val", "test"):
            assert a.split(name).fingerprint() == b.split(name).fingerprint()
        assert a.feature_names == b.feature_names

    def test_records_view(self, tmp_path):
        raw = self._make_raw(tmp_path)
        prepared = prepare(raw, PrepConfig(n_bins=5), seed=0)
        recs = prepared.test.records()
        assert len(recs) == prepared.test.n
        assert recs[0].subgroups["grp"] in {"x", "y"}
        assert all(0 <= r.tau <= prepared.max_bin for r in recs)


class TestKvFile:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "c.cfg"
        write_kv(p, {"alpha": "0.3", "names": "a, b"})
        assert read_kv(p) == {"alpha": "0.3", "names": "a, b"}

    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\n\nkey = value\n", encoding="utf-8")
        assert read_kv(p) == {"key": "value"}

    def test_duplicate_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("k = 1\nk = 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="duplicate"):
            read_kv(p)

    def test_schema_from_file(self, tmp_path):
        p = tmp_path / "s.schema"
        write_kv(
            p,
            {
                "duration": "time",
                "event": "event",
                "categorical": "er, her2",
                "subgroups": "er, her2",
            },
        )
        schema = DataSchema.from_file(p)
        assert schema.categorical == ("er", "her2")
        assert schema.subgroups == ("er", "her2")

    def test_schema_unknown_key(self, tmp_path):
        p = tmp_path / "s.schema"
        write_kv(p, {"duration": "t", "event": "e", "wat": "x"})
        with pytest.raises(ConfigurationError, match="unknown"):
            DataSchema.from_file(p)
