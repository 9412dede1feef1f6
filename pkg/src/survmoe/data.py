"""Clinical survival CSV ingestion, discretization, standardization, and splits.

The pipeline is deterministic end to end: identical (file, schema, seed,
config) inputs yield identical record arrays. Fit artifacts (bin grid,
imputation medians, feature moments) come from the training split only and
are applied verbatim to validation and test.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import rng_for
from .container import read_container, write_container
from .errors import ConfigurationError, IngestionError
from .kvfile import read_kv, split_list

_SCHEMA_KEYS = {"duration", "event", "categorical", "subgroups", "exclude", "subgroup_only"}


@dataclass(frozen=True)
class DataSchema:
    """Column roles for a survival CSV."""

    duration: str
    event: str
    categorical: tuple[str, ...] = ()
    subgroups: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    subgroup_only: tuple[str, ...] = ()

    @classmethod
    def from_file(cls, path) -> "DataSchema":
        raw = read_kv(path)
        unknown = set(raw) - _SCHEMA_KEYS
        if unknown:
            raise ConfigurationError(f"{path}: unknown schema keys {sorted(unknown)}")
        for required in ("duration", "event"):
            if required not in raw or not raw[required]:
                raise ConfigurationError(f"{path}: schema must declare {required!r} column")
        return cls(
            duration=raw["duration"],
            event=raw["event"],
            categorical=split_list(raw.get("categorical", "")),
            subgroups=split_list(raw.get("subgroups", "")),
            exclude=split_list(raw.get("exclude", "")),
            subgroup_only=split_list(raw.get("subgroup_only", "")),
        )

    def to_entries(self) -> dict[str, str]:
        return {
            "duration": self.duration,
            "event": self.event,
            "categorical": ", ".join(self.categorical),
            "subgroups": ", ".join(self.subgroups),
            "exclude": ", ".join(self.exclude),
            "subgroup_only": ", ".join(self.subgroup_only),
        }


@dataclass
class RawDataset:
    """Typed column store parsed from one CSV; features not yet standardized."""

    n: int
    feature_columns: list[str]  # header order, duration/event/excluded removed
    continuous: dict[str, np.ndarray]  # float64, NaN where missing
    categorical: dict[str, tuple[list[str], np.ndarray]]  # (levels, int codes)
    durations: np.ndarray
    events: np.ndarray
    subgroup_labels: dict[str, list[str]]
    schema: DataSchema

    def censoring_rate(self) -> float:
        return float(1.0 - self.events.mean())


def load_csv(path, schema: DataSchema) -> RawDataset:
    """Parse a survival CSV under the given schema.

    Categorical columns keep their raw string levels (sorted for stable
    one-hot layouts). Continuous cells may be empty; they surface as NaN and
    are imputed later from training-split medians.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise IngestionError(f"input file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    header = [h.strip() for h in header]
    missing = [c for c in (schema.duration, schema.event, *schema.categorical,
                           *schema.subgroups, *schema.subgroup_only) if c not in header]
    if missing:
        raise IngestionError(f"{path}: columns declared in schema but absent: {sorted(set(missing))}")
    col_index = {name: i for i, name in enumerate(header)}

    dropped = {schema.duration, schema.event, *schema.exclude, *schema.subgroup_only}
    feature_columns = [c for c in header if c not in dropped]
    categorical_set = set(schema.categorical)

    n = len(rows)
    for r, row in enumerate(rows, 1):
        if len(row) != len(header):
            raise IngestionError(f"{path}: row {r}: expected {len(header)} cells, got {len(row)}")

    def parse_float(col: str, allow_missing: bool) -> np.ndarray:
        idx = col_index[col]
        out = np.empty(n, dtype=np.float64)
        for r, row in enumerate(rows):
            cell = row[idx].strip()
            if cell == "":
                if allow_missing:
                    out[r] = np.nan
                    continue
                raise IngestionError(f"{path}: row {r + 1}, column {col!r}: missing value")
            try:
                out[r] = float(cell)
            except ValueError:
                raise IngestionError(
                    f"{path}: row {r + 1}, column {col!r}: could not parse {cell!r} as a number"
                ) from None
        return out

    durations = parse_float(schema.duration, allow_missing=False)
    if np.any(durations < 0):
        bad = int(np.argmax(durations < 0)) + 1
        raise IngestionError(f"{path}: row {bad}, column {schema.duration!r}: negative duration")
    events_f = parse_float(schema.event, allow_missing=False)
    if not np.all(np.isin(events_f, (0.0, 1.0))):
        bad = int(np.argmax(~np.isin(events_f, (0.0, 1.0)))) + 1
        raise IngestionError(f"{path}: row {bad}, column {schema.event!r}: event must be 0 or 1")
    events = events_f.astype(np.int64)

    continuous: dict[str, np.ndarray] = {}
    categorical: dict[str, tuple[list[str], np.ndarray]] = {}
    for col in feature_columns:
        if col in categorical_set:
            values = [rows[r][col_index[col]].strip() for r in range(n)]
            levels = sorted(set(values))
            code_of = {v: i for i, v in enumerate(levels)}
            codes = np.array([code_of[v] for v in values], dtype=np.int64)
            categorical[col] = (levels, codes)
        else:
            continuous[col] = parse_float(col, allow_missing=True)

    subgroup_labels: dict[str, list[str]] = {}
    for col in (*schema.subgroups,):
        subgroup_labels[col] = [rows[r][col_index[col]].strip() for r in range(n)]

    return RawDataset(
        n=n,
        feature_columns=feature_columns,
        continuous=continuous,
        categorical=categorical,
        durations=durations,
        events=events,
        subgroup_labels=subgroup_labels,
        schema=schema,
    )


@dataclass(frozen=True)
class DiscretizationGrid:
    """Ascending cut points mapping continuous durations onto bins 0..max_bin."""

    cuts: np.ndarray  # length max_bin, strictly increasing
    max_bin: int

    def assign(self, durations) -> np.ndarray:
        bins = np.searchsorted(self.cuts, np.asarray(durations, dtype=np.float64), side="right")
        return np.clip(bins, 0, self.max_bin).astype(np.int64)


def fit_discretization(durations, max_bin: int, scheme: str = "quantile") -> DiscretizationGrid:
    """Place `max_bin` cut points over the training durations.

    `uniform` spaces cuts evenly between min and max; `quantile` puts them at
    evenly spaced empirical quantiles (k/max_bin). Either way the last cut is
    the training maximum, so the top bin is reachable and unseen longer
    durations clamp onto it.
    """
    d = np.asarray(durations, dtype=np.float64)
    if max_bin < 2:
        raise ConfigurationError(f"max_bin must be >= 2, got {max_bin}")
    if d.size == 0:
        raise ConfigurationError("cannot fit a discretization grid on no durations")
    lo, hi = float(d.min()), float(d.max())
    if lo == hi:
        raise ConfigurationError("degenerate durations: all values equal")
    if scheme == "uniform":
        cuts = lo + (hi - lo) * np.arange(1, max_bin + 1) / max_bin
    elif scheme == "quantile":
        if np.unique(d).size < max_bin:
            raise ConfigurationError(
                f"quantile scheme needs at least {max_bin} distinct durations, "
                f"got {np.unique(d).size}"
            )
        cuts = np.quantile(d, np.arange(1, max_bin + 1) / max_bin)
    else:
        raise ConfigurationError(f"unknown discretization scheme {scheme!r}")
    if np.any(np.diff(cuts) <= 0):
        raise ConfigurationError(
            "discretization cuts are not strictly increasing; "
            "reduce the bin count or use scheme=uniform"
        )
    return DiscretizationGrid(cuts=cuts, max_bin=max_bin)


@dataclass
class FeatureStats:
    """Imputation and standardization statistics fit on the training split."""

    medians: dict[str, float]
    means: np.ndarray
    stds: np.ndarray
    continuous_mask: np.ndarray  # per assembled feature column


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must sum to 1, got {self.fractions}")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic shuffle-and-slice partition; sizes within one row of exact."""
    perm = rng_for(spec.seed, "split").permutation(n)
    n_train = int(round(n * spec.fractions[0]))
    n_val = int(round(n * spec.fractions[1]))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ConfigurationError(
            f"split of {n} rows with fractions {spec.fractions} leaves an empty split"
        )
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train : n_train + n_val])
    test = np.sort(perm[n_train + n_val :])
    return train, val, test


def _assemble_features(raw: RawDataset, rows: np.ndarray, stats: FeatureStats | None):
    """Build the design matrix for `rows`; one-hot categoricals, impute continuous."""
    blocks = []
    names: list[str] = []
    cont_mask: list[bool] = []
    for col in raw.feature_columns:
        if col in raw.categorical:
            levels, codes = raw.categorical[col]
            block = np.zeros((rows.size, len(levels)))
            block[np.arange(rows.size), codes[rows]] = 1.0
            blocks.append(block)
            names.extend(f"{col}={lv}" for lv in levels)
            cont_mask.extend([False] * len(levels))
        else:
            values = raw.continuous[col][rows].copy()
            if stats is not None:
                values[np.isnan(values)] = stats.medians[col]
            blocks.append(values[:, None])
            names.append(col)
            cont_mask.append(True)
    x = np.concatenate(blocks, axis=1) if blocks else np.zeros((rows.size, 0))
    return x, names, np.array(cont_mask)


def fit_feature_stats(raw: RawDataset, train_rows: np.ndarray) -> FeatureStats:
    medians: dict[str, float] = {}
    for col, values in raw.continuous.items():
        train_vals = values[train_rows]
        finite = train_vals[~np.isnan(train_vals)]
        if finite.size == 0:
            raise IngestionError(f"column {col!r} has no observed values in the training split")
        medians[col] = float(np.median(finite))

    stats = FeatureStats(medians=medians, means=np.zeros(0), stds=np.ones(0),
                         continuous_mask=np.zeros(0, dtype=bool))
    x_train, names, cont_mask = _assemble_features(raw, train_rows, stats)
    means = np.zeros(x_train.shape[1])
    stds = np.ones(x_train.shape[1])
    if cont_mask.any():
        cont = x_train[:, cont_mask]
        means[cont_mask] = cont.mean(axis=0)
        col_std = cont.std(axis=0)
        zero_var = col_std == 0.0
        if zero_var.any():
            flat_names = [n for n, m in zip(names, cont_mask) if m]
            bad = [flat_names[i] for i in np.flatnonzero(zero_var)]
            warnings.warn(f"zero-variance continuous columns left at zero: {bad}")
            col_std[zero_var] = 1.0
        stds[cont_mask] = col_std
    stats.means = means
    stats.stds = stds
    stats.continuous_mask = cont_mask
    return stats


def standardize(x: np.ndarray, stats: FeatureStats) -> np.ndarray:
    out = x.copy()
    m = stats.continuous_mask
    out[:, m] = (out[:, m] - stats.means[m]) / stats.stds[m]
    return out


@dataclass
class PatientRecord:
    x: np.ndarray
    tau: int
    delta: int
    row_id: int
    subgroups: dict[str, str] = field(default_factory=dict)


@dataclass
class SplitData:
    """One split of a prepared dataset, as parallel arrays."""

    x: np.ndarray  # (n, d) standardized features
    tau: np.ndarray  # (n,) int bins
    delta: np.ndarray  # (n,) 0/1
    time: np.ndarray  # (n,) continuous durations (Cox fits on these)
    row_ids: np.ndarray  # (n,) source row indices
    subgroups: dict[str, list[str]]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def records(self) -> list[PatientRecord]:
        recs = []
        for i in range(self.n):
            recs.append(
                PatientRecord(
                    x=self.x[i],
                    tau=int(self.tau[i]),
                    delta=int(self.delta[i]),
                    row_id=int(self.row_ids[i]),
                    subgroups={k: v[i] for k, v in self.subgroups.items()},
                )
            )
        return recs

    def fingerprint(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        h.update(self.x.tobytes())
        h.update(self.tau.tobytes())
        h.update(self.delta.tobytes())
        h.update(self.time.tobytes())
        h.update(self.row_ids.tobytes())
        for key in sorted(self.subgroups):
            h.update(("|".join(self.subgroups[key])).encode())
        return h.digest()


@dataclass(frozen=True)
class PrepConfig:
    n_bins: int = 20  # bins 0..n_bins-1; max bin index is n_bins-1
    scheme: str = "quantile"
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    @property
    def max_bin(self) -> int:
        return self.n_bins - 1


@dataclass
class PreparedData:
    seed: int
    feature_names: list[str]
    grid: DiscretizationGrid
    stats: FeatureStats
    train: SplitData
    val: SplitData
    test: SplitData

    @property
    def input_dim(self) -> int:
        return self.train.x.shape[1]

    @property
    def max_bin(self) -> int:
        return self.grid.max_bin

    def split(self, name: str) -> SplitData:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigurationError(f"unknown split {name!r}") from None


def prepare(raw: RawDataset, prep: PrepConfig, seed: int) -> PreparedData:
    """Split by seed, fit grid + feature stats on train, transform all splits."""
    spec = SplitSpec(seed=seed, fractions=prep.fractions)
    train_rows, val_rows, test_rows = split_indices(raw.n, spec)

    grid = fit_discretization(raw.durations[train_rows], prep.max_bin, prep.scheme)
    stats = fit_feature_stats(raw, train_rows)

    names: list[str] = []

    def make_split(rows: np.ndarray) -> SplitData:
        x, split_names, _ = _assemble_features(raw, rows, stats)
        names[:] = split_names
        return SplitData(
            x=standardize(x, stats),
            tau=grid.assign(raw.durations[rows]),
            delta=raw.events[rows].copy(),
            time=raw.durations[rows].copy(),
            row_ids=rows.astype(np.int64),
            subgroups={k: [v[i] for i in rows] for k, v in raw.subgroup_labels.items()},
        )

    return PreparedData(
        seed=seed,
        feature_names=names,
        grid=grid,
        stats=stats,
        train=make_split(train_rows),
        val=make_split(val_rows),
        test=make_split(test_rows),
    )


# -- processed-dataset cache ---------------------------------------------------

def save_dataset_cache(path, raw: RawDataset, prep: PrepConfig, seed: int) -> None:
    """Persist the typed table plus the fitted view for `seed`."""
    prepared = prepare(raw, prep, seed)
    arrays: dict[str, np.ndarray] = {
        "durations": raw.durations,
        "events": raw.events,
        "grid/cuts": prepared.grid.cuts,
        "stats/means": prepared.stats.means,
        "stats/stds": prepared.stats.stds,
        "stats/continuous_mask": prepared.stats.continuous_mask.astype(np.int64),
    }
    for col, values in raw.continuous.items():
        arrays[f"cont/{col}"] = values
    for col, (_, codes) in raw.categorical.items():
        arrays[f"cat/{col}"] = codes
    for name in ("train", "val", "test"):
        split = prepared.split(name)
        arrays[f"split/{name}/x"] = split.x
        arrays[f"split/{name}/tau"] = split.tau
        arrays[f"split/{name}/delta"] = split.delta
        arrays[f"split/{name}/time"] = split.time
        arrays[f"split/{name}/row_ids"] = split.row_ids
    meta = {
        "kind": "survmoe-dataset",
        "seed": seed,
        "n": raw.n,
        "feature_columns": raw.feature_columns,
        "feature_names": prepared.feature_names,
        "schema": raw.schema.to_entries(),
        "prep": {"n_bins": prep.n_bins, "scheme": prep.scheme, "fractions": list(prep.fractions)},
        "categorical_levels": {c: levels for c, (levels, _) in raw.categorical.items()},
        "subgroup_labels": raw.subgroup_labels,
        "stats_medians": prepared.stats.medians,
    }
    write_container(path, arrays, meta)


def load_dataset_cache(path) -> tuple[RawDataset, PrepConfig, int]:
    arrays, meta = read_container(path)
    if meta.get("kind") != "survmoe-dataset":
        raise ConfigurationError(f"{path}: not a processed-dataset cache")
    schema_entries = meta["schema"]
    schema = DataSchema(
        duration=schema_entries["duration"],
        event=schema_entries["event"],
        categorical=split_list(schema_entries["categorical"]),
        subgroups=split_list(schema_entries["subgroups"]),
        exclude=split_list(schema_entries["exclude"]),
        subgroup_only=split_list(schema_entries["subgroup_only"]),
    )
    continuous = {c[len("cont/") :]: arr for c, arr in arrays.items() if c.startswith("cont/")}
    categorical = {}
    for key, arr in arrays.items():
        if key.startswith("cat/"):
            col = key[len("cat/") :]
            categorical[col] = (list(meta["categorical_levels"][col]), arr.astype(np.int64))
    raw = RawDataset(
        n=int(meta["n"]),
        feature_columns=list(meta["feature_columns"]),
        continuous=continuous,
        categorical=categorical,
        durations=arrays["durations"],
        events=arrays["events"].astype(np.int64),
        subgroup_labels={k: list(v) for k, v in meta["subgroup_labels"].items()},
        schema=schema,
    )
    prep_meta = meta["prep"]
    prep = PrepConfig(
        n_bins=int(prep_meta["n_bins"]),
        scheme=prep_meta["scheme"],
        fractions=tuple(prep_meta["fractions"]),
    )
    return raw, prep, int(meta["seed"])
