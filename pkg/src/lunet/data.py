"""Dataset ingestion for NSL-KDD and UNSW-NB15: CSV parsing, one-hot
encoding, standardization, labeling, stratified k-fold splitting and a
synthetic blob fixture for offline testing."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

from .tensor import Rng


class DataError(Exception):
    """Raised for malformed inputs, unknown labels or impossible splits."""


# column kinds within a raw file row
NUMERIC, CATEGORICAL, LABEL, DROP = "numeric", "categorical", "label", "drop"


@dataclass(frozen=True)
class DatasetSchema:
    name: str
    columns: tuple[tuple[str, str], ...]  # full file row order: (name, kind)
    class_names_multi: tuple[str, ...]
    class_map_multi: dict  # raw label value -> multi-class name
    normal_class: str = "Normal"

    @property
    def feature_columns(self):
        return tuple((n, k) for n, k in self.columns if k in (NUMERIC, CATEGORICAL))

    @property
    def label_column(self):
        return next(n for n, k in self.columns if k == LABEL)

    def normalize_label(self, value: str) -> str:
        return value.strip()


_NSL_KDD_FEATURES = [
    ("duration", NUMERIC), ("protocol_type", CATEGORICAL), ("service", CATEGORICAL),
    ("flag", CATEGORICAL), ("src_bytes", NUMERIC), ("dst_bytes", NUMERIC),
    ("land", NUMERIC), ("wrong_fragment", NUMERIC), ("urgent", NUMERIC),
    ("hot", NUMERIC), ("num_failed_logins", NUMERIC), ("logged_in", NUMERIC),
    ("num_compromised", NUMERIC), ("root_shell", NUMERIC), ("su_attempted", NUMERIC),
    ("num_root", NUMERIC), ("num_file_creations", NUMERIC), ("num_shells", NUMERIC),
    ("num_access_files", NUMERIC), ("num_outbound_cmds", NUMERIC),
    ("is_host_login", NUMERIC), ("is_guest_login", NUMERIC), ("count", NUMERIC),
    ("srv_count", NUMERIC), ("serror_rate", NUMERIC), ("srv_serror_rate", NUMERIC),
    ("rerror_rate", NUMERIC), ("srv_rerror_rate", NUMERIC), ("same_srv_rate", NUMERIC),
    ("diff_srv_rate", NUMERIC), ("srv_diff_host_rate", NUMERIC),
    ("dst_host_count", NUMERIC), ("dst_host_srv_count", NUMERIC),
    ("dst_host_same_srv_rate", NUMERIC), ("dst_host_diff_srv_rate", NUMERIC),
    ("dst_host_same_src_port_rate", NUMERIC), ("dst_host_srv_diff_host_rate", NUMERIC),
    ("dst_host_serror_rate", NUMERIC), ("dst_host_srv_serror_rate", NUMERIC),
    ("dst_host_rerror_rate", NUMERIC), ("dst_host_srv_rerror_rate", NUMERIC),
]

# 39 attack names grouped into the four NSL-KDD categories
_NSL_KDD_ATTACK_GROUPS = {
    "DoS": ["back", "land", "neptune", "pod", "smurf", "teardrop", "apache2",
            "udpstorm", "processtable", "worm", "mailbomb"],
    "Probe": ["satan", "ipsweep", "nmap", "portsweep", "mscan", "saint"],
    "R2L": ["guess_passwd", "ftp_write", "imap", "phf", "multihop", "warezmaster",
            "warezclient", "spy", "xlock", "xsnoop", "snmpguess", "snmpgetattack",
            "httptunnel", "sendmail", "named"],
    "U2R": ["buffer_overflow", "loadmodule", "rootkit", "perl", "sqlattack",
            "xterm", "ps"],
}

_NSL_KDD_CLASS_MAP = {"normal": "Normal"}
for _cat, _attacks in _NSL_KDD_ATTACK_GROUPS.items():
    for _a in _attacks:
        _NSL_KDD_CLASS_MAP[_a] = _cat

NSL_KDD = DatasetSchema(
    name="nsl-kdd",
    # 41 features, the attack-name label, then the difficulty score (dropped)
    columns=tuple(_NSL_KDD_FEATURES) + (("class_label", LABEL), ("difficulty", DROP)),
    class_names_multi=("Normal", "DoS", "Probe", "R2L", "U2R"),
    class_map_multi=_NSL_KDD_CLASS_MAP,
)

_UNSW_FEATURES = [
    ("dur", NUMERIC), ("proto", CATEGORICAL), ("service", CATEGORICAL),
    ("state", CATEGORICAL), ("spkts", NUMERIC), ("dpkts", NUMERIC),
    ("sbytes", NUMERIC), ("dbytes", NUMERIC), ("rate", NUMERIC),
    ("sttl", NUMERIC), ("dttl", NUMERIC), ("sload", NUMERIC), ("dload", NUMERIC),
    ("sloss", NUMERIC), ("dloss", NUMERIC), ("sinpkt", NUMERIC), ("dinpkt", NUMERIC),
    ("sjit", NUMERIC), ("djit", NUMERIC), ("swin", NUMERIC), ("stcpb", NUMERIC),
    ("dtcpb", NUMERIC), ("dwin", NUMERIC), ("tcprtt", NUMERIC), ("synack", NUMERIC),
    ("ackdat", NUMERIC), ("smean", NUMERIC), ("dmean", NUMERIC),
    ("trans_depth", NUMERIC), ("response_body_len", NUMERIC),
    ("ct_srv_src", NUMERIC), ("ct_state_ttl", NUMERIC), ("ct_dst_ltm", NUMERIC),
    ("ct_src_dport_ltm", NUMERIC), ("ct_dst_sport_ltm", NUMERIC),
    ("ct_dst_src_ltm", NUMERIC), ("is_ftp_login", NUMERIC), ("ct_ftp_cmd", NUMERIC),
    ("ct_flw_http_mthd", NUMERIC), ("ct_src_ltm", NUMERIC), ("ct_srv_dst", NUMERIC),
    ("is_sm_ips_ports", NUMERIC),
]

_UNSW_CLASSES = ("Normal", "Analysis", "Backdoor", "DoS", "Exploits", "Fuzzers",
                 "Generic", "Reconnaissance", "Shellcode", "Worms")


class _UnswSchema(DatasetSchema):
    def normalize_label(self, value: str) -> str:
        v = value.strip()
        if v == "":
            # benign rows carry an empty attack category in the raw files
            return self.normal_class
        if v == "Backdoors":
            return "Backdoor"
        return v


UNSW_NB15 = _UnswSchema(
    name="unsw-nb15",
    columns=(("id", DROP),) + tuple(_UNSW_FEATURES)
    + (("attack_cat", LABEL), ("label", DROP)),
    class_names_multi=_UNSW_CLASSES,
    class_map_multi={c: c for c in _UNSW_CLASSES},
)

SCHEMAS = {"nsl-kdd": NSL_KDD, "unsw-nb15": UNSW_NB15}


@dataclass
class RawTable:
    """Parsed but unencoded rows: feature columns by name, raw label values."""

    schema: DatasetSchema
    columns: dict  # name -> float64 array (numeric) or list[str] (categorical)
    label_values: list

    @property
    def n_rows(self):
        return len(self.label_values)


@dataclass
class DatasetTable:
    """Encoded, labeled feature matrix ready for training."""

    features: np.ndarray  # [samples, encoded_width] float64
    labels: np.ndarray  # [samples] int
    encoded_columns: list
    class_names: list
    standardization: tuple | None = None  # (mean, std) used, per column


@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray  # per-sample fold index in [0, k)

    def val_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def load_csv(path, schema: DatasetSchema, paths_extra=()) -> RawTable:
    """Parse one or more delimited files against the schema's column order.

    A header row is auto-detected by name-match on the first feature column.
    Errors name the offending row and column.
    """
    names = [n for n, _ in schema.columns]
    kinds = dict(schema.columns)
    expected = len(names)
    columns = {n: [] for n, k in schema.columns if k in (NUMERIC, CATEGORICAL)}
    label_values = []
    row_no = 0
    for p in (path, *paths_extra):
        try:
            fh = open(p, newline="", encoding="utf-8")
        except OSError as e:
            raise DataError(f"cannot open dataset file {p}: {e}") from e
        with fh:
            reader = csv.reader(fh)
            first = True
            for cells in reader:
                if not cells:
                    continue
                if first:
                    first = False
                    lowered = {c.strip().lower() for c in cells}
                    feature_names = {n for n, k in schema.columns
                                     if k in (NUMERIC, CATEGORICAL)}
                    if len(lowered & feature_names) >= 2:
                        continue  # header row
                row_no += 1
                if len(cells) != expected:
                    raise DataError(
                        f"{p} row {row_no}: expected {expected} columns, found {len(cells)}")
                for name, cell in zip(names, cells):
                    kind = kinds[name]
                    if kind == DROP:
                        continue
                    if kind == LABEL:
                        label_values.append(schema.normalize_label(cell))
                    elif kind == CATEGORICAL:
                        columns[name].append(cell.strip())
                    else:
                        try:
                            columns[name].append(float(cell))
                        except ValueError:
                            raise DataError(
                                f"{p} row {row_no}, column {name!r}: "
                                f"unparseable numeric cell {cell!r}") from None
    if row_no == 0:
        raise DataError(f"{path}: no data rows")
    for name, kind in schema.columns:
        if kind == NUMERIC:
            columns[name] = np.asarray(columns[name], dtype=np.float64)
    return RawTable(schema=schema, columns=columns, label_values=label_values)


def encode_categorical(raw: RawTable) -> tuple[np.ndarray, list]:
    """One-hot expand categorical columns in place of their original position.

    Vocabularies are computed over the full table and indicator columns are
    ordered lexicographically, so the encoded width never varies per fold.
    """
    blocks, encoded_columns = [], []
    n = raw.n_rows
    for name, kind in raw.schema.feature_columns:
        col = raw.columns[name]
        if kind == NUMERIC:
            blocks.append(np.asarray(col, dtype=np.float64).reshape(n, 1))
            encoded_columns.append(name)
        else:
            vocab = sorted(set(col))
            if not vocab:
                raise DataError(f"categorical column {name!r} is empty")
            index = {v: i for i, v in enumerate(vocab)}
            block = np.zeros((n, len(vocab)))
            block[np.arange(n), [index[v] for v in col]] = 1.0
            blocks.append(block)
            encoded_columns.extend(f"{name}={v}" for v in vocab)
    return np.hstack(blocks), encoded_columns


def make_labels(raw: RawTable, task: str) -> tuple[np.ndarray, list]:
    """Integer labels plus the ordered class vocabulary for the task."""
    schema = raw.schema
    if task == "binary":
        class_names = ["normal", "attack"]
        labels = np.empty(raw.n_rows, dtype=np.int64)
        for i, v in enumerate(raw.label_values):
            cat = schema.class_map_multi.get(v)
            if cat is None:
                raise DataError(f"unmapped label value {v!r}")
            labels[i] = 0 if cat == schema.normal_class else 1
        return labels, class_names
    if task == "multi":
        class_names = list(schema.class_names_multi)
        order = {c: i for i, c in enumerate(class_names)}
        labels = np.empty(raw.n_rows, dtype=np.int64)
        for i, v in enumerate(raw.label_values):
            cat = schema.class_map_multi.get(v)
            if cat is None:
                raise DataError(f"unmapped label value {v!r}")
            labels[i] = order[cat]
        return labels, class_names
    raise ValueError(f"unknown task {task!r}")


def prepare_dataset(raw: RawTable, task: str) -> DatasetTable:
    features, encoded_columns = encode_categorical(raw)
    labels, class_names = make_labels(raw, task)
    return DatasetTable(features=features, labels=labels,
                        encoded_columns=encoded_columns, class_names=class_names)


def fit_standardization(features: np.ndarray, fit_rows: np.ndarray):
    """Per-column population mean/std computed on `fit_rows` only."""
    if len(fit_rows) == 0:
        raise ValueError("fit_rows must be non-empty")
    sub = features[fit_rows]
    return sub.mean(axis=0), sub.std(axis=0)


def apply_standardization(features: np.ndarray, mean: np.ndarray,
                          std: np.ndarray) -> np.ndarray:
    # near-constant columns map to exactly zero instead of exploding
    safe = np.where(std < 1e-12, 1.0, std)
    out = (features - mean) / safe
    out[:, std < 1e-12] = 0.0
    return out


def standardize(table: DatasetTable, fit_rows: np.ndarray) -> DatasetTable:
    """New table with all rows transformed by stats fit on `fit_rows` only."""
    mean, std = fit_standardization(table.features, fit_rows)
    return replace(table, features=apply_standardization(table.features, mean, std),
                   standardization=(mean, std))


def stratified_kfold(labels: np.ndarray, k: int, seed: int) -> FoldPlan:
    """Per class: seeded shuffle, then deal round-robin into k folds."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    labels = np.asarray(labels)
    rng = Rng(seed)
    assignments = np.full(labels.shape[0], -1, dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise DataError(f"class {c} has {len(idx)} samples, fewer than k={k}")
        shuffled = idx[rng.permutation(len(idx))]
        assignments[shuffled] = np.arange(len(idx)) % k
    return FoldPlan(k=k, assignments=assignments)


def stratified_subsample(labels: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Indices of a class-proportional subsample of size exactly n (largest
    remainders), keeping at least one sample per class."""
    labels = np.asarray(labels)
    total = labels.shape[0]
    if n >= total:
        return np.arange(total)
    rng = Rng(seed)
    classes = np.unique(labels)
    quotas, remainders = {}, []
    for c in classes:
        exact = n * np.sum(labels == c) / total
        quotas[c] = max(1, int(exact))
        remainders.append((exact - int(exact), c))
    while sum(quotas.values()) < n:
        remainders.sort(reverse=True)
        for _, c in remainders:
            if sum(quotas.values()) >= n:
                break
            quotas[c] += 1
    while sum(quotas.values()) > n:
        c = max(quotas, key=lambda c: quotas[c])
        quotas[c] -= 1
    picked = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        take = min(quotas[c], len(idx))
        picked.append(idx[rng.permutation(len(idx))[:take]])
    return np.sort(np.concatenate(picked))


def synth_dataset(classes: int, samples: int, features: int, separation: float,
                  seed: int) -> DatasetTable:
    """Gaussian blobs, one per class, deterministic per seed."""
    if separation <= 0:
        raise ValueError("separation must be > 0")
    rng = Rng(seed)
    centers = rng.normal((classes, features), 0.0, separation)
    labels = np.arange(samples, dtype=np.int64) % classes
    points = centers[labels] + rng.normal((samples, features), 0.0, 1.0)
    return DatasetTable(features=points, labels=labels,
                        encoded_columns=[f"f{i}" for i in range(features)],
                        class_names=[f"class{i}" for i in range(classes)])


TABLE_MAGIC = b"LUNETTBL1"


def save_table(path, table: DatasetTable):
    """Cache an encoded table: magic, column/class metadata, then row-major
    64-bit little-endian floats. Bit-exact across platforms."""

    def _write_str(fh, s: str):
        b = s.encode("utf-8")
        fh.write(struct.pack("<H", len(b)))
        fh.write(b)

    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<I", len(table.encoded_columns)))
        for c in table.encoded_columns:
            _write_str(fh, c)
        fh.write(struct.pack("<I", len(table.class_names)))
        for c in table.class_names:
            _write_str(fh, c)
        has_std = table.standardization is not None
        fh.write(struct.pack("<B", int(has_std)))
        if has_std:
            mean, std = table.standardization
            fh.write(np.ascontiguousarray(mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(std, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", table.features.shape[0]))
        fh.write(np.ascontiguousarray(table.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.labels, dtype="<i8").tobytes())


def load_table(path) -> DatasetTable:
    def _read_str(fh):
        (n,) = struct.unpack("<H", fh.read(2))
        return fh.read(n).decode("utf-8")

    with open(path, "rb") as fh:
        if fh.read(len(TABLE_MAGIC)) != TABLE_MAGIC:
            raise DataError(f"{path}: bad table magic")
        (n_cols,) = struct.unpack("<I", fh.read(4))
        encoded_columns = [_read_str(fh) for _ in range(n_cols)]
        (n_classes,) = struct.unpack("<I", fh.read(4))
        class_names = [_read_str(fh) for _ in range(n_classes)]
        (has_std,) = struct.unpack("<B", fh.read(1))
        standardization = None
        if has_std:
            mean = np.frombuffer(fh.read(8 * n_cols), dtype="<f8").copy()
            std = np.frombuffer(fh.read(8 * n_cols), dtype="<f8").copy()
            standardization = (mean, std)
        (n_rows,) = struct.unpack("<Q", fh.read(8))
        features = np.frombuffer(fh.read(8 * n_rows * n_cols),
                                 dtype="<f8").copy().reshape(n_rows, n_cols)
        labels = np.frombuffer(fh.read(8 * n_rows), dtype="<i8").copy()
    return DatasetTable(features=features, labels=labels,
                        encoded_columns=encoded_columns, class_names=class_names,
                        standardization=standardization)
