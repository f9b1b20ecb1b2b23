"""Dataset ingestion and derivation of one-class anomaly detection problems.

Two archive formats are understood:

* ``ucr-tsv``: one univariate sample per row, class label in the first column,
  values separated by tabs or commas.
* ``sktime-ts``: the ``.ts`` text format with ``@`` header directives, one
  sample per row after ``@data``, channels separated by ``:`` and the class
  label in the last field.

A dataset is stored as a ``<Name>_TRAIN`` / ``<Name>_TEST`` file pair.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    ClassMissingFromSplit,
    MissingValues,
    SingleClassDataset,
    TooFewSamples,
    UnequalLength,
    UnknownFormat,
)

ONE_VS_REST = "one-vs-rest"
N_MINUS_1_VS_REST = "n-minus-1-vs-rest"
SETTINGS = (ONE_VS_REST, N_MINUS_1_VS_REST)

FORMATS = ("ucr-tsv", "sktime-ts")
_SUFFIX_FORMAT = {".tsv": "ucr-tsv", ".txt": "ucr-tsv", ".csv": "ucr-tsv", ".ts": "sktime-ts"}


@dataclass(frozen=True, eq=False)
class RawDataset:
    """Labeled, equal-length multichannel sequences from both original splits.

    ``labels`` are contiguous ids ``0..N-1``; ``class_names[c]`` is the
    original label string of class ``c``.
    """

    name: str
    sequences: np.ndarray  # (n, C, L)
    labels: np.ndarray  # (n,)
    is_test: np.ndarray  # (n,) bool
    class_names: tuple[str, ...]

    def __post_init__(self):
        _validate_dataset(self)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_channels(self) -> int:
        return self.sequences.shape[1]

    @property
    def length(self) -> int:
        return self.sequences.shape[2]

    @property
    def train_sequences(self) -> np.ndarray:
        return self.sequences[~self.is_test]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[~self.is_test]

    @property
    def test_sequences(self) -> np.ndarray:
        return self.sequences[self.is_test]

    @property
    def test_labels(self) -> np.ndarray:
        return self.labels[self.is_test]


@dataclass(frozen=True, eq=False)
class AnomalyProblem:
    """A single one-class task derived from a labeled dataset.

    ``eval_labels`` is 1 for anomalies. ``eval_classes`` keeps the original
    class id of each evaluation sample, used to characterize anomaly types.
    """

    dataset_name: str
    setting: str
    normal_classes: frozenset
    train_normals: np.ndarray
    eval_sequences: np.ndarray
    eval_labels: np.ndarray
    eval_classes: np.ndarray
    held_out_class: int
    norm_stats: dict | None = field(default=None)

    @property
    def problem_id(self) -> str:
        return f"{self.dataset_name}_{self.held_out_class}"

    @property
    def n_train(self) -> int:
        return len(self.train_normals)

    @property
    def n_eval(self) -> int:
        return len(self.eval_sequences)

    @property
    def n_channels(self) -> int:
        return self.train_normals.shape[1]

    @property
    def length(self) -> int:
        return self.train_normals.shape[2]


@dataclass(frozen=True)
class TrainValSplit:
    train_indices: tuple[int, ...]
    val_indices: tuple[int, ...]
    seed: int


def _validate_dataset(ds: RawDataset) -> None:
    seqs = ds.sequences
    if seqs.ndim != 3:
        raise UnequalLength(f"expected (n, C, L) sequences, got shape {seqs.shape}")
    if not np.all(np.isfinite(seqs)):
        raise MissingValues(f"{ds.name}: sequences contain NaN or infinite values")
    if len(ds.labels) != len(seqs) or len(ds.is_test) != len(seqs):
        raise ValueError("labels and split tags must have one entry per sequence")
    for c in range(len(ds.class_names)):
        in_class = ds.labels == c
        if not np.any(in_class & ~ds.is_test) or not np.any(in_class & ds.is_test):
            raise ClassMissingFromSplit(
                f"{ds.name}: class {ds.class_names[c]!r} is missing from one of the splits"
            )


def _sort_labels(raw: Iterable[str]) -> list[str]:
    uniq = set(raw)
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return sorted(uniq)


def _canonical_label(token: str) -> str:
    token = token.strip()
    try:
        value = float(token)
    except ValueError:
        return token
    return str(int(value)) if value.is_integer() else token


def make_dataset(
    name: str,
    train: tuple[np.ndarray, Sequence],
    test: tuple[np.ndarray, Sequence],
) -> RawDataset:
    """Assemble a :class:`RawDataset` from per-split arrays and raw labels.

    Labels are remapped to ``0..N-1`` following the sorted original labels.
    """
    x_train, y_train = train
    x_test, y_test = test
    x_train = np.asarray(x_train, dtype=np.float64)
    x_test = np.asarray(x_test, dtype=np.float64)
    if x_train.ndim == 2:
        x_train = x_train[:, None, :]
    if x_test.ndim == 2:
        x_test = x_test[:, None, :]
    if x_train.shape[1:] != x_test.shape[1:]:
        raise UnequalLength(
            f"{name}: train shape {x_train.shape[1:]} differs from test shape {x_test.shape[1:]}"
        )
    y_train = [_canonical_label(str(v)) for v in y_train]
    y_test = [_canonical_label(str(v)) for v in y_test]
    names = _sort_labels(y_train + y_test)
    index = {n: i for i, n in enumerate(names)}
    labels = np.array([index[v] for v in y_train + y_test], dtype=np.int64)
    is_test = np.zeros(len(labels), dtype=bool)
    is_test[len(y_train):] = True
    return RawDataset(
        name=name,
        sequences=np.concatenate([x_train, x_test]),
        labels=labels,
        is_test=is_test,
        class_names=tuple(names),
    )


# --------------------------------------------------------------------------
# Parsers


def _parse_float(token: str, where: str) -> float:
    token = token.strip()
    if token in ("", "?") or token.lower() == "nan":
        raise MissingValues(f"missing value at {where}")
    try:
        value = float(token)
    except ValueError as exc:
        raise UnknownFormat(f"cannot parse {token!r} as a number at {where}") from exc
    if not math.isfinite(value):
        raise MissingValues(f"non-finite value at {where}")
    return value


def read_ucr_tsv(path) -> tuple[np.ndarray, list[str]]:
    """Parse one UCR split file into ``(values (n, 1, L), labels)``."""
    path = Path(path)
    rows, labels = [], []
    delimiter = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if delimiter is None:
                delimiter = "\t" if "\t" in line else ","
            tokens = line.split(delimiter)
            if len(tokens) < 2:
                raise UnknownFormat(f"{path}:{lineno}: expected a label and values")
            labels.append(tokens[0].strip())
            rows.append([_parse_float(t, f"{path}:{lineno}") for t in tokens[1:]])
    if not rows:
        raise UnknownFormat(f"{path}: no samples found")
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise UnequalLength(f"{path}: rows have lengths {sorted(lengths)}")
    return np.asarray(rows, dtype=np.float64)[:, None, :], labels


def read_sktime_ts(path) -> tuple[np.ndarray, list[str]]:
    """Parse one ``.ts`` split file into ``(values (n, C, L), labels)``."""
    path = Path(path)
    samples, labels = [], []
    in_data = False
    has_labels = True
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            where = f"{path}:{lineno}"
            if not in_data:
                if not line.startswith("@"):
                    raise UnknownFormat(f"{where}: expected a header directive")
                key, _, value = line[1:].partition(" ")
                key = key.lower()
                value = value.strip().lower()
                if key == "data":
                    in_data = True
                elif key == "timestamps" and value == "true":
                    raise UnknownFormat(f"{where}: timestamped series are not supported")
                elif key == "classlabel":
                    has_labels = value.startswith("true")
                continue
            if not has_labels:
                raise UnknownFormat(f"{path}: dataset has no class labels")
            fields = line.split(":")
            if len(fields) < 2:
                raise UnknownFormat(f"{where}: expected channels and a class label")
            labels.append(fields[-1].strip())
            channels = []
            for dim in fields[:-1]:
                tokens = dim.split(",")
                channels.append([_parse_float(t, where) for t in tokens])
            samples.append(channels)
    if not in_data:
        raise UnknownFormat(f"{path}: missing @data section")
    if not samples:
        raise UnknownFormat(f"{path}: no samples found")
    n_channels = {len(s) for s in samples}
    if len(n_channels) > 1:
        raise UnequalLength(f"{path}: samples have differing channel counts {sorted(n_channels)}")
    lengths = {len(ch) for s in samples for ch in s}
    if len(lengths) > 1:
        raise UnequalLength(f"{path}: series have lengths {sorted(lengths)}")
    return np.asarray(samples, dtype=np.float64), labels


_READERS = {"ucr-tsv": read_ucr_tsv, "sktime-ts": read_sktime_ts}


def _split_pair(path: Path, fmt: str | None) -> tuple[str, Path, Path, str]:
    if path.is_dir():
        candidates = sorted(
            p for p in path.iterdir() if p.is_file() and p.stem.upper().endswith("_TRAIN")
        )
        if fmt is not None:
            candidates = [p for p in candidates if _SUFFIX_FORMAT.get(p.suffix.lower()) == fmt]
        if not candidates:
            raise FileNotFoundError(f"no *_TRAIN file found in {path}")
        if len(candidates) > 1:
            raise UnknownFormat(
                f"{path}: several training files ({', '.join(p.name for p in candidates)}); "
                "pass one explicitly or set the format"
            )
        train_path = candidates[0]
    else:
        if not path.exists():
            raise FileNotFoundError(path)
        train_path = path
    stem = train_path.stem
    upper = stem.upper()
    if upper.endswith("_TRAIN"):
        base, other = stem[:-6], "_TEST"
    elif upper.endswith("_TEST"):
        base, other = stem[:-5], "_TRAIN"
    else:
        raise UnknownFormat(f"{train_path}: file name must end with _TRAIN or _TEST")
    names = [base + t + train_path.suffix for t in (other, other.lower(), other.title())]
    partner = next((train_path.with_name(n) for n in names if train_path.with_name(n).exists()), None)
    if partner is None:
        raise FileNotFoundError(f"missing split file {train_path.with_name(names[0])}")
    if upper.endswith("_TEST"):
        train_path, partner = partner, train_path
    if fmt is None:
        fmt = _SUFFIX_FORMAT.get(train_path.suffix.lower())
        if fmt is None:
            raise UnknownFormat(f"cannot infer format from suffix {train_path.suffix!r}")
    return base, train_path, partner, fmt


def load_dataset(path, format: str | None = None) -> RawDataset:
    """Load and validate a dataset from a ``_TRAIN``/``_TEST`` file pair.

    ``path`` may be a directory holding the pair, or either of the two
    files. ``format`` is ``"ucr-tsv"`` or ``"sktime-ts"``; when omitted it
    is inferred from the file suffix.
    """
    if format is not None and format not in FORMATS:
        raise UnknownFormat(f"unknown format {format!r}; expected one of {FORMATS}")
    name, train_path, test_path, fmt = _split_pair(Path(path), format)
    reader = _READERS[fmt]
    x_train, y_train = reader(train_path)
    x_test, y_test = reader(test_path)
    return make_dataset(name, (x_train, y_train), (x_test, y_test))


def write_ucr_tsv(dataset: RawDataset, directory) -> tuple[Path, Path]:
    """Write a univariate dataset as a UCR ``.tsv`` pair (labels are class ids)."""
    if dataset.n_channels != 1:
        raise UnknownFormat("ucr-tsv holds univariate data only")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for tag, mask in (("TRAIN", ~dataset.is_test), ("TEST", dataset.is_test)):
        p = directory / f"{dataset.name}_{tag}.tsv"
        with open(p, "w") as fh:
            for x, y in zip(dataset.sequences[mask], dataset.labels[mask]):
                fh.write("\t".join([dataset.class_names[y]] + [repr(float(v)) for v in x[0]]) + "\n")
        paths.append(p)
    return paths[0], paths[1]


def write_sktime_ts(dataset: RawDataset, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for tag, mask in (("TRAIN", ~dataset.is_test), ("TEST", dataset.is_test)):
        p = directory / f"{dataset.name}_{tag}.ts"
        with open(p, "w") as fh:
            fh.write(f"@problemName {dataset.name}\n@timeStamps false\n@missing false\n")
            fh.write(f"@univariate {'true' if dataset.n_channels == 1 else 'false'}\n")
            fh.write(f"@dimensions {dataset.n_channels}\n@equalLength true\n")
            fh.write(f"@seriesLength {dataset.length}\n")
            fh.write(f"@classLabel true {' '.join(dataset.class_names)}\n@data\n")
            for x, y in zip(dataset.sequences[mask], dataset.labels[mask]):
                dims = [",".join(repr(float(v)) for v in ch) for ch in x]
                fh.write(":".join(dims + [dataset.class_names[y]]) + "\n")
        paths.append(p)
    return paths[0], paths[1]


# --------------------------------------------------------------------------
# Problem derivation


def derive_problems(dataset: RawDataset, setting: str) -> list[AnomalyProblem]:
    """Derive the N one-class problems of ``setting`` from ``dataset``.

    Problem ``c`` holds class ``c`` out: in one-vs-rest it is the only
    normal class, in (N-1)-vs-rest it is the only anomalous class. The
    evaluation set is the whole original test split.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    n = dataset.n_classes
    if n < 2:
        raise SingleClassDataset(f"{dataset.name} has {n} class(es); at least 2 are required")
    x_train, y_train = dataset.train_sequences, dataset.train_labels
    x_test, y_test = dataset.test_sequences, dataset.test_labels
    problems = []
    for c in range(n):
        normal = frozenset([c]) if setting == ONE_VS_REST else frozenset(set(range(n)) - {c})
        normal_arr = np.array(sorted(normal))
        problems.append(
            AnomalyProblem(
                dataset_name=dataset.name,
                setting=setting,
                normal_classes=normal,
                train_normals=x_train[np.isin(y_train, normal_arr)].copy(),
                eval_sequences=x_test.copy(),
                eval_labels=(~np.isin(y_test, normal_arr)).astype(np.int64),
                eval_classes=y_test.copy(),
                held_out_class=c,
            )
        )
    return problems


def znormalize(problem: AnomalyProblem) -> AnomalyProblem:
    """Per-channel standardization with statistics of the training normals.

    Zero-variance channels are centered only.
    """
    if problem.n_train == 0:
        raise TooFewSamples("cannot normalize a problem without training normals")
    mean = problem.train_normals.mean(axis=(0, 2))
    std = problem.train_normals.std(axis=(0, 2))
    scale = np.where(std > 1e-12, std, 1.0)

    def apply(x):
        return (x - mean[None, :, None]) / scale[None, :, None]

    return replace(
        problem,
        train_normals=apply(problem.train_normals),
        eval_sequences=apply(problem.eval_sequences),
        norm_stats={"mean": mean.tolist(), "std": scale.tolist()},
    )


def split_train_val(problem, val_fraction: float = 0.1, seed: int = 0) -> TrainValSplit:
    """Seeded random split of the training normals into train/validation.

    ``problem`` may also be the number of training samples.
    """
    n = problem if isinstance(problem, (int, np.integer)) else len(problem.train_normals)
    if n < 2:
        raise TooFewSamples(f"need at least 2 training samples to split, got {n}")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    n_val = max(1, int(math.floor(val_fraction * n)))
    perm = np.random.default_rng(seed).permutation(n)
    return TrainValSplit(
        train_indices=tuple(int(i) for i in np.sort(perm[n_val:])),
        val_indices=tuple(int(i) for i in np.sort(perm[:n_val])),
        seed=seed,
    )


# --------------------------------------------------------------------------
# Problem directory layout


def problem_dir(root, problem: AnomalyProblem) -> Path:
    return Path(root) / problem.dataset_name / problem.setting / problem.problem_id


def save_problem(problem: AnomalyProblem, root) -> Path:
    """Write ``problem`` under ``root/<dataset>/<setting>/<problem_id>/``."""
    out = problem_dir(root, problem)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "train.npy", problem.train_normals)
    np.save(out / "eval.npy", problem.eval_sequences)
    with open(out / "eval.tsv", "w") as fh:
        fh.write("sample_index\tlabel\tclass\n")
        for i, (lab, cls) in enumerate(zip(problem.eval_labels, problem.eval_classes)):
            fh.write(f"{i}\t{int(lab)}\t{int(cls)}\n")
    meta = {
        "dataset": problem.dataset_name,
        "setting": problem.setting,
        "problem_id": problem.problem_id,
        "held_out_class": problem.held_out_class,
        "normal_classes": sorted(int(c) for c in problem.normal_classes),
        "n_train": problem.n_train,
        "n_eval": problem.n_eval,
        "n_anomalous": int(problem.eval_labels.sum()),
        "n_channels": problem.n_channels,
        "length": problem.length,
        "normalization": problem.norm_stats,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return out


def load_problem(path) -> AnomalyProblem:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{path} is not a problem directory (no meta.json)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    table = np.loadtxt(path / "eval.tsv", skiprows=1, dtype=np.int64, ndmin=2)
    return AnomalyProblem(
        dataset_name=meta["dataset"],
        setting=meta["setting"],
        normal_classes=frozenset(meta["normal_classes"]),
        train_normals=np.load(path / "train.npy"),
        eval_sequences=np.load(path / "eval.npy"),
        eval_labels=table[:, 1],
        eval_classes=table[:, 2],
        held_out_class=meta["held_out_class"],
        norm_stats=meta.get("normalization"),
    )


def default_data_dir() -> Path | None:
    root = os.environ.get("NCRC_DATA_DIR")
    return Path(root) if root else None
