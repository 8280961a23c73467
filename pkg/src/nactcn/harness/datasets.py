"""Pre-extracted feature datasets on disk.

A dataset directory holds ``manifest.json`` and one CSV per sequence::

    {
      "format": "nactcn-features/1",
      "label_type": "frame_regression",   # see tasks.LABEL_KINDS
      "input_channels": 4,
      "n_outputs": 1,
      "sequences": [
        {"id": "s001", "split": "train", "path": "s001.csv"},
        {"id": "s002", "split": "eval",  "path": "s002.csv", "label": [1, 0]}
      ]
    }

Each CSV has a header row and one row per timestep: the input channels
(``x0..``) followed, for per-frame label types, by the label columns
(``y0..``).  Per-sequence labels live in the manifest's ``label`` field.
Numbers are written with 17 significant digits so float64 values round-trip
exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, LeakageError, ParseError
from .tasks import LABEL_KINDS, SequenceDataset

MANIFEST = "manifest.json"
FORMAT = "nactcn-features/1"
SPLITS = ("train", "eval")
FRAME_KINDS = ("frame_class", "frame_regression")


def _fmt(v) -> str:
    return format(float(v), ".17g")


@dataclass
class FeatureDataset:
    label_type: str
    input_channels: int
    n_outputs: int
    ids: list[str] = field(default_factory=list)
    splits: list[str] = field(default_factory=list)
    sequences: list[np.ndarray] = field(default_factory=list)  # each [channels, T]
    labels: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def check_splits(self) -> None:
        seen: dict[str, str] = {}
        for sid, split in zip(self.ids, self.splits):
            if sid in seen and seen[sid] != split:
                raise LeakageError(f"sequence id {sid!r} appears in both {seen[sid]!r} and {split!r}")
            if sid in seen:
                raise ParseError(f"duplicate sequence id {sid!r} in split {split!r}")
            seen[sid] = split

    def split(self, name: str) -> SequenceDataset:
        """Stack one split into arrays; all its sequences must share a length."""
        idx = [i for i, s in enumerate(self.splits) if s == name]
        if not idx:
            raise ConfigError(f"split {name!r} is empty")
        lengths = {self.sequences[i].shape[1] for i in idx}
        if len(lengths) > 1:
            raise ConfigError(f"split {name!r} mixes sequence lengths {sorted(lengths)}")
        inputs = np.stack([self.sequences[i] for i in idx])
        targets = np.stack([self.labels[i] for i in idx])
        if self.label_type in ("frame_class", "seq_class"):
            targets = targets.astype(np.int64)
            if self.label_type == "frame_class":
                targets = targets[:, 0, :]
            else:
                targets = targets[:, 0]
        return SequenceDataset(inputs, targets, self.label_type, self.n_outputs,
                               [self.ids[i] for i in idx], {"task": "file_dataset"})

    @classmethod
    def from_splits(cls, train: SequenceDataset, eval: SequenceDataset) -> "FeatureDataset":
        if train.kind != eval.kind:
            raise ConfigError("train and eval splits have different label types")
        ds = cls(train.kind, train.channels, train.n_outputs)
        for split, part in (("train", train), ("eval", eval)):
            for i in range(len(part)):
                ds.ids.append(f"{split}-{part.ids[i]}")
                ds.splits.append(split)
                ds.sequences.append(part.inputs[i])
                ds.labels.append(_label_matrix(part.targets[i], part.kind))
        return ds


def _label_matrix(target: np.ndarray, kind: str) -> np.ndarray:
    """Normalize a single target to the on-disk orientation."""
    t = np.asarray(target)
    if kind == "frame_class":
        return t.reshape(1, -1)
    if kind == "seq_class":
        return t.reshape(1)
    return t


def write_feature_dataset(ds: FeatureDataset, directory: str | Path) -> Path:
    ds.check_splits()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for sid, split, seq, label in zip(ds.ids, ds.splits, ds.sequences, ds.labels):
        name = f"{sid}.csv"
        header = [f"x{c}" for c in range(seq.shape[0])]
        columns = [seq]
        entry = {"id": sid, "split": split, "path": name}
        if ds.label_type in FRAME_KINDS:
            lab = np.asarray(label).reshape(-1, seq.shape[1])
            header += [f"y{c}" for c in range(lab.shape[0])]
            columns.append(lab)
        else:
            entry["label"] = [float(v) for v in np.asarray(label).reshape(-1)]
        table = np.concatenate(columns, axis=0).T
        with open(directory / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows([_fmt(v) for v in row] for row in table)
        entries.append(entry)
    manifest = {"format": FORMAT, "label_type": ds.label_type, "input_channels": ds.input_channels,
                "n_outputs": ds.n_outputs, "sequences": entries}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _read_csv(path: Path, n_columns: int) -> np.ndarray:
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ParseError(f"sequence file not found: {path}") from None
    rows = []
    with fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        for row in reader:
            if not row:
                continue
            if len(row) != n_columns:
                raise ParseError(f"{path}:{reader.line_num}: expected {n_columns} fields, got {len(row)}")
            values = []
            for col, field_ in enumerate(row):
                try:
                    values.append(float(field_))
                except ValueError:
                    raise ParseError(f"{path}:{reader.line_num}: field {col + 1} is not a number: {field_!r}") from None
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64).T


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ParseError(f"{where}: missing field {key!r}")
    return mapping[key]


def load_feature_dataset(path: str | Path) -> FeatureDataset:
    """Read a manifest (or a directory containing one) and every sequence file."""
    path = Path(path)
    manifest_path = path / MANIFEST if path.is_dir() else path
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ParseError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    where = str(manifest_path)
    if manifest.get("format") != FORMAT:
        raise ParseError(f"{where}: unsupported format {manifest.get('format')!r}")
    label_type = _require(manifest, "label_type", where)
    if label_type not in LABEL_KINDS:
        raise ParseError(f"{where}: unknown label_type {label_type!r}")
    channels = int(_require(manifest, "input_channels", where))
    n_outputs = int(_require(manifest, "n_outputs", where))
    ds = FeatureDataset(label_type, channels, n_outputs)
    label_cols = 1 if label_type == "frame_class" else n_outputs
    for i, entry in enumerate(_require(manifest, "sequences", where)):
        ctx = f"{where}: sequences[{i}]"
        sid = str(_require(entry, "id", ctx))
        split = _require(entry, "split", ctx)
        if split not in SPLITS:
            raise ParseError(f"{ctx}: split must be one of {SPLITS}, got {split!r}")
        file_path = manifest_path.parent / _require(entry, "path", ctx)
        n_cols = channels + (label_cols if label_type in FRAME_KINDS else 0)
        table = _read_csv(file_path, n_cols)
        if label_type in FRAME_KINDS:
            seq, label = table[:channels], table[channels:]
        else:
            seq = table
            label = np.asarray(_require(entry, "label", ctx), dtype=np.float64)
            expected = 1 if label_type == "seq_class" else n_outputs
            if label.size != expected:
                raise ParseError(f"{ctx}: label has {label.size} values, expected {expected}")
        ds.ids.append(sid)
        ds.splits.append(split)
        ds.sequences.append(seq)
        ds.labels.append(label)
    ds.check_splits()
    return ds
