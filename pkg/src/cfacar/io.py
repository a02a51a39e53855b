"""Readers and writers for expression matrices, sample sheets, result tables
and run configuration.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .model import ExpressionDataset, Hyperparameters, Sample
from .sampler import SamplerConfig

_TRUE = {"1", "true", "yes", "t", "y"}
_FALSE = {"0", "false", "no", "f", "n"}


class InputFormatError(ValueError):
    """Malformed tabular input, with file and line."""

    def __init__(self, path, lineno: int, message: str):
        self.path, self.lineno = str(path), lineno
        super().__init__(f"{path}:{lineno}: {message}")


def read_expression(path) -> tuple[np.ndarray, list[str], list[str]]:
    """Genes x samples TSV: header ``gene_id<TAB>sample...``, one gene per row."""
    gene_ids, rows = [], []
    with open(path, newline="") as handle:
        header = handle.readline().rstrip("\r\n").split("\t")
        if len(header) < 2:
            raise InputFormatError(path, 1, "header needs a gene column and at least one sample")
        sample_ids = header[1:]
        if len(set(sample_ids)) != len(sample_ids):
            raise InputFormatError(path, 1, "duplicate sample ids in header")
        for lineno, line in enumerate(handle, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != len(header):
                raise InputFormatError(path, lineno, f"expected {len(header)} fields, found {len(fields)}")
            try:
                rows.append([float(x) for x in fields[1:]])
            except ValueError as exc:
                raise InputFormatError(path, lineno, f"non-numeric value ({exc})") from None
            gene_ids.append(fields[0])
    if not rows:
        raise InputFormatError(path, 1, "no gene rows")
    if len(set(gene_ids)) != len(gene_ids):
        raise InputFormatError(path, 1, "duplicate gene ids")
    Y = np.array(rows)
    if not np.all(np.isfinite(Y)):
        raise InputFormatError(path, 1, "non-finite expression values")
    return Y, gene_ids, sample_ids


def write_expression(path, Y, gene_ids, sample_ids) -> None:
    with open(path, "w", newline="") as handle:
        handle.write("\t".join(["gene_id", *sample_ids]) + "\n")
        for g, row in zip(gene_ids, np.asarray(Y)):
            handle.write("\t".join([g, *("%.17g" % v for v in row)]) + "\n")


def _parse_bool(value: str, path, lineno: int) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise InputFormatError(path, lineno, f"is_control must be boolean, got {value!r}")


def read_samples(path) -> list[Sample]:
    """Sample sheet TSV with columns sample_id, experiment_id, replicate_index, is_control."""
    required = ("sample_id", "experiment_id", "replicate_index", "is_control")
    out = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle, delimiter="\t")
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise InputFormatError(path, 1, f"missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rep = int(row["replicate_index"])
            except (TypeError, ValueError):
                raise InputFormatError(path, lineno, "replicate_index must be an integer") from None
            out.append(Sample(row["sample_id"], row["experiment_id"], rep,
                              _parse_bool(row["is_control"], path, lineno)))
    if not out:
        raise InputFormatError(path, 1, "no samples")
    return out


def write_samples(path, samples) -> None:
    with open(path, "w", newline="") as handle:
        handle.write("sample_id\texperiment_id\treplicate_index\tis_control\n")
        for s in samples:
            handle.write(f"{s.sample_id}\t{s.experiment_id}\t{s.replicate_index}\t{str(s.is_control).lower()}\n")


def load_dataset(expr_path, samples_path) -> ExpressionDataset:
    """Expression matrix plus sample sheet, centered on the control mean."""
    Y, gene_ids, sample_ids = read_expression(expr_path)
    samples = read_samples(samples_path)
    by_id = {s.sample_id: s for s in samples}
    unknown = [s for s in sample_ids if s not in by_id]
    if unknown:
        raise ValueError(f"samples missing from {samples_path}: {unknown[:5]}")
    return ExpressionDataset.from_raw(Y, gene_ids, [by_id[s] for s in sample_ids])


def write_matrix_csv(path, M, row_ids, col_ids, row_label: str = "pathway", fmt: str = "%.10g") -> None:
    M = np.asarray(M)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([row_label, *col_ids])
        for rid, row in zip(row_ids, M):
            writer.writerow([rid, *(fmt % v for v in row)])


def read_matrix_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise InputFormatError(path, 1, "empty table")
        rows, ids = [], []
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append([float(x) for x in rec[1:]])
            except ValueError:
                raise InputFormatError(path, lineno, "non-numeric value") from None
            ids.append(rec[0])
    return np.array(rows).reshape(len(ids), len(header) - 1), ids, header[1:]


def write_rows_csv(path, rows: list[dict], fields: list[str] | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_json(path, obj) -> None:
    with open(path, "w") as handle:
        json.dump(obj, handle, indent=2, sort_keys=True, allow_nan=True)
        handle.write("\n")


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def split_config(d: dict) -> tuple[dict, dict, dict]:
    """Split a flat config into hyperparameter, sampler and remaining keys.

    Nested ``{"hyper": {...}, "sampler": {...}}`` sections are accepted too.
    """
    import dataclasses

    d = dict(d)
    hyper = dict(d.pop("hyper", {}))
    sampler = dict(d.pop("sampler", {}))
    hyper_names = {f.name for f in dataclasses.fields(Hyperparameters)}
    sampler_names = {f.name for f in dataclasses.fields(SamplerConfig)}
    rest = {}
    for k, v in d.items():
        if k in hyper_names:
            hyper[k] = v
        elif k in sampler_names:
            sampler[k] = v
        else:
            rest[k] = v
    return hyper, sampler, rest


def load_config(path) -> tuple[dict, dict, dict]:
    if path is None:
        return {}, {}, {}
    d = read_json(path)
    if not isinstance(d, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return split_config(d)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
