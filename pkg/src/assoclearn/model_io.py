"""Model persistence and CSV ingestion.

Models are versioned JSON: layout, family, penalty setup, coefficient
blocks (dense, row-major per effect), support, and training metadata.
Serialization is canonical (sorted keys, fixed indentation), so
write-read-write round-trips are byte-identical.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import CoefficientBlocks
from .layout import (ResponseLayout, build_layout, effect_from_json, effect_to_json,
                     joint_index)
from .likelihood import Family
from .penalty import PenaltyMode

FORMAT_VERSION = 1


@dataclass
class ModelFile:
    layout: ResponseLayout
    family: Family
    penalty_mode: PenaltyMode
    partition: tuple[int, ...]
    weights: np.ndarray
    lam: float | None
    beta: CoefficientBlocks
    support: list[tuple[tuple[int, ...], int]]
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        layout = self.layout
        return {
            "format_version": FORMAT_VERSION,
            "layout": {
                "J": list(layout.J),
                "d": layout.d,
                "effects": [effect_to_json(k) for k in layout.effects],
            },
            "family": self.family.value,
            "penalty": self.penalty_mode.value,
            "partition": list(self.partition),
            "weights": _matrix_to_lists(self.weights),
            "lambda": self.lam,
            "beta": [
                {"effect": effect_to_json(k),
                 "values": _matrix_to_lists(self.beta.values[layout.rows_of(k), :])}
                for k in layout.effects
            ],
            "support": [
                {"effect": effect_to_json(k), "block": j + 1} for k, j in self.support
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelFile":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version!r}")
        lay = doc["layout"]
        layout = build_layout(lay["J"], lay["d"])
        stored = [effect_from_json(e) for e in lay["effects"]]
        if list(layout.effects) != stored:
            raise ValueError("model effects do not match the canonical enumeration")
        partition = tuple(int(s) for s in doc["partition"])
        values = np.zeros((layout.total_dim, sum(partition)))
        for entry in doc["beta"]:
            k = effect_from_json(entry["effect"])
            block = np.asarray(entry["values"], dtype=float)
            rows = layout.rows_of(k)
            if block.shape != (rows.stop - rows.start, sum(partition)):
                raise ValueError(f"bad block shape for effect {entry['effect']}")
            values[rows, :] = block
        beta = CoefficientBlocks(layout, partition, values)
        support = [(effect_from_json(s["effect"]), int(s["block"]) - 1)
                   for s in doc["support"]]
        return cls(layout=layout, family=Family(doc["family"]),
                   penalty_mode=PenaltyMode(doc["penalty"]), partition=partition,
                   weights=np.asarray(doc["weights"], dtype=float),
                   lam=doc["lambda"], beta=beta, support=support,
                   metadata=dict(doc.get("metadata", {})))

    def save(self, path):
        Path(path).write_bytes(dumps_canonical(self.to_json_dict()))

    @classmethod
    def load(cls, path) -> "ModelFile":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def dumps_canonical(doc: dict) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def _matrix_to_lists(M: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.atleast_2d(M)]


class CsvFormatError(ValueError):
    pass


def read_csv_matrix(path, what: str = "data") -> np.ndarray:
    """Read a numeric CSV with a required header row.

    Malformed cells are reported with their line and column numbers.
    """
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty {what} file (header row required)") from None
        width = len(header)
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != width:
                raise CsvFormatError(
                    f"{path}: line {line_no} has {len(record)} fields, expected {width}")
            parsed = []
            for col_no, cell in enumerate(record, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"{path}: line {line_no}, column {col_no}: "
                        f"cannot parse {cell!r} as a number") from None
            rows.append(parsed)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows in {what} file")
    return np.asarray(rows, dtype=float)


def read_x_csv(path) -> np.ndarray:
    return read_csv_matrix(path, what="predictor")


def read_y_csv(path, layout: ResponseLayout) -> np.ndarray:
    """Read responses as joint-category counts or per-response codes.

    A file with |J| columns is taken as counts in vec order; one with q
    columns as 1-based category codes, converted to one-hot counts.  The
    two encodings always have different widths, so the choice is
    unambiguous.
    """
    M = read_csv_matrix(path, what="response")
    if M.shape[1] == layout.card:
        if np.any(M < 0):
            raise CsvFormatError(f"{path}: negative counts")
        if not np.all(M == np.floor(M)):
            raise CsvFormatError(f"{path}: counts must be integers")
        return M
    if M.shape[1] == layout.q:
        if not np.all(M == np.floor(M)):
            raise CsvFormatError(f"{path}: category codes must be integers")
        codes = M.astype(int)
        if np.any(codes < 1) or np.any(codes > np.asarray(layout.J)[None, :]):
            raise CsvFormatError(f"{path}: category codes out of range for J={layout.J}")
        Y = np.zeros((M.shape[0], layout.card))
        for i, row in enumerate(codes):
            Y[i, joint_index(row - 1, layout)] = 1.0
        return Y
    raise CsvFormatError(
        f"{path}: response file has {M.shape[1]} columns; expected |J|={layout.card} "
        f"count columns or q={layout.q} code columns")


def write_csv_matrix(path, header: list[str], M: np.ndarray):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in np.atleast_2d(M):
            writer.writerow([repr(float(v)) for v in row])
