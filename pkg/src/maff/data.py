"""Survey records of fever status and observed parasite density."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

__all__ = [
    "DataError",
    "SurveyRecord",
    "SurveyDataset",
    "SummaryTable",
    "parse_survey_csv",
    "read_survey_csv",
    "write_survey_csv",
    "summarize",
]


class DataError(ValueError):
    """Malformed or invalid survey input.

    ``line`` is the 1-based line number in the source, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SurveyRecord:
    fever: int
    density_obs: float

    def __post_init__(self):
        if self.fever not in (0, 1):
            raise DataError(f"fever indicator must be 0 or 1, got {self.fever!r}")
        if not math.isfinite(self.density_obs) or self.density_obs < 0:
            raise DataError(f"density must be finite and nonnegative, got {self.density_obs!r}")


class SurveyDataset:
    """Immutable collection of survey records.

    Stored column-wise as read-only numpy arrays; ``fever`` is int8 and
    ``density`` is float64 parasites per microlitre.
    """

    def __init__(self, fever: Iterable[int], density: Iterable[float]):
        fever = np.asarray(list(fever) if not isinstance(fever, np.ndarray) else fever)
        density = np.asarray(list(density) if not isinstance(density, np.ndarray) else density, dtype=float)
        if fever.shape != density.shape or fever.ndim != 1:
            raise DataError("fever and density must be 1-d arrays of equal length")
        if fever.size == 0:
            raise DataError("dataset is empty")
        if not np.all((fever == 0) | (fever == 1)):
            raise DataError("fever indicator must be 0 or 1")
        if not np.all(np.isfinite(density)) or np.any(density < 0):
            raise DataError("densities must be finite and nonnegative")
        self._fever = fever.astype(np.int8)
        self._density = density.copy()
        self._fever.flags.writeable = False
        self._density.flags.writeable = False

    @classmethod
    def from_records(cls, records: Iterable[SurveyRecord]) -> "SurveyDataset":
        records = list(records)
        return cls([r.fever for r in records], [r.density_obs for r in records])

    @property
    def fever(self) -> np.ndarray:
        return self._fever

    @property
    def density(self) -> np.ndarray:
        return self._density

    @property
    def n(self) -> int:
        return self._fever.size

    def __len__(self) -> int:
        return self.n

    @property
    def records(self) -> list[SurveyRecord]:
        return [SurveyRecord(int(y), float(d)) for y, d in zip(self._fever, self._density)]

    def febrile(self) -> np.ndarray:
        return self._density[self._fever == 1]

    def afebrile(self) -> np.ndarray:
        return self._density[self._fever == 0]

    def subset(self, index) -> "SurveyDataset":
        index = np.asarray(index)
        return SurveyDataset(self._fever[index], self._density[index])

    def canonical_order(self) -> np.ndarray:
        """Indices sorting records by (fever, density)."""
        return np.lexsort((self._density, self._fever))

    def require_both_groups(self) -> None:
        n_f = int(self._fever.sum())
        if n_f == 0 or n_f == self.n:
            raise DataError("fitting needs at least one febrile and one afebrile record")

    def __eq__(self, other):
        if not isinstance(other, SurveyDataset):
            return NotImplemented
        return np.array_equal(self._fever, other._fever) and np.array_equal(self._density, other._density)

    def __repr__(self):
        return f"SurveyDataset(n={self.n}, febrile={int(self._fever.sum())})"


@dataclass(frozen=True)
class SummaryTable:
    """2x2 table of fever status by zero / positive density."""

    n_a0: int
    n_a1: int
    n_f0: int
    n_f1: int

    @property
    def n(self) -> int:
        return self.n_a0 + self.n_a1 + self.n_f0 + self.n_f1

    @property
    def n_afebrile(self) -> int:
        return self.n_a0 + self.n_a1

    @property
    def n_febrile(self) -> int:
        return self.n_f0 + self.n_f1

    @property
    def p_f(self) -> float:
        if self.n_febrile == 0:
            raise DataError("no febrile records: febrile parasite prevalence undefined")
        return self.n_f1 / self.n_febrile

    @property
    def p_a(self) -> float:
        if self.n_afebrile == 0:
            raise DataError("no afebrile records: afebrile parasite prevalence undefined")
        return self.n_a1 / self.n_afebrile

    @property
    def p(self) -> float:
        return self.n_febrile / self.n

    def as_dict(self) -> dict:
        return {
            "n_a0": self.n_a0, "n_a1": self.n_a1, "n_f0": self.n_f0, "n_f1": self.n_f1,
            "p_a": self.p_a, "p_f": self.p_f, "p": self.p,
        }


def parse_survey_csv(source: TextIO | str) -> SurveyDataset:
    """Read a ``fever,density`` CSV.

    Blank lines and lines starting with ``#`` are skipped. Errors carry the
    offending line number.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    fever, density = [], []
    header_seen = False
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = next(csv.reader([line]))
        fields = [f.strip() for f in fields]
        if not header_seen:
            if [f.lower() for f in fields] != ["fever", "density"]:
                raise DataError(f"expected header 'fever,density', got {line!r}", lineno)
            header_seen = True
            continue
        if len(fields) != 2:
            raise DataError(f"expected 2 fields, got {len(fields)}", lineno)
        try:
            y = float(fields[0])
            d = float(fields[1])
        except ValueError:
            raise DataError(f"non-numeric field in {line!r}", lineno) from None
        if y not in (0.0, 1.0):
            raise DataError(f"fever indicator must be 0 or 1, got {fields[0]!r}", lineno)
        if not math.isfinite(d) or d < 0:
            raise DataError(f"density must be finite and nonnegative, got {fields[1]!r}", lineno)
        fever.append(int(y))
        density.append(d)
    if not header_seen:
        raise DataError("missing header 'fever,density'")
    if not fever:
        raise DataError("no data rows")
    return SurveyDataset(fever, density)


def read_survey_csv(path) -> SurveyDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_survey_csv(fh)


def write_survey_csv(dataset: SurveyDataset, dest: TextIO, header_comment: str | None = None) -> None:
    if header_comment:
        for line in header_comment.splitlines():
            dest.write(f"# {line}\n")
    dest.write("fever,density\n")
    for y, d in zip(dataset.fever, dataset.density):
        dest.write(f"{int(y)},{repr(float(d)) if not float(d).is_integer() else int(d)}\n")


def summarize(dataset: SurveyDataset) -> SummaryTable:
    pos = dataset.density > 0
    feb = dataset.fever == 1
    return SummaryTable(
        n_a0=int(np.sum(~feb & ~pos)),
        n_a1=int(np.sum(~feb & pos)),
        n_f0=int(np.sum(feb & ~pos)),
        n_f1=int(np.sum(feb & pos)),
    )
