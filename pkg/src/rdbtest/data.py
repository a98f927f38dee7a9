"""Count tables, sample metadata and two-sample designs.

Counts are stored components x samples, the orientation of the TSV files.
Designs store each group samples x components, which is what the
statistics consume.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataFormatError, DegenerateDesignError, RdbError

MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "N/A"})


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for pos, name in enumerate(ids):
        if name in seen:
            raise DataFormatError(f"duplicate {what} id {name!r} (position {pos + 1})")
        seen.add(name)


@dataclass(frozen=True)
class CountMatrix:
    component_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        object.__setattr__(self, "component_ids", tuple(self.component_ids))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        if counts.ndim != 2:
            raise DataFormatError("counts must be a 2-d matrix")
        if counts.shape != (len(self.component_ids), len(self.sample_ids)):
            raise DataFormatError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.component_ids)} components x {len(self.sample_ids)} samples"
            )
        if counts.shape[0] < 1 or counts.shape[1] < 2:
            raise DataFormatError("need at least 1 component and 2 samples")
        _check_unique(self.component_ids, "component")
        _check_unique(self.sample_ids, "sample")
        if (counts < 0).any():
            i, j = np.argwhere(counts < 0)[0]
            raise DataFormatError(
                f"negative count at ({self.component_ids[i]}, {self.sample_ids[j]})"
            )
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def d(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    def select_samples(self, sample_ids: Sequence[str]) -> "CountMatrix":
        pos = {s: j for j, s in enumerate(self.sample_ids)}
        cols = [pos[s] for s in sample_ids]
        return CountMatrix(self.component_ids, tuple(sample_ids), self.counts[:, cols])


@dataclass(frozen=True)
class CompositionMatrix:
    component_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]
    props: np.ndarray
    # raw counts are kept so all-zero components can be detected exactly
    counts: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class SampleMetadata:
    sample_ids: tuple[str, ...]
    columns: dict[str, tuple[str, ...]]

    def column(self, name: str) -> tuple[str, ...]:
        if name not in self.columns:
            raise RdbError(
                f"metadata has no column {name!r} (available: {', '.join(self.columns)})"
            )
        return self.columns[name]

    def numeric(self, name: str, what: str = "covariate") -> np.ndarray:
        raw = self.column(name)
        out = np.empty(len(raw))
        for j, cell in enumerate(raw):
            if cell.strip() in MISSING_TOKENS:
                raise RdbError(f"missing {what} {name} for sample {self.sample_ids[j]}")
            try:
                out[j] = float(cell)
            except ValueError:
                raise RdbError(
                    f"non-numeric {what} {name} for sample {self.sample_ids[j]}: {cell!r}"
                ) from None
            if not np.isfinite(out[j]):
                raise RdbError(f"non-finite {what} {name} for sample {self.sample_ids[j]}")
        return out

    def aligned_to(self, sample_ids: Sequence[str]) -> "SampleMetadata":
        """Reorder rows to match ``sample_ids``; every sample must be present."""
        pos = {s: j for j, s in enumerate(self.sample_ids)}
        missing = [s for s in sample_ids if s not in pos]
        if missing:
            raise RdbError(f"sample {missing[0]} has no metadata row")
        rows = [pos[s] for s in sample_ids]
        cols = {k: tuple(v[r] for r in rows) for k, v in self.columns.items()}
        return SampleMetadata(tuple(sample_ids), cols)


@dataclass(frozen=True)
class TwoSampleDesign:
    """Per-group proportion matrices (samples x retained components)."""

    component_ids: tuple[str, ...]
    group1: np.ndarray
    group2: np.ndarray
    excluded: tuple[tuple[str, str], ...] = ()
    group_labels: tuple[str, str] = ("1", "2")
    sample_ids1: tuple[str, ...] = ()
    sample_ids2: tuple[str, ...] = ()

    def __post_init__(self):
        # C order fixes the reduction order of column statistics, so results
        # do not depend on how the caller laid out or permuted the matrix
        g1 = np.array(self.group1, dtype=float, order="C")
        g2 = np.array(self.group2, dtype=float, order="C")
        if g1.ndim != 2 or g2.ndim != 2 or g1.shape[1] != g2.shape[1]:
            raise DegenerateDesignError("group matrices must be samples x components with equal d")
        if g1.shape[1] != len(self.component_ids):
            raise DegenerateDesignError("component_ids length does not match design width")
        for k, g in ((1, g1), (2, g2)):
            if g.shape[0] < 2:
                raise DegenerateDesignError(f"group {self.group_labels[k - 1]} has fewer than 2 samples")
        g1.setflags(write=False)
        g2.setflags(write=False)
        object.__setattr__(self, "group1", g1)
        object.__setattr__(self, "group2", g2)
        object.__setattr__(self, "component_ids", tuple(self.component_ids))

    @property
    def d(self) -> int:
        return self.group1.shape[1]

    @property
    def m1(self) -> int:
        return self.group1.shape[0]

    @property
    def m2(self) -> int:
        return self.group2.shape[0]

    def swapped(self) -> "TwoSampleDesign":
        return TwoSampleDesign(
            self.component_ids, self.group2, self.group1, self.excluded,
            (self.group_labels[1], self.group_labels[0]),
            self.sample_ids2, self.sample_ids1,
        )

    def permuted(self, order: Sequence[int]) -> "TwoSampleDesign":
        order = list(order)
        return TwoSampleDesign(
            tuple(self.component_ids[i] for i in order),
            self.group1[:, order], self.group2[:, order], self.excluded,
            self.group_labels, self.sample_ids1, self.sample_ids2,
        )


def _read_tsv(path: Path) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh, delimiter="\t")
                    if r and not (len(r) == 1 and r[0].strip() == "")]
    except FileNotFoundError:
        raise DataFormatError(f"file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    return [r for r in rows if not r[0].startswith("#")]


def load_counts(path) -> CountMatrix:
    """Read a component x sample count TSV.

    The header's first cell must be ``component_id``; the remaining header
    cells are sample ids. Errors name the offending row/column.
    """
    path = Path(path)
    rows = _read_tsv(path)
    if not rows:
        raise DataFormatError(f"{path}: empty count table")
    header = [c.strip() for c in rows[0]]
    if header[0] != "component_id":
        raise DataFormatError(
            f"{path}: malformed header, first column must be 'component_id' (got {header[0]!r})"
        )
    sample_ids = header[1:]
    if any(s == "" for s in sample_ids):
        raise DataFormatError(f"{path}: empty sample id in header")
    seen: set[str] = set()
    for s in sample_ids:
        if s in seen:
            raise DataFormatError(f"{path}: duplicate sample id {s!r}")
        seen.add(s)
    comp_ids: list[str] = []
    counts = np.zeros((len(rows) - 1, len(sample_ids)), dtype=np.int64)
    seen.clear()
    for r, row in enumerate(rows[1:]):
        line = r + 2
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: line {line} has {len(row)} fields, header has {len(header)}"
            )
        cid = row[0].strip()
        if cid in seen:
            raise DataFormatError(f"{path}: duplicate component id {cid!r} at line {line}")
        seen.add(cid)
        comp_ids.append(cid)
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            try:
                value = int(cell)
            except ValueError:
                try:
                    as_float = float(cell)
                except ValueError:
                    as_float = None
                if as_float is not None and as_float.is_integer():
                    value = int(as_float)
                else:
                    raise DataFormatError(
                        f"{path}: non-integer count {cell!r} at ({cid}, {sample_ids[j]})"
                    ) from None
            if value < 0:
                raise DataFormatError(f"negative count at ({cid}, {sample_ids[j]})")
            counts[r, j] = value
    return CountMatrix(tuple(comp_ids), tuple(sample_ids), counts)


def load_metadata(path) -> SampleMetadata:
    """Read a sample metadata TSV whose first column is ``sample_id``."""
    path = Path(path)
    rows = _read_tsv(path)
    if not rows:
        raise DataFormatError(f"{path}: empty metadata table")
    header = [c.strip() for c in rows[0]]
    if header[0] != "sample_id":
        raise DataFormatError(
            f"{path}: malformed header, first column must be 'sample_id' (got {header[0]!r})"
        )
    _check_unique(header[1:], "metadata column")
    ids: list[str] = []
    cols: list[list[str]] = [[] for _ in header[1:]]
    for r, row in enumerate(rows[1:]):
        if len(row) > len(header):
            raise DataFormatError(f"{path}: line {r + 2} has more fields than the header")
        row = row + [""] * (len(header) - len(row))
        ids.append(row[0].strip())
        for c, cell in enumerate(row[1:]):
            cols[c].append(cell.strip())
    _check_unique(ids, "sample")
    return SampleMetadata(tuple(ids), {name: tuple(v) for name, v in zip(header[1:], cols)})


def to_proportions(c: CountMatrix) -> CompositionMatrix:
    totals = c.counts.sum(axis=0)
    zero = np.flatnonzero(totals == 0)
    if zero.size:
        raise DegenerateDesignError(f"zero sequencing depth in sample {c.sample_ids[zero[0]]}")
    props = c.counts / totals
    props.setflags(write=False)
    return CompositionMatrix(c.component_ids, c.sample_ids, props, c.counts)


def split_groups(
    p: CompositionMatrix,
    meta: SampleMetadata,
    group: str,
    group1: Optional[str] = None,
) -> TwoSampleDesign:
    """Split samples into the two groups named by metadata column ``group``.

    Group 1 is the lexicographically first level unless ``group1`` names it.
    Components with zero abundance in every sample are excluded.
    """
    meta = meta.aligned_to(p.sample_ids)
    labels = meta.column(group)
    for sid, lab in zip(p.sample_ids, labels):
        if lab in MISSING_TOKENS:
            raise RdbError(f"sample {sid} has no {group} label")
    levels = sorted(set(labels))
    if len(levels) != 2:
        raise DegenerateDesignError(
            f"group column {group!r} must have exactly 2 levels, found {len(levels)}: {levels}"
        )
    if group1 is not None:
        if group1 not in levels:
            raise RdbError(f"--group1 level {group1!r} not among {levels}")
        levels = [group1] + [lv for lv in levels if lv != group1]
    idx = [[j for j, lab in enumerate(labels) if lab == lv] for lv in levels]
    for lv, cols in zip(levels, idx):
        if len(cols) < 2:
            raise DegenerateDesignError(f"group {lv} has fewer than 2 samples")

    if p.counts is not None:
        nonzero = p.counts.sum(axis=1) > 0
    else:
        nonzero = p.props.sum(axis=1) > 0
    keep = np.flatnonzero(nonzero)
    excluded = tuple((p.component_ids[i], "all-zero") for i in np.flatnonzero(~nonzero))
    if keep.size == 0:
        raise DegenerateDesignError("every component is zero in every sample")
    sub = p.props[keep]
    return TwoSampleDesign(
        tuple(p.component_ids[i] for i in keep),
        sub[:, idx[0]].T,
        sub[:, idx[1]].T,
        excluded,
        (levels[0], levels[1]),
        tuple(p.sample_ids[j] for j in idx[0]),
        tuple(p.sample_ids[j] for j in idx[1]),
    )
