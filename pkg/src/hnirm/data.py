"""Response ingestion, dichotomisation and multiplex network construction.

Two CSV layouts are accepted (UTF-8, header row required):

* ``wide``: ``respondent_id, school_id, [group_label], <item_1>, ..., <item_p>``
* ``long``: ``respondent_id, school_id, item_id, code`` with an optional
  ``group_label`` column.

Empty cells and ``NA``/``NaN``/``.`` mark missing responses. Respondents with
any missing item are dropped (listwise deletion) and counted.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DomainError, ParseError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "."})
ID_COLUMNS = ("respondent_id", "school_id")


@dataclass
class ResponseDataset:
    """Multilevel item responses, one row per respondent.

    Rows are sorted by ``(school_id, respondent_id)``; ``responses`` holds
    integer codes aligned with ``item_ids``.
    """

    respondent_ids: list[str]
    school_ids: list[str]
    responses: np.ndarray
    item_ids: list[str]
    group_labels: list[str | None] | None = None
    dropped_count: int = 0

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=np.int64)
        if self.responses.ndim != 2:
            raise SchemaError("responses must be a 2-D array")
        n, p = self.responses.shape
        if len(self.respondent_ids) != n or len(self.school_ids) != n:
            raise SchemaError("id columns do not match the number of response rows")
        if len(self.item_ids) != p:
            raise SchemaError(f"{p} response columns but {len(self.item_ids)} item ids")
        if self.group_labels is not None and len(self.group_labels) != n:
            raise SchemaError("group_labels must have one entry per respondent")
        validate_dataset(self)

    @property
    def schools(self) -> list[str]:
        """Distinct school ids in sorted order."""
        return sorted(set(self.school_ids))

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def school_rows(self, school_id: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.school_ids) == school_id)

    def school_group(self, school_id: str) -> str | None:
        """Group label of a school (``None`` when unlabeled)."""
        if self.group_labels is None:
            return None
        labels = {self.group_labels[r] for r in self.school_rows(school_id)}
        labels.discard(None)
        if len(labels) > 1:
            raise ValidationError(f"school {school_id!r} has conflicting group labels {sorted(labels)}")
        return labels.pop() if labels else None


@dataclass(frozen=True)
class BinarySchoolMatrix:
    """Dichotomised responses of one school (``n_m x p``, entries in {0, 1})."""

    school_id: str
    X: np.ndarray
    respondent_ids: tuple[str, ...] = ()
    group_label: str | None = None

    def __post_init__(self):
        X = np.asarray(self.X)
        if X.ndim != 2:
            raise SchemaError("X must be 2-D")
        if not np.isin(X, (0, 1)).all():
            raise DomainError(f"school {self.school_id!r}: X must be binary")
        X = X.astype(np.uint8)
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.respondent_ids and len(self.respondent_ids) != X.shape[0]:
            raise SchemaError("respondent_ids must match the rows of X")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MultiplexNetworks:
    """Item layers ``Y`` (p x n x n) and person layers ``U`` (n x p x p)."""

    item_layers: np.ndarray
    person_layers: np.ndarray
    school_id: str = ""


def validate_dataset(ds: ResponseDataset) -> None:
    if ds.n_items < 2:
        raise ValidationError("at least two items are required")
    seen: set[tuple[str, str]] = set()
    for rid, sid in zip(ds.respondent_ids, ds.school_ids):
        if (sid, rid) in seen:
            raise ValidationError(f"duplicated respondent_id {rid!r} in school {sid!r}")
        seen.add((sid, rid))
    counts: dict[str, int] = {}
    for sid in ds.school_ids:
        counts[sid] = counts.get(sid, 0) + 1
    small = [s for s, c in counts.items() if c < 2]
    if small:
        raise ValidationError(f"schools with fewer than 2 respondents: {sorted(small)}")


def _parse_code(token: str, line: int) -> int | None:
    token = token.strip()
    if token.lower() in MISSING_TOKENS:
        return None
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"response code {token!r} is not a number", line) from None
    if not value.is_integer():
        raise ParseError(f"response code {token!r} is not an integer", line)
    return int(value)


def _read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty", 1) from None
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((reader.line_num, row))
    return header, rows


def load_responses(path, format: str = "wide") -> ResponseDataset:
    """Read a response CSV.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a header row.
    format : {"wide", "long"}

    Returns
    -------
    ResponseDataset
        Sorted by school then respondent id; ``dropped_count`` records how
        many respondents were removed for missing responses.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    header, rows = _read_rows(path)
    missing_cols = [c for c in ID_COLUMNS if c not in header]
    if missing_cols:
        raise SchemaError(f"missing required columns {missing_cols}")
    if format == "wide":
        records, item_ids = _collect_wide(header, rows)
    elif format == "long":
        records, item_ids = _collect_long(header, rows)
    else:
        raise ValidationError(f"unknown format {format!r}")
    return _assemble(records, item_ids)


def _collect_wide(header, rows):
    col = {name: j for j, name in enumerate(header)}
    has_group = "group_label" in col
    reserved = set(ID_COLUMNS) | {"group_label"}
    item_cols = [j for j, name in enumerate(header) if name not in reserved]
    item_ids = [header[j] for j in item_cols]
    if len(set(item_ids)) != len(item_ids):
        raise SchemaError("duplicated item columns")
    records = []
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
        rid = row[col["respondent_id"]].strip()
        sid = row[col["school_id"]].strip()
        if not rid or not sid:
            raise ParseError("empty respondent_id or school_id", line)
        group = (row[col["group_label"]].strip() or None) if has_group else None
        codes = [_parse_code(row[j], line) for j in item_cols]
        records.append((sid, rid, group, codes))
    return records, item_ids


def _collect_long(header, rows):
    needed = ("item_id", "code")
    if any(c not in header for c in needed):
        raise SchemaError("long format requires item_id and code columns")
    col = {name: j for j, name in enumerate(header)}
    has_group = "group_label" in col
    item_ids: list[str] = []
    cells: dict[tuple[str, str], dict[str, int | None]] = {}
    groups: dict[tuple[str, str], str | None] = {}
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
        rid = row[col["respondent_id"]].strip()
        sid = row[col["school_id"]].strip()
        item = row[col["item_id"]].strip()
        if not rid or not sid or not item:
            raise ParseError("empty respondent_id, school_id or item_id", line)
        if item not in item_ids:
            item_ids.append(item)
        key = (sid, rid)
        entry = cells.setdefault(key, {})
        if item in entry:
            raise ValidationError(f"line {line}: duplicated response for respondent {rid!r}, item {item!r}")
        entry[item] = _parse_code(row[col["code"]], line)
        if has_group:
            groups[key] = row[col["group_label"]].strip() or groups.get(key)
    records = []
    for (sid, rid), entry in cells.items():
        extra = set(entry) - set(item_ids)
        if extra:
            raise SchemaError(f"respondent {rid!r} has unknown items {sorted(extra)}")
        codes = [entry.get(item) for item in item_ids]
        records.append((sid, rid, groups.get((sid, rid)), codes))
    return records, item_ids


def _assemble(records, item_ids) -> ResponseDataset:
    kept = [r for r in records if all(c is not None for c in r[3])]
    dropped = len(records) - len(kept)
    if dropped:
        logger.warning("dropped %d respondent(s) with missing responses", dropped)
    kept.sort(key=lambda r: (r[0], r[1]))
    school_all = {r[0] for r in records}
    school_kept = {r[0] for r in kept}
    if school_all - school_kept:
        raise ValidationError(f"schools left empty after filtering: {sorted(school_all - school_kept)}")
    has_group = any(r[2] is not None for r in kept)
    responses = np.array([r[3] for r in kept], dtype=np.int64).reshape(len(kept), len(item_ids))
    return ResponseDataset(
        respondent_ids=[r[1] for r in kept],
        school_ids=[r[0] for r in kept],
        responses=responses,
        item_ids=list(item_ids),
        group_labels=[r[2] for r in kept] if has_group else None,
        dropped_count=dropped,
    )


def write_responses(dataset: ResponseDataset, path) -> None:
    """Write a dataset in wide format (the inverse of ``load_responses``)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        head = ["respondent_id", "school_id"]
        if dataset.group_labels is not None:
            head.append("group_label")
        writer.writerow(head + list(dataset.item_ids))
        for r in range(len(dataset.respondent_ids)):
            row = [dataset.respondent_ids[r], dataset.school_ids[r]]
            if dataset.group_labels is not None:
                row.append(dataset.group_labels[r] or "")
            writer.writerow(row + [str(int(c)) for c in dataset.responses[r]])


def dichotomize(dataset: ResponseDataset, cut: int = 4, mode: str = "auto") -> list[BinarySchoolMatrix]:
    """Map response codes to {0, 1}, one matrix per school in school-id order.

    Parameters
    ----------
    cut : int
        Likert threshold; ``x = 1`` iff ``code >= cut``. Must lie in 2..5.
    mode : {"auto", "likert", "binary"}
        ``binary`` passes 0/1 codes through unchanged; ``auto`` selects
        ``binary`` when every code is 0 or 1 and ``likert`` otherwise.
    """
    if not 2 <= cut <= 5:
        raise DomainError(f"cut must lie in 2..5, got {cut}")
    codes = dataset.responses
    if mode == "auto":
        mode = "binary" if np.isin(codes, (0, 1)).all() else "likert"
    if mode == "likert":
        bad = codes[(codes < 1) | (codes > 5)]
        if bad.size:
            raise DomainError(f"Likert codes must lie in 1..5, found {int(bad[0])}")
        binary = (codes >= cut).astype(np.uint8)
    elif mode == "binary":
        if not np.isin(codes, (0, 1)).all():
            raise DomainError("binary mode requires codes in {0, 1}")
        binary = codes.astype(np.uint8)
    else:
        raise ValidationError(f"unknown dichotomisation mode {mode!r}")
    out = []
    for sid in dataset.schools:
        rows = dataset.school_rows(sid)
        out.append(
            BinarySchoolMatrix(
                school_id=sid,
                X=binary[rows],
                respondent_ids=tuple(dataset.respondent_ids[r] for r in rows),
                group_label=dataset.school_group(sid),
            )
        )
    return out


def build_multiplex(X: BinarySchoolMatrix | np.ndarray) -> MultiplexNetworks:
    """Construct the co-positive layers of one school.

    ``Y[i, k, l] = x_ki x_li`` and ``U[k, i, j] = x_ki x_kj`` off the
    diagonal; diagonals are 0.
    """
    school_id = X.school_id if isinstance(X, BinarySchoolMatrix) else ""
    x = np.asarray(X.X if isinstance(X, BinarySchoolMatrix) else X)
    if not np.isin(x, (0, 1)).all():
        raise DomainError("X must be binary")
    x = x.astype(np.uint8)
    n, p = x.shape
    Y = np.einsum("ki,li->ikl", x, x).astype(np.uint8)
    U = np.einsum("ki,kj->kij", x, x).astype(np.uint8)
    Y[:, np.arange(n), np.arange(n)] = 0
    U[:, np.arange(p), np.arange(p)] = 0
    Y.setflags(write=False)
    U.setflags(write=False)
    return MultiplexNetworks(item_layers=Y, person_layers=U, school_id=school_id)


def stack_schools(matrices: Sequence[BinarySchoolMatrix]) -> np.ndarray:
    """Row-concatenate school matrices (used for writing binary data)."""
    return np.vstack([m.X for m in matrices])


def binary_dataset(matrices: Sequence[BinarySchoolMatrix], item_ids: Sequence[str]) -> ResponseDataset:
    """Wrap already-dichotomised matrices back into a ``ResponseDataset``."""
    rids, sids, groups = [], [], []
    for m in matrices:
        ids = m.respondent_ids or tuple(f"{m.school_id}_{k}" for k in range(m.n))
        rids.extend(ids)
        sids.extend([m.school_id] * m.n)
        groups.extend([m.group_label] * m.n)
    has_group = any(g is not None for g in groups)
    return ResponseDataset(
        respondent_ids=rids,
        school_ids=sids,
        responses=stack_schools(matrices),
        item_ids=list(item_ids),
        group_labels=groups if has_group else None,
    )
