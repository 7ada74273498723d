"""Pain-scale arithmetic, annotation records and the 39-head output table."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

DATASETS = ("Dementia", "Control", "UNBC")
UOFR_DATASETS = ("Dementia", "Control")
N_PACSLAC = 11
PSPI_TOL = 1e-9

CSV_COLUMNS = (
    ["dataset_id", "subject_id", "frame_index", "fps",
     "au4", "au6", "au7", "au9", "au10", "au43", "pspi"]
    + [f"p{i}" for i in range(1, N_PACSLAC + 1)]
    + ["frontal_score", "image_path"]
)


class ValidationError(ValueError):
    pass


class ConsistencyError(ValidationError):
    pass


def _check_range(name, value, lo, hi):
    if value is None:
        return
    if not (lo <= value <= hi) or math.isnan(value):
        raise ValidationError(f"{name}={value!r} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class AUVector:
    """FACS intensities used by PSPI.

    au6/au7/au9/au10 may be None for UofR records, where only the max-combined
    value was coded; the present member of each pair then carries the max.
    """

    au4: float = 0.0
    au6: Optional[float] = 0.0
    au7: Optional[float] = 0.0
    au9: Optional[float] = 0.0
    au10: Optional[float] = 0.0
    au43: float = 0.0

    def __post_init__(self):
        for name in ("au4", "au6", "au7", "au9", "au10"):
            _check_range(name, getattr(self, name), 0.0, 5.0)
        if self.au43 not in (0, 1):
            raise ValidationError(f"au43={self.au43!r} must be 0 or 1")
        if self.au6 is None and self.au7 is None:
            raise ValidationError("au6 and au7 both absent")
        if self.au9 is None and self.au10 is None:
            raise ValidationError("au9 and au10 both absent")

    @property
    def max_au6_au7(self) -> float:
        return max(v for v in (self.au6, self.au7) if v is not None)

    @property
    def max_au9_au10(self) -> float:
        return max(v for v in (self.au9, self.au10) if v is not None)


def compute_pspi(aus: AUVector) -> float:
    """PSPI = AU43 + max(AU6, AU7) + max(AU9, AU10) + AU4, in [0, 16]."""
    return float(aus.au43 + aus.max_au6_au7 + aus.max_au9_au10 + aus.au4)


@dataclass(frozen=True)
class AnnotationRecord:
    dataset_id: str
    subject_id: str
    frame_index: int
    fps: float
    aus: AUVector
    pspi: float
    pacslac: Optional[tuple] = None
    frontal_score: Optional[float] = None
    image_path: Optional[str] = None

    def __post_init__(self):
        if self.dataset_id not in DATASETS:
            raise ValidationError(f"dataset_id={self.dataset_id!r} not in {DATASETS}")
        _check_range("pspi", self.pspi, 0.0, 16.0)
        if self.fps <= 0:
            raise ValidationError(f"fps={self.fps!r} must be positive")
        _check_range("frontal_score", self.frontal_score, 0.0, 1.0)
        if self.dataset_id == "UNBC":
            if self.pacslac is not None:
                raise ValidationError("pacslac must be absent for UNBC records")
            for name in ("au6", "au7", "au9", "au10"):
                if getattr(self.aus, name) is None:
                    raise ValidationError(f"{name} is required for UNBC records")
        else:
            if self.pacslac is None or len(self.pacslac) != N_PACSLAC:
                raise ValidationError(f"{N_PACSLAC} pacslac items required for {self.dataset_id}")
            for i, p in enumerate(self.pacslac, 1):
                if p not in (0, 1):
                    raise ValidationError(f"p{i}={p!r} must be 0 or 1")
        expected = compute_pspi(self.aus)
        if abs(expected - self.pspi) > PSPI_TOL:
            raise ConsistencyError(
                f"pspi={self.pspi} disagrees with AUs (expected {expected})")

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.frame_index)

    def target_value(self, name: str) -> Optional[float]:
        """Value of a head target, or None when this record does not carry it."""
        if name == "pspi":
            return self.pspi
        if name == "max_au6_au7":
            return self.aus.max_au6_au7
        if name == "max_au9_au10":
            return self.aus.max_au9_au10
        if name.startswith("p") and name[1:].isdigit():
            if self.pacslac is None:
                return None
            return float(self.pacslac[int(name[1:]) - 1])
        value = getattr(self.aus, name)
        return None if value is None else float(value)


@dataclass(frozen=True)
class Head:
    index: int
    dataset_id: str
    target_name: str


@dataclass(frozen=True)
class HeadTable:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def for_dataset(self, dataset_id: str) -> list:
        return [h for h in self.entries if h.dataset_id == dataset_id]

    def index_of(self, dataset_id: str, target_name: str) -> int:
        for h in self.entries:
            if h.dataset_id == dataset_id and h.target_name == target_name:
                return h.index
        raise KeyError((dataset_id, target_name))

    def pspi_head(self, dataset_id: str) -> int:
        return self.index_of(dataset_id, "pspi")

    def membership_mask(self, dataset_id: str) -> list:
        return [1.0 if h.dataset_id == dataset_id else 0.0 for h in self.entries]


# Table I row order
_UOFR_TARGETS = (["pspi", "au43", "au4", "max_au9_au10", "max_au6_au7"]
                 + [f"p{i}" for i in range(1, N_PACSLAC + 1)])
_UNBC_TARGETS = ["pspi", "au43", "au4", "au9", "au10", "au6", "au7"]


@lru_cache(maxsize=None)
def build_head_table() -> HeadTable:
    entries = []
    for ds in DATASETS:
        targets = _UNBC_TARGETS if ds == "UNBC" else _UOFR_TARGETS
        for name in targets:
            entries.append(Head(len(entries), ds, name))
    return HeadTable(tuple(entries))


def _cell(row, name, conv, line):
    raw = row.get(name)
    if raw is None or raw.strip() == "":
        return None
    try:
        return conv(raw)
    except ValueError as e:
        raise ValidationError(f"row {line}: bad value for {name}: {raw!r}") from e


def _required(row, name, conv, line):
    value = _cell(row, name, conv, line)
    if value is None:
        raise ValidationError(f"row {line}: {name} is required")
    return value


def parse_row(row: dict, line: int = 0) -> AnnotationRecord:
    try:
        aus = AUVector(
            au4=_required(row, "au4", float, line),
            au6=_cell(row, "au6", float, line),
            au7=_cell(row, "au7", float, line),
            au9=_cell(row, "au9", float, line),
            au10=_cell(row, "au10", float, line),
            au43=_required(row, "au43", float, line),
        )
        pac = [_cell(row, f"p{i}", int, line) for i in range(1, N_PACSLAC + 1)]
        pac = None if all(p is None for p in pac) else tuple(pac)
        dataset_id = _cell(row, "dataset_id", str, line)
        subject_id = _cell(row, "subject_id", str, line)
        frame_index = _cell(row, "frame_index", int, line)
        fps = _cell(row, "fps", float, line)
        pspi = _cell(row, "pspi", float, line)
        for name, val in (("dataset_id", dataset_id), ("subject_id", subject_id),
                          ("frame_index", frame_index), ("fps", fps), ("pspi", pspi)):
            if val is None:
                raise ValidationError(f"{name} is required")
        return AnnotationRecord(
            dataset_id=dataset_id.strip(),
            subject_id=subject_id.strip(),
            frame_index=frame_index,
            fps=fps,
            aus=aus,
            pspi=pspi,
            pacslac=pac,
            frontal_score=_cell(row, "frontal_score", float, line),
            image_path=_cell(row, "image_path", str, line),
        )
    except ConsistencyError as e:
        raise ConsistencyError(f"row {line}: {e}") from None
    except ValidationError as e:
        msg = str(e)
        raise ValidationError(msg if msg.startswith("row ") else f"row {line}: {msg}") from None


def load_annotations(path) -> list:
    """Read an annotation CSV; row numbers in errors count the header as row 1."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("dataset_id", "subject_id", "frame_index", "fps", "pspi")
                   if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"missing columns: {missing}")
        return [parse_row(row, line) for line, row in enumerate(reader, start=2)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def record_to_row(rec: AnnotationRecord) -> dict:
    row = {
        "dataset_id": rec.dataset_id,
        "subject_id": rec.subject_id,
        "frame_index": rec.frame_index,
        "fps": _fmt(float(rec.fps)),
        "pspi": _fmt(float(rec.pspi)),
        "frontal_score": _fmt(rec.frontal_score),
        "image_path": rec.image_path or "",
    }
    for name in ("au4", "au6", "au7", "au9", "au10", "au43"):
        v = getattr(rec.aus, name)
        row[name] = _fmt(None if v is None else float(v))
    for i in range(N_PACSLAC):
        row[f"p{i + 1}"] = "" if rec.pacslac is None else str(int(rec.pacslac[i]))
    return row


def write_annotations(path, records: Sequence[AnnotationRecord]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow(record_to_row(rec))
