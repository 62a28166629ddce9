"""Question banks, student records and response datasets.

These are the domain types shared by every student-model family. All types
are immutable after construction and safe to share across concurrent
sessions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

UNKNOWN = "unknown"

INFO_PREFIX = "info:"


class DatasetError(ValueError):
    """Malformed bank or dataset content, with row/column context when known."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where += f" (row {row}"
            where += f", column {column!r})" if column is not None else ")"
        elif column is not None:
            where += f" (column {column!r})"
        super().__init__(message + where)


@dataclass(frozen=True)
class Item:
    """A single question/subproblem of the bank.

    ``answer_space`` enumerates the observable answer states, either a
    generic (incorrect, correct) pair or one state per choice / grade level.
    ``parent_problem`` groups subproblems; grouping is metadata only, every
    model operates at subproblem granularity.
    """

    id: str
    text: str = ""
    answer_space: tuple[str, ...] = ("incorrect", "correct")
    grade_points: int = 1
    parent_problem: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise DatasetError("item id must be nonempty")
        if len(self.answer_space) < 2:
            raise DatasetError(f"item {self.id!r}: answer_space needs >= 2 states")
        if len(set(self.answer_space)) != len(self.answer_space):
            raise DatasetError(f"item {self.id!r}: duplicate answer states")
        if self.grade_points < 0:
            raise DatasetError(f"item {self.id!r}: grade_points must be >= 0")


@dataclass(frozen=True)
class QuestionBank:
    """Ordered collection of items; ``parent_grades`` optionally declares the
    total grade of each parent problem so the subproblem sums can be checked.
    """

    items: tuple[Item, ...]
    parent_grades: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate item ids: {dupes}")
        for parent, total in self.parent_grades.items():
            got = sum(it.grade_points for it in self.items if it.parent_problem == parent)
            if got != total:
                raise DatasetError(
                    f"subproblem grades of parent {parent!r} sum to {got}, declared {total}"
                )

    @property
    def max_score(self) -> int:
        return sum(it.grade_points for it in self.items)

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(it.id for it in self.items)

    def item(self, item_id: str) -> Item:
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(item_id)

    def to_payload(self) -> dict:
        doc = {
            "items": [
                {
                    "id": it.id,
                    "text": it.text,
                    "answer_space": list(it.answer_space),
                    "grade_points": it.grade_points,
                    "parent_problem": it.parent_problem,
                }
                for it in self.items
            ],
            "max_score": self.max_score,
        }
        if self.parent_grades:
            doc["parent_grades"] = dict(self.parent_grades)
        return doc

    @classmethod
    def from_payload(cls, doc: Mapping) -> "QuestionBank":
        items = tuple(
            Item(
                id=str(row["id"]),
                text=row.get("text", ""),
                answer_space=tuple(row.get("answer_space", ("incorrect", "correct"))),
                grade_points=int(row.get("grade_points", 1)),
                parent_problem=row.get("parent_problem"),
            )
            for row in doc["items"]
        )
        bank = cls(items=items, parent_grades=dict(doc.get("parent_grades", {})))
        declared = doc.get("max_score")
        if declared is not None and int(declared) != bank.max_score:
            raise DatasetError(
                f"declared max_score {declared} != sum of grade_points {bank.max_score}"
            )
        return bank


def load_bank(path) -> QuestionBank:
    with open(path, "r", encoding="utf-8") as fh:
        return QuestionBank.from_payload(json.load(fh))


def save_bank(bank: QuestionBank, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bank.to_payload(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class StudentRecord:
    """One examinee row: per-item optional grades plus auxiliary info.

    Auxiliary factors always carry an explicit ``"unknown"`` state instead of
    being absent, so their missingness is itself usable as evidence.
    """

    id: str
    grades: tuple[Optional[int], ...]
    info: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "grades", tuple(self.grades))
        object.__setattr__(self, "info", dict(self.info))


@dataclass(frozen=True)
class ResponseDataset:
    """students x items grade matrix with missing cells.

    ``mode`` is uniform for the whole dataset: ``"numeric"`` cells are
    integers in [0, grade_points], ``"boolean"`` cells are 0/1.
    """

    item_ids: tuple[str, ...]
    students: tuple[StudentRecord, ...]
    mode: str = "numeric"

    def __post_init__(self):
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "students", tuple(self.students))
        if self.mode not in ("numeric", "boolean"):
            raise DatasetError(f"unknown dataset mode {self.mode!r}")
        for rec in self.students:
            if len(rec.grades) != len(self.item_ids):
                raise DatasetError(
                    f"student {rec.id!r} has {len(rec.grades)} grades, "
                    f"expected {len(self.item_ids)}"
                )
            if self.mode == "boolean":
                for g in rec.grades:
                    if g is not None and g not in (0, 1):
                        raise DatasetError(f"student {rec.id!r}: boolean grade {g!r}")

    @property
    def n_students(self) -> int:
        return len(self.students)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def info_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for rec in self.students:
            for key in rec.info:
                if key not in names:
                    names.append(key)
        return tuple(names)

    def grade_matrix(self, missing=0):
        """Grades as a dense n_students x n_items list of lists."""
        return [
            [missing if g is None else g for g in rec.grades] for rec in self.students
        ]

    def raw_scores(self) -> list[int]:
        return [raw_score(rec) for rec in self.students]

    def info_values(self, name: str) -> list[str]:
        return [rec.info.get(name, UNKNOWN) for rec in self.students]

    def with_info_column(self, name: str, values: Sequence[str]) -> "ResponseDataset":
        """New dataset with an extra auxiliary column (e.g. a derived score group)."""
        if len(values) != self.n_students:
            raise DatasetError(f"info column {name!r} has {len(values)} values")
        students = tuple(
            StudentRecord(rec.id, rec.grades, {**rec.info, name: str(v)})
            for rec, v in zip(self.students, values)
        )
        return ResponseDataset(self.item_ids, students, self.mode)


def raw_score(record: StudentRecord) -> int:
    """Sum of non-missing grades; an unanswered item scores 0."""
    return sum(g for g in record.grades if g is not None)


def _parse_grade(cell: str, item: Item, mode: str, row: int) -> Optional[int]:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        value = int(cell)
    except ValueError:
        raise DatasetError(f"grade cell {cell!r} is not an integer", row=row, column=item.id)
    if mode == "boolean":
        if value not in (0, 1):
            raise DatasetError(f"boolean grade must be 0 or 1, got {value}", row=row, column=item.id)
    else:
        if value < 0 or value > item.grade_points:
            raise DatasetError(
                f"grade {value} outside [0, {item.grade_points}]", row=row, column=item.id
            )
    return value


def load_dataset(path, bank: QuestionBank, mode: str = "numeric") -> ResponseDataset:
    """Parse the dataset CSV: header ``student_id,<item_id>...,<info:NAME>...``.

    Empty grade cells become missing; empty info cells become ``"unknown"``.
    Errors report the offending row/column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _read_dataset(fh, bank, mode)


def loads_dataset(text: str, bank: QuestionBank, mode: str = "numeric") -> ResponseDataset:
    return _read_dataset(io.StringIO(text), bank, mode)


def _read_dataset(fh, bank: QuestionBank, mode: str) -> ResponseDataset:
    if mode not in ("numeric", "boolean"):
        raise DatasetError(f"unknown dataset mode {mode!r}")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty dataset file")
    if not header or header[0].strip() != "student_id":
        raise DatasetError("first header column must be 'student_id'")

    item_cols: list[tuple[int, Item]] = []
    info_cols: list[tuple[int, str]] = []
    for idx, name in enumerate(header[1:], start=1):
        name = name.strip()
        if name.startswith(INFO_PREFIX):
            info_cols.append((idx, name[len(INFO_PREFIX):]))
        else:
            try:
                item = bank.item(name)
            except KeyError:
                raise DatasetError(f"unknown item column {name!r}", row=0, column=name)
            item_cols.append((idx, item))
    seen = {item.id for _, item in item_cols}
    missing_items = [i for i in bank.item_ids if i not in seen]
    if missing_items:
        raise DatasetError(f"dataset lacks columns for items {missing_items}")

    students: list[StudentRecord] = []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetError(
                f"row has {len(row)} cells, header has {len(header)}", row=row_no
            )
        grades = tuple(_parse_grade(row[idx], item, mode, row_no) for idx, item in item_cols)
        info = {}
        for idx, name in info_cols:
            cell = row[idx].strip()
            info[name] = cell if cell else UNKNOWN
        students.append(StudentRecord(id=row[0].strip(), grades=grades, info=info))

    item_ids = tuple(item.id for _, item in item_cols)
    return ResponseDataset(item_ids=item_ids, students=tuple(students), mode=mode)


def save_dataset(dataset: ResponseDataset, path) -> None:
    """Write the canonical CSV form; ``load_dataset`` reproduces the dataset."""
    info_names = dataset.info_names
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["student_id", *dataset.item_ids, *(INFO_PREFIX + n for n in info_names)]
        )
        for rec in dataset.students:
            grades = ["" if g is None else str(g) for g in rec.grades]
            info = [
                "" if rec.info.get(n, UNKNOWN) == UNKNOWN else rec.info[n]
                for n in info_names
            ]
            writer.writerow([rec.id, *grades, *info])
