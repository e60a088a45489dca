"""Parsing, validation, and per-student ordering of raw action logs.

Log format: UTF-8 comma-separated lines, one action per line, optional
header::

    student_id,timestamp,action_kind,lesson_id,topic_id,correct,homework

with ``action_kind`` one of ``fillout``/``multichoice``/``material``,
``correct`` in ``{"", "0", "1"}`` (empty exactly when the action is a
material view), ``homework`` in ``{"0", "1"}``, and ``timestamp`` integer
UTC seconds.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Optional, Union

from eosnet.errors import LogParseError

HEADER = "student_id,timestamp,action_kind,lesson_id,topic_id,correct,homework"


class ActionKind(Enum):
    FILL_OUT_QUESTION = "fillout"
    MULTIPLE_CHOICE_QUESTION = "multichoice"
    MATERIAL = "material"

    @property
    def is_question(self) -> bool:
        return self is not ActionKind.MATERIAL


_KIND_TOKENS = {kind.value: kind for kind in ActionKind}


@dataclass(frozen=True, slots=True)
class RawAction:
    """One timestamped student interaction."""

    student_id: str
    timestamp: int
    kind: ActionKind
    lesson_id: str
    topic_id: str
    correct: Optional[bool]
    homework: bool

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.kind.is_question:
            if self.correct is None:
                raise ValueError("question action without a correct flag")
        elif self.correct is not None:
            raise ValueError("material action with a correct flag")


@dataclass(slots=True)
class StudentLog:
    """All actions of one student, sorted by timestamp (stable)."""

    student_id: str
    actions: list[RawAction]


def parse_line(line: str, line_no: int = 0) -> RawAction:
    """Parse one record; raises :class:`LogParseError` on any defect."""
    parts = line.rstrip("\n").split(",")
    if len(parts) != 7:
        raise LogParseError(line_no, f"expected 7 fields, got {len(parts)}")
    student_id, ts_s, kind_s, lesson_id, topic_id, correct_s, homework_s = parts
    if not student_id:
        raise LogParseError(line_no, "empty student_id")
    try:
        timestamp = int(ts_s)
    except ValueError:
        raise LogParseError(line_no, f"bad timestamp {ts_s!r}") from None
    kind = _KIND_TOKENS.get(kind_s)
    if kind is None:
        raise LogParseError(line_no, f"unknown action_kind {kind_s!r}")
    if correct_s == "":
        correct = None
    elif correct_s in ("0", "1"):
        correct = correct_s == "1"
    else:
        raise LogParseError(line_no, f"bad correct flag {correct_s!r}")
    if homework_s not in ("0", "1"):
        raise LogParseError(line_no, f"bad homework flag {homework_s!r}")
    try:
        return RawAction(
            student_id=student_id,
            timestamp=timestamp,
            kind=kind,
            lesson_id=lesson_id,
            topic_id=topic_id,
            correct=correct,
            homework=homework_s == "1",
        )
    except ValueError as exc:
        raise LogParseError(line_no, str(exc)) from None


def format_action(action: RawAction) -> str:
    """Inverse of :func:`parse_line` (without trailing newline)."""
    correct = "" if action.correct is None else ("1" if action.correct else "0")
    return ",".join(
        (
            action.student_id,
            str(action.timestamp),
            action.kind.value,
            action.lesson_id,
            action.topic_id,
            correct,
            "1" if action.homework else "0",
        )
    )


def parse_log(
    stream: Union[IO[str], IO[bytes], Iterable[str]],
    strict: bool = True,
    bad_records: Optional[list[LogParseError]] = None,
) -> list[RawAction]:
    """Parse a log stream into actions, in file order.

    An optional header line is skipped.  In strict mode (default) the
    first malformed record aborts the parse; in lenient mode malformed
    records are skipped and collected into ``bad_records`` when given.
    """
    if isinstance(stream, io.IOBase) and isinstance(stream, io.RawIOBase | io.BufferedIOBase):
        stream = io.TextIOWrapper(stream, encoding="utf-8")
    actions: list[RawAction] = []
    for line_no, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        stripped = line.strip()
        if not stripped:
            continue
        if line_no == 1 and stripped == HEADER:
            continue
        try:
            actions.append(parse_line(stripped, line_no))
        except LogParseError as exc:
            if strict:
                raise
            if bad_records is not None:
                bad_records.append(exc)
    return actions


def parse_log_file(path, strict: bool = True,
                   bad_records: Optional[list[LogParseError]] = None) -> list[RawAction]:
    with open(path, encoding="utf-8") as handle:
        return parse_log(handle, strict=strict, bad_records=bad_records)


def write_log(actions: Iterable[RawAction], path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        if header:
            handle.write(HEADER + "\n")
        for action in actions:
            handle.write(format_action(action) + "\n")


def group_by_student(actions: Iterable[RawAction]) -> list[StudentLog]:
    """Group actions into per-student chronological logs.

    Within a student, actions are stably sorted by timestamp, so records
    sharing a timestamp keep their input order.  Students come out sorted
    by id so grouping is deterministic regardless of input interleaving.
    """
    by_student: dict[str, list[RawAction]] = {}
    for action in actions:
        by_student.setdefault(action.student_id, []).append(action)
    return [
        StudentLog(student_id=sid, actions=sorted(by_student[sid], key=lambda a: a.timestamp))
        for sid in sorted(by_student)
    ]
