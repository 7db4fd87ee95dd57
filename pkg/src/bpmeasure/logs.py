"""Execution-log ingestion (CSV) and validation against a process model.

Schema: `No,Object Type,Object,Process ID,Start Time,End Time,Processing
Time,Performer`.  Empty cells are absent values.  Bare `H:MM:SS` timestamps
are pinned to the reference date given at parse time (day 0 by default);
logs that cross midnight should carry full ISO timestamps.

The Processing Time column is authoritative: when it disagrees with the
row's start-to-end span, the span is never substituted — the mismatch is
surfaced as an informational diagnostic.  Exact repeats of a row (all
columns equal except No) are kept but flagged; downstream folding drops
them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date

from .errors import (
    Diagnostic,
    LEVEL_ERROR,
    LEVEL_INFO,
    LEVEL_WARNING,
    ParseError,
    RowError,
    SchemaError,
)
from .model import (
    BusinessProcess,
    Decision,
    ProcessModel,
    Task,
    ancestor_processes,
)
from .units import (
    Quantity,
    format_duration,
    format_time_point,
    parse_duration,
    parse_time_point,
)

HEADER = ("No", "Object Type", "Object", "Process ID",
          "Start Time", "End Time", "Processing Time", "Performer")

OBJECT_TYPES = ("Business Process", "Task", "Decision")


@dataclass(frozen=True)
class LogRecord:
    no: int
    object_type: str
    object: str
    process_id: str
    start: Quantity | None = None
    end: Quantity | None = None
    processing_time: Quantity | None = None
    performer: str | None = None

    def identity(self) -> tuple:
        """Everything except the row number; used for duplicate detection."""
        return (self.object_type, self.object, self.process_id,
                self.start, self.end, self.processing_time, self.performer)


@dataclass(frozen=True)
class ExecutionLog:
    records: tuple[LogRecord, ...] = ()

    def for_instance(self, process_id: str) -> list[LogRecord]:
        return [r for r in self.records if r.process_id == process_id]

    def __len__(self) -> int:
        return len(self.records)


def parse_log(text: str, reference_date: date | None = None) -> ExecutionLog:
    """Parse log CSV into typed records; row numbers must strictly increase."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("log file is empty") from None
    normalized = [h.strip().lower() for h in header]
    if normalized != [h.lower() for h in HEADER]:
        raise SchemaError(
            "bad log header: expected " + ",".join(HEADER) + ", got " + ",".join(header)
        )
    records: list[LogRecord] = []
    last_no = 0
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) > len(HEADER):
            raise RowError(line_no, "row", f"{len(row)} cells, expected {len(HEADER)}")
        cells = [cell.strip() for cell in row] + [""] * (len(HEADER) - len(row))
        no_text, obj_type, obj, pid, start_text, end_text, pt_text, performer = cells
        if not no_text.isdigit() or int(no_text) <= 0:
            raise RowError(line_no, "No", f"not a positive integer: {no_text!r}")
        no = int(no_text)
        if no <= last_no:
            raise RowError(line_no, "No", f"{no} does not increase past {last_no}")
        last_no = no
        if obj_type not in OBJECT_TYPES:
            raise RowError(line_no, "Object Type",
                           f"{obj_type!r} is not one of {', '.join(OBJECT_TYPES)}")
        if not obj:
            raise RowError(line_no, "Object", "empty")
        if not pid:
            raise RowError(line_no, "Process ID", "empty")
        try:
            start = parse_time_point(start_text, reference_date) if start_text else None
            end = parse_time_point(end_text, reference_date) if end_text else None
            pt = parse_duration(pt_text) if pt_text else None
        except (ParseError, ValueError) as exc:
            raise RowError(line_no, "time", str(exc)) from None
        if start is not None and end is not None and start.in_base() > end.in_base():
            raise RowError(line_no, "End Time",
                           f"{end_text} is before start time {start_text}")
        records.append(LogRecord(no, obj_type, obj, pid, start, end, pt, performer or None))
    return ExecutionLog(tuple(records))


def instances(log: ExecutionLog) -> list[str]:
    """Distinct process ids in first-appearance order."""
    seen: dict[str, None] = {}
    for record in log.records:
        seen.setdefault(record.process_id, None)
    return list(seen)


def duplicate_rows(records) -> list[tuple[LogRecord, LogRecord]]:
    """(kept, repeat) pairs of rows equal in every column but No."""
    first: dict[tuple, LogRecord] = {}
    out = []
    for record in records:
        key = record.identity()
        if key in first:
            out.append((first[key], record))
        else:
            first[key] = record
    return out


def dedup_records(records) -> list[LogRecord]:
    """Drop exact repeats, keeping the first occurrence."""
    seen: set[tuple] = set()
    out = []
    for record in records:
        key = record.identity()
        if key not in seen:
            seen.add(key)
            out.append(record)
    return out


def _model_objects(model: ProcessModel) -> dict[str, set[str]]:
    """Object-type tag per name as the model knows it."""
    out: dict[str, set[str]] = {}
    for proc in model.processes:
        out.setdefault(proc.name, set()).add("Business Process")
        for child in proc.children:
            if isinstance(child, Task):
                out.setdefault(child.name, set()).add("Task")
            elif isinstance(child, Decision):
                out.setdefault(child.name, set()).add("Decision")
    return out


def validate_log(log: ExecutionLog, model: ProcessModel, strict: bool = False) -> list[Diagnostic]:
    """Cross-checks that never reject a log outright.

    Always: flag duplicate rows and Processing Time values that disagree
    with the row's start-to-end span.  With `strict`, additionally resolve
    every object against the model (name, type agreement) and require a
    container row for each ancestor process of every record's instance.
    """
    out: list[Diagnostic] = []
    for kept, repeat in duplicate_rows(log.records):
        out.append(Diagnostic(LEVEL_WARNING, "DUPLICATE_ROW", f"row {repeat.no}",
                              f"identical to row {kept.no}; folding keeps one occurrence"))
    for record in log.records:
        if record.start and record.end and record.processing_time:
            span = record.end.in_base() - record.start.in_base()
            if span != record.processing_time.in_base():
                out.append(Diagnostic(
                    LEVEL_INFO, "PT_SPAN_MISMATCH", f"row {record.no}",
                    f"Processing Time {format_duration(record.processing_time)} differs from "
                    f"start-to-end span; the Processing Time column is authoritative"))
    if not strict:
        return out

    known = _model_objects(model)
    for record in log.records:
        types = known.get(record.object)
        if types is None:
            out.append(Diagnostic(LEVEL_ERROR, "UNKNOWN_OBJECT", f"row {record.no}",
                                  f"object {record.object!r} is not in the model"))
        elif record.object_type not in types:
            out.append(Diagnostic(LEVEL_ERROR, "TYPE_MISMATCH", f"row {record.no}",
                                  f"object {record.object!r} is a {'/'.join(sorted(types))} "
                                  f"in the model, not a {record.object_type}"))

    by_instance: dict[str, set[str]] = {}
    for record in log.records:
        if record.object_type == "Business Process":
            by_instance.setdefault(record.process_id, set()).add(record.object)
    reported: set[tuple[str, str]] = set()
    for record in log.records:
        if record.object not in known:
            continue
        present = by_instance.get(record.process_id, set())
        for ancestor in ancestor_processes(model, record.object):
            if ancestor not in present and (record.process_id, ancestor) not in reported:
                reported.add((record.process_id, ancestor))
                out.append(Diagnostic(
                    LEVEL_ERROR, "ORPHAN_INSTANCE", f"row {record.no}",
                    f"instance {record.process_id} has no {ancestor!r} container row"))
    return out


def render_log(log: ExecutionLog) -> str:
    """Render back to CSV; `parse_log(render_log(log))` preserves every record."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in log.records:
        writer.writerow([
            r.no,
            r.object_type,
            r.object,
            r.process_id,
            format_time_point(r.start) if r.start else "",
            format_time_point(r.end) if r.end else "",
            format_duration(r.processing_time) if r.processing_time else "",
            r.performer or "",
        ])
    return buf.getvalue()
