"""Question/answer records and their JSONL format."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

from adaswitch.trajectory import read_jsonl, write_jsonl


@dataclass(frozen=True)
class DatasetRecord:
    question_id: str
    question: str
    rationale: str
    answer: str

    def __post_init__(self) -> None:
        if not str(self.answer).strip():
            raise ValueError(f"record {self.question_id!r} has an empty answer")


def load_dataset(path: str | Path, limit: int | None = None) -> list[DatasetRecord]:
    rows = read_jsonl(path)
    if limit is not None:
        rows = rows[:limit]
    return [
        DatasetRecord(str(r["question_id"]), r["question"], r.get("rationale", ""), str(r["answer"]))
        for r in rows
    ]


def save_dataset(path: str | Path, records: list[DatasetRecord]) -> None:
    write_jsonl(path, (asdict(r) for r in records))
