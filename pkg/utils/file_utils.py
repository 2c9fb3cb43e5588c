import csv
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from pydantic import BaseModel


def get_next_run_num(base_dir: Union[str, Path], prefix: str) -> int:
    """Return the next run number for `prefix` under base_dir (prefix.1, prefix.2, ...)."""
    runs_dir = Path(base_dir)
    runs_dir.mkdir(parents=True, exist_ok=True)

    existing_runs = []
    for run_dir in runs_dir.iterdir():
        if run_dir.is_dir() and run_dir.name.startswith(f"{prefix}."):
            try:
                existing_runs.append(int(run_dir.name.split(".")[-1]))
            except ValueError:
                continue

    if not existing_runs:
        return 1
    return max(existing_runs) + 1


def next_run_dir(base_dir: Union[str, Path], prefix: str) -> Path:
    """Create and return a fresh numbered run directory."""
    path = Path(base_dir) / f"{prefix}.{get_next_run_num(base_dir, prefix)}"
    path.mkdir(parents=True)
    return path


def write_csv(path: Union[str, Path], columns: Sequence[str], rows: Iterable[Dict[str, object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_jsonl(path: Union[str, Path], records: Iterable[BaseModel]) -> Path:
    """one model per line, as model_dump_json renders it"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
    return path
