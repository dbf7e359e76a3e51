from __future__ import annotations

import csv
import json
import logging
import os
from collections import defaultdict
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional

logger = logging.getLogger(__name__)

CSV_HEADER = ["method", "layout", "p", "q", "seed", "log_ratio", "J_p_final", "J_q_final", "diverged", "iters"]


@dataclass
class SweepRow:
    """Outcome of one sweep cell. OSM rows carry ``q = 0`` since the coarseless method has no q."""

    method: str
    layout: int
    p: float
    q: float
    seed: int
    log_ratio: float
    J_p_final: float
    J_q_final: float
    diverged: bool
    iters: int
    wall_time: float = 0.0
    error: Optional[str] = None

    def sort_key(self):
        return (self.method, self.layout, self.p, self.q, self.seed)


def _format_float(value: float) -> str:
    return format(float(value), ".17g")


class ResultsWriter:
    def __init__(self, output_directory: str = "results"):
        """Initialize the writer with a directory for result files.

        Args:
            output_directory (str): Directory to store CSV, plot data and metadata files
        """
        self.output_directory = output_directory
        os.makedirs(output_directory, exist_ok=True)

    def _get_path(self, filename: str) -> str:
        return os.path.join(self.output_directory, filename)

    def emit_csv(self, rows: Iterable[SweepRow], filename: str = "sweep.csv") -> str:
        """Write the result table, one line per row, floats at 17 significant digits.

        Args:
            rows: Sweep rows, written in (method, layout, p, q, seed) order
            filename: Target file name, relative to the output directory

        Returns:
            str: Path of the written file
        """
        path = self._get_path(filename)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in sorted(rows, key=SweepRow.sort_key):
                writer.writerow([
                    row.method,
                    row.layout,
                    _format_float(row.p),
                    _format_float(row.q),
                    row.seed,
                    _format_float(row.log_ratio),
                    _format_float(row.J_p_final),
                    _format_float(row.J_q_final),
                    "true" if row.diverged else "false",
                    row.iters,
                ])
        logger.info("wrote %s", path)
        return path

    @staticmethod
    def read_csv(path: str) -> List[SweepRow]:
        """Load a table written by :meth:`emit_csv`.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: If the header does not match
        """
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ValueError(f"unexpected CSV header in {path}: {header}")
            return [
                SweepRow(
                    method=record[0],
                    layout=int(record[1]),
                    p=float(record[2]),
                    q=float(record[3]),
                    seed=int(record[4]),
                    log_ratio=float(record[5]),
                    J_p_final=float(record[6]),
                    J_q_final=float(record[7]),
                    diverged=record[8] == "true",
                    iters=int(record[9]),
                )
                for record in reader
            ]

    def emit_plotdata(self, rows: Iterable[SweepRow], subdirectory: str = "plotdata") -> List[str]:
        """Write one ``p log_ratio`` file per (method, layout, q), sorted by p.

        Diverged rows get a trailing ``diverged`` column, failed runs ``failed``.

        Returns:
            List of written file paths (empty for an empty table)
        """
        groups: Dict[tuple, List[SweepRow]] = defaultdict(list)
        for row in rows:
            groups[(row.method, row.layout, row.q)].append(row)
        if not groups:
            return []

        directory = self._get_path(subdirectory)
        os.makedirs(directory, exist_ok=True)
        paths = []
        for (method, layout, q), members in sorted(groups.items()):
            path = os.path.join(directory, f"{method}_layout{layout}_q{q:g}.dat")
            with open(path, "w", encoding="utf-8") as f:
                for row in sorted(members, key=lambda r: (r.p, r.seed)):
                    line = f"{_format_float(row.p)} {_format_float(row.log_ratio)}"
                    if row.error is not None:
                        line += " failed"
                    elif row.diverged:
                        line += " diverged"
                    f.write(line + "\n")
            paths.append(path)
        logger.info("wrote %d plot data files to %s", len(paths), directory)
        return paths

    def write_metadata(
        self,
        spec: Any,
        rows: List[SweepRow],
        filename: str = "sweep_metadata.json",
        metadata: Optional[Dict[str, Any]] = None,
    ) -> str:
        """Save the sweep spec, per-row wall times and failures next to the table.

        Returns:
            str: Path of the written file
        """
        spec_data = spec.model_dump(mode="json", exclude={"problem": {"source"}})
        spec_data.setdefault("problem", {})["source"] = repr(spec.problem.source)
        data = {
            "timestamp": datetime.now().isoformat(),
            "spec": spec_data,
            "rows": len(rows),
            "diverged": sum(1 for row in rows if row.diverged),
            "failures": [asdict(row) for row in rows if row.error is not None],
            "wall_time_total": sum(row.wall_time for row in rows),
            "metadata": metadata or {},
        }
        path = self._get_path(filename)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, ensure_ascii=False, default=str)
        return path
