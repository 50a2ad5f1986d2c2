"""Time-series records and CSV export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RUN_RECORD_COLUMNS = ("t_s", "y_over_d", "ydot_norm", "duty", "alpha", "reward")


@dataclass
class RunRecord:
    """Uniformly sampled trace of one run.

    ``meta`` carries scalars needed downstream (``f_n_hz``, ``dt_s``,
    ``control_start_s``) and is echoed into CSV headers.
    """

    t_s: np.ndarray
    y_over_d: np.ndarray
    ydot_norm: np.ndarray
    duty: np.ndarray
    alpha: np.ndarray
    reward: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t_s)

    @property
    def dt_s(self) -> float:
        if "dt_s" in self.meta:
            return float(self.meta["dt_s"])
        return float(self.t_s[1] - self.t_s[0])

    def slice_time(self, t_start: float, t_end: float | None = None) -> "RunRecord":
        mask = self.t_s >= t_start - 1e-12
        if t_end is not None:
            mask &= self.t_s <= t_end + 1e-12
        cols = {c: getattr(self, c)[mask] for c in RUN_RECORD_COLUMNS}
        return RunRecord(**cols, meta=dict(self.meta))

    @classmethod
    def empty(cls, meta=None) -> "RunRecord":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, meta=dict(meta or {}))


def format_header(meta: dict) -> list[str]:
    return [f"# {k}={meta[k]}" for k in sorted(meta)]


def write_csv(path, columns, rows, meta=None):
    """Write ``rows`` under ``columns`` with ``# key=value`` header lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in format_header(meta or {}):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_run_record(record: RunRecord, path, meta=None):
    rows = zip(*(getattr(record, c) for c in RUN_RECORD_COLUMNS))
    merged = dict(record.meta)
    merged.update(meta or {})
    return write_csv(path, RUN_RECORD_COLUMNS, rows, merged)


def read_csv(path):
    """Return ``(meta, columns, rows)``; numeric cells are parsed to float."""
    meta = {}
    with Path(path).open() as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        else:
            body.append(line)
    reader = csv.reader(body)
    columns = next(reader)
    rows = [[_parse(c) for c in r] for r in reader]
    return meta, columns, rows


def read_table(path):
    """Return ``(meta, rows)`` with each row a dict keyed by column."""
    meta, columns, rows = read_csv(path)
    return meta, [dict(zip(columns, r)) for r in rows]


def _parse(cell):
    try:
        return float(cell)
    except ValueError:
        return cell


def read_run_record(path) -> RunRecord:
    meta, columns, rows = read_csv(path)
    arr = np.array(rows, dtype=float).reshape(-1, len(columns))
    cols = {c: arr[:, i] for i, c in enumerate(columns)}
    return RunRecord(**{c: cols[c] for c in RUN_RECORD_COLUMNS}, meta=meta)
