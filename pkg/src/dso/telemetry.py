"""Ingestion of recorded DCGM utilization and power logs.

Both loaders take CSV text.  Averages are plain arithmetic means because
samples are assumed to be collected at a fixed period.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields

import numpy as np

from dso.errors import EmptyTrace, NonPositivePower, OutOfRange, SchemaMismatch

DCGM_HEADER = ("timestamp", "SMACT", "SMOCC", "TENSO", "DRAMA", "FP64A", "FP32A", "FP16A", "INTAC")
POWER_HEADER = ("timestamp", "power_w")


@dataclass(frozen=True)
class DcgmMetricVector:
    smact: float
    smocc: float
    tenso: float
    drama: float
    fp64a: float
    fp32a: float
    fp16a: float
    intac: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise OutOfRange(f"{f.name}={v} outside [0, 1]", 0)

    def as_vector(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class PowerTrace:
    samples: tuple[tuple[float, float], ...]

    @property
    def average_power(self) -> float:
        return float(np.mean([p for _, p in self.samples]))


def _read_rows(csv_text: str, header: tuple[str, ...]) -> list[tuple[int, list[float]]]:
    reader = csv.reader(io.StringIO(csv_text, newline=""))
    rows = [r for r in reader if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyTrace("no header and no data rows")
    got = tuple(cell.strip() for cell in rows[0])
    if got != header:
        raise SchemaMismatch(f"expected header {','.join(header)}, got {','.join(got)}")
    out = []
    for rowno, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise SchemaMismatch(f"row {rowno}: expected {len(header)} columns, got {len(row)}")
        try:
            values = [float(cell) for cell in row]
        except ValueError as exc:
            raise SchemaMismatch(f"row {rowno}: {exc}") from None
        out.append((rowno, values))
    if not out:
        raise EmptyTrace("no data rows")
    return out


def load_dcgm_samples(csv_text: str) -> DcgmMetricVector:
    rows = _read_rows(csv_text, DCGM_HEADER)
    for rowno, values in rows:
        for name, v in zip(DCGM_HEADER[1:], values[1:]):
            if not 0.0 <= v <= 1.0:
                raise OutOfRange(f"{name}={v} outside [0, 1]", rowno)
    means = np.mean([values[1:] for _, values in rows], axis=0)
    # mean of values in [0,1] can round a hair outside the interval
    return DcgmMetricVector(*(float(min(max(m, 0.0), 1.0)) for m in means))


def load_power_samples(csv_text: str) -> PowerTrace:
    rows = _read_rows(csv_text, POWER_HEADER)
    samples = []
    last_t = -np.inf
    for rowno, (t, p) in rows:
        if not p > 0:
            raise NonPositivePower(f"row {rowno}: power_w={p}")
        if t < last_t:
            raise SchemaMismatch(f"row {rowno}: timestamp {t} decreases")
        last_t = t
        samples.append((t, p))
    return PowerTrace(tuple(samples))


def dcgm_csv(rows: list[tuple[float, DcgmMetricVector]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DCGM_HEADER)
    for t, m in rows:
        w.writerow([repr(float(t)), *(repr(float(v)) for v in astuple(m))])
    return buf.getvalue()


def convert_dcgmi_dmon(text: str, interval_s: float = 1.0, gpu: int | None = None) -> str:
    """Convert a ``dcgmi dmon -e ...`` dump into the ingest CSV.

    dmon prints a ``#Entity`` header naming the fields and one ``GPU <id>``
    line per sample; it carries no timestamps, so rows are stamped with
    ``index * interval_s``.  Rows containing ``N/A`` are skipped.
    """
    columns: list[str] | None = None
    out_rows: list[tuple[float, DcgmMetricVector]] = []
    wanted = [h for h in DCGM_HEADER[1:]]
    for line in text.splitlines():
        toks = line.split()
        if not toks:
            continue
        if toks[0] == "#Entity":
            columns = toks[1:]
            missing = [m for m in wanted if m not in columns]
            if missing:
                raise SchemaMismatch(f"dmon output lacks fields {missing}")
            continue
        if toks[0] != "GPU" or columns is None:
            continue
        if gpu is not None and toks[1] != str(gpu):
            continue
        values = toks[2:]
        if len(values) != len(columns) or "N/A" in values:
            continue
        try:
            by_name = dict(zip(columns, (float(v) for v in values)))
        except ValueError:
            raise SchemaMismatch(f"non-numeric dmon sample line: {line.strip()!r}") from None
        metric = DcgmMetricVector(*(by_name[m] for m in wanted))
        out_rows.append((len(out_rows) * interval_s, metric))
    if not out_rows:
        raise EmptyTrace("no usable GPU sample lines in dmon output")
    return dcgm_csv(out_rows)
