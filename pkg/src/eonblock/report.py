"""Report rows, their CSV/JSON serialisation, and tolerance-based comparison.

A :class:`ReportRow` holds one (mode, engine, variant, load) result. In CSV it
is flattened to one line per (OD, class) plus an aggregate line whose ``od``
and ``class`` columns are ``*``; the aggregate line carries the row metadata.
Reference tables that only give an overall figure have just the aggregate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

CSV_HEADER = ["mode", "engine", "variant", "load", "od", "class", "bp", "overall_bp", "runtime_s", "meta"]
AGGREGATE = "*"


class ReportKeyMismatch(ValueError):
    """The two reports being compared do not cover the same scenario keys."""


@dataclass(frozen=True)
class ReportRow:
    mode: str
    engine: str
    variant: str
    load: float
    od: tuple = ()  # OD labels such as "1-3"
    bp: tuple = ()  # per OD, per class
    overall: float = 0.0
    runtime_s: float = 0.0
    meta: dict = field(default_factory=dict, hash=False)
    ci: tuple | None = None  # 95% half-widths matching bp (simulation only)

    def flatten(self) -> list[dict]:
        out = []
        base = {"mode": self.mode, "engine": self.engine, "variant": self.variant,
                "load": self.load, "overall_bp": self.overall, "runtime_s": self.runtime_s}
        for o, label in enumerate(self.od):
            for k, value in enumerate(self.bp[o]):
                meta = {} if self.ci is None else {"ci": self.ci[o][k]}
                out.append({**base, "od": label, "class": str(k + 1), "bp": value, "meta": meta})
        out.append({**base, "od": AGGREGATE, "class": AGGREGATE, "bp": self.overall,
                    "meta": self.meta})
        return out

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["od"] = list(self.od)
        doc["bp"] = [list(r) for r in self.bp]
        doc["ci"] = None if self.ci is None else [list(r) for r in self.ci]
        return doc


def od_labels(config) -> tuple:
    return tuple(f"{od.origin}-{od.destination}" for od in config.od_pairs)


def _num(value: float) -> str:
    return repr(float(value))


def write_csv(rows: Iterable[ReportRow], fh: IO[str], comments: Sequence[str] = ()) -> None:
    for line in comments:
        fh.write(f"# {line}\n")
    writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        for flat in row.flatten():
            flat = dict(flat)
            for key in ("load", "bp", "overall_bp", "runtime_s"):
                flat[key] = _num(flat[key])
            flat["meta"] = json.dumps(flat["meta"], sort_keys=True)
            writer.writerow(flat)


def write_json(rows: Iterable[ReportRow], fh: IO[str]) -> None:
    json.dump([r.to_json() for r in rows], fh, indent=2, sort_keys=True)
    fh.write("\n")


def write_report(rows: Sequence[ReportRow], stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns both paths."""
    stem = Path(stem)
    if stem.suffix in (".csv", ".json"):
        stem = stem.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    json_path = stem.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        write_csv(rows, fh)
    with open(json_path, "w") as fh:
        write_json(rows, fh)
    return csv_path, json_path


def _from_flat(lines: list[dict]) -> list[ReportRow]:
    groups: dict = {}
    order = []
    for line in lines:
        key = (line["mode"], line["engine"], line["variant"], float(line["load"]))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(line)
    rows = []
    for key in order:
        od_order: list = []
        values: dict = {}
        cis: dict = {}
        meta: dict = {}
        overall = runtime = 0.0
        for line in groups[key]:
            overall = float(line["overall_bp"])
            runtime = float(line["runtime_s"])
            m = json.loads(line["meta"]) if line["meta"] else {}
            if line["od"] == AGGREGATE:
                meta = m
                continue
            label = line["od"]
            if label not in values:
                od_order.append(label)
                values[label] = {}
                cis[label] = {}
            k = int(line["class"])
            values[label][k] = float(line["bp"])
            if "ci" in m:
                cis[label][k] = float(m["ci"])
        bp = tuple(tuple(values[o][k] for k in sorted(values[o])) for o in od_order)
        has_ci = any(cis[o] for o in od_order)
        ci = tuple(tuple(cis[o][k] for k in sorted(cis[o])) for o in od_order) if has_ci else None
        rows.append(ReportRow(key[0], key[1], key[2], key[3], tuple(od_order), bp,
                              overall, runtime, meta, ci))
    return rows


def read_csv(fh: IO[str]) -> list[ReportRow]:
    body = (line for line in fh if line.strip() and not line.startswith("#"))
    reader = csv.DictReader(body)
    if reader.fieldnames != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return _from_flat(list(reader))


def read_json(fh: IO[str]) -> list[ReportRow]:
    rows = []
    for doc in json.load(fh):
        ci = doc.get("ci")
        rows.append(ReportRow(
            doc["mode"], doc["engine"], doc["variant"], float(doc["load"]),
            tuple(doc["od"]), tuple(tuple(r) for r in doc["bp"]), float(doc["overall"]),
            float(doc["runtime_s"]), doc.get("meta", {}),
            None if ci is None else tuple(tuple(r) for r in ci),
        ))
    return rows


def read_report(path: str | Path) -> list[ReportRow]:
    path = Path(path)
    with open(path, newline="") as fh:
        return read_json(fh) if path.suffix == ".json" else read_csv(fh)


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class Tolerance:
    """Allowed gap is the largest of the enabled terms.

    ``last_digit`` gives the number of significant figures of the reference
    value; one unit in its last place is allowed. ``ci_multiple`` scales the
    confidence half-width attached to either side.
    """

    rtol: float = 0.0
    atol: float = 0.0
    last_digit: int | None = None
    ci_multiple: float | None = None

    def allowed(self, reference: float, ci: float = 0.0) -> float:
        gap = max(self.atol, self.rtol * abs(reference))
        if self.last_digit and reference != 0:
            gap = max(gap, last_digit_unit(reference, self.last_digit))
        if self.ci_multiple is not None and ci and math.isfinite(ci):
            gap = max(gap, self.ci_multiple * ci)
        return gap


def last_digit_unit(value: float, sig: int = 2) -> float:
    """One unit in the last place of ``value`` printed to ``sig`` significant figures."""
    exponent = math.floor(math.log10(abs(value)))
    return 10.0 ** (exponent - sig + 1)


@dataclass(frozen=True)
class Difference:
    key: tuple  # (mode, load, od, class)
    a: float
    b: float
    abs_diff: float
    rel_diff: float
    allowed: float
    passed: bool


@dataclass
class Comparison:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]

    def summary(self) -> str:
        return f"{len(self.rows) - len(self.failures)}/{len(self.rows)} within tolerance"


def _keyed(rows: Iterable[ReportRow], overall_only: bool) -> dict:
    out: dict = {}
    for row in rows:
        for flat in row.flatten():
            if overall_only and flat["od"] != AGGREGATE:
                continue
            key = (row.mode, float(row.load), flat["od"], flat["class"])
            if key in out:
                raise ReportKeyMismatch(f"duplicate key {key}; select one engine/variant per report")
            ci = flat["meta"].get("ci", 0.0) if flat["od"] != AGGREGATE else row.meta.get("overall_ci", 0.0)
            out[key] = (float(flat["bp"]), float(ci or 0.0))
    return out


def select(rows: Iterable[ReportRow], **criteria) -> list[ReportRow]:
    """Rows whose attributes equal every given criterion (``None`` ignored)."""
    return [r for r in rows
            if all(v is None or getattr(r, k) == v for k, v in criteria.items())]


def compare(report_a: Sequence[ReportRow], report_b: Sequence[ReportRow],
            tolerance: Tolerance, overall_only: bool = False) -> Comparison:
    """Row-by-row differences, ``b`` being the reference.

    Both reports must cover exactly the same (mode, load, od, class) keys.
    """
    a = _keyed(report_a, overall_only)
    b = _keyed(report_b, overall_only)
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b), key=str)[:5]
        only_b = sorted(set(b) - set(a), key=str)[:5]
        raise ReportKeyMismatch(f"reports differ in keys; only in first: {only_a}, only in second: {only_b}")
    out = []
    for key in b:
        va, ci_a = a[key]
        vb, ci_b = b[key]
        diff = abs(va - vb)
        rel = diff / abs(vb) if vb else (0.0 if diff == 0 else math.inf)
        allowed = tolerance.allowed(vb, max(ci_a, ci_b))
        out.append(Difference(key, va, vb, diff, rel, allowed, diff <= allowed * (1 + 1e-9)))
    return Comparison(out)
