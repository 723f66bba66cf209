"""Report bundles and their CSV / JSON serialisations.

CSV columns (fixed order)::

    experiment_id, model, quantity, radius, t_or_window, estimate, std_error, witness_ref

Empty fields are written as empty strings. The CSV file starts with one
``# config: <json>`` comment line carrying the config echo and one
``# tool_version: <v>`` line. The JSON file holds ``{"body": ..., "metadata": ...}``;
``body`` is byte-stable across runs, ``metadata`` holds the timestamp.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

CSV_COLUMNS = ("experiment_id", "model", "quantity", "radius", "t_or_window", "estimate",
               "std_error", "witness_ref")


@dataclass
class Row:
    experiment_id: str
    model: str
    quantity: str
    radius: float | None = None
    t_or_window: object = None
    estimate: float | None = None
    std_error: float | None = None
    witness_ref: str | None = None


@dataclass
class ReportBundle:
    experiment_id: str
    kind: str
    summary: dict
    rows: list[Row]
    config: dict
    tool_version: str = __version__
    metadata: dict = field(default_factory=dict)

    def body(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "kind": self.kind,
            "summary": self.summary,
            "rows": [asdict(r) for r in self.rows],
            "config": self.config,
            "tool_version": self.tool_version,
        }

    def to_dict(self) -> dict:
        return {"body": self.body(), "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "ReportBundle":
        b = d["body"]
        return cls(b["experiment_id"], b["kind"], b["summary"], [Row(**r) for r in b["rows"]],
                   b["config"], b["tool_version"], d.get("metadata", {}))


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def body_json(bundle: ReportBundle) -> str:
    return json.dumps(_jsonable(bundle.body()), sort_keys=True, indent=2, allow_nan=False)


def to_json(bundle: ReportBundle) -> str:
    meta = json.dumps(bundle.metadata, sort_keys=True)
    return '{\n"body": ' + body_json(bundle) + ',\n"metadata": ' + meta + "\n}\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return "[" + ";".join(repr(x) if isinstance(x, float) else str(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(bundle: ReportBundle) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(_jsonable(bundle.config), sort_keys=True) + "\n")
    buf.write(f"# tool_version: {bundle.tool_version}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in bundle.rows:
        w.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_report(bundle: ReportBundle, fmt: str, out: str | Path | None) -> str:
    """Serialise ``bundle``; write it to ``out`` when given, and return the text."""
    if not bundle.metadata:
        bundle.metadata = {"generated_at": datetime.now(timezone.utc).isoformat()}
    if fmt == "csv":
        text = to_csv(bundle)
    elif fmt == "json":
        text = to_json(bundle)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if out is not None:
        Path(out).write_text(text)
    return text
