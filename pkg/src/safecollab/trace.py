"""Trace storage: columnar text file plus a JSON-lines event log.

File layout (schema version 1)::

    # safecollab-trace v1
    # key=value metadata, one per line
    t,phase,q0,...,mode          <- header
    0.0,idle,...                 <- one row per control cycle

Events live next to the trace in ``<trace>.events.jsonl``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACE_VERSION = 1
MAGIC = f"# safecollab-trace v{TRACE_VERSION}"
SPEED_TOL = 1e-6


class TraceError(ValueError):
    pass


@dataclass(eq=False)
class Trace:
    meta: dict
    columns: dict[str, np.ndarray]
    events: list[dict] = field(default_factory=list)

    @property
    def n_links(self) -> int:
        return int(self.meta["n_links"])

    @property
    def n_joints(self) -> int:
        return int(self.meta["n_joints"])

    def __len__(self) -> int:
        return len(self.columns["t"])

    def matrix(self, prefix: str, count: int) -> np.ndarray:
        return np.column_stack([self.columns[f"{prefix}{i}"] for i in range(count)])

    @property
    def v_rh(self) -> np.ndarray:
        return self.matrix("vrh", self.n_links)

    @property
    def v_max(self) -> np.ndarray:
        return self.matrix("vmax", self.n_links)

    @property
    def q(self) -> np.ndarray:
        return self.matrix("q", self.n_joints)

    @property
    def qdot(self) -> np.ndarray:
        return self.matrix("qd", self.n_joints)

    def events_of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["type"] == kind]


def column_names(n_joints: int, n_links: int) -> list[str]:
    return (["t", "phase"] + [f"q{j}" for j in range(n_joints)] + [f"qd{j}" for j in range(n_joints)]
            + ["s", "sdot", "alpha", "feasible", "min_sp"]
            + [f"vrh{i}" for i in range(n_links)] + [f"vmax{i}" for i in range(n_links)] + ["mode"])


_TEXT_COLUMNS = {"phase", "mode"}


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return repr(float(x))


def write_trace(trace: Trace, path) -> None:
    path = Path(path)
    names = list(trace.columns)
    cols = [trace.columns[n] for n in names]
    lines = [MAGIC]
    lines += [f"# {k}={trace.meta[k]}" for k in sorted(trace.meta)]
    lines.append(",".join(names))
    conv = []
    for name, col in zip(names, cols):
        if name in _TEXT_COLUMNS:
            conv.append([str(v) for v in col])
        elif name == "feasible":
            conv.append(["1" if v else "0" for v in col])
        else:
            conv.append([repr(float(v)) for v in col])
    lines += [",".join(row) for row in zip(*conv)]
    path.write_text("\n".join(lines) + "\n")
    with open(events_path(path), "w") as fh:
        for e in trace.events:
            fh.write(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n")


def events_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".events.jsonl")


def read_trace(path) -> Trace:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise TraceError(f"no such trace: {path}") from None
    if not lines or lines[0] != MAGIC:
        raise TraceError(f"{path} is not a v{TRACE_VERSION} trace file")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("# "):
        k, _, v = lines[i][2:].partition("=")
        meta[k] = v
        i += 1
    if i >= len(lines):
        raise TraceError(f"{path} has no column header")
    names = lines[i].split(",")
    rows = [ln.split(",") for ln in lines[i + 1:] if ln]
    columns = {}
    for j, name in enumerate(names):
        raw = [r[j] for r in rows]
        if name in _TEXT_COLUMNS:
            columns[name] = np.array(raw, dtype=object)
        elif name == "feasible":
            columns[name] = np.array([v == "1" for v in raw], dtype=bool)
        else:
            columns[name] = np.array(raw, dtype=float)
    events = []
    ep = events_path(path)
    if ep.is_file():
        events = [json.loads(ln) for ln in ep.read_text().splitlines() if ln]
    return Trace(meta, columns, events)


# --- analysis ----------------------------------------------------------

def trace_metrics(trace: Trace) -> dict:
    active = np.isin(trace.columns["phase"], ("to_pick", "to_place"))
    alpha = trace.columns["alpha"][active]
    releases = trace.events_of("release")
    return {
        "violations": len(trace.events_of("violation")),
        "violation_cycles": int(np.sum(np.any(trace.v_rh > trace.v_max + SPEED_TOL, axis=1))),
        "emergency_stops": len(trace.events_of("emergency_stop")),
        "min_distance": float(np.min(trace.columns["min_sp"])) if len(trace) else float("nan"),
        "tasks_completed": len(releases),
        "completion_time": float(releases[-1]["t"]) if releases else float("nan"),
        "mean_alpha": float(np.mean(alpha)) if alpha.size else float("nan"),
    }


def command_sequence(trace: Trace) -> list[dict]:
    return [{k: e[k] for k in ("t", "kind", "object", "area", "window_span")} for e in trace.events_of("command")]


def compare(trace_safe: Trace, trace_unsafe: Trace) -> dict:
    """Metric table and aligned per-cycle series for a safe/unsafe pair."""
    h1, h2 = trace_safe.meta.get("scenario_hash"), trace_unsafe.meta.get("scenario_hash")
    if h1 != h2:
        raise TraceError(f"traces come from different scenarios ({h1} vs {h2})")
    ms, mu = trace_metrics(trace_safe), trace_metrics(trace_unsafe)
    table = {k: {"safe": ms[k], "unsafe": mu[k], "delta": ms[k] - mu[k]} for k in ms}
    n = min(len(trace_safe), len(trace_unsafe))
    series = {
        "t": trace_safe.columns["t"][:n].tolist(),
        "safe_v_rh": trace_safe.v_rh.max(axis=1)[:n].tolist(),
        "safe_v_max": trace_safe.v_max.min(axis=1)[:n].tolist(),
        "unsafe_v_rh": trace_unsafe.v_rh.max(axis=1)[:n].tolist(),
        "unsafe_v_max": trace_unsafe.v_max.min(axis=1)[:n].tolist(),
    }
    return {
        "scenario_hash": h1,
        "metrics": table,
        "commands_match": command_sequence(trace_safe) == command_sequence(trace_unsafe),
        "series": series,
    }


PLOT_COLUMNS = ("t", "v_rh", "v_max", "alpha", "min_sp", "v_rh_crit", "v_max_crit")


def plot_data(trace: Trace) -> dict[str, np.ndarray]:
    """Columns for speed-vs-limit plots.

    ``v_rh``/``v_max`` are the max/min over links. ``*_crit`` belong to the
    link with the least slack v_max - v_rh in that cycle.
    """
    if len(trace) == 0:
        raise TraceError("trace is empty")
    vr, vm = trace.v_rh, trace.v_max
    crit = np.argmin(vm - vr, axis=1)
    rows = np.arange(len(trace))
    return {
        "t": trace.columns["t"],
        "v_rh": vr.max(axis=1),
        "v_max": vm.min(axis=1),
        "alpha": trace.columns["alpha"],
        "min_sp": trace.columns["min_sp"],
        "v_rh_crit": vr[rows, crit],
        "v_max_crit": vm[rows, crit],
    }


def write_plot_data(trace: Trace, path) -> None:
    data = plot_data(trace)
    lines = [",".join(PLOT_COLUMNS)]
    lines += [",".join(repr(float(data[c][i])) for c in PLOT_COLUMNS) for i in range(len(trace))]
    Path(path).write_text("\n".join(lines) + "\n")
