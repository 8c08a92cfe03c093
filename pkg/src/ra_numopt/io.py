"""Instance, solution and report files.

Instances are versioned JSON documents::

    {"version": 1,
     "nodes": [{"id": 0, "e": 1, "pos": [x, y]}, ...],
     "links": [{"from": 0, "to": 1, "c": 1}, ...],
     "interference": [{"node": 0, "out": [1, 2]}, ...],
     "sessions": [{"id": 0, "route": [[0, 1], [1, 2]]}, ...],
     "solution": {"p": [{"from": 0, "to": 1, "p": 0.2}, ...],
                  "y": [{"session": 0, "y": 0.1}, ...]}}

``interference``, ``sessions``, ``pos`` and ``solution`` are optional and
unknown fields are rejected.  Floats are written with 17 significant digits
so values survive a round trip exactly, and writing a parsed canonical file
reproduces it byte for byte.  All writes go through a temporary file that is
renamed into place.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from ra_numopt.network import ProbAssignment, RateVector, Session, SessionSet, Topology

SCHEMA_VERSION = 1
_PROB_TOL = 1e-12


class InstanceFormatError(ValueError):
    """Invalid instance file; ``where`` points at the offending field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


class Solution(NamedTuple):
    assignment: ProbAssignment
    rates: RateVector | None = None


class Instance(NamedTuple):
    topology: Topology
    sessions: SessionSet | None = None
    solution: Solution | None = None


# number formatting


def format_float(v: float) -> str:
    v = float(v) + 0.0  # folds -0.0 into 0.0
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {v!r} cannot be written")
    return format(v, ".17g")


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v) if math.isfinite(v) else "null"
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _is_flat(v) -> bool:
    if isinstance(v, dict):
        return all(not isinstance(x, (dict, list, tuple)) or _is_flat_list(x) for x in v.values())
    return _is_flat_list(v)


def _is_flat_list(v) -> bool:
    # scalars, or lists of scalars (e.g. a route of [from, to] pairs)
    if not isinstance(v, (list, tuple)):
        return False
    for x in v:
        if isinstance(x, dict):
            return False
        if isinstance(x, (list, tuple)) and any(isinstance(y, (list, tuple, dict)) for y in x):
            return False
    return True


def _emit(v, level: int) -> str:
    pad = "  " * level
    inner = "  " * (level + 1)
    if isinstance(v, dict):
        if not v:
            return "{}"
        if level > 0 and _is_flat(v):
            return "{" + ", ".join(f"{json.dumps(k)}: {_emit(x, level + 1)}" for k, x in v.items()) + "}"
        body = ",\n".join(f"{inner}{json.dumps(k)}: {_emit(x, level + 1)}" for k, x in v.items())
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(v, (list, tuple)):
        if not v:
            return "[]"
        if _is_flat_list(v):
            return "[" + ", ".join(_emit(x, level + 1) for x in v) + "]"
        body = ",\n".join(inner + _emit(x, level + 1) for x in v)
        return "[\n" + body + "\n" + pad + "]"
    return _scalar(v)


def dumps(obj: Any) -> str:
    """Deterministic JSON text: 2-space indentation, flat records on one
    line, floats with 17 significant digits, non-finite floats as null."""
    return _emit(obj, 0) + "\n"


# atomic writes


def atomic_write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path: str | Path, obj: Any) -> Path:
    return atomic_write(path, dumps(obj))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v) if math.isfinite(v) else repr(float(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Comma-separated, header row first, LF line endings.  Non-finite
    floats are written as ``inf``, ``-inf`` or ``nan`` (``float`` parses them)."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row length does not match header")
        w.writerow([_cell(v) for v in row])
    return atomic_write(path, buf.getvalue())


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


# instance documents


def _reject_constant(name):
    raise InstanceFormatError("$", f"non-finite number {name} is not allowed")


def loads_document(text: str) -> Any:
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None


def _keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise InstanceFormatError(where, "expected an object")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise InstanceFormatError(f"{where}.{unknown[0]}", "unknown field")
    for k in required:
        if k not in obj:
            raise InstanceFormatError(f"{where}.{k}", "missing field")


def _int(v, where) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise InstanceFormatError(where, "expected an integer")
    return v


def _num(v, where, positive=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InstanceFormatError(where, "expected a number")
    v = float(v)
    if not math.isfinite(v):
        raise InstanceFormatError(where, "non-finite number")
    if positive and v <= 0:
        raise InstanceFormatError(where, "must be > 0")
    return v


def _list(v, where) -> list:
    if not isinstance(v, list):
        raise InstanceFormatError(where, "expected a list")
    return v


def _pair(v, where) -> tuple[int, int]:
    if not isinstance(v, list) or len(v) != 2:
        raise InstanceFormatError(where, "expected a [from, to] pair")
    return _int(v[0], f"{where}[0]"), _int(v[1], f"{where}[1]")


def parse_instance(doc: Any) -> Instance:
    """Validate a decoded instance document and build the model objects."""
    _keys(doc, "$", ("version", "nodes", "links"), ("interference", "sessions", "solution"))
    if _int(doc["version"], "$.version") != SCHEMA_VERSION:
        raise InstanceFormatError("$.version", f"unsupported version {doc['version']} (expected {SCHEMA_VERSION})")

    ids, energy, positions = [], {}, {}
    for k, node in enumerate(_list(doc["nodes"], "$.nodes")):
        w = f"$.nodes[{k}]"
        _keys(node, w, ("id", "e"), ("pos",))
        nid = _int(node["id"], f"{w}.id")
        if nid in energy:
            raise InstanceFormatError(f"{w}.id", f"duplicate node id {nid}")
        ids.append(nid)
        energy[nid] = _num(node["e"], f"{w}.e", positive=True)
        if "pos" in node:
            pos = _list(node["pos"], f"{w}.pos")
            if len(pos) != 2:
                raise InstanceFormatError(f"{w}.pos", "expected [x, y]")
            positions[nid] = (_num(pos[0], f"{w}.pos[0]"), _num(pos[1], f"{w}.pos[1]"))
    if not ids:
        raise InstanceFormatError("$.nodes", "no nodes")
    if positions and len(positions) != len(ids):
        raise InstanceFormatError("$.nodes", "positions must be given for all nodes or none")

    links = {}
    for k, link in enumerate(_list(doc["links"], "$.links")):
        w = f"$.links[{k}]"
        _keys(link, w, ("from", "to", "c"))
        a, b = _int(link["from"], f"{w}.from"), _int(link["to"], f"{w}.to")
        if a not in energy or b not in energy:
            raise InstanceFormatError(w, f"link ({a}, {b}) refers to an unknown node")
        if a == b:
            raise InstanceFormatError(w, "self-loop")
        if (a, b) in links:
            raise InstanceFormatError(w, f"duplicate link ({a}, {b})")
        links[(a, b)] = _num(link["c"], f"{w}.c", positive=True)

    interference = None
    if "interference" in doc:
        interference = {}
        for k, entry in enumerate(_list(doc["interference"], "$.interference")):
            w = f"$.interference[{k}]"
            _keys(entry, w, ("node", "out"))
            nid = _int(entry["node"], f"{w}.node")
            if nid not in energy:
                raise InstanceFormatError(f"{w}.node", f"unknown node {nid}")
            if nid in interference:
                raise InstanceFormatError(f"{w}.node", f"duplicate entry for node {nid}")
            outs = [_int(j, f"{w}.out[{q}]") for q, j in enumerate(_list(entry["out"], f"{w}.out"))]
            for q, j in enumerate(outs):
                if j not in energy:
                    raise InstanceFormatError(f"{w}.out[{q}]", f"unknown node {j}")
            interference[nid] = outs
        for (a, b) in links:
            if b not in interference.get(a, ()):
                raise InstanceFormatError("$.interference", f"link ({a}, {b}): node {b} is not in N_out of {a}")
    try:
        topo = Topology.from_spec(ids, links, energy, interference, positions or None)
    except ValueError as exc:
        raise InstanceFormatError("$", str(exc)) from None

    sessions = None
    if "sessions" in doc:
        items = []
        for k, s in enumerate(_list(doc["sessions"], "$.sessions")):
            w = f"$.sessions[{k}]"
            _keys(s, w, ("id", "route"))
            route = tuple(_pair(l, f"{w}.route[{q}]") for q, l in enumerate(_list(s["route"], f"{w}.route")))
            items.append(Session(_int(s["id"], f"{w}.id"), route))
        try:
            sessions = SessionSet(topo, tuple(items))
        except ValueError as exc:
            raise InstanceFormatError("$.sessions", str(exc)) from None

    solution = None
    if "solution" in doc:
        solution = _parse_solution(doc["solution"], topo, sessions)
    return Instance(topo, sessions, solution)


def _parse_solution(sol, topo: Topology, sessions: SessionSet | None) -> Solution:
    _keys(sol, "$.solution", ("p",), ("y",))
    p = np.full(topo.m, np.nan)
    for k, e in enumerate(_list(sol["p"], "$.solution.p")):
        w = f"$.solution.p[{k}]"
        _keys(e, w, ("from", "to", "p"))
        key = (_int(e["from"], f"{w}.from"), _int(e["to"], f"{w}.to"))
        if key not in topo.link_index:
            raise InstanceFormatError(w, f"unknown link {key}")
        v = _num(e["p"], f"{w}.p")
        if not -_PROB_TOL <= v <= 1 + _PROB_TOL:
            raise InstanceFormatError(f"{w}.p", f"probability {v} outside [0, 1]")
        p[topo.link_index[key]] = v
    if np.any(np.isnan(p)):
        missing = topo.links[int(np.flatnonzero(np.isnan(p))[0])]
        raise InstanceFormatError("$.solution.p", f"no probability for link {missing}")
    P = np.bincount(topo.src, weights=p, minlength=topo.n)
    if np.any(P > 1 + _PROB_TOL):
        i = int(np.argmax(P))
        raise InstanceFormatError("$.solution.p", f"node {topo.node_ids[i]} transmits with P = {P[i]!r} > 1")
    assignment = ProbAssignment(topo, np.clip(p, 0.0, 1.0))
    rates = None
    if "y" in sol:
        if sessions is None:
            raise InstanceFormatError("$.solution.y", "rates given but the instance has no sessions")
        pos = {sid: k for k, sid in enumerate(sessions.ids)}
        y = np.full(len(sessions), np.nan)
        for k, e in enumerate(_list(sol["y"], "$.solution.y")):
            w = f"$.solution.y[{k}]"
            _keys(e, w, ("session", "y"))
            sid = _int(e["session"], f"{w}.session")
            if sid not in pos:
                raise InstanceFormatError(f"{w}.session", f"unknown session {sid}")
            y[pos[sid]] = _num(e["y"], f"{w}.y", positive=True)
        if np.any(np.isnan(y)):
            raise InstanceFormatError("$.solution.y", "missing rate for some session")
        rates = RateVector(y)
    return Solution(assignment, rates)


def instance_document(
    topology: Topology,
    sessions: SessionSet | None = None,
    solution: Solution | None = None,
) -> dict:
    """Canonical document for an instance (nodes and links in index order)."""
    t = topology
    ids = t.node_ids
    nodes = []
    for k, nid in enumerate(ids):
        node = {"id": nid, "e": float(t.energy[k])}
        if t.positions is not None:
            node["pos"] = [float(t.positions[k, 0]), float(t.positions[k, 1])]
        nodes.append(node)
    doc: dict = {
        "version": SCHEMA_VERSION,
        "nodes": nodes,
        "links": [{"from": ids[a], "to": ids[b], "c": float(c)} for a, b, c in zip(t.src, t.dst, t.capacity)],
        "interference": [{"node": ids[k], "out": sorted(ids[j] for j in heard)} for k, heard in enumerate(t.interference_out)],
    }
    if sessions is not None:
        doc["sessions"] = [{"id": s.id, "route": [[a, b] for a, b in s.route]} for s in sessions.sessions]
    if solution is not None:
        a = solution.assignment
        sol = {"p": [{"from": ids[i], "to": ids[j], "p": float(v)} for i, j, v in zip(t.src, t.dst, a.p)]}
        if solution.rates is not None:
            if sessions is None:
                raise ValueError("rates need sessions")
            sol["y"] = [{"session": sid, "y": float(v)} for sid, v in zip(sessions.ids, solution.rates.y)]
        doc["solution"] = sol
    return doc


def dumps_instance(topology: Topology, sessions: SessionSet | None = None, solution: Solution | None = None) -> str:
    return dumps(instance_document(topology, sessions, solution))


def write_instance(
    path: str | Path,
    topology: Topology,
    sessions: SessionSet | None = None,
    solution: Solution | None = None,
) -> Path:
    return atomic_write(path, dumps_instance(topology, sessions, solution))


def read_instance(path: str | Path) -> Instance:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise InstanceFormatError("$", "file is not UTF-8 text") from None
    return parse_instance(loads_document(text))
