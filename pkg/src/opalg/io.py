"""JSON system files and deterministic report serialization."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .algebra import Algebra, Element, ToleranceProfile, make_algebra
from .dynamics import DynamicalSystem, GroupSpec, make_system
from .errors import ParseError
from .subalgebra import Subalgebra, full_subalgebra, generate_subalgebra, scalar_subalgebra

__all__ = [
    "SCHEMA_VERSION",
    "parse_system_file",
    "parse_system_text",
    "system_to_dict",
    "parse_element",
    "parse_probe",
    "parse_q_generators",
    "Report",
    "emit_report",
    "digest",
]

SCHEMA_VERSION = 1


def _complex(v: Any, fieldname: str) -> complex:
    if isinstance(v, list) and len(v) == 2 and all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in v):
        return complex(float(v[0]), float(v[1]))
    raise ParseError(f"expected a complex number as [re, im], got {v!r}", field=fieldname)


def _matrix(v: Any, fieldname: str) -> np.ndarray:
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise ParseError("expected a matrix (list of rows)", field=fieldname)
    n = len(v[0])
    if any(len(r) != n for r in v):
        raise ParseError("ragged matrix rows", field=fieldname)
    return np.array([[_complex(x, fieldname) for x in r] for r in v], dtype=complex)


def _encode_matrix(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m, dtype=complex)]


def parse_element(A: Algebra, lit: Any, fieldname: str = "element") -> Element:
    blocks = lit.get("blocks") if isinstance(lit, dict) else lit
    if not isinstance(blocks, list) or len(blocks) != len(A.blocks):
        raise ParseError(f"element literal needs {len(A.blocks)} blocks", field=fieldname)
    mats = [_matrix(b, f"{fieldname}.blocks[{i}]") for i, b in enumerate(blocks)]
    for i, (m, n) in enumerate(zip(mats, A.blocks)):
        if m.shape != (n, n):
            raise ParseError(f"block {i} must be {n}x{n}", field=fieldname)
    return A.element(mats)


def _locate(text: str, exc: json.JSONDecodeError) -> ParseError:
    return ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno)


def _require(obj: dict, key: str, where: str) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing required field {key!r}", field=f"{where}.{key}" if where else key)
    return obj[key]


def parse_system_text(text: str) -> DynamicalSystem:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _locate(text, exc) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version!r}", field="schema_version")
    tol = ToleranceProfile()
    tols = doc.get("tolerances") or {}
    if not isinstance(tols, dict):
        raise ParseError("tolerances must be an object", field="tolerances")
    unknown = set(tols) - {"rank_rel", "rank_abs", "verify", "report"}
    if unknown:
        raise ParseError(f"unknown tolerance {sorted(unknown)[0]!r}", field="tolerances")
    try:
        tol = tol.replace(**tols)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field="tolerances") from None
    alg = _require(doc, "algebra", "")
    blocks = _require(alg, "blocks", "algebra")
    weights = _require(alg, "weights", "algebra")
    if not isinstance(blocks, list) or not all(isinstance(b, int) for b in blocks):
        raise ParseError("blocks must be a list of integers", field="algebra.blocks")
    if not isinstance(weights, list) or not all(isinstance(w, (int, float)) for w in weights):
        raise ParseError("weights must be a list of numbers", field="algebra.weights")
    A = make_algebra(blocks, weights, tol)
    g = _require(doc, "group", "")
    kind = _require(g, "kind", "group")
    try:
        group = GroupSpec(
            kind=kind,
            orders=tuple(g.get("orders", ())),
            rank=int(g.get("rank", 0)),
            labels=tuple(g.get("labels", ())),
            relations=tuple(g.get("relations", ())),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field="group") from None
    gens = doc.get("generators", [])
    if not isinstance(gens, list):
        raise ParseError("generators must be a list", field="generators")
    maps = []
    for i, gen in enumerate(gens):
        where = f"generators[{i}]"
        if not isinstance(gen, dict):
            raise ParseError("generator must be an object", field=where)
        if "unitary" in gen:
            u = gen["unitary"]
            if not isinstance(u, list) or len(u) != len(A.blocks):
                raise ParseError(f"unitary needs {len(A.blocks)} blocks", field=f"{where}.unitary")
            maps.append(("unitary", [_matrix(b, f"{where}.unitary[{j}]") for j, b in enumerate(u)]))
        elif "matrix" in gen:
            maps.append(("matrix", _matrix(gen["matrix"], f"{where}.matrix")))
        else:
            raise ParseError("generator needs 'unitary' or 'matrix'", field=where)
    sub = doc.get("subalgebra") or {}
    Q = _subalgebra_from_literal(A, sub.get("generators", []) if isinstance(sub, dict) else sub, "subalgebra.generators")
    return make_system(A, group, maps, Q)


def _subalgebra_from_literal(A: Algebra, lit: Any, fieldname: str) -> Subalgebra:
    if lit in ("C", "c", None) or lit == []:
        return scalar_subalgebra(A)
    if lit in ("N", "n"):
        return full_subalgebra(A)
    if not isinstance(lit, list):
        raise ParseError("subalgebra generators must be a list of element literals", field=fieldname)
    return generate_subalgebra(A, [parse_element(A, e, f"{fieldname}[{i}]") for i, e in enumerate(lit)])


def parse_q_generators(A: Algebra, arg: str) -> Subalgebra:
    """'C', 'N', inline JSON list of element literals, or a path to such a file."""
    s = arg.strip()
    if s in ("C", "N", "c", "n"):
        return _subalgebra_from_literal(A, s, "--q-generators")
    if not s.startswith("["):
        p = Path(s)
        if not p.exists():
            raise ParseError(f"no such file {s!r}", field="--q-generators")
        s = p.read_text()
    try:
        lit = json.loads(s)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", field="--q-generators", line=exc.lineno) from None
    return _subalgebra_from_literal(A, lit, "--q-generators")


_TUPLE = re.compile(r"^\(\s*([^()]*)\)$")


def parse_probe(A: Algebra, arg: str) -> Element:
    """'(v1,...,vr)' gives the element with scalar v_i on block i; otherwise a JSON element literal."""
    s = arg.strip()
    m = _TUPLE.match(s)
    if m:
        try:
            vals = [complex(t.strip().replace("i", "j")) for t in m.group(1).split(",")]
        except ValueError:
            raise ParseError(f"cannot parse probe {arg!r}", field="--probe") from None
        if len(vals) != len(A.blocks):
            raise ParseError(f"probe needs {len(A.blocks)} entries", field="--probe")
        return A.scalars(vals)
    try:
        lit = json.loads(s)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid probe: {exc.msg}", field="--probe") from None
    return parse_element(A, lit, "--probe")


def parse_system_file(path: str | Path) -> DynamicalSystem:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc.strerror}") from None
    return parse_system_text(text)


def system_to_dict(S: DynamicalSystem) -> dict:
    A = S.algebra
    gens = []
    for label, (kind, data) in zip(S.group.labels, S.gen_specs):
        if kind == "unitary":
            gens.append({"label": label, "unitary": [_encode_matrix(b) for b in data]})
        else:
            gens.append({"label": label, "matrix": _encode_matrix(data)})
    group: dict[str, Any] = {"kind": S.group.kind, "labels": list(S.group.labels)}
    if S.group.kind == "finite_abelian":
        group["orders"] = list(S.group.orders)
    elif S.group.kind == "free_abelian":
        group["rank"] = S.group.rank
    if S.group.relations:
        group["relations"] = list(S.group.relations)
    return {
        "schema_version": SCHEMA_VERSION,
        "algebra": {"blocks": list(A.blocks), "weights": list(A.weights)},
        "group": group,
        "generators": gens,
        "subalgebra": {"generators": [{"blocks": [_encode_matrix(b) for b in q.blocks]} for q in S.Q.basis]},
    }


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    command: str
    inputs_digest: str
    results: dict
    assertions: dict = field(default_factory=dict)
    runtime: float | None = None

    @property
    def ok(self) -> bool:
        return all(bool(v) for v in self.assertions.values())


def digest(*parts: str | bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else p.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()


def _canon(x: Any) -> Any:
    """Numbers to fixed 12-decimal strings, complex as [re, im], arrays as lists."""
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        s = f"{v:.12f}"
        if s.lstrip("-").strip("0.") == "":
            s = s.lstrip("-")
        return _Num(s)
    if isinstance(x, (complex, np.complexfloating)):
        return [_canon(x.real), _canon(x.imag)]
    if isinstance(x, np.ndarray):
        return _canon(x.tolist())
    if isinstance(x, dict):
        return {str(k): _canon(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_canon(v) for v in x]
    return str(x)


class _Num(str):
    pass


def _dump_json(x: Any, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(x, _Num):
        return str(x)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {_dump_json(x[k], indent + 1)}' for k in sorted(x)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(x, list):
        if not x:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in x):
            return "[" + ", ".join(_dump_json(v, indent) for v in x) + "]"
        items = [pad + "  " + _dump_json(v, indent + 1) for v in x]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return json.dumps(x)


def _dump_text(x: Any, prefix: str = "") -> list[str]:
    lines = []
    if isinstance(x, dict):
        for k in sorted(x):
            v = x[k]
            key = f"{prefix}{k}"
            if isinstance(v, dict) or (isinstance(v, list) and any(isinstance(t, (dict, list)) for t in v)):
                lines.append(f"{key}:")
                lines.extend(_dump_text(v, prefix + "  "))
            else:
                lines.append(f"{key}: {_dump_text_scalar(v)}")
    elif isinstance(x, list):
        for i, v in enumerate(x):
            if isinstance(v, dict) or (isinstance(v, list) and any(isinstance(t, (dict, list)) for t in v)):
                lines.append(f"{prefix}- [{i}]")
                lines.extend(_dump_text(v, prefix + "  "))
            else:
                lines.append(f"{prefix}- {_dump_text_scalar(v)}")
    return lines


def _dump_text_scalar(v: Any) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_dump_text_scalar(t) for t in v) + "]"
    if isinstance(v, _Num):
        return str(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "null"
    return str(v)


def emit_report(report: Report, fmt: str = "json") -> bytes:
    body: dict[str, Any] = {
        "command": report.command,
        "inputs_digest": report.inputs_digest,
        "results": report.results,
        "assertions": report.assertions,
        "ok": report.ok,
    }
    if report.runtime is not None:
        body["runtime_seconds"] = report.runtime
    canon = _canon(body)
    if fmt == "json":
        text = _dump_json(canon) + "\n"
    elif fmt == "text":
        text = "\n".join(_dump_text(canon)) + "\n"
    else:
        raise ParseError(f"unknown format {fmt!r}", field="--format")
    return text.encode("utf-8")
