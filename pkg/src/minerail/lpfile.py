"""CPLEX LP-format export of a model, plus a warm-start companion file.

Variable names encode (train, tail, k, head, l, rep) so they can be read
back without the model.  Every character outside [A-Za-z0-9] is written as
``~`` followed by four hex digits; ``~~s`` and ``~~t`` stand for the source
and sink and ``n`` for a missing instant.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .mip import (
    ARC_CAPACITY,
    DEPARTURE_LINK,
    FLOW_BALANCE,
    FLOW_SINK,
    FLOW_SOURCE,
    NODE_CAPACITY,
    MipModel,
    VarKey,
)

MAX_NAME = 255
LINE_WIDTH = 240

_SHORT = {
    FLOW_SOURCE: "src",
    FLOW_SINK: "snk",
    FLOW_BALANCE: "bal",
    NODE_CAPACITY: "ncap",
    ARC_CAPACITY: "acap",
    DEPARTURE_LINK: "link",
}


class ArcName(NamedTuple):
    train: str
    tail: str | None  # None: source
    k: int | None
    head: str | None  # None: sink
    l: int | None
    rep: int


def escape(text: str) -> str:
    return "".join(c if c.isascii() and c.isalnum() else f"~{ord(c):04x}" for c in text)


def unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        if text[i] == "~":
            out.append(chr(int(text[i + 1:i + 5], 16)))
            i += 5
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def _node(phys: str | None, kind: str) -> str:
    if kind == "source":
        return "~~s"
    if kind == "sink":
        return "~~t"
    return escape(phys or "")


def _time(t: int | None) -> str:
    return "n" if t is None else str(t)


def var_name(model: MipModel, i: int) -> str:
    key = model.vars[i]
    tsn = model.tsn
    arc = tsn.arcs[key.arc]
    tail, head = tsn.nodes[arc.tail], tsn.nodes[arc.head]
    name = "_".join((
        "x", escape(key.train),
        _node(tail.phys, tail.kind), _time(arc.k),
        _node(head.phys, head.kind), _time(arc.l),
        str(arc.rep),
    ))
    if len(name) > MAX_NAME:
        digest = hashlib.sha1(name.encode()).hexdigest()[:16]
        name = f"x_~~h{digest}_{i}"
    return name


def decode_name(name: str) -> ArcName:
    """Invert ``var_name``; names shortened with a digest cannot be decoded."""
    parts = name.split("_")
    if len(parts) != 7 or parts[0] != "x":
        raise ValueError(f"not an arc variable name: {name!r}")
    _, train, tail, k, head, l, rep = parts

    def node(s: str) -> str | None:
        return None if s in ("~~s", "~~t") else unescape(s)

    def t(s: str) -> int | None:
        return None if s == "n" else int(s)

    return ArcName(unescape(train), node(tail), t(k), node(head), t(l), int(rep))


def arc_name(model: MipModel, key: VarKey) -> ArcName:
    tsn = model.tsn
    arc = tsn.arcs[key.arc]
    tail, head = tsn.nodes[arc.tail], tsn.nodes[arc.head]
    return ArcName(
        key.train,
        None if tail.kind == "source" else tail.phys,
        arc.k,
        None if head.kind == "sink" else head.phys,
        arc.l,
        arc.rep,
    )


def _num(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def _expr(terms: Iterable[tuple[float, str]]) -> list[str]:
    out = []
    for n, (c, name) in enumerate(terms):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        coef = "" if mag == 1 else _num(mag) + " "
        if n == 0:
            out.append(f"{'- ' if c < 0 else ''}{coef}{name}")
        else:
            out.append(f"{sign} {coef}{name}")
    return out


def _wrap(head: str, tokens: list[str], tail: str = "") -> list[str]:
    lines, cur = [], head
    for tok in tokens + ([tail] if tail else []):
        if len(cur) + 1 + len(tok) > LINE_WIDTH and cur.strip():
            lines.append(cur)
            cur = "   " + tok
        else:
            cur = f"{cur} {tok}" if cur else tok
    lines.append(cur)
    return lines


def export_lp(model: MipModel, names: list[str] | None = None) -> str:
    names = names or [var_name(model, i) for i in range(model.n_vars)]
    if len(set(names)) != len(names):
        raise ValueError("duplicate variable names in export")
    out = ["\\ rail dispatch: time-space multi-commodity flow", "Minimize"]
    obj = [(c, names[i]) for i, c in enumerate(model.costs) if c != 0]
    out += _wrap(" obj:", _expr(obj) if obj else ["0 " + names[0]] if names else [])
    out.append("Subject To")
    counters: dict[str, int] = {}
    for row in model.rows:
        short = _SHORT[row.family]
        n = counters.get(short, 0)
        counters[short] = n + 1
        sense = {"=": "=", "<=": "<=", ">=": ">="}[row.sense]
        terms = _expr((c, names[i]) for i, c in row.coeffs)
        if not terms:
            continue
        out += _wrap(f" {short}_{n}:", terms, f"{sense} {_num(row.rhs)}")
    out.append("Bounds")
    for i, nm in enumerate(names):
        out.append(f" 0 <= {nm} <= {model.upper[i]}")
    out.append("Binaries")
    for i in range(0, len(names), 4):
        out.append(" " + " ".join(names[i:i + 4]))
    out.append("End")
    return "\n".join(out) + "\n"


def exported_row_count(model: MipModel) -> int:
    return sum(1 for r in model.rows if r.coeffs)


def export_warm(model: MipModel, values: Mapping[VarKey, int] | Iterable[int]) -> str:
    """One ``name value`` line per variable."""
    if isinstance(values, Mapping):
        vals = [int(values.get(k, 0)) for k in model.vars]
    else:
        vals = [int(v) for v in values]
    return "".join(f"{var_name(model, i)} {v}\n" for i, v in enumerate(vals))


def read_warm(model: MipModel, text: str) -> dict[VarKey, int]:
    by_name = {var_name(model, i): k for i, k in enumerate(model.vars)}
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        name, val = line.split()
        if name in by_name:
            out[by_name[name]] = int(float(val))
    return out


# --- reading ----------------------------------------------------------------


class LpSyntaxError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class LpRow:
    name: str
    coeffs: dict[str, float]
    sense: str
    rhs: float


@dataclass
class LpProblem:
    sense: str = "min"
    objective: dict[str, float] = field(default_factory=dict)
    rows: list[LpRow] = field(default_factory=list)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    binaries: list[str] = field(default_factory=list)
    generals: list[str] = field(default_factory=list)

    @property
    def variables(self) -> set[str]:
        names = set(self.objective) | set(self.bounds) | set(self.binaries) | set(self.generals)
        for r in self.rows:
            names |= set(r.coeffs)
        return names


_SECTIONS = {
    "minimize": "min", "minimum": "min", "min": "min",
    "maximize": "max", "maximum": "max", "max": "max",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "binaries": "bin", "binary": "bin", "bin": "bin",
    "generals": "gen", "general": "gen", "gen": "gen",
    "end": "end",
}

_TOKEN = re.compile(
    r"""\s*(?:
      (?P<op><=|>=|=<|=>|<|>|=)
    | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
    | (?P<sign>[+-])
    | (?P<name>[A-Za-z_!"\#$%&()/,;?@'{}|~][A-Za-z0-9_!"\#$%&()/,.;?@'{}|~\[\]]*)
    | (?P<colon>:)
    )""",
    re.VERBOSE,
)


def _tokens(text: str, line: int) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise LpSyntaxError(f"unexpected character {text[pos:].strip()[:1]!r}", line)
        kind = m.lastgroup
        out.append((kind, m.group(kind), line))  # type: ignore[arg-type]
        pos = m.end()
    return out


def _norm_sense(op: str) -> str:
    return {"<": "<=", "=<": "<=", "<=": "<=", ">": ">=", "=>": ">=", ">=": ">=", "=": "="}[op]


def _linear(toks: list, i: int, stop: set[str]) -> tuple[dict[str, float], int]:
    """Parse ``[+-] [coef] name ...`` until a token kind in ``stop``."""
    coeffs: dict[str, float] = {}
    while i < len(toks) and toks[i][0] not in stop:
        sign, coef = 1.0, None
        while i < len(toks) and toks[i][0] == "sign":
            sign *= -1.0 if toks[i][1] == "-" else 1.0
            i += 1
        if i < len(toks) and toks[i][0] == "num":
            coef = float(toks[i][1])
            i += 1
        if i >= len(toks) or toks[i][0] != "name":
            line = toks[min(i, len(toks) - 1)][2]
            raise LpSyntaxError("expected a variable name", line)
        name = toks[i][1]
        coeffs[name] = coeffs.get(name, 0.0) + sign * (1.0 if coef is None else coef)
        i += 1
    return coeffs, i


def parse_lp(text: str) -> LpProblem:
    """Check ``text`` against the LP-format grammar and return its content."""
    prob = LpProblem()
    section = None
    chunks: dict[str, list[tuple[str, str, int]]] = {}
    bound_lines: list[tuple[list, int]] = []
    seen_end = False
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("\\", 1)[0]
        if not line.strip():
            continue
        if seen_end:
            raise LpSyntaxError("content after End", n)
        key = line.strip().lower()
        if key in _SECTIONS:
            sec = _SECTIONS[key]
            if sec in ("min", "max"):
                prob.sense = sec
                sec = "obj"
            if sec == "end":
                seen_end = True
            elif sec in chunks:
                raise LpSyntaxError(f"section {line.strip()!r} repeated", n)
            section = sec
            chunks.setdefault(sec, [])
            continue
        if section is None:
            raise LpSyntaxError("text before the objective section", n)
        toks = _tokens(line, n)
        if section == "bounds":
            bound_lines.append((toks, n))
        else:
            chunks[section].extend(toks)
    if not seen_end:
        raise LpSyntaxError("missing End", len(text.splitlines()))
    if "obj" not in chunks:
        raise LpSyntaxError("missing objective section", 1)

    toks = chunks["obj"]
    i = 2 if len(toks) >= 2 and toks[0][0] == "name" and toks[1][0] == "colon" else 0
    prob.objective, i = _linear(toks, i, {"op"})
    if i != len(toks):
        raise LpSyntaxError("relational operator in objective", toks[i][2])

    toks = chunks.get("st", [])
    i, k = 0, 0
    while i < len(toks):
        name = f"R{k}"
        if i + 1 < len(toks) and toks[i][0] == "name" and toks[i + 1][0] == "colon":
            name = toks[i][1]
            i += 2
        coeffs, i = _linear(toks, i, {"op"})
        if i >= len(toks):
            raise LpSyntaxError(f"row {name} has no relational operator", toks[-1][2])
        sense = _norm_sense(toks[i][1])
        i += 1
        sign = 1.0
        if i < len(toks) and toks[i][0] == "sign":
            sign = -1.0 if toks[i][1] == "-" else 1.0
            i += 1
        if i >= len(toks) or toks[i][0] != "num":
            raise LpSyntaxError(f"row {name} needs a numeric right-hand side", toks[min(i, len(toks) - 1)][2])
        prob.rows.append(LpRow(name, coeffs, sense, sign * float(toks[i][1])))
        i += 1
        k += 1

    for btoks, n in bound_lines:
        _bound(prob, btoks, n)
    for sec, dest in (("bin", prob.binaries), ("gen", prob.generals)):
        for kind, val, n in chunks.get(sec, []):
            if kind != "name":
                raise LpSyntaxError(f"expected a variable name, got {val!r}", n)
            dest.append(val)
    return prob


def _bound(prob: LpProblem, toks: list, n: int) -> None:
    def number(j: int) -> tuple[float, int]:
        sign = 1.0
        if toks[j][0] == "sign":
            sign = -1.0 if toks[j][1] == "-" else 1.0
            j += 1
        if toks[j][0] == "num":
            return sign * float(toks[j][1]), j + 1
        if toks[j][0] == "name" and toks[j][1].lower() in ("inf", "infinity"):
            return sign * math.inf, j + 1
        raise LpSyntaxError("expected a bound value", n)

    kinds = [t[0] for t in toks]
    try:
        if kinds[:1] == ["name"] and len(toks) == 2 and toks[1][1].lower() == "free":
            prob.bounds[toks[0][1]] = (-math.inf, math.inf)
            return
        if toks[0][0] == "name" and toks[0][1].lower() not in ("inf", "infinity"):
            name = toks[0][1]
            op = _norm_sense(toks[1][1])
            val, j = number(2)
            lo, hi = prob.bounds.get(name, (0.0, math.inf))
            lo, hi = (lo, val) if op == "<=" else (val, hi) if op == ">=" else (val, val)
        else:
            lo, j = number(0)
            if toks[j][0] != "op" or _norm_sense(toks[j][1]) != "<=":
                raise LpSyntaxError("expected <= after a lower bound", n)
            name = toks[j + 1][1]
            hi = math.inf
            j += 2
            if j < len(toks):
                if _norm_sense(toks[j][1]) != "<=":
                    raise LpSyntaxError("expected <= before an upper bound", n)
                hi, j = number(j + 1)
        if j != len(toks):
            raise LpSyntaxError("trailing tokens in bound", n)
    except IndexError:
        raise LpSyntaxError("incomplete bound", n) from None
    prob.bounds[name] = (lo, hi)
