"""Line-oriented scenario language.

    # comment
    SECTION
      key = value
      table:
        row tokens ...

Sections: SPACE, LEGAL, PLANT, STORAGE, CHANNELS, CONTROLLER, ENVIRONMENT,
RUN.  SPACE entries declare dimensions (``name = boolean``,
``name = int LO HI``, ``name = real LO HI LEVELS``, ``name[N] = ...`` for an
array).  Every other section is schema-checked; ``serialize`` writes every
key with its resolved value so that parse(serialize(s)) == s.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

from ..errors import ScenarioError

SECTIONS = ("SPACE", "LEGAL", "PLANT", "STORAGE", "CHANNELS", "CONTROLLER", "ENVIRONMENT", "RUN")


# value codecs ---------------------------------------------------------------------


def _int(text: str) -> int:
    return int(text, 10)


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _positive(text: str) -> float:
    v = _float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _fraction(text: str) -> Fraction:
    v = Fraction(text)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _bool(text: str) -> bool:
    if text in ("true", "yes", "on"):
        return True
    if text in ("false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _bits(text: str) -> str:
    if not re.fullmatch(r"[01]+", text):
        raise ValueError("expected a bit string")
    return text


def _word(text: str) -> str:
    if not re.fullmatch(r"[^\s#]+", text):
        raise ValueError("expected a single word")
    return text


def _text(text: str) -> str:
    return text


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any


@dataclass(frozen=True)
class Table:
    columns: tuple[Callable[[str], Any], ...]
    optional: int = 0  # trailing columns that may be omitted
    rest: bool = False  # extra tokens are kept as strings
    fill: tuple = ()  # defaults for omitted optional columns


SCHEMA: dict[str, tuple[dict[str, Key], dict[str, Table]]] = {
    "LEGAL": (
        {"whitelist_mode": Key(_bool, False)},
        {
            "constraint": Table((_word, _float, _float)),
            "whitelist": Table((_bits,)),
            "blacklist": Table((_bits,)),
        },
    ),
    "PLANT": (
        {
            "kind": Key(_choice("static", "table"), "static"),
            "clock_rate": Key(_fraction, Fraction(1)),
            "policy": Key(_choice("clamp", "wrap", "strict"), "clamp"),
            "initial_pattern": Key(_int, 0),
            "initial_bits": Key(_text, ""),
            "program": Key(_int_list, ()),
            "field_radius": Key(_int, 0),
        },
        {"successors": Table((_int, _int))},
    ),
    "STORAGE": (
        {"generate": Key(_int, 0), "seed": Key(_int, 0)},
        {
            "patterns": Table((_bits, _word), optional=1, fill=("-",)),
            "triggers": Table((_bits, _int)),
        },
    ),
    "CHANNELS": (
        {
            "q": Key(_positive, 1.0),
            "r": Key(_positive, 1.0),
            "n": Key(_positive, 1.0),
            "m": Key(_positive, 1.0),
            "ber": Key(_float, 0.0),
            "duplex": Key(_bool, False),
            "parity": Key(_bool, False),
        },
        {},
    ),
    "CONTROLLER": (
        {
            "error_classes": Key(_int, 1),
            "strategy": Key(_choice("spontaneous", "iterative", "memory"), "spontaneous"),
            "step_budget": Key(_int, 1),
            "payload": Key(_choice("full", "delta"), "full"),
            "damage_cap": Key(_float, math.inf),
            "recovery": Key(_int, -1),
            "switching": Key(_choice("greedy", "scheduled"), "greedy"),
            "gap": Key(_int, 1),
            "gamma": Key(_float, 0.1),
            "erratic_window": Key(_int, 10),
            "erratic_threshold": Key(_int, 3),
        },
        {},
    ),
    "ENVIRONMENT": (
        {
            "initial_demand": Key(_word, "none"),
            "damage_demand": Key(_float, 1.0),
            "damage_illegal": Key(_float, 1.0),
        },
        {
            "events": Table((_int, _word), rest=True),
            "observed": Table((_int, _word)),
            "predicted": Table((_int, _word)),
        },
    ),
    "RUN": (
        {
            "ticks": Key(_int, 10),
            "seed": Key(_int, 0),
            "theta": Key(_int, 0),
            "tick_seconds": Key(_positive, 1.0),
            "epsilon": Key(_float, 0.01),
            "start": Key(_text, ""),
            "goal": Key(_text, ""),
            "budgets": Key(_int_list, ()),
        },
        {},
    ),
}


@dataclass(frozen=True)
class DimSpec:
    name: str
    kind: str  # boolean | int | real
    args: tuple = ()
    count: int | None = None  # array shorthand name[count]

    def text(self) -> str:
        head = f"{self.name}[{self.count}]" if self.count is not None else self.name
        return " ".join([head, "=", self.kind, *(fmt(a) for a in self.args)])


@dataclass
class Scenario:
    dims: tuple[DimSpec, ...] = ()
    values: dict = field(default_factory=dict)  # (section, key) -> value
    tables: dict = field(default_factory=dict)  # (section, table) -> tuple of rows
    name: str = "scenario"

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.dims, self.values, self.tables) == (other.dims, other.values, other.tables)

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    def table(self, section: str, name: str) -> tuple:
        return self.tables.get((section, name), ())

    def with_value(self, section: str, key: str, value) -> "Scenario":
        values = dict(self.values)
        values[(section, key)] = value
        return Scenario(self.dims, values, dict(self.tables), self.name)


_DIM_RE = re.compile(r"([A-Za-z_][\w.]*)(?:\[(\d+)\])?$")


def _parse_dim(lhs: str, rhs: str, line: int, col: int, rcol: int) -> DimSpec:
    m = _DIM_RE.match(lhs)
    if not m:
        raise ScenarioError(f"bad dimension name {lhs!r}", line, col)
    name, count = m.group(1), m.group(2)
    toks = rhs.split()
    if not toks:
        raise ScenarioError("missing dimension kind", line, rcol)
    kind, args = toks[0], toks[1:]
    try:
        if kind == "boolean":
            if args:
                raise ValueError("boolean takes no arguments")
            parsed: tuple = ()
        elif kind == "int":
            if len(args) != 2:
                raise ValueError("int needs LO HI")
            parsed = (int(args[0]), int(args[1]))
            if parsed[1] <= parsed[0]:
                raise ValueError("int needs LO < HI")
        elif kind == "real":
            if len(args) != 3:
                raise ValueError("real needs LO HI LEVELS")
            parsed = (_float(args[0]), _float(args[1]), int(args[2]))
            if not parsed[1] > parsed[0] or parsed[2] < 2:
                raise ValueError("real needs LO < HI and LEVELS >= 2")
        else:
            raise ValueError(f"unknown dimension kind {kind!r}")
    except ValueError as exc:
        raise ScenarioError(str(exc), line, rcol) from None
    n = int(count) if count is not None else None
    if n is not None and n < 1:
        raise ScenarioError("array length must be >= 1", line, col)
    return DimSpec(name, kind, parsed, n)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Parse and validate scenario text; errors carry 1-based line and column."""
    values: dict = {}
    tables: dict = {}
    dims: list[DimSpec] = []
    dim_names: set[str] = set()
    section = None
    table_key = None
    table_indent = -1
    seen_sections: set[str] = set()
    lines = text.split("\n")
    for lineno, raw in enumerate(lines, 1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        if "\t" in raw[: len(raw) - len(raw.lstrip())]:
            raise ScenarioError("tabs are not allowed for indentation", lineno, 1)
        indent = len(stripped) - len(stripped.lstrip())
        body = stripped.strip()
        col = indent + 1
        if indent == 0:
            if body not in SECTIONS:
                raise ScenarioError(f"unknown section {body!r}", lineno, col)
            if body in seen_sections:
                raise ScenarioError(f"duplicate section {body}", lineno, col)
            seen_sections.add(body)
            section, table_key = body, None
            continue
        if section is None:
            raise ScenarioError("entry outside any section", lineno, col)
        if table_key is not None and indent > table_indent:
            spec = SCHEMA[section][1][table_key]
            toks = body.split()
            need = len(spec.columns) - spec.optional
            if len(toks) < need or (len(toks) > len(spec.columns) and not spec.rest):
                raise ScenarioError(f"{table_key} rows take {need}..{len(spec.columns)} fields, got {len(toks)}", lineno, col)
            row = []
            pos = stripped.index(toks[0])
            for k, tok in enumerate(toks):
                pos = stripped.index(tok, pos)
                if k < len(spec.columns):
                    try:
                        row.append(spec.columns[k](tok))
                    except ValueError as exc:
                        raise ScenarioError(f"{table_key} field {k + 1}: {exc}", lineno, pos + 1) from None
                else:
                    row.append(tok)
                pos += len(tok)
            for k in range(len(toks), len(spec.columns)):
                row.append(spec.fill[k - need])
            tables[(section, table_key)] = tables.get((section, table_key), ()) + (tuple(row),)
            continue
        table_key = None
        if body.endswith(":") and "=" not in body:
            tname = body[:-1].strip()
            if section == "SPACE" or tname not in SCHEMA[section][1]:
                raise ScenarioError(f"unknown table {tname!r} in {section}", lineno, col)
            if (section, tname) in tables:
                raise ScenarioError(f"duplicate table {tname!r}", lineno, col)
            table_key, table_indent = tname, indent
            tables[(section, tname)] = ()
            continue
        if "=" not in body:
            raise ScenarioError("expected 'key = value' or 'table:'", lineno, col)
        lhs, rhs = body.split("=", 1)
        key, value = lhs.strip(), rhs.strip()
        vcol = stripped.index("=") + 2 + (len(rhs) - len(rhs.lstrip()))
        if section == "SPACE":
            d = _parse_dim(key, value, lineno, col, vcol)
            if d.name in dim_names:
                raise ScenarioError(f"duplicate dimension {d.name!r}", lineno, col)
            dim_names.add(d.name)
            dims.append(d)
            continue
        schema = SCHEMA[section][0]
        if key not in schema:
            raise ScenarioError(f"unknown key {key!r} in {section}", lineno, col)
        if (section, key) in values:
            raise ScenarioError(f"duplicate key {key!r}", lineno, col)
        try:
            values[(section, key)] = schema[key].parse(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ScenarioError(f"{key}: {exc}", lineno, vcol) from None
    if not dims:
        raise ScenarioError("scenario declares no dimensions (SPACE section)", len(lines), 1)
    if ("LEGAL", "whitelist_mode") not in values and tables.get(("LEGAL", "whitelist")):
        values[("LEGAL", "whitelist_mode")] = True
    for sec, (keys, tabs) in SCHEMA.items():
        for k, spec in keys.items():
            values.setdefault((sec, k), spec.default)
        for t in tabs:
            tables.setdefault((sec, t), ())
    sc = Scenario(tuple(dims), values, tables, name)
    validate(sc)
    return sc


def expanded_names(sc: Scenario) -> list[str]:
    out = []
    for d in sc.dims:
        if d.count is None:
            out.append(d.name)
        else:
            out.extend(f"{d.name}[{k}]" for k in range(d.count))
    return out


def validate(sc: Scenario) -> None:
    """Cross-field checks the line parser cannot make."""
    names = set(expanded_names(sc))
    for row in sc.table("LEGAL", "constraint"):
        if row[0] not in names:
            raise ScenarioError(f"constraint on unknown dimension {row[0]!r}")
        if row[1] > row[2]:
            raise ScenarioError(f"constraint on {row[0]!r} has lo > hi")
    if sc.get("CHANNELS", "ber") < 0 or sc.get("CHANNELS", "ber") > 1:
        raise ScenarioError("ber must lie in [0, 1]")
    if sc.get("CHANNELS", "duplex") and not sc.get("CHANNELS", "parity"):
        raise ScenarioError("duplex repair needs parity = true")
    if sc.get("CONTROLLER", "error_classes") < 1:
        raise ScenarioError("error_classes must be >= 1")
    if sc.get("CONTROLLER", "step_budget") < 1:
        raise ScenarioError("step_budget must be >= 1")
    if sc.get("RUN", "ticks") < 0:
        raise ScenarioError("ticks must be >= 0")
    if sc.get("STORAGE", "generate") and sc.table("STORAGE", "patterns"):
        raise ScenarioError("use either generate or a patterns table, not both")
    if sc.get("STORAGE", "generate") < 0:
        raise ScenarioError("generate must be >= 0")
    for row in sc.table("ENVIRONMENT", "events"):
        if row[1] not in ("demand", "fault", "disturb", "jump", "store", "none"):
            raise ScenarioError(f"unknown event kind {row[1]!r} at tick {row[0]}")


def serialize(sc: Scenario) -> str:
    """Canonical text: every section, every key, tables in declaration order."""
    out = ["SPACE"]
    out += ["  " + d.text() for d in sc.dims]
    for sec, (keys, tabs) in SCHEMA.items():
        out.append("")
        out.append(sec)
        for k in keys:
            out.append(f"  {k} = {fmt(sc.get(sec, k))}".rstrip())
        for t in tabs:
            rows = sc.table(sec, t)
            if not rows:
                continue
            out.append(f"  {t}:")
            out += ["    " + " ".join(fmt(v) for v in row) for row in rows]
    return "\n".join(out) + "\n"


def load_scenario(path) -> Scenario:
    from pathlib import Path

    p = Path(path)
    try:
        text = p.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise ScenarioError(f"no such scenario file: {p}") from None
    except UnicodeDecodeError as exc:
        raise ScenarioError(f"scenario is not UTF-8: {exc}") from None
    return parse_scenario(text, p.stem)
