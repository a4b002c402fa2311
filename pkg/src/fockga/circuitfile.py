"""Text format for experiment plans, written in the notation of published circuit tables.

Example::

    # squeezed pair, two displacements, beam splitter, 10-photon herald
    input: |zeta1 = 1.39e^{i2.50}, zeta2 = 0.34e^{i5.64}>
    O1: D_2(alpha = 2.49e^{i5.92})
    O2: D_1(alpha = 1.66e^{i6.11})
    O3: U_12(T = 0.30)
    POVM: |n=10><n=10|

Modes are numbered from 1.  Input entries fill modes left to right: ``0`` or
``n=k`` (Fock), ``alpha=...`` (coherent), ``zeta=...`` (squeezed vacuum) and
``zeta_12=...`` (two-mode squeezed vacuum, two modes).  Operators are
``D_i(alpha=...)``, ``S_i(zeta=...)``, ``S_ij(zeta=...)``, ``U_ij(T=...)``,
``P_i(phi=...)`` or ``e^{i n_i phi}``, and ``---``/``I`` for the identity.
Heralds are separated by ``;`` and apply to modes 1..N-1 in order unless a
``_k`` suffix names the mode: ``|n=k><n=k|``, ``Bucket(n=0)``,
``Multiplex(n=2, d=16)``, ``Homodyne(x=0.5, angle=0)`` or ``I``.
A single line of ``&``-separated cells (a pasted table row, LaTeX allowed)
is also accepted.
"""
from __future__ import annotations

import math
import re
from typing import Optional

from .circuit import Element, ExperimentPlan
from .toolbox import TWO_PI, Kind


class CircuitParseError(ValueError):
    def __init__(self, message, line=None, column=None, path=None):
        where = ""
        if path:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
            if column is not None:
                where += f"{column}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.column = column


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_COMPLEX = re.compile(
    rf"^\s*(?P<mag>{_NUM})\s*(?:\*?\s*(?:e\^\{{\s*i\s*(?P<ph>{_NUM})\s*\}}"
    rf"|exp\(\s*i\s*\*?\s*(?P<ph2>{_NUM})\s*\)))?\s*$")

_REPLACE = [
    ("\u27e9", ">"), ("\u27e8", "<"), ("\u03b6", "zeta"), ("\u03b1", "alpha"), ("\u03c6", "phi"),
    ("\u03bb", "angle"), ("\u2014", "---"), ("\u2013", "-"),
]

_LATEX = [
    (re.compile(r"\\ket\{([^{}]*(?:\{[^{}]*\}[^{}]*)*)\}\s*\\bra\{([^{}]*)\}"), r"|\1><\2|"),
    (re.compile(r"\\ket\{([^{}]*(?:\{[^{}]*\}[^{}]*)*)\}"), r"|\1>"),
    (re.compile(r"\\(?:rangle)"), ">"),
    (re.compile(r"\\(?:langle)"), "<"),
    (re.compile(r"\\hat\{(\w)\}"), r"\1"),
    (re.compile(r"\\mathrm\{e\}"), "e"),
    (re.compile(r"\\zeta"), "zeta"),
    (re.compile(r"\\alpha"), "alpha"),
    (re.compile(r"\\phi|\\varphi"), "phi"),
    (re.compile(r"\\lambda"), "angle"),
    (re.compile(r"\\hat\{n\}|\\hat n"), "n"),
    (re.compile(r"\\[ ,;!]|~|\$|\\\\"), " "),
    (re.compile(r"\\left|\\right"), ""),
]


def _normalize(text: str) -> str:
    for a, b in _REPLACE:
        text = text.replace(a, b)
    for pat, rep in _LATEX:
        text = pat.sub(rep, text)
    return text


def parse_complex(text: str):
    """'1.39e^{i2.50}' -> (1.39, 2.50); a bare real r gives (|r|, 0 or pi)."""
    m = _COMPLEX.match(text)
    if not m:
        raise ValueError(f"cannot read {text.strip()!r} as r e^{{i phi}}")
    mag = float(m.group("mag"))
    ph = m.group("ph") or m.group("ph2")
    phase = float(ph) if ph is not None else 0.0
    if mag < 0:
        mag, phase = -mag, phase + math.pi
    return mag, phase % TWO_PI


def _split_top(text: str, sep: str):
    """Split on ``sep`` outside braces/parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "({[":
            depth += 1
        elif ch in ")}]":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _kv(text):
    """'alpha = 2.49e^{i5.92}' -> ('alpha', '2.49e^{i5.92}')."""
    if "=" not in text:
        return None, text.strip()
    k, v = text.split("=", 1)
    return k.strip().lower(), v.strip()


def _parse_inputs(text):
    body = text.strip()
    if not (body.startswith("|") and body.endswith(">")):
        raise ValueError("inputs must be written as a ket |...>")
    entries = _split_top(body[1:-1], ",")
    elements, mode = [], 0
    for entry in entries:
        key, val = _kv(entry)
        base = re.sub(r"[_\s]*\d*$", "", key) if key else None
        suffix = re.search(r"(\d+)$", key).group(1) if key and re.search(r"\d+$", key) else ""
        if key is None:
            elements.append(Element(Kind.FOCK, (mode,), {"n": int(val)}))
            mode += 1
        elif base == "n":
            elements.append(Element(Kind.FOCK, (mode,), {"n": int(val)}))
            mode += 1
        elif base == "alpha":
            mag, ph = parse_complex(val)
            elements.append(Element(Kind.COHERENT, (mode,), {"mag": mag, "phase": ph}))
            mode += 1
        elif base == "zeta" and len(suffix) == 2:
            mag, ph = parse_complex(val)
            elements.append(Element(Kind.SQUEEZED_VAC2, (mode, mode + 1), {"mag": mag, "phase": ph}))
            mode += 2
        elif base == "zeta":
            mag, ph = parse_complex(val)
            elements.append(Element(Kind.SQUEEZED_VAC1, (mode,), {"mag": mag, "phase": ph}))
            mode += 1
        else:
            raise ValueError(f"unknown input entry {entry.strip()!r}")
    return elements, mode


_OP = re.compile(r"^\s*(?P<name>[DSUP])\s*_?\s*\{?(?P<modes>\d+)\}?\s*\((?P<args>.*)\)\s*$")
_PHASE_EXP = re.compile(rf"^\s*e\^\{{\s*i\s*n_?\{{?(?P<mode>\d)\}}?\s*\*?\s*(?P<phi>{_NUM})\s*\}}\s*$")


def _modes_from_digits(digits, count):
    if len(digits) != count:
        raise ValueError(f"expected {count} mode digit(s), got {digits!r}")
    return tuple(int(c) - 1 for c in digits)


def _parse_op(text):
    s = text.strip()
    if s in ("---", "--", "-", "I", "Identity", ""):
        return Element(Kind.IDENTITY)
    m = _PHASE_EXP.match(s)
    if m:
        return Element(Kind.PHASE_SHIFT, (int(m.group("mode")) - 1,),
                       {"phase": float(m.group("phi")) % TWO_PI})
    m = _OP.match(s)
    if not m:
        raise ValueError(f"unknown operator {s!r}")
    name, digits = m.group("name"), m.group("modes")
    key, val = _kv(m.group("args"))
    if name == "D":
        mag, ph = parse_complex(val)
        return Element(Kind.DISPLACEMENT, _modes_from_digits(digits, 1), {"mag": mag, "phase": ph})
    if name == "S":
        mag, ph = parse_complex(val)
        kind = Kind.SQUEEZE2 if len(digits) == 2 else Kind.SQUEEZE1
        return Element(kind, _modes_from_digits(digits, len(digits)), {"mag": mag, "phase": ph})
    if name == "U":
        t = float(val)
        return Element(Kind.BEAM_SPLITTER, _modes_from_digits(digits, 2), {"transmissivity": t})
    if name == "P":
        return Element(Kind.PHASE_SHIFT, _modes_from_digits(digits, 1), {"phase": float(val) % TWO_PI})
    raise ValueError(f"unknown operator {s!r}")


_PROJ = re.compile(r"^\|\s*(?:n\s*=\s*)?(?P<n>\d+)\s*>\s*<\s*(?:n\s*=\s*)?(?P<m>\d+)\s*\|$")
_CALL = re.compile(r"^(?P<name>Bucket|Multiplex|Homodyne)\s*\((?P<args>.*)\)$", re.IGNORECASE)


def _parse_herald(text, default_mode):
    s = text.strip()
    mode = default_mode
    m = re.search(r"_\{?(\d+)\}?$", s)
    if m:
        mode = int(m.group(1)) - 1
        s = s[: m.start()].strip()
    if s in ("I", "Identity"):
        return Element(Kind.IDENTITY, (mode,), {})
    p = _PROJ.match(s.replace(" ", ""))
    if p:
        if p.group("n") != p.group("m"):
            raise ValueError("number projector must be diagonal")
        return Element(Kind.PNRD, (mode,), {"n": int(p.group("n"))})
    c = _CALL.match(s)
    if not c:
        raise ValueError(f"unknown measurement {s!r}")
    name = c.group("name").lower()
    args = dict(_kv(a) for a in _split_top(c.group("args"), ",") if a.strip())
    if name == "bucket":
        n = args.get("n", args.get(None, "1"))
        n = {"click": "1", "no-click": "0", "noclick": "0"}.get(str(n).lower(), n)
        return Element(Kind.BUCKET, (mode,), {"n": int(n)})
    if name == "multiplex":
        return Element(Kind.MULTIPLEX, (mode,),
                       {"n": int(args["n"]), "detectors": int(args.get("d", args.get("detectors", 16)))})
    return Element(Kind.HOMODYNE, (mode,),
                   {"x": float(args["x"]), "angle": float(args.get("angle", 0.0)) % TWO_PI})


def _finish(inputs, n_modes, ops, herald_texts, declared_modes):
    if declared_modes is not None and declared_modes != n_modes:
        raise ValueError(f"inputs cover {n_modes} modes but modes: {declared_modes}")
    heralds = [_parse_herald(h, i) for i, h in enumerate(herald_texts)]
    return ExperimentPlan(n_modes, tuple(inputs), tuple(ops), tuple(heralds))


def parse_circuit(text: str, path: Optional[str] = None) -> ExperimentPlan:
    """Parse a circuit description; errors carry 1-based line and column."""
    lines = text.splitlines()
    content = [(i + 1, _normalize(raw.split("#", 1)[0]).strip()) for i, raw in enumerate(lines)]
    content = [(n, s) for n, s in content if s]
    if not content:
        raise CircuitParseError("empty circuit description", path=path)
    if len(content) == 1 and "&" in content[0][1]:
        return _parse_row(content[0][1], content[0][0], path)
    inputs, n_modes, ops, heralds, declared = None, 0, [], None, None
    for lineno, s in content:
        if ":" not in s:
            raise CircuitParseError("expected 'key: value'", lineno, 1, path)
        key, val = s.split(":", 1)
        col = len(key) + 2 + (len(val) - len(val.lstrip()))
        key = key.strip().lower()
        try:
            if key == "modes":
                declared = int(val)
            elif key in ("input", "inputs", "psi_in", "psi"):
                inputs, n_modes = _parse_inputs(val)
            elif re.fullmatch(r"o_?\{?\d+\}?", key):
                ops.append(_parse_op(val))
            elif key == "povm":
                heralds = [h for h in _split_top(val, ";")]
            else:
                raise ValueError(f"unknown key {key!r}")
        except CircuitParseError:
            raise
        except (ValueError, KeyError) as exc:
            raise CircuitParseError(str(exc), lineno, col, path) from None
    if inputs is None:
        raise CircuitParseError("missing 'input:' line", path=path)
    if heralds is None:
        raise CircuitParseError("missing 'POVM:' line", path=path)
    try:
        return _finish(inputs, n_modes, ops, heralds, declared)
    except ValueError as exc:
        raise CircuitParseError(str(exc), content[-1][0], None, path) from None


def _is_herald_cell(cell):
    first = re.sub(r"_\{?\d+\}?$", "", _split_top(cell, ";")[0].strip()).strip()
    return first.replace(" ", "").startswith("|") or bool(_CALL.match(first)) or first in ("I", "Identity")


def _parse_row(row, lineno, path):
    cells = [c.strip() for c in row.split("&")]
    try:
        start = next(i for i, c in enumerate(cells) if c.startswith("|") and "><" not in c.replace(" ", ""))
    except StopIteration:
        raise CircuitParseError("no input ket found in table row", lineno, 1, path) from None
    try:
        inputs, n_modes = _parse_inputs(cells[start])
        ops, heralds = [], None
        for c in cells[start + 1:]:
            if heralds is None and _is_herald_cell(c):
                heralds = _split_top(c, ";")
            elif heralds is None:
                ops.append(_parse_op(c))
        if heralds is None:
            raise ValueError("no POVM cell found in table row")
        return _finish(inputs, n_modes, ops, heralds, None)
    except ValueError as exc:
        raise CircuitParseError(str(exc), lineno, None, path) from None


def read_circuit(path) -> ExperimentPlan:
    with open(path, encoding="utf-8") as fh:
        return parse_circuit(fh.read(), path=str(path))


def _fmt(v, digits):
    return f"{v:.{digits}f}" if digits is not None else repr(float(v))


def _fmt_complex(mag, phase, digits):
    return f"{_fmt(mag, digits)}e^{{i{_fmt(phase % TWO_PI, digits)}}}"


def format_element(e: Element, digits: Optional[int] = None) -> str:
    k, p = e.kind, e.params
    m = "".join(str(i + 1) for i in e.modes)
    if k is Kind.IDENTITY:
        return "---"
    if k is Kind.DISPLACEMENT:
        return f"D_{m}(alpha={_fmt_complex(p['mag'], p['phase'], digits)})"
    if k in (Kind.SQUEEZE1, Kind.SQUEEZE2):
        return f"S_{m}(zeta={_fmt_complex(p['mag'], p['phase'], digits)})"
    if k is Kind.BEAM_SPLITTER:
        return f"U_{m}(T={_fmt(p['transmissivity'], digits)})"
    if k is Kind.PHASE_SHIFT:
        return f"P_{m}(phi={_fmt(p['phase'], digits)})"
    raise ValueError(f"{k} is not an operator")


def _format_input(e, digits):
    p = e.params
    if e.kind is Kind.FOCK:
        return f"n={int(p['n'])}"
    if e.kind is Kind.COHERENT:
        return f"alpha={_fmt_complex(p['mag'], p['phase'], digits)}"
    if e.kind is Kind.SQUEEZED_VAC1:
        return f"zeta={_fmt_complex(p['mag'], p['phase'], digits)}"
    return f"zeta_{e.modes[0] + 1}{e.modes[1] + 1}={_fmt_complex(p['mag'], p['phase'], digits)}"


def _format_herald(e, digits):
    p = e.params
    suffix = f"_{e.modes[0] + 1}"
    if e.kind is Kind.PNRD:
        return f"|n={int(p['n'])}><n={int(p['n'])}|{suffix}"
    if e.kind is Kind.BUCKET:
        return f"Bucket(n={int(p['n'])}){suffix}"
    if e.kind is Kind.MULTIPLEX:
        return f"Multiplex(n={int(p['n'])}, d={int(p.get('detectors', 16))}){suffix}"
    if e.kind is Kind.HOMODYNE:
        return f"Homodyne(x={_fmt(p['x'], digits)}, angle={_fmt(p['angle'], digits)}){suffix}"
    return f"I{suffix}"


def format_circuit(plan: ExperimentPlan, digits: Optional[int] = None, title: Optional[str] = None) -> str:
    """Render a plan in the file grammar; ``digits=None`` keeps full precision."""
    out = []
    if title:
        out.append(f"# {title}")
    out.append(f"modes: {plan.n_modes}")
    out.append("input: |" + ", ".join(_format_input(e, digits) for e in plan.inputs) + ">")
    for i, e in enumerate(plan.ops, 1):
        out.append(f"O{i}: {format_element(e, digits)}")
    out.append("POVM: " + "; ".join(_format_herald(e, digits) for e in plan.heralds))
    return "\n".join(out) + "\n"


def format_row(plan: ExperimentPlan, digits: int = 2) -> str:
    """One-line table notation: input & O1 & ... & POVM."""
    cells = ["|" + ", ".join(_format_input(e, digits) for e in plan.inputs) + ">"]
    cells += [format_element(e, digits) for e in plan.active_ops()] or ["---"]
    cells.append("; ".join(_format_herald(e, digits) for e in plan.heralds))
    return " & ".join(cells)
