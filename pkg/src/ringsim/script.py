"""Script language front end.

A script is a sequence of ``;``-terminated sentences.  Preprocessing strips
comments and inlines ``<file>`` includes; each sentence then has its
``[name]`` macros expanded (using the macros declared so far) before it is
parsed, so macro expansion is purely textual.
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .expr import ExprError, GlobalEnv
from .grid import GridDims

log = logging.getLogger(__name__)

SCRIPTS_DIR = Path(__file__).parent / "scripts"


class ScriptError(ValueError):
    pass


# --- preprocessing --------------------------------------------------------

def strip_comments(text):
    """Remove ``/* */`` and ``//`` comments outside double-quoted strings.
    Newlines are kept so line numbers survive."""
    out = []
    i, n = 0, len(text)
    in_str = False
    while i < n:
        c = text[i]
        if in_str:
            out.append(c)
            if c == '"':
                in_str = False
            i += 1
        elif c == '"':
            in_str = True
            out.append(c)
            i += 1
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise ScriptError(f"line {text.count(chr(10), 0, i) + 1}: unterminated comment")
            out.append("\n" * text.count("\n", i, j))
            i = j + 2
        elif text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j
        else:
            out.append(c)
            i += 1
    return "".join(out)


_INCLUDE = re.compile(r"<([^<>\s;]+)>")


def _resolve(name, base_dir, search):
    for d in [base_dir, *search]:
        p = Path(d) / name
        if p.is_file():
            return p.resolve()
    raise ScriptError(f"include file {name!r} not found")


def preprocess(text, source="<script>", base_dir=".", search=(), _stack=()):
    """Strip comments and inline ``<file>`` includes recursively.

    Returns ``(text, origins)`` where ``origins[k]`` is the (source, line)
    at which line ``k`` of the returned text starts.
    """
    text = strip_comments(text)
    pieces = []
    origins = [(source, 1)]
    line = 1
    pos = 0

    def add_local(chunk):
        nonlocal line
        for _ in range(chunk.count("\n")):
            line += 1
            origins.append((source, line))
        pieces.append(chunk)

    for m in _INCLUDE.finditer(text):
        if _in_string(text, m.start()):
            continue
        add_local(text[pos:m.start()])
        path = _resolve(m.group(1), base_dir, search)
        if path in _stack or path == _self_path(source):
            chain = " -> ".join(str(p) for p in (*_stack, path))
            raise ScriptError(f"include cycle: {chain}")
        sub, sub_origins = preprocess(path.read_text(), str(path), path.parent, search,
                                      (*_stack, _self_path(source), path))
        pieces.append(sub)
        origins.extend(sub_origins[1:])
        pos = m.end()
    add_local(text[pos:])
    return "".join(pieces), origins


def _self_path(source):
    p = Path(source)
    return p.resolve() if p.is_file() else None


def _in_string(text, idx):
    return text.count('"', 0, idx) % 2 == 1


def split_sentences(text):
    """Split at ``;`` outside braces and strings.  Returns (sentence, start offset)."""
    out = []
    depth = 0
    in_str = False
    start = 0
    for i, c in enumerate(text):
        if in_str:
            in_str = c != '"'
        elif c == '"':
            in_str = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                raise ScriptError(f"line {text.count(chr(10), 0, i) + 1}: unbalanced '}}'")
        elif c == ";" and depth == 0:
            out.append((text[start:i], start))
            start = i + 1
    tail = text[start:]
    if depth != 0:
        raise ScriptError("unbalanced '{' at end of script")
    if in_str:
        raise ScriptError("unterminated string at end of script")
    if tail.strip():
        out.append((tail, start))
    return out


_MACRO = re.compile(r"\[([^\[\]]*)\]")


def expand_macros(text, env):
    def sub(m):
        key = m.group(1).strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*|\d", key):
            raise ScriptError(f"bad macro reference [{m.group(1)}]")
        try:
            return env.macro(key)
        except ExprError as e:
            raise ScriptError(str(e)) from None

    # expansions may themselves contain macros
    for _ in range(32):
        new = _MACRO.sub(sub, text)
        if new == text:
            return new
        text = new
    raise ScriptError("macro expansion does not terminate")


# --- parameters -----------------------------------------------------------

@dataclass(frozen=True)
class Param:
    """One ``key=value``: kind is ``expr``, ``string``, ``block`` or ``layer``."""

    kind: str
    text: str

    def echo(self):
        if self.kind == "string":
            return f'"{self.text}"'
        if self.kind == "block":
            return "{" + self.text + "}"
        if self.kind == "layer":
            return f"@{self.text}"
        return self.text

    @property
    def layer(self):
        return int(self.text)


def _scan_value(text, i):
    """Return (Param, next index) for a value starting at ``text[i]``."""
    n = len(text)
    if i >= n or text[i].isspace():
        raise ScriptError("missing value after '='")
    if text[i] == '"':
        j = text.find('"', i + 1)
        if j < 0:
            raise ScriptError("unterminated string")
        return Param("string", text[i + 1:j]), j + 1
    if text[i] == "{":
        depth, j = 0, i
        while j < n:
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
                if depth == 0:
                    return Param("block", text[i + 1:j].strip()), j + 1
            j += 1
        raise ScriptError("unbalanced '{'")
    if text[i] == "@":
        m = re.match(r"@\s*(\d+)", text[i:])
        if not m:
            raise ScriptError(f"bad layer reference {text[i:i + 8]!r}")
        return Param("layer", m.group(1)), i + m.end()
    depth, j = 0, i
    while j < n:
        c = text[j]
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
        elif c.isspace() and depth == 0:
            break
        j += 1
    return Param("expr", text[i:j]), j


_KEY = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*")


def parse_params(text, where=""):
    """Parse ``key=value`` pairs; duplicate keys keep the last value."""
    params = {}
    i = 0
    text = text.strip()
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _KEY.match(text, i)
        if not m:
            word = text[i:].split(None, 1)[0]
            raise ScriptError(f"{where}expected key=value, found {word!r}")
        key = m.group(1)
        value, i = _scan_value(text, m.end())
        if key in params:
            log.warning("%sparameter %r given twice, last value kept", where, key)
            del params[key]
        params[key] = value
    return params


# --- sentences ------------------------------------------------------------

@dataclass
class DeviceSpec:
    type: str
    params: dict = field(default_factory=dict)
    line: int = 0
    source: str = ""

    @property
    def name(self):
        p = self.params.get("name")
        return p.text if p is not None else self.type

    @property
    def when(self):
        p = self.params.get("when")
        return p.text if p is not None else "always"

    def echo(self):
        parts = [self.type] + [f"{k}={v.echo()}" for k, v in self.params.items()]
        return " ".join(parts) + ";"


@dataclass
class StateSpec:
    params: dict
    dims: GridDims | None
    geometry_file: str | None
    anisotropy: bool
    vmax: int = 1

    def echo(self):
        return "state " + " ".join(f"{k}={v.echo()}" for k, v in self.params.items()) + ";"


@dataclass
class ParsedScript:
    state: StateSpec
    devices: list
    env: GlobalEnv
    source: str
    base_dir: Path
    defs: list = field(default_factory=list)

    def echo(self):
        """Expanded, parsed script text; re-parses to an equivalent ring."""
        lines = []
        state_at = self.defs_before_state
        for kind, name, init in self.defs[:state_at]:
            lines.append(_echo_def(kind, name, init))
        lines.append(self.state.echo())
        for kind, name, init in self.defs[state_at:]:
            lines.append(_echo_def(kind, name, init))
        lines.extend(d.echo() for d in self.devices)
        lines.append("end;")
        return "\n".join(lines) + "\n"

    defs_before_state: int = 0


def _echo_def(kind, name, init):
    return f"def {kind} {name}" + (f" {init}" if init else "") + ";"


def script_base_name(path):
    return Path(path).stem


def parse_script(text, args=(), source="<script>", base_dir=".", script_name=None, search=None):
    """Parse a script into (state, device specs, globals).

    ``args`` are bound to positional macros ``[1]``..``[9]``; ``[0]`` is
    the script base name.
    """
    if script_name is None:
        script_name = Path(source).stem if source != "<script>" else "script"
    if search is None:
        search = (SCRIPTS_DIR,)
    env = GlobalEnv(script_name, [str(a) for a in args])
    body, origins = preprocess(text, source, base_dir, search)

    def where(offset):
        ln = body.count("\n", 0, offset)
        src, line = origins[min(ln, len(origins) - 1)] if origins else (source, ln + 1)
        return src, line

    from .ring import known_types

    known = known_types()
    state = None
    devices = []
    defs = []
    defs_before_state = 0
    ended = False
    for raw, start in split_sentences(body):
        lead = len(raw) - len(raw.lstrip())
        src, line = where(start + lead)
        loc = f"{src}:{line}: "
        if not raw.strip():
            continue
        if ended:
            log.warning("%stext after 'end;' ignored", loc)
            break
        try:
            sentence = expand_macros(raw, env).strip()
        except ScriptError as e:
            raise ScriptError(f"{loc}{e}") from None
        if not sentence:
            continue
        head, *tail = re.split(r"\s+", sentence, maxsplit=1)
        rest = tail[0].strip() if tail else ""
        try:
            if head == "end":
                if rest:
                    raise ScriptError("'end' takes no parameters")
                ended = True
            elif head == "def":
                defs.append(_parse_def(rest, env))
            elif head == "state":
                if state is not None:
                    raise ScriptError("second 'state' sentence")
                state = _parse_state(rest, env)
                defs_before_state = len(defs)
            else:
                if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", head):
                    raise ScriptError(f"bad device type {head!r}")
                if state is None:
                    raise ScriptError(f"device {head!r} before the 'state' sentence")
                if head not in known:
                    raise ScriptError(f"unknown device type {head!r}")
                devices.append(DeviceSpec(head, parse_params(rest), line, src))
        except (ScriptError, ExprError) as e:
            raise ScriptError(f"{loc}{e}") from None
    if state is None:
        raise ScriptError(f"{source}: missing 'state' sentence")
    if not ended:
        raise ScriptError(f"{source}: missing 'end;' sentence")
    return ParsedScript(state, devices, env, source, Path(base_dir), defs, defs_before_state)


def _parse_def(rest, env):
    parts = rest.split(None, 2)
    if len(parts) < 2:
        raise ScriptError(f"incomplete def: 'def {rest}'")
    kind, name = parts[0], parts[1]
    init = parts[2].strip() if len(parts) == 3 else ""
    env.declare(kind, name, init or None)
    return kind, name, init


STATE_KEYS = ("xmax", "ymax", "zmax", "vmax", "geometry", "anisotropy")


def _parse_state(rest, env):
    params = parse_params(rest, "state: ")
    for k in params:
        if k not in STATE_KEYS:
            raise ScriptError(f"unknown state parameter {k!r}")

    def num(key, default):
        p = params.get(key)
        if p is None:
            return default
        v = env.eval(p.text)
        if v != int(v):
            raise ScriptError(f"state {key} must be an integer, got {v}")
        return int(v)

    geometry = params.get("geometry")
    geometry_file = geometry.text if geometry is not None else None
    vmax = num("vmax", 1)
    if geometry_file is None:
        for key in ("xmax", "ymax"):
            if key not in params:
                raise ScriptError(f"state needs {key} (or a geometry file)")
        dims = GridDims(num("xmax", 1), num("ymax", 1), num("zmax", 1), vmax)
    elif any(k in params for k in ("xmax", "ymax", "zmax")):
        dims = GridDims(num("xmax", 1), num("ymax", 1), num("zmax", 1), vmax)
    else:
        dims = None
    anisotropy = bool(num("anisotropy", 0))
    return StateSpec(params, dims, geometry_file, anisotropy, vmax)


def load_script(path, args=(), search=None):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"script not found: {path}")
    return parse_script(path.read_text(), args, source=str(path), base_dir=path.parent,
                        script_name=path.stem, search=search)


def packaged_script(name):
    return SCRIPTS_DIR / name


def default_search():
    extra = os.environ.get("RINGSIM_PATH", "")
    return tuple(p for p in extra.split(os.pathsep) if p) + (SCRIPTS_DIR,)
