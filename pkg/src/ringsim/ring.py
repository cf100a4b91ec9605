"""The device ring: building devices from parsed sentences and running turns.

One turn is one time step.  Each device fires when its ``when`` variable
is nonzero at the moment the device is reached, so a flag set earlier in
the same turn takes effect immediately.  ``stop`` ends the run after the
current turn completes.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import ExprError, evaluate, names_in, parse_expression, parse_list, parse_program
from .partition import SerialComm, global_reduce
from .script import Param, ScriptError, parse_params

log = logging.getLogger(__name__)


class DeviceError(RuntimeError):
    pass


REGISTRY = {}


def register(cls):
    REGISTRY[cls.type] = cls
    return cls


WINDOW_KEYS = ("x0", "x1", "y0", "y1", "z0", "z1", "v0", "v1")
COMMON_KEYS = ("name", "when", "debug")


@dataclass
class Window:
    """Inclusive global box ``lo..hi`` (x, y, z) and layer range ``v0..v1``."""

    lo: tuple
    hi: tuple
    v0: int
    v1: int

    @property
    def layers(self):
        return slice(self.v0, self.v1 + 1)

    @property
    def npoints(self):
        return int(np.prod([self.hi[a] - self.lo[a] + 1 for a in range(3)]))

    @property
    def nlayers(self):
        return self.v1 - self.v0 + 1


def default_window(dims):
    lo, hi = [], []
    for n in (dims.xmax, dims.ymax, dims.zmax):
        if n >= 3:
            lo.append(1)
            hi.append(n - 2)
        else:
            lo.append(0)
            hi.append(n - 1)
    return tuple(lo), tuple(hi)


@dataclass
class Context:
    """Everything a device sees while the ring runs in one worker."""

    grid: object
    env: object
    comm: object = field(default_factory=SerialComm)
    neighbors: dict | None = None
    outdir: Path = Path(".")
    base_dir: Path = Path(".")
    script_name: str = "script"
    stop: bool = False
    outputs: list = field(default_factory=list)
    stdout: object = None

    @property
    def rank(self):
        return self.comm.rank

    @property
    def dims(self):
        return self.grid.dims

    def path(self, name):
        p = Path(name)
        return p if p.is_absolute() else self.outdir / p

    def input_path(self, name):
        """Input files: absolute, else in outdir, else next to the script."""
        p = Path(name)
        if p.is_absolute():
            return p
        for d in (self.outdir, self.base_dir):
            if (d / p).is_file():
                return d / p
        return self.base_dir / p

    def note_output(self, path):
        if self.rank == 0 and str(path) not in self.outputs:
            self.outputs.append(str(path))

    def exchange(self, layers=None):
        from .partition import halo_exchange
        halo_exchange(self.grid, self.comm, self.neighbors, layers)


class Device:
    """Base class.  Subclasses list their own parameter names in ``keys``;
    ``windowed`` devices accept the x0..v1 window parameters."""

    type = ""
    keys = ()
    windowed = True
    nowhere_ok = False
    check_keys = True
    # False when v0/v1 name a source and a destination layer, not a range
    layer_range = True

    def __init__(self, spec, ctx):
        self.spec = spec
        self.params = dict(spec.params)
        self.label = spec.name
        env = ctx.env
        allowed = set(COMMON_KEYS) | set(self.keys)
        if self.windowed:
            allowed |= set(WINDOW_KEYS)
        if self.nowhere_ok:
            allowed.add("nowhere")
        if self.check_keys:
            unknown = [k for k in self.params if k not in allowed]
            if unknown:
                raise DeviceError(f"{self.where}: unknown parameter(s) {unknown}")
        self.when = self.params.get("when", Param("expr", "always")).text
        if self.when not in env:
            raise DeviceError(f"{self.where}: 'when' variable {self.when!r} not declared")
        self.nowhere = bool(self.num("nowhere", env, 0)) if self.nowhere_ok else False
        self.debug = bool(self.num("debug", env, 0))
        self.window = self._window(ctx) if self.windowed and not self.nowhere else None

    @property
    def where(self):
        return f"{self.spec.source}:{self.spec.line}: {self.type}" + \
            (f" '{self.label}'" if self.label != self.type else "")

    # --- parameter helpers ------------------------------------------------
    def has(self, key):
        return key in self.params

    def num(self, key, env, default=None):
        p = self.params.get(key)
        if p is None:
            if default is None:
                raise DeviceError(f"{self.where}: missing parameter {key!r}")
            return default
        if p.kind != "expr":
            raise DeviceError(f"{self.where}: parameter {key!r} must be numeric")
        try:
            return env.eval(p.text)
        except ExprError as e:
            raise DeviceError(f"{self.where}: {key}: {e}") from None

    def integer(self, key, env, default=None):
        v = self.num(key, env, default)
        if v != int(v):
            raise DeviceError(f"{self.where}: parameter {key!r} must be an integer, got {v}")
        return int(v)

    def text(self, key, default=None):
        p = self.params.get(key)
        if p is None:
            if default is None:
                raise DeviceError(f"{self.where}: missing parameter {key!r}")
            return default
        return p.text

    def layer(self, key, ctx, default=None):
        v = self.integer(key, ctx.env, default)
        if not 0 <= v < ctx.dims.vmax:
            raise DeviceError(f"{self.where}: layer {key}={v} outside 0..{ctx.dims.vmax - 1}")
        return v

    def _window(self, ctx):
        d = ctx.dims
        dlo, dhi = default_window(d)
        env = ctx.env
        lo, hi = [], []
        for a, axis in enumerate("xyz"):
            lo.append(self.integer(axis + "0", env, dlo[a]))
            hi.append(self.integer(axis + "1", env, dhi[a]))
        v0 = self.integer("v0", env, 0)
        v1 = self.integer("v1", env, v0 if self.has("v0") else max(0, d.vmax - 2))
        limits = (d.xmax, d.ymax, d.zmax)
        for a, axis in enumerate("xyz"):
            if not (0 <= lo[a] <= hi[a] < limits[a]):
                raise DeviceError(f"{self.where}: window {axis}0..{axis}1 = {lo[a]}..{hi[a]} "
                                  f"outside 0..{limits[a] - 1} or empty")
        if self.layer_range and v0 > v1:
            raise DeviceError(f"{self.where}: empty layer range {v0}..{v1}")
        if not (0 <= min(v0, v1) and max(v0, v1) < d.vmax):
            raise DeviceError(f"{self.where}: layers {v0}, {v1} outside 0..{d.vmax - 1}")
        return Window(tuple(lo), tuple(hi), v0, v1)

    # --- running ----------------------------------------------------------
    def fires(self, env):
        return env[self.when] != 0

    def run(self, ctx):
        raise NotImplementedError

    def finish(self, ctx):
        pass


def build_devices(specs, ctx):
    _load_all()
    devices = []
    for spec in specs:
        cls = REGISTRY.get(spec.type)
        if cls is None:
            raise DeviceError(f"{spec.source}:{spec.line}: unknown device type {spec.type!r}")
        devices.append(cls(spec, ctx))
    return devices


def _load_all():
    from . import diffusion_devices, elliptic, iodev  # noqa: F401
    from .kinetics import devices  # noqa: F401


def known_types():
    _load_all()
    return frozenset(REGISTRY)


@dataclass
class RunReport:
    turns: int
    t: int
    wall: float
    outputs: list
    env: dict
    state: np.ndarray | None = None

    @property
    def wall_per_step(self):
        return self.wall / max(self.turns, 1)


class Ring:
    def __init__(self, devices, ctx):
        self.devices = devices
        self.ctx = ctx

    def turn(self):
        ctx = self.ctx
        env = ctx.env
        for dev in self.devices:
            if not dev.fires(env):
                continue
            try:
                dev.run(ctx)
            except (DeviceError, ExprError) as e:
                raise DeviceError(f"{dev.where} at t={env['t']}: {e}") from None
            except (ValueError, ArithmeticError, OSError) as e:
                raise DeviceError(f"{dev.where} at t={env['t']}: {type(e).__name__}: {e}") from e
        env.values["t"] = env.values["t"] + 1

    def run(self, max_turns=None, on_turn=None):
        """Turn until a stop device fires (or ``max_turns``); ``on_turn(ctx)``
        is called after every turn."""
        start = time.perf_counter()
        turns = 0
        while not self.ctx.stop:
            if max_turns is not None and turns >= max_turns:
                break
            self.turn()
            turns += 1
            if on_turn is not None:
                on_turn(self.ctx)
        for dev in self.devices:
            dev.finish(self.ctx)
        wall = time.perf_counter() - start
        return RunReport(turns, self.ctx.env["t"], wall, list(self.ctx.outputs), dict(self.ctx.env.values))


# --- control devices ----------------------------------------------------------

class _Program:
    """Compiled pgm block: statements over globals and per-point values."""

    def __init__(self, text, where):
        try:
            self.stmts = parse_program(text)
        except ExprError as e:
            raise DeviceError(f"{where}: pgm: {e}") from None
        if not self.stmts:
            raise DeviceError(f"{where}: empty pgm")


def _layer_index(name):
    if len(name) > 1 and name[0] == "u" and name[1:].isdigit():
        return int(name[1:])
    return None


@register
class KFunc(Device):
    """Evaluates a program: over global variables (``nowhere=1``) or at every
    tissue point of its window, where ``u0..`` name the layers."""

    type = "k_func"
    keys = ("pgm", "file")
    nowhere_ok = True

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.program = _Program(self.text("pgm"), self.where)
        env = ctx.env
        self.table = None
        if self.has("file"):
            path = ctx.input_path(self.text("file"))
            if not path.is_file():
                raise DeviceError(f"{self.where}: data file {path} not found")
            self.table = np.atleast_2d(np.loadtxt(path))
            if self.table.shape[1] < 2:
                raise DeviceError(f"{self.where}: data file needs at least two columns")
        if self.nowhere:
            for st in self.program.stmts:
                if _layer_index(st.target) is not None:
                    raise DeviceError(f"{self.where}: layer assignment {st.target} in a nowhere=1 device")
                if st.target in env.READONLY:
                    raise DeviceError(f"{self.where}: {st.target!r} is read-only")
                if st.target not in env:
                    log.warning("%s: %r not declared; declaring it as a real global", self.where, st.target)
                    env.declare("real", st.target)
        else:
            vmax = ctx.dims.vmax
            for st in self.program.stmts:
                k = _layer_index(st.target)
                if k is not None and k >= vmax:
                    raise DeviceError(f"{self.where}: {st.target} exceeds vmax={vmax}")
                if k is None and st.target in env:
                    raise DeviceError(f"{self.where}: cannot assign global {st.target!r} per point")
            self.points, self.coords = ctx.grid.active_points(self.window.lo, self.window.hi)

    def _tab(self, col, s):
        if self.table is None:
            raise ExprError("tab() needs a k_func with file=")
        c = int(np.asarray(col).flat[0])
        if not 1 <= c < self.table.shape[1]:
            raise ExprError(f"tab column {c} outside 1..{self.table.shape[1] - 1}")
        out = np.interp(s, self.table[:, 0], self.table[:, c])
        return float(out) if np.ndim(out) == 0 else out

    def run(self, ctx):
        env = ctx.env
        funcs = {"tab": self._tab}
        if self.nowhere:
            for st in self.program.stmts:
                env.set(st.target, evaluate(st.expr, env.lookup, funcs))
            return
        if self.points.size == 0:
            return
        grid = ctx.grid
        P = self.points
        d = ctx.dims
        local = {
            "x": self.coords[0].astype(float), "y": self.coords[1].astype(float),
            "z": self.coords[2].astype(float),
            "xmax": float(d.xmax), "ymax": float(d.ymax), "zmax": float(d.zmax),
        }
        written = {}

        def lookup(name):
            if name in local:
                return local[name]
            k = _layer_index(name)
            if k is not None and k < d.vmax:
                local[name] = grid.flat(k)[P]
                return local[name]
            return env[name]

        for st in self.program.stmts:
            value = evaluate(st.expr, lookup, funcs)
            value = np.broadcast_to(np.asarray(value, dtype=float), P.shape).copy()
            local[st.target] = value
            k = _layer_index(st.target)
            if k is not None:
                written[k] = value
        for k, value in written.items():
            grid.flat(k)[P] = value


@register
class Reduce(Device):
    """Global reduction (max/min/sum/mean) over tissue points of a window."""

    type = "reduce"
    keys = ("operation", "result")

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        from .partition import REDUCTIONS
        self.op = self.text("operation")
        if self.op not in REDUCTIONS:
            raise DeviceError(f"{self.where}: unknown operation {self.op!r}")
        self.result = self.text("result")
        if self.result not in ctx.env:
            raise DeviceError(f"{self.where}: result variable {self.result!r} not declared")
        self.points, _ = ctx.grid.active_points(self.window.lo, self.window.hi)
        count = ctx.comm.allreduce(np.array([float(self.points.size)]), "sum")
        if count == 0:
            raise DeviceError(f"{self.where}: window holds no tissue points")

    def run(self, ctx):
        w = self.window
        vals = [ctx.grid.flat(v)[self.points] for v in range(w.v0, w.v1 + 1)]
        ctx.env.set(self.result, global_reduce(ctx.comm, self.op, np.concatenate(vals)))


@register
class KPoincare(Device):
    """Crossing detector.  The first statement ``flag=signal-expr`` names the
    flag and the signal; the flag is 1 on the turn the signal changes sign
    in the ``sign`` direction (previous <= 0 < current for sign=+1), else 0.
    Remaining statements run only on a crossing."""

    type = "k_poincare"
    keys = ("pgm", "sign")
    windowed = False
    nowhere_ok = True

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.sign = self.integer("sign", ctx.env, 1)
        if self.sign not in (1, -1):
            raise DeviceError(f"{self.where}: sign must be +1 or -1")
        self.program = _Program(self.text("pgm"), self.where)
        for st in self.program.stmts:
            if st.target not in ctx.env:
                raise DeviceError(f"{self.where}: {st.target!r} not declared")
            if st.target in ctx.env.READONLY:
                raise DeviceError(f"{self.where}: {st.target!r} is read-only")
        self.flag = self.program.stmts[0].target
        self.signal = self.program.stmts[0].expr
        self.prev = None

    def run(self, ctx):
        env = ctx.env
        cur = float(evaluate(self.signal, env.lookup)) * self.sign
        crossed = self.prev is not None and self.prev <= 0.0 < cur
        self.prev = cur
        env.set(self.flag, 1.0 if crossed else 0.0)
        if crossed:
            for st in self.program.stmts[1:]:
                env.set(st.target, evaluate(st.expr, env.lookup))


@register
class Stop(Device):
    type = "stop"
    windowed = False

    def run(self, ctx):
        ctx.stop = True


class _Graphics(Device):
    windowed = False
    check_keys = False
    _warned = set()

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        if self.type not in _Graphics._warned:
            log.warning("%s: run-time graphics not supported; device does nothing", self.where)
            _Graphics._warned.add(self.type)

    def run(self, ctx):
        pass


for _name in ("k_paintgl", "k_draw", "k_plot", "k_paint"):
    register(type(_name, (_Graphics,), {"type": _name}))


def echo_ring(devices):
    return "\n".join(f"{i:3d} {d.spec.echo()}" for i, d in enumerate(devices))


def parse_param_block(text, where=""):
    try:
        return parse_params(text, where)
    except ScriptError as e:
        raise DeviceError(f"{where}{e}") from None
