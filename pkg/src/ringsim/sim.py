"""Running a script on one or more workers."""
from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, make_domain, read_bbg
from .partition import SerialComm, decompose, run_processes, run_threads
from .ring import Context, Ring, RunReport, build_devices
from .script import ScriptError, default_search, load_script, parse_script

log = logging.getLogger(__name__)

BACKENDS = ("serial", "threads", "processes")


@dataclass
class Setup:
    """Script source plus everything needed to rebuild it in a worker."""

    text: str
    source: str
    base_dir: Path
    script_name: str
    args: tuple
    search: tuple

    def parse(self):
        return parse_script(self.text, self.args, source=self.source, base_dir=self.base_dir,
                            script_name=self.script_name, search=self.search)


def setup_from_path(path, args=(), search=None):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"script not found: {path}")
    return Setup(path.read_text(), str(path), path.parent, path.stem, tuple(str(a) for a in args),
                 tuple(search) if search is not None else default_search())


def setup_from_text(text, args=(), name="script", base_dir=".", search=None):
    return Setup(text, f"{name}.bbs", Path(base_dir), name, tuple(str(a) for a in args),
                 tuple(search) if search is not None else default_search())


def find_geometry(name, base_dir, search):
    p = Path(name)
    if p.is_absolute():
        return p
    for d in (Path(base_dir),) + tuple(Path(s) for s in search):
        if (d / p).is_file():
            return d / p
    raise ScriptError(f"geometry file {name!r} not found")


def build_domain(parsed, search=None):
    st = parsed.state
    geometry = None
    if st.geometry_file is not None:
        search = default_search() if search is None else search
        geometry = read_bbg(find_geometry(st.geometry_file, parsed.base_dir, search))
    return make_domain(st.dims, geometry, st.anisotropy, st.vmax)


@dataclass
class SimResult:
    report: RunReport
    state: np.ndarray
    mask: np.ndarray
    partition: object
    traces: list | None = None


def _worker(setup, topology, elide, outdir, max_turns, trace, stdout):
    def target(comm):
        parsed = setup.parse()
        domain = build_domain(parsed, setup.search)
        part = decompose(domain.dims, domain.mask, *topology, elide=elide)
        grid = Grid(domain, part.block_of(comm.rank))
        ctx = Context(grid, parsed.env, comm, part.neighbors.get(comm.rank) if comm.size > 1 else None,
                      Path(outdir), parsed.base_dir, parsed.env.macro("0"), stdout=stdout)
        devices = build_devices(parsed.devices, ctx)
        snaps = [] if trace else None
        hook = (lambda c: snaps.append(c.env.snapshot())) if trace else None
        report = Ring(devices, ctx).run(max_turns, hook)
        return report, (grid.lo, grid.hi), grid.owned_values().copy(), snaps
    return target


def run_setup(setup, topology=(1, 1, 1), backend=None, outdir=".", elide=True, max_turns=None,
              trace=False, stdout=None):
    """Run ``setup`` split ``topology=(nx, ny, nz)``; returns the assembled
    final state of the whole grid."""
    parsed = setup.parse()
    domain = build_domain(parsed, setup.search)
    part = decompose(domain.dims, domain.mask, *topology, elide=elide)
    n = part.nworkers
    if backend is None:
        backend = "serial" if n == 1 else "threads"
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    Path(outdir).mkdir(parents=True, exist_ok=True)
    target = _worker(setup, topology, elide, outdir, max_turns, trace, stdout)
    if backend == "serial":
        if n != 1:
            raise ValueError("serial backend runs exactly one worker")
        results = [target(SerialComm())]
    elif backend == "threads":
        results = run_threads(n, target)
    else:
        results = run_processes(n, target)
    d = domain.dims
    state = np.zeros((d.vmax, d.zmax, d.ymax, d.xmax))
    for _, (lo, hi), vals, _ in results:
        state[:, lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]] = vals
    report = results[0][0]
    report.state = state
    traces = [r[3] for r in results] if trace else None
    return SimResult(report, state, domain.mask, part, traces)


def run_script(path, args=(), topology=(1, 1, 1), backend=None, outdir=".", **kw):
    return run_setup(setup_from_path(path, args), topology, backend, outdir, **kw)


def run_text(text, args=(), topology=(1, 1, 1), backend=None, outdir=".", name="script",
             base_dir=".", **kw):
    return run_setup(setup_from_text(text, args, name, base_dir), topology, backend, outdir, **kw)


def check_script(path, args=()):
    """Parse the script and build its ring on one worker without running
    it (outputs go to a scratch directory); returns (parsed, devices)."""
    parsed = load_script(path, args)
    domain = build_domain(parsed)
    with tempfile.TemporaryDirectory() as tmp:
        ctx = Context(Grid(domain), parsed.env, SerialComm(), None, Path(tmp), parsed.base_dir,
                      parsed.env.macro("0"))
        devices = build_devices(parsed.devices, ctx)
        for dev in devices:
            dev.finish(ctx)
    return parsed, devices


def serial_ring(setup, outdir=".", stdout=None):
    """Parse and build ``setup`` on a single worker; returns ``(ring, ctx)``
    for callers that drive the turns themselves."""
    parsed = setup.parse()
    domain = build_domain(parsed, setup.search)
    Path(outdir).mkdir(parents=True, exist_ok=True)
    ctx = Context(Grid(domain), parsed.env, SerialComm(), None, Path(outdir), parsed.base_dir,
                  parsed.env.macro("0"), stdout=stdout)
    return Ring(build_devices(parsed.devices, ctx), ctx), ctx
