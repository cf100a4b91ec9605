"""Command line: ``ringsim run|check|verify-heat|verify-zfk``.

Exit codes: 0 success, 1 a verification check failed, 2 usage or runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import harness
from .ring import DeviceError, echo_ring
from .script import SCRIPTS_DIR, ScriptError

log = logging.getLogger("ringsim")

OK, CHECK_FAILED, ERROR = 0, 1, 2

HEAT_BANDS = {"linf": (1.564, 0.25), "l2": (1.719, 0.25)}
ZFK_BANDS = {"linf": (2.0, 0.15), "l2": (2.0, 0.15)}


def _ladder(text):
    try:
        values = [float(Fraction(v)) for v in text.split(",") if v.strip()]
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad hx list {text!r}") from None
    if len(values) < 3 or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("hx list needs at least three positive values")
    return values


def _offsets(text):
    out = []
    for pair in text.split(";"):
        try:
            a, b = (float(v) for v in pair.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad offset {pair!r}, expected 'x,y'") from None
        out.append((a, b))
    return out


def resolve_script(name):
    """``name`` itself if it exists, else the bundled script of that name."""
    path = Path(name)
    if not path.exists() and (Path(SCRIPTS_DIR) / path.name).exists():
        return Path(SCRIPTS_DIR) / path.name
    return path


def build_parser():
    p = argparse.ArgumentParser(prog="ringsim", description="Run ring-of-devices simulation scripts.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a script until a stop device fires")
    r.add_argument("script")
    r.add_argument("args", nargs="*", help="values for the [1]..[9] macros")
    for axis in ("nx", "ny", "nz"):
        r.add_argument(f"--{axis}", type=int, default=1, help=f"workers along {axis[1]}")
    r.add_argument("--backend", choices=("serial", "threads", "processes"))
    r.add_argument("--outdir", default=".", help="directory for output files")
    r.add_argument("--max-turns", type=int, help="stop after this many turns")
    r.add_argument("--no-elide", action="store_true", help="keep workers for tissue-free blocks")

    c = sub.add_parser("check", help="parse a script, build its ring and echo it")
    c.add_argument("script")
    c.add_argument("args", nargs="*")

    h = sub.add_parser("verify-heat", help="heat equation convergence study on a disc")
    h.add_argument("--ladder", type=_ladder, default=list(harness.HEAT_LADDER),
                   help="comma separated hx values, fractions allowed (1/10,1/15,...)")
    h.add_argument("--offsets", type=_offsets, default=list(harness.HEAT_OFFSETS),
                   help="centre offsets in units of hx, 'x,y;x,y;...'")
    h.add_argument("--T", type=float, default=0.2)
    h.add_argument("--table", help="prefix for two-column hx/error tables")

    z = sub.add_parser("verify-zfk", help="bidomain plane wave convergence study")
    z.add_argument("--ladder", type=_ladder, default=list(harness.ZFK_LADDER))
    z.add_argument("--theta", type=float, default=0.0, help="propagation angle to the fibres")
    z.add_argument("--tolerance", type=float, default=1e-8, help="elliptic residual tolerance")
    z.add_argument("--outdir", default=".")
    z.add_argument("--table", help="prefix for two-column hx/error tables")
    return p


def _judge(report, bands, table, out):
    print(report.summary(), file=out)
    if table:
        for norm in ("linf", "l2"):
            Path(f"{table}_{norm}.dat").write_text(report.table(norm))
    ok = report.monotone()
    if not ok:
        print("errors are not monotone in hx", file=out)
    for norm, (target, tol) in bands.items():
        s = report.slopes[norm]
        good = abs(s - target) <= tol
        ok &= good
        print(f"{norm} slope {s:.4f} {'within' if good else 'outside'} {target} +/- {tol}", file=out)
    return OK if ok else CHECK_FAILED


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return OK if e.code == 0 else ERROR
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(a.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    from . import sim
    try:
        if a.verb == "run":
            res = sim.run_script(resolve_script(a.script), a.args, (a.nx, a.ny, a.nz), a.backend, a.outdir,
                                 elide=not a.no_elide, max_turns=a.max_turns, stdout=out)
            rep = res.report
            log.info("%d turns, %.3f s wall, %.3g s per step", rep.turns, rep.wall, rep.wall_per_step)
            for path in rep.outputs:
                log.info("wrote %s", path)
            return OK
        if a.verb == "check":
            parsed, devices = sim.check_script(resolve_script(a.script), a.args)
            print(parsed.echo(), end="", file=out)
            print(echo_ring(devices), file=out)
            return OK
        if a.verb == "verify-heat":
            rep = harness.verify_heat(a.ladder, a.offsets, a.T)
            return _judge(rep, HEAT_BANDS, a.table, out)
        if a.verb == "verify-zfk":
            rep = harness.verify_zfk(a.ladder, a.theta, a.tolerance, a.outdir)
            return _judge(rep, ZFK_BANDS, a.table, out)
    except (ScriptError, DeviceError, FileNotFoundError, ValueError, RuntimeError) as e:
        print(f"ringsim: error: {e}", file=sys.stderr)
        return ERROR
    return ERROR


if __name__ == "__main__":
    sys.exit(main())
