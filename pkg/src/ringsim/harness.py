"""Convergence studies against exact solutions.

``verify_heat``: the heat equation on a unit disc with no-flux boundary,
exact solution ``J0(j r) exp(-j^2 t)`` where ``j`` is the first positive
root of ``J0'``.  ``verify_zfk``: a bidomain plane wave with Nagumo
kinetics, run through a generated script.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .diffusion import DiffusionOperator
from .grid import Domain, Grid, GridDims
from .sim import serial_ring, setup_from_text

log = logging.getLogger(__name__)

HEAT_LADDER = (1 / 10, 1 / 15, 1 / 20, 1 / 30)
HEAT_OFFSETS = ((0.0, 0.0), (0.2, 0.2), (0.2, 0.6), (0.6, 0.6))
ZFK_LADDER = (0.5, 0.25, 0.125)
J_ROOT = float(scipy.special.jnp_zeros(0, 1)[0])


@dataclass
class ConvergenceReport:
    """Rows ``(hx, linf, l2, label)`` and log-log least-squares slopes."""

    name: str
    rows: list = field(default_factory=list)

    def add(self, hx, linf, l2, label):
        self.rows.append((float(hx), float(linf), float(l2), label))

    def slope(self, norm):
        col = {"linf": 1, "l2": 2}[norm]
        return fit_slope([r[0] for r in self.rows], [r[col] for r in self.rows])

    @property
    def slopes(self):
        return {"linf": self.slope("linf"), "l2": self.slope("l2")}

    def monotone(self):
        """Errors decrease with hx for every label and both norms."""
        for label in {r[3] for r in self.rows}:
            rows = sorted((r for r in self.rows if r[3] == label), key=lambda r: -r[0])
            for col in (1, 2):
                errs = [r[col] for r in rows]
                if any(b >= a for a, b in zip(errs, errs[1:])):
                    return False
        return True

    def table(self, norm):
        """Two columns ``hx error`` for external plotting."""
        col = {"linf": 1, "l2": 2}[norm]
        return "".join(f"{r[0]:.10g} {r[col]:.10e}\n" for r in self.rows)

    def summary(self):
        lines = [f"{self.name}: {'hx':>10} {'Linf':>12} {'L2':>12}  case"]
        for hx, a, b, label in self.rows:
            lines.append(f"{'':{len(self.name)}}  {hx:10.6f} {a:12.5e} {b:12.5e}  {label}")
        s = self.slopes
        lines.append(f"slopes: Linf {s['linf']:.4f}  L2 {s['l2']:.4f}")
        return "\n".join(lines)


def fit_slope(hs, errs):
    """Least-squares slope of log(err) against log(hx)."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if hs.size < 3 or len(set(hs.tolist())) < 2:
        raise ValueError("a slope fit needs at least three points over two hx values")
    if np.any(errs <= 0) or np.any(hs <= 0):
        raise ValueError("errors and steps must be positive for a log-log fit")
    x, y = np.log(hs), np.log(errs)
    x0 = x - x.mean()
    return float(np.dot(x0, y - y.mean()) / np.dot(x0, x0))


class ErrorNorms:
    """Running L-infinity and time-trapezoid L2 (spatial mean of squares)."""

    def __init__(self):
        self.linf = 0.0
        self.integral = 0.0
        self.prev = None
        self.span = 0.0

    def add(self, err, dt):
        self.linf = max(self.linf, float(np.max(np.abs(err))))
        msq = float(np.mean(err * err))
        if self.prev is not None:
            self.integral += 0.5 * dt * (self.prev + msq)
            self.span += dt
        self.prev = msq

    @property
    def l2(self):
        return math.sqrt(self.integral / self.span) if self.span > 0 else math.sqrt(self.prev or 0.0)


# --- heat test ----------------------------------------------------------------


def disc_domain(hx, offset, radius=1.0):
    """Mask of grid nodes within ``radius`` of a centre displaced by
    ``offset * hx`` from a node; returns (domain, r at every node)."""
    m = int(math.ceil(radius / hx)) + 2
    idx = np.arange(-m, m + 1)
    x = idx * hx - offset[0] * hx
    y = idx * hx - offset[1] * hx
    r = np.sqrt(x[None, :] ** 2 + y[:, None] ** 2)
    mask = (r <= radius * (1 + 1e-12))[None]
    n = idx.size
    return Domain(GridDims(n, n, 1, 2), mask), r[None]


def heat_run(hx, offset, T=0.2, dt_ratio=80.0, preload_exact=False):
    """Errors ``(linf, l2)`` of forward-Euler diffusion against the exact
    solution; ``preload_exact`` replaces the numerical field by the exact
    one at every step (both norms are then zero)."""
    domain, r = disc_domain(hx, offset)
    grid = Grid(domain)
    d = domain.dims
    op = DiffusionOperator(grid, (0, 0, 0), (d.xmax - 1, d.ymax - 1, 0), 1.0, 1.0, hx)
    nsteps = int(round(T * dt_ratio / hx ** 2))
    dt = T / nsteps
    P = op.points
    x, y, z = op.coords
    profile = scipy.special.j0(J_ROOT * r[z, y, x])
    u = grid.flat(0)
    u[P] = profile
    norms = ErrorNorms()
    norms.add(u[P] - profile, dt)
    for k in range(1, nsteps + 1):
        op.diffstep(0, 1, dt)
        exact = profile * math.exp(-J_ROOT ** 2 * k * dt)
        if preload_exact:
            u[P] = exact
        norms.add(u[P] - exact, dt)
    return norms.linf, norms.l2


def verify_heat(ladder=HEAT_LADDER, offsets=HEAT_OFFSETS, T=0.2):
    report = ConvergenceReport("heat")
    for hx in ladder:
        for off in offsets:
            linf, l2 = heat_run(hx, off, T)
            report.add(hx, linf, l2, f"offset {off[0]:g},{off[1]:g}")
            log.info("heat hx=%g offset=%s linf=%.4e l2=%.4e", hx, off, linf, l2)
    return report


# --- bidomain plane wave ------------------------------------------------------

ZFK_PARAMS = dict(L=10.0, T=40.0, alpha=0.13, Dix=2.0, Diy=0.2, Dex=8.0, Dey=2.0, s0=-5.0)


def zfk_constants(theta=0.0, p=ZFK_PARAMS):
    """Effective diffusivity, speed and potential ratio of the plane wave."""
    c2, s2 = math.cos(theta) ** 2, math.sin(theta) ** 2
    di = p["Dix"] * c2 + p["Diy"] * s2
    de = p["Dex"] * c2 + p["Dey"] * s2
    deff = di * de / (di + de)
    return {"Dieff": di, "Deeff": de, "Deff": deff,
            "c": math.sqrt(2 * deff) * (0.5 - p["alpha"]), "ratio": de / (di + de)}


def zfk_exact(xp, yp, t, theta=0.0, p=ZFK_PARAMS):
    k = zfk_constants(theta, p)
    arg = (xp * math.cos(theta) + yp * math.sin(theta) - p["s0"] - k["c"] * t) / math.sqrt(2 * k["Deff"])
    V = 1.0 / (1.0 + np.exp(arg))
    return V, k["ratio"] * V


def zfk_script(hx, theta=0.0, tolerance=1e-8, p=ZFK_PARAMS):
    """Script text for the plane-wave problem at space step ``hx``; returns
    (text, nsteps, ht)."""
    n = int(round(p["L"] / hx))
    if abs(n * hx - p["L"]) > 1e-9:
        raise ValueError(f"hx={hx} does not divide L={p['L']}")
    ht0 = 3.0 * hx * hx / (16.0 * p["Dex"])
    nsteps = int(math.ceil(p["T"] / ht0 - 1e-9))
    ht = p["T"] / nsteps
    k = zfk_constants(theta, p)
    wave = (f"1/(1+exp((((x-1)*hx)*cth+((y-1)*hx)*sth-s0-c*T)/wid))")
    side = "pgm={u[u]=[va]; u[p]=kp*u[u]}"
    text = f"""// bidomain plane wave, generated
def real hx {hx!r}; def real ht {ht!r}; def int nsteps {nsteps};
def real alpha {p['alpha']!r}; def real s0 {p['s0']!r};
def real Dix {p['Dix']!r}; def real Diy {p['Diy']!r}; def real Dex {p['Dex']!r}; def real Dey {p['Dey']!r};
def real cth {math.cos(theta)!r}; def real sth {math.sin(theta)!r};
def real c {k['c']!r}; def real wid {math.sqrt(2 * k['Deff'])!r}; def real kp {k['ratio']!r};
def real tol {tolerance!r};
def int N {n}; def int xil 2; def int xir {n}; def int yil 2; def int yir {n};
state xmax={n + 3} ymax={n + 3} vmax=3;
def str u 0; def str p 1; def str s 2;
def str va {wave};
def str domain x0=xil x1=xir y0=yil y1=yir;
def real T; def real begin; def real end;
k_func name=timing nowhere=1 pgm={{T=t*ht; begin=eq(t,0); end=ge(t,nsteps-1)}};
k_func name=IC when=begin x0=1 x1=N+1 y0=1 y1=N+1 {side};
k_func name=left x0=1 x1=1 y0=1 y1=N+1 {side};
k_func name=right x0=N+1 x1=N+1 y0=1 y1=N+1 {side};
k_func name=bottom x0=2 x1=N y0=1 y1=1 {side};
k_func name=top x0=2 x1=N y0=N+1 y1=N+1 {side};
diff [domain] v0=[u] v1=[s] Dpar=Dex Dtrans=Dey hx=hx;
elliptic [domain] v0=[s] v1=[p] Dpar=Dex+Dix Dtrans=Dey+Diy hx=hx
  tolerance=tol delta=0.5 upper_level=3 vcycles=20 preiter=1 postiter=2 maxiter=1e6 extrapolate=1;
diff [domain] v0=[p] v1=[s] Dpar=Dix Dtrans=Diy hx=hx;
euler [domain] v0=[u] v1=[u] ode=zfk ht=ht par={{alpha=alpha Iu=@[s]}};
stop when=end;
end;
"""
    return text, nsteps, ht


def zfk_run(hx, theta=0.0, tolerance=1e-8, outdir=".", p=ZFK_PARAMS):
    """Errors ``(linf, l2)`` of V over the open square against the exact wave."""
    text, nsteps, ht = zfk_script(hx, theta, tolerance, p)
    ring, ctx = serial_ring(setup_from_text(text, name="zfk"), outdir)
    n = int(round(p["L"] / hx))
    g = ctx.grid
    pts, coords = g.active_points((2, 2, 0), (n, n, 0))
    xp = (coords[0] - 1) * hx
    yp = (coords[1] - 1) * hx
    norms = ErrorNorms()
    norms.add(np.zeros(pts.size), ht)

    def observe(c):
        V, _ = zfk_exact(xp, yp, c.env["t"] * ht, theta, p)
        norms.add(g.flat(0)[pts] - V, ht)

    ring.run(on_turn=observe)
    if ctx.env["t"] != nsteps:
        raise RuntimeError(f"plane-wave run stopped after {ctx.env['t']} of {nsteps} steps")
    return norms.linf, norms.l2


def verify_zfk(ladder=ZFK_LADDER, theta=0.0, tolerance=1e-8, outdir="."):
    report = ConvergenceReport("zfk")
    for hx in ladder:
        linf, l2 = zfk_run(hx, theta, tolerance, outdir)
        report.add(hx, linf, l2, f"theta {theta:g}")
        log.info("zfk hx=%g linf=%.4e l2=%.4e", hx, linf, l2)
    return report
