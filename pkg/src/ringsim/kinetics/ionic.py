"""Ionic-format models and the tabulated Rush-Larsen integrator.

The state splits into gates (scalar two-state variables with rates
alpha(V), beta(V)), Markov chains (probability vectors with generator
A = A_V(V) + A_Ca(Ca) + R(V, Ca)) and other variables integrated by Euler.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .models import ModelError
from .solvers import apply_transition, gate_coefficients, transition_matrix

log = logging.getLogger(__name__)


@dataclass
class Gate:
    index: int
    rates: object  # (V, params) -> (alpha, beta)


@dataclass
class MarkovChain:
    """Probability block ``indices`` with generator split into univariate
    parts ``[(control, builder)]`` and an optional small remainder
    ``builder(V, Ca, params)`` integrated by Euler."""

    indices: tuple
    parts: list
    remainder: object = None

    @property
    def size(self):
        return len(self.indices)


@dataclass
class IonicModel:
    name: str
    variables: tuple
    defaults: dict
    gates: list = field(default_factory=list)
    chains: list = field(default_factory=list)
    other: object = None  # (state, params) -> {index: derivative}
    v_index: int = 0
    ca_index: int | None = None

    @property
    def dim(self):
        return len(self.variables)

    def resolve(self, given):
        unknown = set(given) - set(self.defaults)
        if unknown:
            raise ModelError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        params = dict(self.defaults)
        params.update(given)
        return params

    def generator(self, V, Ca, params):
        """Full generator of every chain (for unsplit reference solves)."""
        out = []
        for ch in self.chains:
            A = 0.0
            for control, build in ch.parts:
                A = A + build(V if control == "V" else Ca, params)
            if ch.remainder is not None:
                A = A + ch.remainder(V, Ca, params)
            out.append(A)
        return out


IONIC = {}


def register_ionic(model):
    IONIC[model.name] = model
    return model


def get_ionic(name):
    try:
        return IONIC[name]
    except KeyError:
        raise ModelError(f"unknown ionic model {name!r}; known: {sorted(IONIC)}") from None


# --- tabulation -------------------------------------------------------------

class RateTable:
    """Gate coefficients and chain transition matrices on a uniform grid of
    one control variable, linearly interpolated between nodes."""

    def __init__(self, lo=-200.0, hi=200.0, step=0.01):
        if step <= 0 or hi <= lo:
            raise ModelError(f"bad table range [{lo}, {hi}] step {step}")
        self.lo, self.hi, self.step = float(lo), float(hi), float(step)
        self.n = int(round((hi - lo) / step)) + 1
        self.nodes = self.lo + self.step * np.arange(self.n)
        self.entries = []

    def add(self, values):
        """Tabulate ``values`` (shape ``(n, ...)``); returns its slot."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n:
            raise ModelError("table entry has the wrong length")
        if not np.all(np.isfinite(values)):
            raise ModelError("non-finite value in rate table")
        self.entries.append(values)
        return len(self.entries) - 1

    def locate(self, c):
        c = np.asarray(c, dtype=float)
        if np.any(c < self.lo) or np.any(c > self.hi) or not np.all(np.isfinite(c)):
            bad = c[(c < self.lo) | (c > self.hi) | ~np.isfinite(c)]
            raise ModelError(f"control value {float(bad.flat[0])} outside table [{self.lo}, {self.hi}]")
        pos = (c - self.lo) / self.step
        near = np.rint(pos)
        snap = np.abs(pos - near) < 1e-9
        i = np.where(snap, near, np.floor(pos)).astype(np.intp)
        i = np.minimum(i, self.n - 1)
        frac = np.where(snap, 0.0, pos - i)
        upper = np.minimum(i + 1, self.n - 1)
        return i, upper, frac

    def lookup(self, slot, c, where=None):
        i, j, frac = self.locate(c) if where is None else where
        tab = self.entries[slot]
        a, b = tab[i], tab[j]
        f = frac.reshape(frac.shape + (1,) * (tab.ndim - 1))
        return np.where(f == 0.0, a, a + f * (b - a))


_TABLES = {}


def build_rate_tables(model, ht, params=None, lo=-200.0, hi=200.0, step=0.01, ca_range=(0.0, 0.01, 1e-6)):
    """Tables for every gate and univariate chain part of ``model``;
    cached on (model, ht, ranges, parameters)."""
    params = model.resolve(params or {})
    key = (model.name, float(ht), lo, hi, step, ca_range, tuple(sorted(params.items())))
    if key in _TABLES:
        return _TABLES[key]
    vt = RateTable(lo, hi, step)
    ct = RateTable(*ca_range) if any(c == "Ca" for ch in model.chains for c, _ in ch.parts) else None
    gate_slots = []
    for g in model.gates:
        alpha, beta = g.rates(vt.nodes, params)
        yinf, decay = gate_coefficients(np.broadcast_to(alpha, vt.nodes.shape),
                                        np.broadcast_to(beta, vt.nodes.shape), ht)
        gate_slots.append((vt.add(yinf), vt.add(decay)))
    chain_slots = []
    for ch in model.chains:
        slots = []
        for control, build in ch.parts:
            table = vt if control == "V" else ct
            A = build(table.nodes, params)
            slots.append(table.add(transition_matrix(A, ht)))
        chain_slots.append(slots)
    tables = {"V": vt, "Ca": ct, "gates": gate_slots, "chains": chain_slots, "ht": float(ht)}
    _TABLES[key] = tables
    return tables


def clear_table_cache():
    _TABLES.clear()


def rushlarsen_step(model, state, ht, params=None, tables=None):
    """One step of the ionic integrator on per-point state arrays.

    Gates: scalar Rush-Larsen.  Chains: univariate parts by matrix
    Rush-Larsen in order (V part first, then Ca), remainder by Euler.
    Other variables: Euler with right-hand sides from the incoming state.
    With ``tables=None`` everything is computed directly.
    """
    params = model.resolve(params or {})
    state = [np.asarray(s, dtype=float) for s in state]
    V = state[model.v_index]
    Ca = state[model.ca_index] if model.ca_index is not None else None
    derivs = model.other(state, params) if model.other is not None else {}
    new = list(state)
    if tables is not None and tables["ht"] != float(ht):
        raise ModelError("rate tables were built for a different time step")
    vwhere = tables["V"].locate(V) if tables is not None else None
    cwhere = tables["Ca"].locate(Ca) if tables is not None and tables["Ca"] is not None else None

    for k, g in enumerate(model.gates):
        y = state[g.index]
        if tables is None:
            alpha, beta = g.rates(V, params)
            yinf, decay = gate_coefficients(alpha, beta, ht)
        else:
            si, sd = tables["gates"][k]
            yinf = tables["V"].lookup(si, V, vwhere)
            decay = tables["V"].lookup(sd, V, vwhere)
        new[g.index] = yinf + (y - yinf) * decay

    for k, ch in enumerate(model.chains):
        u = np.stack([state[i] for i in ch.indices])
        for p, (control, build) in enumerate(ch.parts):
            c = V if control == "V" else Ca
            if tables is None:
                T = transition_matrix(build(c, params), ht)
            else:
                table = tables["V"] if control == "V" else tables["Ca"]
                T = table.lookup(tables["chains"][k][p], c, vwhere if control == "V" else cwhere)
            u = apply_transition(T, u)
        if ch.remainder is not None:
            R = np.asarray(ch.remainder(V, Ca, params), dtype=float)
            du = np.einsum("pij,jp->ip", R, u) if R.ndim == 3 else R @ u
            u = u + ht * du
        for row, i in enumerate(ch.indices):
            new[i] = u[row]

    for i, d in derivs.items():
        if not np.all(np.isfinite(d)):
            raise ModelError(f"{model.name}: non-finite derivative")
        new[i] = state[i] + ht * d
    return new


# --- Hodgkin-Huxley exemplars -------------------------------------------------

def vtrap(x, y):
    """``x / (1 - exp(-x/y))`` with its removable singularity at x = 0."""
    x = np.asarray(x, dtype=float)
    r = x / y
    small = np.abs(r) < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        full = x / -np.expm1(-r)
    series = y * (1.0 + r / 2.0)
    out = np.where(small, series, full)
    return float(out) if out.ndim == 0 else out


def hh_m(V, p):
    return 0.1 * vtrap(V + 40.0, 10.0), 4.0 * np.exp(-(V + 65.0) / 18.0)


def hh_h(V, p):
    return 0.07 * np.exp(-(V + 65.0) / 20.0), 1.0 / (1.0 + np.exp(-(V + 35.0) / 10.0))


def hh_n(V, p):
    return 0.01 * vtrap(V + 55.0, 10.0), 0.125 * np.exp(-(V + 65.0) / 80.0)


HH_DEFAULTS = {
    "C": 1.0, "gNa": 120.0, "gK": 36.0, "gL": 0.3,
    "ENa": 50.0, "EK": -77.0, "EL": -54.387, "Iu": 0.0,
}


def _hh_other(s, p):
    V, m, h, n = s
    ion = p["gNa"] * m ** 3 * h * (V - p["ENa"]) + p["gK"] * n ** 4 * (V - p["EK"]) + p["gL"] * (V - p["EL"])
    return {0: (p["Iu"] - ion) / p["C"]}


register_ionic(IonicModel(
    "hh-ionic", ("V", "m", "h", "n"), dict(HH_DEFAULTS),
    gates=[Gate(1, hh_m), Gate(2, hh_h), Gate(3, hh_n)],
    other=_hh_other,
))


def k_chain_generator(V, p=None):
    """Five-state potassium chain: state k has k of 4 subunits open."""
    a, b = hh_n(V, p)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    A = np.zeros(a.shape + (5, 5))
    for k in range(4):
        up = (4 - k) * a
        down = (k + 1) * b
        A[..., k + 1, k] += up
        A[..., k, k] -= up
        A[..., k, k + 1] += down
        A[..., k + 1, k + 1] -= down
    return A


def _hhm_other(s, p):
    V, m, h = s[0], s[1], s[2]
    open_k = s[7]
    ion = p["gNa"] * m ** 3 * h * (V - p["ENa"]) + p["gK"] * open_k * (V - p["EK"]) + p["gL"] * (V - p["EL"])
    return {0: (p["Iu"] - ion) / p["C"]}


register_ionic(IonicModel(
    "hh-markov", ("V", "m", "h", "c0", "c1", "c2", "c3", "o"), dict(HH_DEFAULTS),
    gates=[Gate(1, hh_m), Gate(2, hh_h)],
    chains=[MarkovChain((3, 4, 5, 6, 7), [("V", k_chain_generator)])],
    other=_hhm_other,
))


def steady_gates(model, V, params=None):
    """Gate values ``alpha/(alpha+beta)`` at voltage ``V``."""
    params = model.resolve(params or {})
    out = {}
    for g in model.gates:
        a, b = g.rates(V, params)
        out[g.index] = a / (a + b)
    return out
