"""Cell models in right-hand-side form.

A model maps a list of state arrays (one array per variable, one entry per
grid point) and a parameter dict to the list of time derivatives.
Step-style models advance the state themselves and take ``ht``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ModelError(ValueError):
    pass


@dataclass
class RhsModel:
    name: str
    variables: tuple
    defaults: dict
    rhs: object = None
    step: object = None
    doc: str = ""

    @property
    def dim(self):
        return len(self.variables)

    @property
    def step_style(self):
        return self.step is not None

    def resolve(self, given):
        """Merge given parameters over defaults; unknown names are errors."""
        unknown = set(given) - set(self.defaults)
        if unknown:
            raise ModelError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        params = dict(self.defaults)
        params.update(given)
        missing = [k for k, v in params.items() if v is None]
        if missing:
            raise ModelError(f"{self.name}: missing parameter(s) {missing}")
        return params


MODELS = {}


def register(model):
    MODELS[model.name] = model
    return model


def get_model(name):
    try:
        return MODELS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None


def _fhncub(s, p):
    u, v = s
    du = (u - u * u * u / 3.0 - v) / p["eps"] + p["Iu"]
    dv = p["eps"] * (u + p["bet"] - p["gam"] * v) + p["Iv"]
    return [du, dv]


register(RhsModel(
    "fhncub", ("u", "v"),
    {"eps": 0.3, "bet": 0.71, "gam": 0.5, "Iu": 0.0, "Iv": 0.0},
    rhs=_fhncub,
    doc="cubic FitzHugh-Nagumo",
))


def _fhnbkl(s, p):
    u, v = s
    uth = (v + p["b"]) / p["a"]
    du = u * (1.0 - u) * (u - uth) / p["eps"] + p["Iu"]
    dv = u - v + p["Iv"]
    return [du, dv]


register(RhsModel(
    "fhnbkl", ("u", "v"),
    {"a": 0.8, "b": 0.01, "eps": 0.02, "Iu": 0.0, "Iv": 0.0},
    rhs=_fhnbkl,
    doc="Barkley kinetics",
))


def _zfk(s, p):
    (u,) = s
    return [u * (u - p["alpha"]) * (1.0 - u) + p["Iu"]]


register(RhsModel("zfk", ("u",), {"alpha": 0.13, "Iu": 0.0}, rhs=_zfk,
                  doc="Zeldovich-Frank-Kamenetsky (Nagumo) kinetics"))


def _ezstep(s, p, ht):
    """Semi-implicit Barkley update: the fast variable is advanced by the
    branch-wise implicit rule, the slow one explicitly."""
    u, v = s
    k = ht / p["eps"]
    uth = (v + p["b"]) / p["a"]
    lower = u < uth
    f = k * (1.0 - u) * (u - uth)
    g = k * u * (u - uth)
    with np.errstate(divide="ignore", invalid="ignore"):
        new_u = np.where(lower, u / (1.0 - f), (u + g) / (1.0 + g))
    new_v = v + ht * (u - v)
    return [new_u, new_v]


register(RhsModel("ezstep", ("u", "v"), {"a": 0.8, "b": 0.01, "eps": 0.02},
                  step=_ezstep, doc="Barkley kinetics, semi-implicit step"))


@dataclass
class LinearModel:
    """``y' = k*y`` test model (the stiffness and linear-accuracy checks)."""

    k: float = -1.0
    name: str = "linear"
    variables: tuple = ("y",)
    defaults: dict = field(default_factory=dict)
    step: object = None

    @property
    def dim(self):
        return 1

    @property
    def step_style(self):
        return False

    def rhs(self, s, p):
        return [self.k * s[0]]

    def resolve(self, given):
        return dict(given)
