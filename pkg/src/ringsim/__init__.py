"""Scripted ring-of-devices simulator for reaction-diffusion models."""
from .grid import Domain, Grid, GridDims, make_domain, read_bbg
from .script import ScriptError, load_script, parse_script
from .sim import run_script, run_text

__version__ = "0.1.0"

__all__ = ["Domain", "Grid", "GridDims", "make_domain", "read_bbg", "ScriptError",
           "load_script", "parse_script", "run_script", "run_text"]
