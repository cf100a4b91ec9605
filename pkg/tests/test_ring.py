import numpy as np
import pytest

from ringsim.ring import DeviceError, default_window
from ringsim.grid import GridDims
from ringsim.sim import run_text, check_script


def run(body, state="state xmax=6 ymax=5 vmax=2;", defs="", **kw):
    text = f"{defs}\n{state}\n{body}\nend;\n"
    return run_text(text, **kw)


@pytest.mark.parametrize("dims, lo, hi", [
    ((10, 8, 1), (1, 1, 0), (8, 6, 0)),
    ((2, 5, 3), (0, 1, 1), (1, 3, 1)),
])
def test_default_window(dims, lo, hi):
    assert default_window(GridDims(*dims)) == (lo, hi)


def test_turn_order_and_stop_semantics():
    res = run("k_func nowhere=1 pgm={n=n+1; done=ge(t,4)};\nstop when=done;\n"
              "k_func nowhere=1 pgm={after=after+1};",
              defs="def real n; def real done; def real after;")
    rep = res.report
    # stop fires at t=4 but the rest of that turn still runs
    assert rep.turns == 5 and rep.t == 5
    assert rep.env["n"] == 5 and rep.env["after"] == 5


def test_when_is_sampled_at_fire_time():
    res = run("k_func nowhere=1 pgm={go=eq(t,2)};\nk_func when=go nowhere=1 pgm={hits=hits+1};\n"
              "k_func nowhere=1 pgm={go=1};",
              defs="def real go; def real hits;", max_turns=4)
    # turn 0: go=0 then 1; turn 1: go reset to 0 before the device; turn 2: fires
    assert res.report.env["hits"] == 1


def test_kfunc_points_and_window():
    res = run("k_func x0=2 x1=3 pgm={u0=x+10*y; u1=u0*2};", max_turns=1)
    s = res.state
    assert s[0, 0, 2, 3] == 23.0 and s[1, 0, 2, 3] == 46.0
    assert s[0, 0, 2, 1] == 0.0 and s[0, 0, 0, 2] == 0.0


def test_reduce_and_poincare():
    body = ("k_func pgm={u0=x+t};\nreduce operation=max result=m;\n"
            "k_poincare nowhere=1 sign=1 pgm={cross=m-6.5; hit=t};")
    res = run(body, defs="def real m; def real cross; def real hit;", max_turns=5)
    env = res.report.env
    assert env["m"] == 4 + 4
    assert env["hit"] == 3.0 and env["cross"] == 0.0


def test_tab_interpolation(tmp_path):
    (tmp_path / "d.dat").write_text("0 0 10\n1 2 20\n")
    res = run_text("state xmax=5 ymax=5;\nk_func file=d.dat pgm={u0=tab(2, 0.25)};\nend;\n",
                   base_dir=tmp_path, outdir=tmp_path, max_turns=1)
    assert res.state[0, 0, 2, 2] == 12.5


@pytest.mark.parametrize("body, fragment", [
    ("k_func pgm={u0=1} colour=3;", "unknown parameter"),
    ("k_func when=nothing pgm={u0=1};", "not declared"),
    ("k_func x0=4 x1=2 pgm={u0=1};", "window"),
    ("k_func pgm={u5=1};", "exceeds vmax"),
    ("k_func nowhere=1 pgm={u0=1};", "layer assignment"),
    ("k_func nowhere=1 pgm={t=1};", "read-only"),
    ("euler v0=1 v1=0 ode=fhncub;", "empty layer range"),
    ("reduce operation=median result=always;", "unknown operation"),
    ("k_func pgm={u0=1/(x-2)};", "division by zero"),
])
def test_device_errors(body, fragment):
    with pytest.raises(DeviceError, match=fragment):
        run(body, max_turns=1)


def test_graphics_devices_are_inert(caplog):
    res = run("k_paintgl width=10 pgm={red=1};\nk_draw;", max_turns=2)
    assert res.report.turns == 2
    assert not res.state.any()


def test_nowhere_autodeclares(caplog):
    res = run("k_func nowhere=1 pgm={fresh=3};", max_turns=1)
    assert res.report.env["fresh"] == 3.0
    assert "declaring" in caplog.text


def test_check_sample_listing(scripts_dir):
    _, devices = check_script(scripts_dir / "sample.bbs", ["0.0"])
    assert [d.type for d in devices][:3] == ["k_func", "k_func", "reduce"]
