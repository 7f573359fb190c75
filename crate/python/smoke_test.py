"""Smoke test for the Python bindings. Run directly or under pytest.

Build first:  pip install --no-build-isolation -e crates/python
"""

import json
import math
from pathlib import Path

import numpy as np

import springslide_py as ss

DATA = Path(__file__).resolve().parent.parent / "data"


def test_two_link_eigenvalues():
    for deg in (10, 45, 89, 120):
        t2 = math.radians(deg)
        k = np.array(ss.stiffness_2r(0.0, t2))
        numeric = np.linalg.eigvalsh(0.5 * (k + k.T))
        closed = ss.stiffness_2r_eigenvalues(t2)
        assert np.allclose(numeric, closed, rtol=1e-9), (deg, numeric, closed)


def test_sliding_round_trip():
    mu, n = 0.5, (0.0, 1.0)
    force = (0.5 * 2.0, 2.0)
    k = [[100.0, 20.0], [20.0, 150.0]]
    pa, null = ss.inverse_sliding(mu, force, n, k, 1.0)
    out = ss.forward_sliding(mu, force, n, k, pa)
    assert out["sliding"] and abs(out["lambda"] - 1.0) < 1e-9
    moved = ss.forward_sliding(mu, force, n, k, (pa[0] + null[0][0], pa[1] + null[0][1]))
    assert np.allclose(moved["pf_dot"], out["pf_dot"], atol=1e-10)


def test_plan_and_execute():
    task = ss.Task.load(str(DATA / "regrasp_task.json"))
    spec = (DATA / "regrasp_spec.json").read_text()
    plan = ss.plan(task, spec)
    assert 5.0 < plan.t21 < plan.t22 < 20.0
    trace, deviation = plan.simulate(dt=1e-3, sample_period=0.01)
    assert len(trace) == 2000
    assert max(deviation) < 1e-3, deviation
    assert min(trace.margins) >= 0.0
    # the plan JSON is itself a motion
    again = ss.simulate(task, plan.to_json(), dt=1e-3)
    assert len(again) == 20000
    assert np.allclose(again.fingertips[-1], trace.fingertips[-1], atol=1e-12)


def test_trapezoid_slides():
    task = ss.Task.trapezoid()
    trace = ss.simulate(task, (DATA / "trapezoid_motion.json").read_text())
    assert trace.modes[-1] == ["sliding", "sliding"]
    assert [t["finger"] for t in trace.transitions] == [0, 1]


def test_robustness_and_errors():
    task = ss.Task.regrasp()
    r = ss.robustness(task, [0.0, 0.0, 3.0])
    assert r["feasible"] and r["exact"] and r["max_epsilon"] > 0
    bad = ss.robustness(task, [0.0, 0.0, 30.0], eps=0.1)
    assert not bad["feasible"]
    try:
        ss.Task.from_json('{"mu": 0.3,')
    except ValueError as e:
        assert "line 1" in str(e)
    else:
        raise AssertionError("malformed JSON must raise")


def test_feasibility_map():
    task = ss.Task.regrasp()
    cells = ss.fcmap(task, (-1.0, -1.0), (0.05, 0.15), (0.05, 0.15), 0.01)
    assert len(cells) == 121
    assert any(c[2] for c in cells)
    xi = ss.xi_star(task, (-1.0, -1.0), (0.05, 0.15), (0.05, 0.15), 0.01)
    assert all(m >= 0.0 for _, _, m in xi)


def test_short_fit():
    cfg = json.loads((DATA / "ident_config.json").read_text())
    cfg["synthetic"]["drag"].update(duration=1.0, displacement=[0.0, -0.01])
    cfg["max_iterations"] = 20
    result = ss.fit(json.dumps(cfg), base_dir=str(DATA))
    assert result["residual"] <= result["initial_residual"]
    assert result["params"]["mu"] > 0.0


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
