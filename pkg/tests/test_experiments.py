import csv
import io
import math

import numpy as np
import pytest

from slowfast.config import RunConfig
from slowfast.experiments import (Check, ExperimentReport, Table, run_convergence,
                                  run_khasminskii, run_mixing, run_moments, run_simulation,
                                  run_validate)

SMALL = {"paths": 8, "bootstrap": 100, "epsilons": [0.1, 0.01]}


def small(model="cubic-gl", solver=None, **exp):
    return RunConfig().replace(model={"name": model}, solver=dict({"T": 0.2}, **(solver or {})),
                               experiment=dict(SMALL, **exp))


def test_table_csv_is_rfc4180():
    t = Table(["name", "value", "flag"], [["a,b", 0.1, True], ['say "x"', 1e-300, False]])
    text = t.to_csv()
    assert text.endswith("\r\n")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["name", "value", "flag"]
    assert rows[1] == ["a,b", "0.1", "true"]
    assert rows[2] == ['say "x"', "1e-300", "false"]
    assert float(rows[2][1]) == 1e-300


def test_check_names_both_sides():
    c = Check("x", "a <= b", 1.0, 2.0, True)
    assert "lhs=1" in c.line() and "rhs=2" in c.line() and "a <= b" in c.line()


def test_report_round_trip():
    rep = run_mixing(small("linear", mixing_pairs=20))
    back = ExperimentReport.from_json(rep.to_json())
    assert back.to_dict() == ExperimentReport.from_json(back.to_json()).to_dict()
    assert back.checks == rep.checks
    assert back.tables["distance"].to_csv() == rep.tables["distance"].to_csv()
    assert back.config_digest == RunConfig.from_dict(back.config).digest()


def test_linear_mixing_report_uses_closed_form():
    cfg = small("linear", mixing_pairs=20).replace(noise={"f_fast": 0.0, "g_fast": 0.0})
    rep = run_mixing(cfg)
    names = [c.name for c in rep.checks]
    assert "mixing_closed_form" in names and rep.passed
    assert rep.results["closed_form_rate"] == pytest.approx(100 + 2 * math.pi ** 2 + 1)


def test_moments_of_deterministic_zero_state_are_zero():
    rep = run_moments(small("deterministic-cubic", x0="zero", y0="zero",
                            moment_epsilons=[1.0, 0.1]))
    for d in rep.results["slow"].values():
        assert d["moment"] == [0.0, 0.0]
    assert rep.passed


def test_y_independent_drift_gives_eps_free_errors():
    cfg = small(drift="auto").replace(model={"overrides": {"slow_coupling": 0.0}})
    rep = run_convergence(cfg)
    assert rep.results["drift"]["source"] == "pointwise"
    assert max(rep.results["medians"]) < 1e-10


def test_convergence_report_fields():
    rep = run_convergence(small("linear"))
    res = rep.results
    assert res["drift"]["source"] == "exact"
    for pr in res["exceedance"].values():
        assert all(0 <= p <= 1 for p in pr)
    rows = rep.tables["errors"].rows
    assert len(rows) == 2 * 8
    assert all(v > 0 for k, v in rep.timings.items() if k.endswith("_s"))
    # wall times never enter the tables
    assert not any("time" in h and "s" == h[-1:] for h in rep.tables["summary"].header)


def test_workers_do_not_change_results():
    cfg = small("cubic-gl", cache_T_avg=1.0, cache_M_ens=4, cache_q=0.5)
    a = run_convergence(cfg, workers=1)
    b = run_convergence(cfg, workers=2)
    for name in a.tables:
        assert a.tables[name].to_csv() == b.tables[name].to_csv()


def test_eps_grid_must_decrease():
    with pytest.raises(ValueError, match="decreasing"):
        run_convergence(small(epsilons=[0.01, 0.1]))
    with pytest.raises(ValueError):
        run_khasminskii(small(khasminskii_epsilons=[1.0, 0.1]))


def test_blow_up_dominated_flag():
    cfg = small(solver={"truncation_radius": 1.5, "T": 0.5}).replace(noise={"f_slow": 3.0})
    rep = run_simulation(cfg)
    assert rep.blow_up_dominated


def test_validate_report_lists_every_item():
    rep = run_validate(RunConfig(), sample_budget=2000)
    assert rep.passed
    assert len(rep.tables["assumptions"].rows) == len(rep.results["items"])
