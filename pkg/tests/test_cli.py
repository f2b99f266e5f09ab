from __future__ import annotations

import json

import numpy as np
import pytest

from funnel_select.cli import main
from funnel_select.config import ConfigError, build_config, load_config
from funnel_select.funnel import unroll
from funnel_select.functionals import Enumeration, TruncationBudget
from funnel_select.paths import TimeGrid, path_from_csv
from funnel_select.problems import random_synthetic_funnel, SqrtAbsRule
from funnel_select.runner import emit_plot_data, run
from funnel_select.selection import reduce


def test_defaults_validate():
    cfg = build_config()
    assert cfg.problem == "clairaut" and cfg.grid.delta == 0.25 and cfg.phi.family == "sigmoids"


@pytest.mark.parametrize("data,field", [
    ({"grid": {"delta": 0.0}}, "grid.delta"),
    ({"grid": {"delta": -1.0}}, "grid.delta"),
    ({"reduction": {"eps_singleton": 0}}, "reduction.eps_singleton"),
    ({"phi": {"family": "wavelets"}}, "phi.family"),
    ({"problem": "lorenz"}, "problem"),
    ({"grid": {"bogus": 1}}, "grid.bogus"),
])
def test_invalid_config_names_field(data, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        build_config(data)


def test_tail_budget_must_cover_lambdas():
    with pytest.raises(ConfigError, match="epsilon_tail"):
        build_config({"budget": {"epsilon_tail": 1e-6}})


def test_flags_override_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"problem": "sqrt_abs", "reduction": {"n_max": 7}}))
    cfg = load_config(path, {"reduction": {"n_max": 3}})
    assert cfg.problem == "sqrt_abs" and cfg.reduction.n_max == 3


def test_emit_plot_data(tmp_path):
    g = TimeGrid(0.0, 0.25, 8)
    f = unroll(SqrtAbsRule(), 0.0, [0.0], g)
    enum = Enumeration("bumps")
    out = reduce(f, 30, TruncationBudget.covering(2.0, enum.lambdas), enumeration=enum)
    traj, diam = emit_plot_data(out, tmp_path / "sel.csv")
    assert len(traj.read_text().strip().splitlines()) == g.n_steps + 2  # header + n_steps + 1
    back = path_from_csv(traj.read_text())
    assert back == out.selected
    rows = diam.read_text().strip().splitlines()[1:]
    assert len(rows) == len(out.trace.stages)
    col = [float(r.split(",")[-1]) for r in rows]
    assert col == sorted(col, reverse=True)


def test_emit_plot_data_unwritable(tmp_path):
    _, f = random_synthetic_funnel(0)
    enum = Enumeration(dim=2)
    out = reduce(f, 3, TruncationBudget.covering(f.grid.horizon, enum.lambdas), enumeration=enum)
    with pytest.raises(OSError):
        emit_plot_data(out, tmp_path / "missing" / "x.csv")


def test_run_synthetic_with_reduction_skipped():
    rep = run(build_config({"problem": "synthetic_tree", "reduction": {"n_max": 0}}))
    by_name = {c.name: c for c in rep.checks}
    assert by_name["reduce"].details == {"skipped": "n_max is 0"}
    assert by_name["axioms_S3_S4"].ok and by_name["axioms_S3_S4"].details["nodes"] >= 20
    assert rep.ok


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"grid": {"delta": 0}}))
    assert main(["run", "--config", str(bad)]) == 2
    assert "grid.delta" in capsys.readouterr().err
    assert main(["reduce", "--problem", "sqrt_abs", "--json", "--out-dir", str(tmp_path / "o")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] and report["phases"] == ["reduce"]
    assert (tmp_path / "o" / "report.json").exists()


def test_cli_failing_check_gives_exit_one(capsys):
    # a huge tie band keeps every path, so one stage cannot reach a singleton
    assert main(["reduce", "--problem", "clairaut", "--n-max", "1", "--eps-singleton", "1e-300",
                 "--eta-tie", "100"]) == 1
    assert "FAIL reduce" in capsys.readouterr().out


def test_clairaut_phase_requires_clairaut(capsys):
    assert main(["clairaut", "--problem", "sqrt_abs"]) == 2


def test_report_embeds_config_and_reruns(tmp_path):
    cfg = build_config({"problem": "sqrt_abs", "samples": {"n_triples": 5, "n_nodes": 3}})
    rep = run(cfg, out_dir=tmp_path)
    again = run(build_config(rep.config), out_dir=tmp_path / "2")
    assert rep.to_json() == again.to_json()
    assert np.isfinite(json.loads(rep.to_json())["checks"][0]["worst"])
