"""Config validation, run determinism, and output plumbing."""

import json
import math

import pytest
from click.testing import CliRunner

from ratioavg.cli import (
    _blob_hash,
    load_config,
    main,
    run_config,
    validate_config,
)
from ratioavg.oracle import all_passed, format_report, run_oracle_suite
from ratioavg.toy import ToyModel, pflip_exact


def _write_toml(path, text):
    path.write_text(text)
    return str(path)


MINI_EXCHANGE = """
experiment = "ising-exchange"
master_seed = 7
output = "{out}"
[model]
rows = 2
cols = 2
theta_true = 0.4
[kernel]
N = 3
T = 1
proposal_std = 0.3
[run]
iterations = 25
"""

MINI_CHANGEPOINT = """
experiment = "changepoint-rmj"
master_seed = 11
output = "{out}"
[model]
horizon = 10.0
true_heights = [4.0, 14.0]
true_steps = [6.0]
[prior]
max_segments = 5
[kernel]
N = 3
routing = "updown"
[run]
iterations = 30
n_chains = 2
"""

MINI_SSM_SUB = """
experiment = "ssm-csmc"
master_seed = 9
output = "{out}"
[model]
length = 5
prior_lo = 0.05
prior_hi = 50.0
[kernel]
variant = "subsampled"
M = 4
N = 2
proposal_std = 0.3
[run]
iterations = 20
"""


# ---------------------------------------------------------------------------
# validation diagnostics


def test_empty_config_lists_every_required_field():
    diags = validate_config({})
    fields = {d.split(":")[0] for d in diags}
    assert fields == {"experiment", "master_seed", "output"}


def test_unknown_experiment_is_diagnosed():
    diags = validate_config(
        {"experiment": "warp-drive", "master_seed": 1, "output": "x.csv"}
    )
    assert any(d.startswith("experiment:") for d in diags)


def _ssm_base(**kernel):
    return {
        "experiment": "ssm-latent",
        "master_seed": 1,
        "output": "x.csv",
        "model": {"length": 5, "prior_lo": 0.1, "prior_hi": 10.0},
        "kernel": {"M": 4, "T": 1, "N": 2, "proposal_std": 0.3, **kernel},
        "run": {"iterations": 10},
    }


def test_valid_config_has_no_diagnostics():
    assert validate_config(_ssm_base()) == []


def test_zero_estimator_count_is_a_range_diagnostic():
    cfg = _ssm_base(N=0)
    assert any(d.startswith("kernel.N:") for d in validate_config(cfg))


def test_bridge_parameter_without_stages_is_cross_field_diagnostic():
    cfg = _ssm_base(T=0, sweeps_per_stage=2)
    diags = validate_config(cfg)
    assert any(d.startswith("kernel.sweeps_per_stage:") for d in diags)
    # the same knob is fine once stages exist
    cfg_ok = _ssm_base(T=1, sweeps_per_stage=2)
    assert validate_config(cfg_ok) == []


def test_stage_updates_without_stages_diagnosed_for_exchange():
    cfg = {
        "experiment": "ising-exchange",
        "master_seed": 1,
        "output": "x.csv",
        "model": {"rows": 2, "cols": 2, "theta_true": 0.4},
        "kernel": {"N": 2, "T": 0, "proposal_std": 0.3, "updates_per_stage": 2},
        "run": {"iterations": 10},
    }
    diags = validate_config(cfg)
    assert any(d.startswith("kernel.updates_per_stage:") for d in diags)


def _cp_base(**kernel):
    return {
        "experiment": "changepoint-rmj",
        "master_seed": 1,
        "output": "x.csv",
        "model": {"horizon": 10.0, "true_heights": [4.0], "true_steps": []},
        "kernel": {"N": 2, **kernel},
        "run": {"iterations": 10},
    }


def test_dead_routing_weights_fail_the_probe():
    diags = validate_config(_cp_base(routing=[1.0, 1.0]))
    assert any(d.startswith("kernel.routing:") for d in diags)
    diags = validate_config(_cp_base(routing=[0.0, 0.0]))
    assert any(d.startswith("kernel.routing:") for d in diags)


def test_live_routing_weights_pass_the_probe():
    for routing in ("half", "updown", [1.0, 0.0], [0.3, 0.8]):
        assert validate_config(_cp_base(routing=routing)) == []


def test_unknown_keys_are_diagnosed():
    cfg = _ssm_base()
    cfg["kernel"]["bogus"] = 1
    cfg["extra_table"] = {"a": 1}
    diags = validate_config(cfg)
    assert any(d.startswith("kernel.bogus:") for d in diags)
    assert any(d.startswith("extra_table:") for d in diags)


def test_missing_data_file_is_diagnosed(tmp_path):
    cfg = _cp_base()
    cfg["model"] = {"horizon": 10.0, "data_file": str(tmp_path / "absent.txt")}
    diags = validate_config(cfg)
    assert any(d.startswith("model.data_file:") for d in diags)


def test_subsample_count_rejected_for_other_variants():
    cfg = {
        "experiment": "ssm-csmc",
        "master_seed": 1,
        "output": "x.csv",
        "model": {"length": 5, "prior_lo": 0.1, "prior_hi": 10.0},
        "kernel": {"variant": "rao-blackwell", "M": 4, "N": 2,
                   "proposal_std": 0.3},
        "run": {"iterations": 10},
    }
    diags = validate_config(cfg)
    assert any(d.startswith("kernel.N:") for d in diags)


def test_marginal_variant_rejects_tilt_rule():
    cfg = {
        "experiment": "ssm-csmc",
        "master_seed": 1,
        "output": "x.csv",
        "model": {"length": 5, "prior_lo": 0.1, "prior_hi": 10.0},
        "kernel": {"variant": "marginal", "M": 4, "tilt": "midpoint",
                   "proposal_std": 0.3},
        "run": {"iterations": 10},
    }
    diags = validate_config(cfg)
    assert any(d.startswith("kernel.tilt:") for d in diags)


def test_exact_sampler_needs_a_small_grid():
    cfg = {
        "experiment": "ising-exchange",
        "master_seed": 1,
        "output": "x.csv",
        "model": {"rows": 5, "cols": 5, "theta_true": 0.4},
        "kernel": {"N": 2, "T": 0, "proposal_std": 0.3},
        "run": {"iterations": 10},
    }
    diags = validate_config(cfg)
    assert any(d.startswith("model.rows:") for d in diags)


# ---------------------------------------------------------------------------
# the run command


def test_run_rejects_invalid_config_naming_the_field(tmp_path):
    path = _write_toml(
        tmp_path / "bad.toml",
        MINI_EXCHANGE.format(out=tmp_path / "x.csv").replace("N = 3", "N = 0"),
    )
    result = CliRunner().invoke(main, ["run", path])
    assert result.exit_code == 2
    assert "kernel.N" in result.output


def test_validate_command_prints_diagnostics_and_exits_zero(tmp_path):
    path = _write_toml(tmp_path / "empty.toml", "# nothing here\n")
    result = CliRunner().invoke(main, ["validate", path])
    assert result.exit_code == 0
    assert "experiment: required field is missing" in result.output
    good = _write_toml(
        tmp_path / "good.toml", MINI_EXCHANGE.format(out=tmp_path / "x.csv")
    )
    result = CliRunner().invoke(main, ["validate", good])
    assert result.exit_code == 0
    assert result.output.strip() == "ok"


def test_same_config_and_seed_give_identical_bytes(tmp_path):
    cfg = load_config(
        _write_toml(
            tmp_path / "c.toml", MINI_EXCHANGE.format(out=tmp_path / "a.csv")
        )
    )
    run_config(cfg, out=str(tmp_path / "one.csv"))
    run_config(cfg, out=str(tmp_path / "two.csv"))
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()


def test_seed_override_changes_the_draws(tmp_path):
    cfg = load_config(
        _write_toml(
            tmp_path / "c.toml", MINI_EXCHANGE.format(out=tmp_path / "a.csv")
        )
    )
    run_config(cfg, out=str(tmp_path / "one.csv"))
    run_config(cfg, seed=8, out=str(tmp_path / "two.csv"))
    assert (tmp_path / "one.csv").read_bytes() != (tmp_path / "two.csv").read_bytes()


@pytest.mark.parametrize(
    "template", [MINI_EXCHANGE, MINI_CHANGEPOINT, MINI_SSM_SUB]
)
def test_thread_count_never_changes_the_bytes(tmp_path, template):
    cfg = load_config(
        _write_toml(tmp_path / "c.toml", template.format(out=tmp_path / "a.csv"))
    )
    run_config(cfg, threads=1, out=str(tmp_path / "t1.csv"))
    run_config(cfg, threads=8, out=str(tmp_path / "t8.csv"))
    assert (tmp_path / "t1.csv").read_bytes() == (tmp_path / "t8.csv").read_bytes()


def test_manifest_records_the_run(tmp_path):
    cfg = load_config(
        _write_toml(
            tmp_path / "c.toml", MINI_CHANGEPOINT.format(out=tmp_path / "cp.csv")
        )
    )
    manifest = run_config(cfg)
    stored = json.loads((tmp_path / "cp.manifest.json").read_text())
    data = (tmp_path / "cp.csv").read_bytes()
    assert stored["experiment"] == "changepoint-rmj"
    assert stored["master_seed"] == 11
    assert stored["csv_blob_sha1"] == _blob_hash(data) == manifest["csv_blob_sha1"]
    assert stored["rows"] == 60  # 2 chains x 30 iterations, no burn-in
    assert stored["columns"] == ["chain", "iteration", "m", "accepted", "branch"]
    assert stored["config"]["kernel"]["N"] == 3
    assert stored["library_version"]
    assert stored["wall_seconds"] >= 0.0


def test_burn_in_rows_are_dropped_but_indices_kept(tmp_path):
    text = MINI_CHANGEPOINT.format(out=tmp_path / "cp.csv").replace(
        "[run]", "[run]\nburn_in_fraction = 0.5"
    )
    cfg = load_config(_write_toml(tmp_path / "c.toml", text))
    run_config(cfg)
    lines = (tmp_path / "cp.csv").read_text().splitlines()
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "15"
    assert len(lines) - 1 == 30  # 2 chains x 15 recorded iterations


def test_toy_gamma_rows_are_the_exact_table(tmp_path):
    cfg = {
        "experiment": "toy-gamma",
        "master_seed": 1,
        "output": str(tmp_path / "g.csv"),
        "model": {"a_values": [2.0, 5.0], "theta": 0.0},
        "kernel": {"N_values": [1, 4]},
    }
    assert validate_config(cfg) == []
    run_config(cfg)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "a,theta,N,pflip,gamma,relaxation_time"
    assert len(lines) == 1 + 4
    row = lines[2].split(",")  # a=2, N=4
    assert float(row[3]) == pytest.approx(
        pflip_exact(ToyModel(a=2.0), 4), abs=0.0
    )
    # gamma is the relaxation-time ratio against the single-draw kernel
    assert float(row[4]) == pytest.approx(
        pflip_exact(ToyModel(a=2.0), 1) / pflip_exact(ToyModel(a=2.0), 4), rel=1e-12
    )


def test_changepoint_accepts_event_file(tmp_path):
    events = tmp_path / "events.txt"
    events.write_text("1.5\n2.25\n7.75\n")
    cfg = _cp_base()
    cfg["model"] = {"horizon": 10.0, "data_file": str(events)}
    cfg["output"] = str(tmp_path / "cp.csv")
    assert validate_config(cfg) == []
    manifest = run_config(cfg)
    assert manifest["rows"] == 10


# ---------------------------------------------------------------------------
# the oracle suite


def test_oracle_suite_all_pass():
    rows = run_oracle_suite()
    assert all_passed(rows)
    # the control row passes because the broken kernel fails reversibility
    control = [r for r in rows if r.comparison == ">"]
    assert len(control) == 1 and control[0].value > 1e-3
    verified = [r for r in rows if r.comparison == "<="]
    assert len(verified) >= 15
    assert all(r.value <= 1e-8 for r in verified)


def test_oracle_report_is_a_pass_fail_table():
    rows = run_oracle_suite()
    report = format_report(rows)
    lines = report.splitlines()
    assert len(lines) == len(rows) + 1
    assert all(line.startswith(("PASS", "FAIL")) for line in lines[:-1])
    assert lines[-1] == f"{len(rows)}/{len(rows)} checks passed"


def test_oracle_command_writes_report(tmp_path):
    out = tmp_path / "report.csv"
    result = CliRunner().invoke(main, ["oracle", "--out", str(out)])
    assert result.exit_code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "check,value,bound,comparison,passed"
    assert all(line.endswith(",1") for line in lines[1:])
