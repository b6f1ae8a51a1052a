"""Configuration-driven experiment harness.

Experiments are described by a single TOML document and executed with
``ratioavg run CONFIG``; ``ratioavg validate CONFIG`` reports every
schema and cross-field problem without running anything, and
``ratioavg oracle`` runs the exact finite-fixture verification suite.

Config layout (TOML)::

    experiment = "toy-gamma"        # which driver to run
    master_seed = 12345             # root of the deterministic stream tree
    output = "results/gamma.csv"    # CSV destination

    [model]    # experiment-specific model parameters
    [kernel]   # kernel parameters (N, T, M, routing, ...)
    [run]      # iterations, burn_in_fraction, n_chains

Every run writes the CSV plus a JSON manifest next to it (same stem,
``.manifest.json``) echoing the config, the effective seed, the library
version, a git-style blob hash of the CSV bytes, and the wall-clock
time. Given the same config and seed the CSV bytes are identical run to
run, and the ``--threads`` flag must not change them: worker pools only
evaluate independent estimators whose results are consumed in index
order, and all file writing is single-threaded.

CSV columns per experiment:

- ``toy-gamma``: a, theta, N, pflip, gamma, relaxation_time — exact
  closed-form values of the two-point model, no sampling involved.
- ``ising-exchange`` / ``ising-pmt``: chain, iteration, theta,
  accepted, branch.
- ``ssm-latent`` / ``ssm-csmc``: chain, iteration, sv2, sw2, accepted,
  branch.
- ``changepoint-rmj``: chain, iteration, m, accepted, branch.
- ``oracle-suite``: check, value, bound, comparison, passed.

``accepted`` is 0/1; ``branch`` is which acceptance route fired ("Q1",
"Q2", "plain", or "off-support"). With ``burn_in_fraction`` set, the
first ``floor(fraction * iterations)`` iterations of each chain are run
but not recorded; ``iteration`` keeps its global index so the first
recorded row shows where burn-in ended.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import click
import numpy as np

from . import __version__
from .core import AnnealingSchedule, OuterProposal, reflected_walk_proposal
from .exchange import exchange_mhaar_step, pmt_init, pmt_step
from .ising import (
    IsingLattice,
    ising_bridges,
    ising_model,
    ising_synthetic_data,
)
from .latent import mhaar_latent_step
from .oracle import all_passed, format_report, run_oracle_suite
from .rng import StreamSource
from .smc import (
    midpoint_rule,
    mhaar_csmc_rb_step,
    mhaar_csmc_sub_step,
    mwpg_step,
    nonlinear_ssm_model,
    nonlinear_ssm_simulate,
    ssm_latent_bridges,
    ssm_latent_model,
)
from .toy import ToyModel, gamma_reduction, pflip_exact, relaxation_time
from .transdim import (
    ChangepointPrior,
    ChangepointState,
    changepoint_jumps,
    changepoint_model,
    half_routing,
    piecewise_poisson_simulate,
    rmj_step,
    updown_routing,
)

EXPERIMENTS = (
    "toy-gamma",
    "ising-exchange",
    "ising-pmt",
    "ssm-latent",
    "ssm-csmc",
    "changepoint-rmj",
    "oracle-suite",
)

# substream ids reserved by the harness: data simulation, then chains
_DATA_STREAM = 0
_CHAIN_BASE = 1
# substream id for interleaved within-model moves, clear of the ids the
# jump kernel hands to its estimators (0 .. N-1)
_WITHIN_MOVE_STREAM = 1_000_000


# ---------------------------------------------------------------------------
# config loading and validation


_MISSING = object()


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _get(cfg: dict, dotted: str):
    cur = cfg
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return _MISSING
        cur = cur[part]
    return cur


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return _is_int(v) or isinstance(v, float)


class _Checker:
    """Collects 'field: message' diagnostics against one config."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.diags: list[str] = []

    def note(self, field: str, message: str) -> None:
        self.diags.append(f"{field}: {message}")

    def require(self, field: str, kind: str, **bounds):
        v = _get(self.cfg, field)
        if v is _MISSING:
            self.note(field, "required field is missing")
            return _MISSING
        return self.check(field, kind, **bounds)

    def optional(self, field: str, kind: str, default=None, **bounds):
        v = _get(self.cfg, field)
        if v is _MISSING:
            return default
        return self.check(field, kind, **bounds)

    def check(self, field: str, kind: str, **bounds):
        v = _get(self.cfg, field)
        if kind == "int":
            if not _is_int(v):
                self.note(field, "must be an integer")
                return _MISSING
        elif kind == "float":
            if not _is_num(v):
                self.note(field, "must be a number")
                return _MISSING
            v = float(v)
        elif kind == "str":
            if not isinstance(v, str):
                self.note(field, "must be a string")
                return _MISSING
        elif kind == "list":
            if not isinstance(v, list) or not v:
                self.note(field, "must be a non-empty array")
                return _MISSING
        else:  # pragma: no cover - internal misuse
            raise ValueError(kind)
        lo = bounds.get("lo")
        if lo is not None and v < lo:
            self.note(field, f"must be >= {lo}")
            return _MISSING
        gt = bounds.get("gt")
        if gt is not None and v <= gt:
            self.note(field, f"must be > {gt}")
            return _MISSING
        hi = bounds.get("hi")
        if hi is not None and v > hi:
            self.note(field, f"must be <= {hi}")
            return _MISSING
        lt = bounds.get("lt")
        if lt is not None and v >= lt:
            self.note(field, f"must be < {lt}")
            return _MISSING
        choices = bounds.get("choices")
        if choices is not None and v not in choices:
            self.note(field, f"must be one of {', '.join(map(str, choices))}")
            return _MISSING
        return v

    def forbid_unknown(self, table: str, allowed: set[str]) -> None:
        section = self.cfg.get(table) if table else self.cfg
        if not isinstance(section, dict):
            return
        for key in section:
            if key not in allowed:
                dotted = f"{table}.{key}" if table else key
                self.note(dotted, "unknown key")


def _check_run_table(c: _Checker) -> None:
    c.require("run.iterations", "int", lo=1)
    c.optional("run.burn_in_fraction", "float", lo=0.0, lt=1.0)
    c.optional("run.n_chains", "int", lo=1)
    c.forbid_unknown("run", {"iterations", "burn_in_fraction", "n_chains"})


def _check_positive_list(c: _Checker, field: str, kind: str, lo=None, gt=None):
    vals = c.require(field, "list")
    if vals is _MISSING:
        return
    for i, v in enumerate(vals):
        ok = _is_int(v) if kind == "int" else _is_num(v)
        if not ok:
            c.note(field, f"entry {i} must be {'an integer' if kind == 'int' else 'a number'}")
            return
        if lo is not None and v < lo:
            c.note(field, f"entry {i} must be >= {lo}")
            return
        if gt is not None and v <= gt:
            c.note(field, f"entry {i} must be > {gt}")
            return


def _check_ising_model(c: _Checker) -> None:
    rows = c.require("model.rows", "int", lo=1)
    cols = c.require("model.cols", "int", lo=1)
    theta_max = c.optional("model.theta_max", "float", default=10.0, gt=0.0)
    if theta_max is _MISSING:
        theta_max = 10.0
    c.require("model.theta_true", "float", gt=0.0, hi=theta_max)
    sampler = c.optional("model.sampler", "str", default="exact",
                         choices=("exact", "wolff"))
    c.optional("model.n_wolff", "int", lo=1)
    if sampler != "wolff" and _get(c.cfg, "model.n_wolff") is not _MISSING:
        c.note("model.n_wolff", "only meaningful with sampler = 'wolff'")
    if (
        sampler == "exact"
        and rows is not _MISSING
        and cols is not _MISSING
        and rows * cols > 20
    ):
        c.note("model.rows", "exact likelihood draws need rows * cols <= 20; "
                             "use sampler = 'wolff' for larger grids")
    c.forbid_unknown(
        "model", {"rows", "cols", "theta_true", "theta_max", "sampler", "n_wolff"}
    )


def _check_ssm_model(c: _Checker) -> None:
    c.require("model.length", "int", lo=1)
    c.optional("model.sv2_true", "float", gt=0.0)
    c.optional("model.sw2_true", "float", gt=0.0)
    lo = c.require("model.prior_lo", "float", gt=0.0)
    hi = c.require("model.prior_hi", "float", gt=0.0)
    if lo is not _MISSING and hi is not _MISSING and hi <= lo:
        c.note("model.prior_hi", "must be > model.prior_lo")
    c.forbid_unknown(
        "model", {"length", "sv2_true", "sw2_true", "prior_lo", "prior_hi"}
    )


def _routing_grid_live(up, down) -> bool:
    # A model-pair direction is usable when at least one orientation
    # offers the forward presentation and the other leaves room for the
    # paired reverse presentation.
    return (up > 0.0 and down < 1.0) or (down > 0.0 and up < 1.0)


def _check_routing(c: _Checker, max_segments: int) -> None:
    v = _get(c.cfg, "kernel.routing")
    if v is _MISSING:
        return  # defaults to "half"
    if isinstance(v, str):
        if v not in ("half", "updown"):
            c.note("kernel.routing", "must be 'half', 'updown', or a [up, down] pair")
        return
    if not (isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v)):
        c.note("kernel.routing", "must be 'half', 'updown', or a [up, down] pair")
        return
    up, down = float(v[0]), float(v[1])
    if not (0.0 <= up <= 1.0 and 0.0 <= down <= 1.0):
        c.note("kernel.routing", "presentation weights must lie in [0, 1]")
        return
    # numerical probe over every adjacent model pair the chain can visit
    rule = _pair_routing(up, down)
    for m in range(1, max(2, max_segments)):
        b_up, b_down = rule(m, m + 1), rule(m + 1, m)
        if not _routing_grid_live(b_up, b_down):
            c.note(
                "kernel.routing",
                f"no live route between {m} and {m + 1} segments: "
                f"weights ({b_up:g}, {b_down:g}) never pair the two presentations",
            )
            return


def _pair_routing(up: float, down: float):
    def rule(m, m_new):
        return up if m_new > m else down

    return rule


def validate_config(cfg: dict) -> list[str]:
    """Schema and cross-field checks; returns 'field: message' strings."""
    c = _Checker(cfg)
    exp = c.require("experiment", "str", choices=EXPERIMENTS)
    c.require("master_seed", "int", lo=0)
    c.require("output", "str")
    top_allowed = {"experiment", "master_seed", "output", "model", "kernel", "run"}
    if exp == "changepoint-rmj":
        top_allowed.add("prior")
    c.forbid_unknown("", top_allowed)
    if exp is _MISSING or exp not in EXPERIMENTS:
        return c.diags

    if exp == "toy-gamma":
        _check_positive_list(c, "model.a_values", "float", gt=0.0)
        c.optional("model.theta", "float", lo=0.0, lt=1.0)
        _check_positive_list(c, "kernel.N_values", "int", lo=1)
        c.forbid_unknown("model", {"a_values", "theta"})
        c.forbid_unknown("kernel", {"N_values"})
        c.forbid_unknown("run", set())  # exact table; nothing is sampled

    elif exp == "ising-exchange":
        _check_ising_model(c)
        c.require("kernel.N", "int", lo=1)
        T = c.require("kernel.T", "int", lo=0)
        c.require("kernel.proposal_std", "float", gt=0.0)
        c.optional("kernel.updates_per_stage", "int", lo=1)
        if T == 0 and _get(cfg, "kernel.updates_per_stage") is not _MISSING:
            c.note(
                "kernel.updates_per_stage",
                "bridge-kernel parameter requires at least one "
                "intermediate stage (kernel.T >= 1)",
            )
        c.forbid_unknown("kernel", {"N", "T", "proposal_std", "updates_per_stage"})
        _check_run_table(c)

    elif exp == "ising-pmt":
        _check_ising_model(c)
        c.require("kernel.N", "int", lo=1)
        c.require("kernel.proposal_std", "float", gt=0.0)
        c.optional("kernel.theta_ref", "float", gt=0.0)
        if _get(cfg, "kernel.T") is not _MISSING:
            c.note("kernel.T", "the product-estimator kernel has no annealing stages")
        c.forbid_unknown("kernel", {"N", "proposal_std", "theta_ref", "T"})
        _check_run_table(c)

    elif exp == "ssm-latent":
        _check_ssm_model(c)
        c.require("kernel.M", "int", lo=2)
        T = c.require("kernel.T", "int", lo=0)
        c.require("kernel.N", "int", lo=1)
        c.require("kernel.proposal_std", "float", gt=0.0)
        c.optional("kernel.sweeps_per_stage", "int", lo=1)
        if T == 0 and _get(cfg, "kernel.sweeps_per_stage") is not _MISSING:
            c.note(
                "kernel.sweeps_per_stage",
                "bridge-kernel parameter requires at least one "
                "intermediate stage (kernel.T >= 1)",
            )
        c.forbid_unknown(
            "kernel", {"M", "T", "N", "proposal_std", "sweeps_per_stage"}
        )
        _check_run_table(c)

    elif exp == "ssm-csmc":
        _check_ssm_model(c)
        variant = c.optional(
            "kernel.variant", "str", default="subsampled",
            choices=("subsampled", "rao-blackwell", "marginal"),
        )
        c.require("kernel.M", "int", lo=2)
        c.require("kernel.proposal_std", "float", gt=0.0)
        if variant == "subsampled":
            c.require("kernel.N", "int", lo=1)
        elif _get(cfg, "kernel.N") is not _MISSING:
            c.note("kernel.N", "only the subsampled variant draws multiple sweeps")
        c.optional("kernel.tilt", "str", choices=("midpoint", "current", "proposed"))
        if variant == "marginal" and _get(cfg, "kernel.tilt") is not _MISSING:
            c.note("kernel.tilt", "the marginal variant runs no tilted backward pass")
        c.forbid_unknown("kernel", {"variant", "M", "N", "proposal_std", "tilt"})
        _check_run_table(c)

    elif exp == "changepoint-rmj":
        horizon = c.require("model.horizon", "float", gt=0.0)
        has_file = _get(cfg, "model.data_file") is not _MISSING
        has_sim = (
            _get(cfg, "model.true_heights") is not _MISSING
            or _get(cfg, "model.true_steps") is not _MISSING
        )
        if has_file and has_sim:
            c.note("model.data_file", "give either a data file or simulation "
                                      "parameters, not both")
        elif has_file:
            path = c.check("model.data_file", "str")
            if path is not _MISSING and not Path(path).is_file():
                c.note("model.data_file", "file not found")
        elif has_sim:
            _check_positive_list(c, "model.true_heights", "float", gt=0.0)
            steps = _get(cfg, "model.true_steps")
            if steps is _MISSING:
                c.note("model.true_steps", "required field is missing")
            elif not isinstance(steps, list):
                c.note("model.true_steps", "must be an array (may be empty)")
            elif horizon is not _MISSING:
                vals = [float(s) for s in steps if _is_num(s)]
                if len(vals) != len(steps):
                    c.note("model.true_steps", "entries must be numbers")
                elif any(
                    not 0.0 < s < horizon for s in vals
                ) or vals != sorted(vals):
                    c.note("model.true_steps",
                           "must ascend strictly inside (0, horizon)")
                else:
                    h = _get(cfg, "model.true_heights")
                    if isinstance(h, list) and len(h) != len(steps) + 1:
                        c.note("model.true_heights",
                               "need one height per segment "
                               "(len(true_steps) + 1)")
        else:
            c.note("model.data_file", "required field is missing "
                                      "(or give true_heights/true_steps)")
        c.forbid_unknown(
            "model", {"horizon", "data_file", "true_heights", "true_steps"}
        )

        c.optional("prior.mean_segments", "float", gt=0.0)
        max_seg = c.optional("prior.max_segments", "int", lo=1, default=30)
        for name in ("prior.shape_hyper", "prior.rate_hyper"):
            pair = _get(cfg, name)
            if pair is _MISSING:
                continue
            if not (
                isinstance(pair, list)
                and len(pair) == 2
                and all(_is_num(x) and x > 0 for x in pair)
            ):
                c.note(name, "must be a positive [shape, rate] pair")
        c.forbid_unknown(
            "prior", {"mean_segments", "max_segments", "shape_hyper", "rate_hyper"}
        )

        c.require("kernel.N", "int", lo=1)
        _check_routing(c, max_seg if _is_int(max_seg) else 30)
        c.optional("kernel.height_scale", "float", gt=0.0)
        c.optional("kernel.step_window", "float", gt=0.0)
        c.optional("kernel.hyper_scale", "float", gt=0.0)
        c.forbid_unknown(
            "kernel", {"N", "routing", "height_scale", "step_window", "hyper_scale"}
        )
        _check_run_table(c)

    elif exp == "oracle-suite":
        c.forbid_unknown("model", set())
        c.forbid_unknown("kernel", set())
        c.forbid_unknown("run", set())

    return c.diags


# ---------------------------------------------------------------------------
# shared run machinery


def _chain_rows(cfg: dict, root: StreamSource, init, step, record) -> list:
    """Run n_chains sequential chains, recording post-burn-in rows.

    Chain ``c`` draws exclusively from ``root.substream(_CHAIN_BASE + c)``
    with one stream step per iteration, so the realised path depends
    only on (config, seed) — never on thread count or wall clock.
    """
    run = cfg.get("run", {})
    iterations = run["iterations"]
    n_chains = run.get("n_chains", 1)
    burn = run.get("burn_in_fraction", 0.0)
    skip = int(burn * iterations)
    rows = []
    for chain in range(n_chains):
        src = root.substream(_CHAIN_BASE + chain)
        x = init(src)
        for it in range(iterations):
            src.next_step()
            x, report = step(x, src)
            if it >= skip:
                rows.append((chain, it, *record(x, report)))
    return rows


def _accept_cols(report):
    return (1 if report.accepted else 0, report.branch)


def _log_uniform_prior(lo: float, hi: float):
    def log_prior(theta):
        total = 0.0
        for t in theta:
            if not lo <= t <= hi:
                return -math.inf
            total -= math.log(t)
        return total

    return log_prior


def _log_scale_walk(std: float) -> OuterProposal:
    """Componentwise multiplicative random walk on positive parameters."""

    def sample(theta, src):
        gen = src.generator("walk noise")
        return tuple(float(t * math.exp(std * gen.standard_normal())) for t in theta)

    def log_density(x, y):
        total = 0.0
        for xi, yi in zip(x, y):
            if xi <= 0.0 or yi <= 0.0:
                return -math.inf
            d = math.log(yi) - math.log(xi)
            total += -0.5 * (d / std) ** 2 - math.log(std * yi) - 0.5 * math.log(2 * math.pi)
        return total

    return OuterProposal(sample, log_density)


def _draw_log_uniform(lo: float, hi: float, gen) -> float:
    return float(math.exp(math.log(lo) + (math.log(hi) - math.log(lo)) * gen.random()))


# ---------------------------------------------------------------------------
# experiment drivers


def _drive_toy(cfg: dict, root: StreamSource, pool) -> tuple[list[str], list]:
    model_cfg = cfg["model"]
    theta = model_cfg.get("theta", 0.0)
    rows = []
    for a in model_cfg["a_values"]:
        for n in cfg["kernel"]["N_values"]:
            model = ToyModel(a=float(a), theta=float(theta))
            pflip = pflip_exact(model, n)
            rows.append(
                (
                    float(a),
                    float(theta),
                    n,
                    pflip,
                    gamma_reduction(float(a), n),
                    relaxation_time(model, n),
                )
            )
    return ["a", "theta", "N", "pflip", "gamma", "relaxation_time"], rows


def _ising_setup(cfg: dict, root: StreamSource):
    m = cfg["model"]
    lattice = IsingLattice(m["rows"], m["cols"])
    data = ising_synthetic_data(
        lattice, float(m["theta_true"]), root.substream(_DATA_STREAM)
    )
    theta_max = float(m.get("theta_max", 10.0))
    model = ising_model(
        lattice,
        data,
        theta_max=theta_max,
        sampler=m.get("sampler", "exact"),
        n_wolff=m.get("n_wolff", 100),
    )
    return lattice, model, theta_max


def _drive_ising_exchange(cfg: dict, root: StreamSource, pool):
    lattice, model, theta_max = _ising_setup(cfg, root)
    k = cfg["kernel"]
    bridges = ising_bridges(
        lattice,
        AnnealingSchedule(k["T"]),
        updates_per_stage=k.get("updates_per_stage", 1),
    )
    q = reflected_walk_proposal(float(k["proposal_std"]), 0.0, theta_max)
    N = k["N"]

    def init(src):
        return theta_max * src.generator("initial parameter").random()

    def step(theta, src):
        return exchange_mhaar_step(theta, model, bridges, q, N, src, pool)

    rows = _chain_rows(
        cfg, root, init, step, lambda th, rep: (th, *_accept_cols(rep))
    )
    return ["chain", "iteration", "theta", "accepted", "branch"], rows


def _drive_ising_pmt(cfg: dict, root: StreamSource, pool):
    lattice, model, theta_max = _ising_setup(cfg, root)
    k = cfg["kernel"]
    theta_ref = float(k.get("theta_ref", theta_max / 2.0))
    log_h = lambda z: model.log_g(theta_ref, z)  # noqa: E731
    q = reflected_walk_proposal(float(k["proposal_std"]), 0.0, theta_max)
    N = k["N"]

    def init(src):
        theta0 = theta_max * src.generator("initial parameter").random()
        return pmt_init(theta0, model, log_h, N, src, pool)

    def step(state, src):
        return pmt_step(state, model, log_h, q, N, src, pool)

    rows = _chain_rows(
        cfg, root, init, step, lambda s, rep: (s.theta, *_accept_cols(rep))
    )
    return ["chain", "iteration", "theta", "accepted", "branch"], rows


def _ssm_setup(cfg: dict, root: StreamSource):
    m = cfg["model"]
    theta_true = (m.get("sv2_true", 10.0), m.get("sw2_true", 0.1))
    _, observations = nonlinear_ssm_simulate(
        theta_true, m["length"], root.substream(_DATA_STREAM)
    )
    model = nonlinear_ssm_model(observations)
    lo, hi = float(m["prior_lo"]), float(m["prior_hi"])
    return model, _log_uniform_prior(lo, hi), lo, hi


def _ssm_init(model, lo, hi, length):
    def init(src):
        gen = src.generator("initial parameter")
        theta = (_draw_log_uniform(lo, hi, gen), _draw_log_uniform(lo, hi, gen))
        return theta, np.zeros(length)

    return init


def _drive_ssm_latent(cfg: dict, root: StreamSource, pool):
    model, log_prior, lo, hi = _ssm_setup(cfg, root)
    k = cfg["kernel"]
    latent = ssm_latent_model(model, log_prior)
    bridges = ssm_latent_bridges(
        model,
        k["M"],
        AnnealingSchedule(k["T"]),
        log_prior=log_prior,
        sweeps_per_stage=k.get("sweeps_per_stage", 1),
    )
    q = _log_scale_walk(float(k["proposal_std"]))
    N = k["N"]

    def step(x, src):
        return mhaar_latent_step(x, latent, bridges, q, N, src, pool)

    rows = _chain_rows(
        cfg,
        root,
        _ssm_init(model, lo, hi, cfg["model"]["length"]),
        step,
        lambda x, rep: (x[0][0], x[0][1], *_accept_cols(rep)),
    )
    return ["chain", "iteration", "sv2", "sw2", "accepted", "branch"], rows


_TILT_RULES = {
    "midpoint": midpoint_rule,
    "current": lambda a, b: a,
    "proposed": lambda a, b: b,
}


def _drive_ssm_csmc(cfg: dict, root: StreamSource, pool):
    model, log_prior, lo, hi = _ssm_setup(cfg, root)
    k = cfg["kernel"]
    variant = k.get("variant", "subsampled")
    tilt = _TILT_RULES[k.get("tilt", "midpoint")]
    q = _log_scale_walk(float(k["proposal_std"]))
    M = k["M"]

    if variant == "subsampled":
        N = k["N"]

        def step(x, src):
            return mhaar_csmc_sub_step(
                x, model, q, M, N, src,
                tilt_rule=tilt, log_prior=log_prior, pool=pool,
            )

    elif variant == "rao-blackwell":

        def step(x, src):
            return mhaar_csmc_rb_step(
                x, model, q, M, src, tilt_rule=tilt, log_prior=log_prior
            )

    else:  # marginal

        def step(x, src):
            return mwpg_step(x, model, q, M, src, log_prior=log_prior)

    rows = _chain_rows(
        cfg,
        root,
        _ssm_init(model, lo, hi, cfg["model"]["length"]),
        step,
        lambda x, rep: (x[0][0], x[0][1], *_accept_cols(rep)),
    )
    return ["chain", "iteration", "sv2", "sw2", "accepted", "branch"], rows


def _routing_rule(value):
    if value == "half" or value is None:
        return half_routing
    if value == "updown":
        return updown_routing
    up, down = float(value[0]), float(value[1])
    return _pair_routing(up, down)


def _drive_changepoint(cfg: dict, root: StreamSource, pool):
    m = cfg["model"]
    horizon = float(m["horizon"])
    if "data_file" in m:
        data = np.loadtxt(m["data_file"], ndmin=1, dtype=float)
        if data.size and (data.min() < 0.0 or data.max() > horizon):
            raise ValueError("event times fall outside [0, horizon]")
        data = np.sort(data)
    else:
        data = piecewise_poisson_simulate(
            m["true_heights"], m["true_steps"], horizon,
            root.substream(_DATA_STREAM),
        )
    prior_cfg = cfg.get("prior", {})
    prior = ChangepointPrior(
        horizon=horizon,
        mean_segments=float(prior_cfg.get("mean_segments", 3.0)),
        max_segments=prior_cfg.get("max_segments", 30),
        shape_hyper=tuple(prior_cfg.get("shape_hyper", (2.0, 2.0))),
        rate_hyper=tuple(prior_cfg.get("rate_hyper", (2.0, 2.0))),
    )
    k = cfg["kernel"]
    model = changepoint_model(
        data,
        prior,
        height_scale=k.get("height_scale", 0.4),
        step_window=k.get("step_window"),
        hyper_scale=k.get("hyper_scale", 0.3),
    )
    jumps = changepoint_jumps(prior)
    routing = _routing_rule(k.get("routing"))
    N = k["N"]

    def init(src):
        rate = max(data.size, 1) / horizon
        return 1, ChangepointState((), (rate,), 1.0, 1.0)

    def step(x, src):
        x_next, report = rmj_step(x, model, jumps, None, N, routing, src, pool)
        m_next, z_next = x_next
        z_next = model.within_model_move(
            m_next, z_next, src.substream(_WITHIN_MOVE_STREAM)
        )
        return (m_next, z_next), report

    rows = _chain_rows(
        cfg, root, init, step, lambda x, rep: (x[0], *_accept_cols(rep))
    )
    return ["chain", "iteration", "m", "accepted", "branch"], rows


def _drive_oracle(cfg: dict, root: StreamSource, pool):
    checks = run_oracle_suite()
    rows = [
        (r.name, r.value, r.bound, r.comparison, 1 if r.passed else 0)
        for r in checks
    ]
    return ["check", "value", "bound", "comparison", "passed"], rows


_DRIVERS = {
    "toy-gamma": _drive_toy,
    "ising-exchange": _drive_ising_exchange,
    "ising-pmt": _drive_ising_pmt,
    "ssm-latent": _drive_ssm_latent,
    "ssm-csmc": _drive_ssm_csmc,
    "changepoint-rmj": _drive_changepoint,
    "oracle-suite": _drive_oracle,
}


# ---------------------------------------------------------------------------
# output plumbing


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_bytes(columns: list[str], rows: list) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue().encode("utf-8")


def _blob_hash(data: bytes) -> str:
    """Content hash the way git hashes a blob."""
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def run_config(
    cfg: dict,
    seed: int | None = None,
    threads: int = 1,
    out: str | None = None,
) -> dict:
    """Execute a validated config; returns the manifest dictionary.

    ``seed``/``out`` override the config's ``master_seed``/``output``.
    The CSV bytes are a pure function of (config, seed): worker threads
    only parallelise independent estimator evaluations.
    """
    experiment = cfg["experiment"]
    master_seed = cfg["master_seed"] if seed is None else seed
    out_path = Path(cfg["output"] if out is None else out)

    root = StreamSource(master_seed)
    started = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        columns, rows = _DRIVERS[experiment](cfg, root, pool)
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - started

    data = _csv_bytes(columns, rows)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(data)

    manifest = {
        "experiment": experiment,
        "library_version": __version__,
        "master_seed": master_seed,
        "threads": threads,
        "config": cfg,
        "output": str(out_path),
        "columns": columns,
        "rows": len(rows),
        "csv_blob_sha1": _blob_hash(data),
        "wall_seconds": round(elapsed, 6),
    }
    manifest_path = out_path.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# command line


@click.group()
@click.version_option(version=__version__)
def main():
    """Averaged acceptance-ratio samplers: experiments and verification."""


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override master_seed.")
@click.option("--threads", type=click.IntRange(min=1), default=1,
              show_default=True,
              help="Worker threads for independent estimators; never "
                   "changes the output bytes.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Override the output CSV path.")
def run_command(config_path, seed, threads, out):
    """Validate CONFIG_PATH, run its experiment, write CSV + manifest."""
    cfg = _load_or_fail(config_path)
    diags = validate_config(cfg)
    if diags:
        for d in diags:
            click.echo(f"invalid config: {d}", err=True)
        raise SystemExit(2)
    manifest = run_config(cfg, seed=seed, threads=threads, out=out)
    click.echo(
        f"{manifest['experiment']}: wrote {manifest['rows']} rows to "
        f"{manifest['output']} in {manifest['wall_seconds']:.2f}s "
        f"(blob {manifest['csv_blob_sha1'][:12]})"
    )
    if manifest["experiment"] == "oracle-suite":
        checks = run_oracle_suite()
        click.echo(format_report(checks))
        if not all_passed(checks):
            raise SystemExit(1)


@main.command("validate")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def validate_command(config_path):
    """List every schema / cross-field diagnostic for CONFIG_PATH."""
    cfg = _load_or_fail(config_path)
    diags = validate_config(cfg)
    if not diags:
        click.echo("ok")
        return
    for d in diags:
        click.echo(d)


@main.command("oracle")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Also write the report as CSV.")
def oracle_command(out):
    """Run the exact finite-fixture verification suite."""
    checks = run_oracle_suite()
    click.echo(format_report(checks))
    if out is not None:
        columns = ["check", "value", "bound", "comparison", "passed"]
        rows = [
            (r.name, r.value, r.bound, r.comparison, 1 if r.passed else 0)
            for r in checks
        ]
        Path(out).write_bytes(_csv_bytes(columns, rows))
    if not all_passed(checks):
        raise SystemExit(1)


def _load_or_fail(config_path):
    try:
        return load_config(config_path)
    except tomllib.TOMLDecodeError as exc:
        click.echo(f"invalid config: cannot parse TOML: {exc}", err=True)
        raise SystemExit(2)


if __name__ == "__main__":  # pragma: no cover
    main()
