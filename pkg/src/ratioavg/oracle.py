"""Exact finite-fixture verification suite.

Every kernel family in the package is run on a fixture small enough for
exhaustive enumeration: each transition probability is summed over every
realisable sequence of discrete draws, the resulting matrix is checked
against the target distribution, and the detailed-balance residual is
compared to a pinned tolerance. A deliberately broken kernel (averaging
the two proposal presentations with fixed equal weight instead of the
paired route construction) is included as a negative control: the suite
passes only if that kernel *fails* reversibility by a clear margin,
which guards the checks themselves against being vacuous.

The fixtures mirror the shapes used across the package: a three-state
target with a two-point ratio-estimator law, a two-point doubly
intractable posterior, a binary latent-variable model, a two-step
binary hidden Markov model, and a nested pair of discrete models for
the jump kernels. Randomness is routed exclusively through labelled
discrete draws so the enumeration oracle applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .core import (
    AnnealingSchedule,
    InnerKernel,
    OuterProposal,
    ProposalPair,
    TargetModel,
    dependent_mhaar_step,
    mhaar_step,
    mhaar_step_beta,
    pmr_step,
)
from .diagnostics import (
    detailed_balance_residual,
    enumerate_kernel,
    naive_averaged_step,
)
from .exchange import (
    DoublyIntractableModel,
    exchange_mhaar_step,
    geometric_bridges,
)
from .latent import LatentModel, geometric_latent_bridges, mhaar_latent_step
from .smc import (
    LatentBridgeFamily,
    StateSpaceModel,
    log_path_density,
    mhaar_csmc_rb_step,
    mhaar_csmc_sub_step,
    mhaar_smc_latent_step,
)
from .transdim import (
    JumpSpec,
    TransdimensionalModel,
    ais_rj_step,
    nearest_model_proposal,
    rmj_step,
)

__all__ = ["OracleCheck", "run_oracle_suite", "format_report", "all_passed"]


@dataclass(frozen=True)
class OracleCheck:
    """One row of the verification report."""

    name: str
    value: float
    bound: float
    comparison: str  # "<=" for residual bounds, ">" for the negative control
    passed: bool


def _check(name: str, value: float, bound: float, comparison: str = "<=") -> OracleCheck:
    if comparison == "<=":
        ok = value <= bound
    elif comparison == ">":
        ok = value > bound
    else:  # pragma: no cover - internal misuse
        raise ValueError(f"unknown comparison {comparison!r}")
    return OracleCheck(name, float(value), float(bound), comparison, ok)


# ---------------------------------------------------------------------------
# fixture: three-state target, two-point ratio-estimator law


_TRI_PI = (0.2, 0.3, 0.5)


def _triangle(a: float = 3.0):
    states = (0, 1, 2)
    p_a = 1.0 / (1.0 + a)

    def sample(x, src):
        others = [s for s in states if s != x]
        return others[src.choice((0.5, 0.5), "hop")]

    def sample_u(x, y, src):
        return a if src.coin(p_a, "estimate") else 1.0 / a

    def log_ratio(x, y, u):
        return math.log(_TRI_PI[y]) - math.log(_TRI_PI[x]) + math.log(u)

    target = TargetModel(lambda s: math.log(_TRI_PI[s]), states=states)
    pair = ProposalPair(
        outer=OuterProposal(sample),
        sample_u_forward=sample_u,
        involution=lambda u: 1.0 / u,
        log_ratio=log_ratio,
    )
    return target, pair


def _db(step, states, weights) -> float:
    return detailed_balance_residual(enumerate_kernel(step, states, weights))


# ---------------------------------------------------------------------------
# fixture: two-point doubly intractable posterior


_EX_THETAS = (0.0, 1.2)
_EX_ZS = (0, 1)
_EX_LOG_G = {(0.0, 0): 0.3, (0.0, 1): -0.7, (1.2, 0): -0.2, (1.2, 1): 0.9}
_EX_LOG_PRIOR = {0.0: math.log(0.4), 1.2: math.log(0.6)}
_EX_DATA = 1


def _ex_sample_lik(th, src):
    w = np.exp(np.array([_EX_LOG_G[(th, z)] for z in _EX_ZS]))
    return _EX_ZS[src.choice(w / w.sum(), "pseudo draw")]


def _ex_posterior():
    post = np.array(
        [
            math.exp(
                _EX_LOG_PRIOR[th]
                + _EX_LOG_G[(th, _EX_DATA)]
                - math.log(sum(math.exp(_EX_LOG_G[(th, z)]) for z in _EX_ZS))
            )
            for th in _EX_THETAS
        ]
    )
    return post / post.sum()


_EX_FLIP = OuterProposal(
    sample=lambda th, src: _EX_THETAS[1 - _EX_THETAS.index(th)],
    log_density=lambda x, y: 0.0 if x != y else -math.inf,
)


def _two_point_metropolis(zs, label):
    def factory(fr, a, b, log_density):
        def move(u, src):
            v = zs[1 - zs.index(u)]
            lr = log_density(v) - log_density(u)
            p = 1.0 if lr >= 0 else math.exp(lr)
            return v if src.coin(p, label) else u

        return move

    return factory


# ---------------------------------------------------------------------------
# fixture: binary latent-variable model


_LAT_TH = (0.0, 1.0)
_LAT_ZS = (0, 1)
_LAT_LJ = {(0.0, 0): 0.2, (0.0, 1): -0.5, (1.0, 0): -0.3, (1.0, 1): 0.7}

_LAT_FLIP = OuterProposal(
    sample=lambda th, src: _LAT_TH[1] if th == _LAT_TH[0] else _LAT_TH[0],
    log_density=lambda a, b: 0.0,
)


def _lat_metropolis_flip(log_density, label):
    def move(v, src):
        w = 1 - v
        lr = log_density(w) - log_density(v)
        p = 1.0 if lr >= 0 else math.exp(lr)
        return w if src.coin(p, label) else v

    return move


def _lat_family(T: int):
    model = LatentModel(
        log_joint=lambda th, z: _LAT_LJ[(th, z)], latent_states=_LAT_ZS
    )

    def kernel_for_stage(fr, a, b, log_density):
        return _lat_metropolis_flip(log_density, "stage flip")

    def refresh(th, z, src):
        return _lat_metropolis_flip(lambda v: _LAT_LJ[(th, v)], "refresh flip")(z, src)

    fam = geometric_latent_bridges(model, AnnealingSchedule(T), kernel_for_stage, refresh)
    return model, fam


# ---------------------------------------------------------------------------
# fixture: two-step binary hidden Markov model


_HMM_THA, _HMM_THB = 0.3, 0.7
_HMM_LOG_PRIOR = {_HMM_THA: math.log(0.4), _HMM_THB: math.log(0.6)}


def _binary_hmm(data=(1.0, 0.0)) -> StateSpaceModel:
    p_init = lambda th: 0.25 + 0.5 * th
    p_stay = lambda th: 0.35 + 0.3 * th
    p_emit = lambda th: 0.55 + 0.3 * th

    def log_mu(th, z):
        p = p_init(th)
        return np.log(np.where(np.asarray(z) == 1.0, p, 1.0 - p))

    def log_f(th, t, zp, zn):
        p = p_stay(th)
        return np.log(np.where(np.asarray(zp) == np.asarray(zn), p, 1.0 - p))

    def log_g(th, z, y):
        p = p_emit(th)
        return np.log(np.where(np.asarray(z) == np.asarray(y), p, 1.0 - p))

    def sample_mu(th, n, src):
        p = p_init(th)
        return np.array([float(src.choice((1.0 - p, p), "init")) for _ in range(n)])

    def sample_f(th, t, zp, src):
        p = p_stay(th)
        out = []
        for v in np.asarray(zp, dtype=float):
            p1 = p if v == 1.0 else 1.0 - p
            out.append(float(src.choice((1.0 - p1, p1), "move")))
        return np.array(out)

    return StateSpaceModel(
        log_mu=log_mu, log_f=log_f, log_g=log_g,
        sample_mu=sample_mu, sample_f=sample_f, data=data,
    )


_HMM = _binary_hmm()
_HMM_Q = OuterProposal(
    sample=lambda th, src: _HMM_THB if th == _HMM_THA else _HMM_THA
)


def _hmm_lp(th):
    return _HMM_LOG_PRIOR[th]


def _hmm_joint_states():
    paths = [
        tuple(float(b) for b in combo)
        for combo in product((0, 1), repeat=len(_HMM.data))
    ]
    return [(th, z) for th in (_HMM_THA, _HMM_THB) for z in paths]


def _hmm_joint_pi():
    return [
        math.exp(_hmm_lp(th)) * math.exp(log_path_density(th, z, _HMM))
        for th, z in _hmm_joint_states()
    ]


def _enum_hmm_joint(step_fn) -> float:
    def wrapped(state, src):
        th, zt = state
        (th2, z2), _ = step_fn((th, np.array(zt)), src)
        return (th2, tuple(np.asarray(z2, dtype=float).tolist()))

    return detailed_balance_residual(
        enumerate_kernel(wrapped, _hmm_joint_states(), _hmm_joint_pi())
    )


# ---------------------------------------------------------------------------
# fixture: interacting annealed-path step on a binary latent space


_SMC_LJ = {
    (_HMM_THA, 0.0): math.log(0.35),
    (_HMM_THA, 1.0): math.log(0.65),
    (_HMM_THB, 0.0): math.log(0.90),
    (_HMM_THB, 1.0): math.log(0.60),
}


def _smc_lat_fixture(steps: int):
    def lat_joint(th, z):
        return _SMC_LJ[(th, float(z))]

    schedule = AnnealingSchedule(steps)

    def log_f(t, a, b, v):
        fr = schedule.fraction(t)
        return (1.0 - fr) * lat_joint(a, v) + fr * lat_joint(b, v)

    def kernel(t, a, b, v, src):
        w = np.array([math.exp(log_f(t, a, b, 0.0)), math.exp(log_f(t, a, b, 1.0))])
        return float(src.choice(w / w.sum(), "stage draw"))

    def refresh(th, z, src):
        w = np.array([math.exp(lat_joint(th, 0.0)), math.exp(lat_joint(th, 1.0))])
        return float(src.choice(w / w.sum(), "latent refresh"))

    bridges = LatentBridgeFamily(schedule, log_f, kernel, refresh)
    model = LatentModel(log_joint=lat_joint, latent_states=(0.0, 1.0))
    states = [(th, z) for th in (_HMM_THA, _HMM_THB) for z in (0.0, 1.0)]
    pi = [math.exp(lat_joint(th, z)) for th, z in states]
    return model, bridges, states, pi


# ---------------------------------------------------------------------------
# fixture: nested discrete model pair for the jump kernels


_TD_P1 = {0: 0.30, 1: 0.45}
_TD_P2 = {(0, 0): 0.05, (0, 1): 0.30, (1, 0): 0.20, (1, 1): 0.35}
_TD_W12 = (0.65, 0.35)
_TD_EXT = [(0, 0), (0, 1), (1, 0), (1, 1)]


def _td_spec(steps: int = 0) -> JumpSpec:
    def f_start(z, mt):
        return math.log(_TD_P1[z]) + math.log(_TD_W12[mt])

    def f_end(z, mt):
        return math.log(_TD_P2[(z, mt)])

    def log_stage(t, z, mt):
        g = t / (steps + 1)
        return (1.0 - g) * f_start(z, mt) + g * f_end(z, mt)

    def stage_move(t, z, mt, src):
        logs = [log_stage(t, zz, mm) for zz, mm in _TD_EXT]
        mx = max(logs)
        ps = [math.exp(v - mx) for v in logs]
        tot = sum(ps)
        k = src.choice([p / tot for p in ps], "stage move")
        return _TD_EXT[k]

    return JumpSpec(
        sample_match=lambda src: src.choice(_TD_W12, "match"),
        log_match=lambda mt: math.log(_TD_W12[mt]) if mt in (0, 1) else -math.inf,
        apply_map=lambda z, mt: ((z, mt), None),
        invert_map=lambda z2, mt2: (z2[0], z2[1]),
        log_jacobian=lambda z, mt: 0.0,
        sample_match_back=lambda src: None,
        log_match_back=lambda mt: 0.0 if mt is None else -math.inf,
        steps=steps,
        log_stage=log_stage if steps else None,
        stage_move=stage_move if steps else None,
    )


def _td_model():
    def log_joint(m, z):
        return math.log(_TD_P1[z]) if m == 1 else math.log(_TD_P2[z])

    model = TransdimensionalModel(
        (1, 2), log_joint, model_proposal=nearest_model_proposal(1, 2)
    )
    states = [(1, 0), (1, 1)] + [(2, z) for z in _TD_EXT]
    pi = [_TD_P1[0], _TD_P1[1]] + [_TD_P2[z] for z in _TD_EXT]
    return model, states, pi


def _half_routing(m, m_new):
    return 0.5


# ---------------------------------------------------------------------------
# the suite


def run_oracle_suite(db_tol: float = 1e-8, control_floor: float = 1e-3):
    """Run every exact reversibility check and return the report rows.

    ``db_tol`` bounds the detailed-balance residual of each verified
    kernel; ``control_floor`` is the margin by which the deliberately
    broken control kernel must *violate* reversibility for its row to
    pass. Enumeration is exact, so the verified kernels sit at rounding
    error (far below the bound) and the control sits far above it.
    """
    rows: list[OracleCheck] = []

    target, pair = _triangle()
    tri_states, tri_pi = target.states, _TRI_PI

    rows.append(
        _check(
            "single-draw ratio kernel",
            _db(lambda x, src: pmr_step(x, target, pair, src)[0], tri_states, tri_pi),
            db_tol,
        )
    )
    for n in (1, 2, 3):
        rows.append(
            _check(
                f"averaged-ratio kernel, N={n}",
                _db(
                    lambda x, src: mhaar_step(x, target, pair, n, src)[0],
                    tri_states,
                    tri_pi,
                ),
                db_tol,
            )
        )

    def beta(x, y):
        return 0.25 + 0.1 * x + 0.2 * y

    rows.append(
        _check(
            "state-dependent route weight, N=2",
            _db(
                lambda x, src: mhaar_step_beta(x, target, pair, 2, beta, src)[0],
                tri_states,
                tri_pi,
            ),
            db_tol,
        )
    )

    def sticky(x, y, u, src):
        if src.coin(0.5, "hold"):
            return u
        return pair.sample_u_forward(x, y, src)

    rows.append(
        _check(
            "dependent auxiliary chain, N=3",
            _db(
                lambda x, src: dependent_mhaar_step(
                    x, target, pair, InnerKernel(sticky), 3, src
                )[0],
                tri_states,
                tri_pi,
            ),
            db_tol,
        )
    )

    ex_model = DoublyIntractableModel(
        lambda th, z: _EX_LOG_G[(th, z)],
        lambda th: _EX_LOG_PRIOR[th],
        _ex_sample_lik,
        _EX_DATA,
    )
    stage_move = _two_point_metropolis(_EX_ZS, "stage accept")
    for T in (0, 1):
        bridges = geometric_bridges(ex_model, AnnealingSchedule(T), stage_move)
        rows.append(
            _check(
                f"doubly-intractable exchange kernel, stages={T}",
                _db(
                    lambda s, src: exchange_mhaar_step(
                        s, ex_model, bridges, _EX_FLIP, 2, src
                    )[0],
                    _EX_THETAS,
                    _ex_posterior(),
                ),
                db_tol,
            )
        )

    for T in (0, 1):
        lat_model, lat_fam = _lat_family(T)
        lat_states = [(th, z) for th in _LAT_TH for z in _LAT_ZS]
        lat_pi = [math.exp(_LAT_LJ[s]) for s in lat_states]
        rows.append(
            _check(
                f"latent-path kernel, stages={T}",
                _db(
                    lambda s, src: mhaar_latent_step(
                        s, lat_model, lat_fam, _LAT_FLIP, 2, src
                    )[0],
                    lat_states,
                    lat_pi,
                ),
                db_tol,
            )
        )

    td_model, td_states, td_pi = _td_model()
    specs0 = {(1, 2): _td_spec(0)}
    rows.append(
        _check(
            "jump-average kernel, N=2",
            _db(
                lambda x, src: rmj_step(
                    x, td_model, specs0, None, 2, _half_routing, src
                )[0],
                td_states,
                td_pi,
            ),
            db_tol,
        )
    )
    specs1 = {(1, 2): _td_spec(1)}
    rows.append(
        _check(
            "annealed jump kernel, stages=1, N=2",
            _db(
                lambda x, src: ais_rj_step(
                    x, td_model, specs1, None, 2, _half_routing, src
                )[0],
                td_states,
                td_pi,
            ),
            db_tol,
        )
    )

    rows.append(
        _check(
            "rao-blackwellised conditional-sweep kernel, M=2",
            _enum_hmm_joint(
                lambda x, src: mhaar_csmc_rb_step(
                    x, _HMM, _HMM_Q, 2, src, log_prior=_hmm_lp
                )
            ),
            db_tol,
        )
    )
    rows.append(
        _check(
            "subsampled conditional-sweep kernel, N=2",
            _enum_hmm_joint(
                lambda x, src: mhaar_csmc_sub_step(
                    x, _HMM, _HMM_Q, 2, 2, src, log_prior=_hmm_lp
                )
            ),
            db_tol,
        )
    )

    smc_model, smc_bridges, smc_states, smc_pi = _smc_lat_fixture(1)
    rows.append(
        _check(
            "interacting annealed-path kernel, N=2, stages=1",
            _db(
                lambda x, src: mhaar_smc_latent_step(
                    x, smc_model, smc_bridges, _HMM_Q, 2, src
                )[0],
                smc_states,
                smc_pi,
            ),
            db_tol,
        )
    )

    rows.append(
        _check(
            "fixed-weight averaging control (must break reversibility), N=2",
            _db(
                lambda x, src: naive_averaged_step(x, pair, 2, src),
                tri_states,
                tri_pi,
            ),
            control_floor,
            comparison=">",
        )
    )

    return rows


def all_passed(rows) -> bool:
    return all(r.passed for r in rows)


def format_report(rows) -> str:
    """Render the report as an aligned pass/fail table."""
    name_w = max(len(r.name) for r in rows)
    lines = []
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"{status}  {r.name.ljust(name_w)}  "
            f"residual={r.value:.3e} (required {r.comparison} {r.bound:.0e})"
        )
    n_ok = sum(r.passed for r in rows)
    lines.append(f"{n_ok}/{len(rows)} checks passed")
    return "\n".join(lines)
