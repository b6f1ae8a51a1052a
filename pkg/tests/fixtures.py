"""Shared finite fixtures for the exact-verification test suite.

Everything here is small enough for exhaustive enumeration: two- and
three-state targets whose acceptance-ratio estimators have two-point
laws, a two-step binary hidden Markov model, a two-point doubly
intractable posterior, a binary latent-variable model, and a pair of
nested discrete models for the jump kernels. Each fixture routes all
of its randomness through discrete draws so the enumeration oracle in
:mod:`ratioavg.diagnostics` applies.
"""

import math
from itertools import product

import numpy as np

from ratioavg.core import OuterProposal, ProposalPair, TargetModel
from ratioavg.smc import StateSpaceModel, log_path_density
from ratioavg.transdim import JumpSpec, TransdimensionalModel, nearest_model_proposal

# ---------------------------------------------------------------------------
# three-state target with a two-point ratio-estimator law
#
# The per-draw estimate is r(x, y) * u with u in {a, 1/a},
# P(u = a) = 1/(1+a): the estimate is unbiased for the true ratio and
# the reciprocal involution maps the forward law onto the backward one.

TRI_PI = (0.2, 0.3, 0.5)


def triangle_target_and_pair(a: float = 3.0):
    states = (0, 1, 2)
    p_a = 1.0 / (1.0 + a)

    def sample(x, src):
        others = [s for s in states if s != x]
        return others[src.choice((0.5, 0.5), "hop")]

    def sample_u(x, y, src):
        return a if src.coin(p_a, "estimate") else 1.0 / a

    def log_ratio(x, y, u):
        return math.log(TRI_PI[y]) - math.log(TRI_PI[x]) + math.log(u)

    target = TargetModel(lambda s: math.log(TRI_PI[s]), states=states)
    pair = ProposalPair(
        outer=OuterProposal(sample),
        sample_u_forward=sample_u,
        involution=lambda u: 1.0 / u,
        log_ratio=log_ratio,
    )
    return target, pair


# ---------------------------------------------------------------------------
# two-step binary hidden Markov model (enumerable particle fixtures)

THA, THB = 0.3, 0.7


def _p_init(th):
    return 0.25 + 0.5 * th


def _p_stay(th):
    return 0.35 + 0.3 * th


def _p_emit(th):
    return 0.55 + 0.3 * th


def make_binary_hmm(data=(1.0, 0.0)) -> StateSpaceModel:
    def log_mu(th, z):
        p = _p_init(th)
        return np.log(np.where(np.asarray(z) == 1.0, p, 1.0 - p))

    def log_f(th, t, zp, zn):
        p = _p_stay(th)
        return np.log(np.where(np.asarray(zp) == np.asarray(zn), p, 1.0 - p))

    def log_g(th, z, y):
        p = _p_emit(th)
        return np.log(np.where(np.asarray(z) == np.asarray(y), p, 1.0 - p))

    def sample_mu(th, n, src):
        p = _p_init(th)
        return np.array([float(src.choice((1.0 - p, p), "init")) for _ in range(n)])

    def sample_f(th, t, zp, src):
        p = _p_stay(th)
        out = []
        for v in np.asarray(zp, dtype=float):
            p1 = p if v == 1.0 else 1.0 - p
            out.append(float(src.choice((1.0 - p1, p1), "move")))
        return np.array(out)

    return StateSpaceModel(
        log_mu=log_mu,
        log_f=log_f,
        log_g=log_g,
        sample_mu=sample_mu,
        sample_f=sample_f,
        data=data,
    )


HMM = make_binary_hmm()
HMM_PATHS = [
    tuple(float(b) for b in combo) for combo in product((0, 1), repeat=len(HMM.data))
]
HMM_LOG_PRIOR = {THA: math.log(0.4), THB: math.log(0.6)}


def hmm_lp(th):
    return HMM_LOG_PRIOR[th]


HMM_Q_FLIP = OuterProposal(sample=lambda th, src: THB if th == THA else THA)


def exact_lik(model, th):
    T = len(model.data)
    paths = [tuple(float(b) for b in c) for c in product((0, 1), repeat=T)]
    return sum(math.exp(log_path_density(th, p, model)) for p in paths)


def exact_posterior(model, th):
    T = len(model.data)
    paths = [tuple(float(b) for b in c) for c in product((0, 1), repeat=T)]
    w = np.array([math.exp(log_path_density(th, p, model)) for p in paths])
    return paths, w / w.sum()


def hmm_joint_states():
    return [(th, z) for th in (THA, THB) for z in HMM_PATHS]


def hmm_joint_pi():
    return [
        math.exp(hmm_lp(th)) * math.exp(log_path_density(th, z, HMM))
        for th, z in hmm_joint_states()
    ]


def make_linear_gauss(data, drift=1.0) -> StateSpaceModel:
    def log_mu(th, z):
        z = np.asarray(z, dtype=float)
        return -0.5 * (z * z + math.log(2 * math.pi))

    def log_f(th, t, zp, zn):
        r = np.asarray(zn, dtype=float) - th * np.asarray(zp, dtype=float)
        return -0.5 * (r * r + math.log(2 * math.pi))

    def log_g(th, z, y):
        r = np.asarray(y, dtype=float) - np.asarray(z, dtype=float)
        return -0.5 * (r * r + math.log(2 * math.pi))

    def sample_mu(th, n, src):
        return src.generator("init").standard_normal(n)

    def sample_f(th, t, zp, src):
        zp = np.asarray(zp, dtype=float)
        return th * zp + src.generator("noise").standard_normal(len(zp))

    return StateSpaceModel(
        log_mu=log_mu,
        log_f=log_f,
        log_g=log_g,
        sample_mu=sample_mu,
        sample_f=sample_f,
        data=data,
    )


# ---------------------------------------------------------------------------
# two-point doubly intractable posterior (pseudo-data space of size two)

EX_THETAS = (0.0, 1.2)
EX_ZS = (0, 1)
EX_LOG_G = {
    (0.0, 0): 0.3,
    (0.0, 1): -0.7,
    (1.2, 0): -0.2,
    (1.2, 1): 0.9,
}
EX_LOG_PRIOR = {0.0: math.log(0.4), 1.2: math.log(0.6)}
EX_DATA = 1


def ex_log_g(th, z):
    return EX_LOG_G[(th, z)]


def ex_sample_lik(th, src):
    w = np.exp(np.array([EX_LOG_G[(th, z)] for z in EX_ZS]))
    return EX_ZS[src.choice(w / w.sum(), "pseudo draw")]


def ex_log_C(th):
    return math.log(sum(math.exp(EX_LOG_G[(th, z)]) for z in EX_ZS))


def ex_posterior():
    post = np.array(
        [
            math.exp(EX_LOG_PRIOR[th] + EX_LOG_G[(th, EX_DATA)] - ex_log_C(th))
            for th in EX_THETAS
        ]
    )
    return post / post.sum()


EX_FLIP = OuterProposal(
    sample=lambda th, src: EX_THETAS[1 - EX_THETAS.index(th)],
    log_density=lambda x, y: 0.0 if x != y else -math.inf,
)


def metropolis_two_point(zs, label):
    """Stage mover on a two-point space: propose the other point."""

    def factory(w, a, b, log_density):
        def move(u, src):
            v = zs[1 - zs.index(u)]
            lr = log_density(v) - log_density(u)
            p = 1.0 if lr >= 0 else math.exp(lr)
            return v if src.coin(p, label) else u

        return move

    return factory


# ---------------------------------------------------------------------------
# binary latent-variable model (marginal over z intractable by fiat)

LAT_TH = (0.0, 1.0)
LAT_ZS = (0, 1)
LAT_LJ = {
    (0.0, 0): 0.2,
    (0.0, 1): -0.5,
    (1.0, 0): -0.3,
    (1.0, 1): 0.7,
}


def lat_log_joint(th, z):
    return LAT_LJ[(th, z)]


def lat_margin(th):
    return sum(math.exp(LAT_LJ[(th, z)]) for z in LAT_ZS)


LAT_FLIP = OuterProposal(
    sample=lambda th, src: LAT_TH[1] if th == LAT_TH[0] else LAT_TH[0],
    log_density=lambda a, b: 0.0,
)


def lat_states():
    return [(th, z) for th in LAT_TH for z in LAT_ZS]


def lat_pi():
    return [math.exp(LAT_LJ[s]) for s in lat_states()]


# ---------------------------------------------------------------------------
# nested discrete model pair for the jump kernels

TD_P1 = {0: 0.30, 1: 0.45}
TD_P2 = {(0, 0): 0.05, (0, 1): 0.30, (1, 0): 0.20, (1, 1): 0.35}
TD_W12 = (0.65, 0.35)
TD_EXT = [(0, 0), (0, 1), (1, 0), (1, 1)]


def td_log_joint(m, z):
    return math.log(TD_P1[z]) if m == 1 else math.log(TD_P2[z])


def td_spec(steps: int = 0) -> JumpSpec:
    def f_start(z, mt):
        return math.log(TD_P1[z]) + math.log(TD_W12[mt])

    def f_end(z, mt):
        return math.log(TD_P2[(z, mt)])

    def log_stage(t, z, mt):
        g = t / (steps + 1)
        return (1.0 - g) * f_start(z, mt) + g * f_end(z, mt)

    def stage_move(t, z, mt, src):
        logs = [log_stage(t, zz, mm) for zz, mm in TD_EXT]
        mx = max(logs)
        ps = [math.exp(v - mx) for v in logs]
        tot = sum(ps)
        k = src.choice([p / tot for p in ps], "stage move")
        return TD_EXT[k]

    return JumpSpec(
        sample_match=lambda src: src.choice(TD_W12, "match"),
        log_match=lambda mt: math.log(TD_W12[mt]) if mt in (0, 1) else -math.inf,
        apply_map=lambda z, mt: ((z, mt), None),
        invert_map=lambda z2, mt2: (z2[0], z2[1]),
        log_jacobian=lambda z, mt: 0.0,
        sample_match_back=lambda src: None,
        log_match_back=lambda mt: 0.0 if mt is None else -math.inf,
        steps=steps,
        log_stage=log_stage if steps else None,
        stage_move=stage_move if steps else None,
    )


TD_MODEL = TransdimensionalModel(
    (1, 2), td_log_joint, model_proposal=nearest_model_proposal(1, 2)
)
TD_STATES = [(1, 0), (1, 1)] + [(2, z) for z in TD_EXT]
TD_PI = [TD_P1[0], TD_P1[1]] + [TD_P2[z] for z in TD_EXT]
TD_Z1 = sum(TD_P1.values())
TD_Z2 = sum(TD_P2.values())
