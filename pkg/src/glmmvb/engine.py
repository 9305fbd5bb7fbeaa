"""Stochastic gradient ascent on the block-diagonal Gaussian posterior.

q(theta~) = N(mu, C C') with C block diagonal: n local blocks of order r and
one global block of order g. Diagonals of C are optimized on the log scale
(C*), which keeps them positive; the dweight chain-rule scaling turns
half-vec gradients in C into gradients in C*.

Randomness is a counter-based stream keyed by (seed, lane, iteration), so a
fit is reproducible bit for bit regardless of how per-subject work inside an
iteration is scheduled.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import gradients, matcalc, model, reparam
from .exceptions import (
    DivergedError,
    ModeSearchFailedError,
    NotPositiveDefiniteError,
    OverflowGuardError,
)

LANE_FIT = 0
LANE_FINAL = 1
LANE_SIM = 2
LANE_PART = 3

_RECOVERABLE = (OverflowGuardError, NotPositiveDefiniteError, ModeSearchFailedError)


def stream(seed, lane, t):
    """Deterministic generator for iteration t of a given lane."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(lane), int(t)]))


def child_seed(seed, index):
    """Well-mixed derived seed (shards, replicates)."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


@dataclass
class FitConfig:
    method: str = "a2"
    seed: int = 0
    max_iter: int = 200_000
    window: int = 1000
    tau: int = 5
    adam_alpha: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    estimator: str = "L2"
    final_elbo_draws: int = 1000

    def __post_init__(self):
        if self.method not in reparam.METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.estimator not in ("L1", "L2", "L3"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.max_iter < 1 or self.window < 1 or self.tau < 2:
            raise ValueError("limits must be positive (tau >= 2)")


class VariationalState:
    """Mean vector and packed Cholesky blocks of the variational Gaussian.

    Layout of mu (length d = n*r + g): the n local blocks first, then the
    global block. C blocks are stored as half-vecs of C* (log diagonal).
    """

    def __init__(self, mu, cstar_local, cstar_global, n, r, g):
        self.mu = np.asarray(mu, dtype=float)
        self.cstar_local = np.asarray(cstar_local, dtype=float)
        self.cstar_global = np.asarray(cstar_global, dtype=float)
        self.n, self.r, self.g = n, r, g

    @classmethod
    def initial(cls, n, r, g, global_scale=0.1):
        """mu = 0, C = blockdiag(I_{nr}, global_scale * I_g)."""
        d = n * r + g
        cstar_local = np.zeros((n, matcalc.half_len(r)))
        cstar_global = np.zeros(matcalc.half_len(g))
        cstar_global[matcalc.diag_positions(g)] = np.log(global_scale)
        return cls(np.zeros(d), cstar_local, cstar_global, n, r, g)

    @property
    def d(self):
        return self.n * self.r + self.g

    def copy(self):
        return VariationalState(self.mu.copy(), self.cstar_local.copy(),
                                self.cstar_global.copy(), self.n, self.r, self.g)

    # -- C blocks ----------------------------------------------------------
    @staticmethod
    def _materialize(cstar, r):
        C = matcalc.unpack_lower(cstar, r)
        idx = np.arange(r)
        C[..., idx, idx] = np.exp(C[..., idx, idx])
        return C

    def c_local(self):
        return self._materialize(self.cstar_local, self.r)

    def c_global(self):
        return self._materialize(self.cstar_global, self.g)

    def log_det_c(self):
        return (self.cstar_local[..., matcalc.diag_positions(self.r)].sum()
                + self.cstar_global[matcalc.diag_positions(self.g)].sum())

    # -- vector <-> blocks ---------------------------------------------------
    def split(self, vec):
        """(local (..., n, r), global (..., g)) views of a theta~-layout vector."""
        nr = self.n * self.r
        loc = vec[..., :nr].reshape(vec.shape[:-1] + (self.n, self.r))
        return loc, vec[..., nr:]

    def _join(self, loc, glob):
        flat = loc.reshape(loc.shape[:-2] + (-1,))
        return np.concatenate([flat, glob], axis=-1)

    def affine(self, s):
        """theta~ = C s + mu, blockwise; broadcasts over leading dims of s."""
        s_loc, s_glob = self.split(s)
        mu_loc, mu_glob = self.split(self.mu)
        loc = np.einsum("nrs,...ns->...nr", self.c_local(), s_loc) + mu_loc
        glob = np.einsum("rs,...s->...r", self.c_global(), s_glob) + mu_glob
        return self._join(loc, glob)

    def cinv_t(self, s):
        """C^{-T} s, blockwise triangular solves."""
        s_loc, s_glob = self.split(s)
        loc = np.linalg.solve(np.swapaxes(self.c_local(), -1, -2), s_loc[..., None])[..., 0]
        glob = np.linalg.solve(self.c_global().T, s_glob[..., None])[..., 0]
        return self._join(loc, glob)

    def log_q(self, theta):
        """Gaussian log density at theta~ (d/2 log 2pi dropped)."""
        z_loc, z_glob = self.split(theta - self.mu)
        u_loc = np.linalg.solve(self.c_local(), z_loc[..., None])[..., 0]
        u_glob = np.linalg.solve(self.c_global(), z_glob[..., None])[..., 0]
        quad = (u_loc * u_loc).sum(axis=(-1, -2)) + (u_glob * u_glob).sum(axis=-1)
        return -self.log_det_c() - 0.5 * quad

    # -- optimizer parameter vector -----------------------------------------
    def get_params(self):
        return np.concatenate([self.mu, self.cstar_local.ravel(), self.cstar_global])

    def set_params(self, vec):
        d = self.d
        k = self.cstar_local.size
        self.mu = vec[:d].copy()
        self.cstar_local = vec[d:d + k].reshape(self.cstar_local.shape).copy()
        self.cstar_global = vec[d + k:].copy()


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size))

    def ascent_step(self, g, cfg):
        self.t += 1
        self.m = cfg.adam_beta1 * self.m + (1.0 - cfg.adam_beta1) * g
        self.v = cfg.adam_beta2 * self.v + (1.0 - cfg.adam_beta2) * g * g
        m_hat = self.m / (1.0 - cfg.adam_beta1 ** self.t)
        v_hat = self.v / (1.0 - cfg.adam_beta2 ** self.t)
        return cfg.adam_alpha * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class FitResult:
    state: VariationalState
    window_means: np.ndarray
    n_iter: int
    wall_time: float
    elbo: float
    elbo_se: float
    converged: bool
    max_iter_reached: bool
    method: str
    config: FitConfig = field(repr=False, default=None)


def draw_sample(state, rng):
    """One reparametrization-trick draw: s ~ N(0, I_d), theta~ = C s + mu."""
    s = rng.standard_normal(state.d)
    return s, state.affine(s)


def estimator(state, s, grad_vec, which):
    """Gradient estimators for (mu, v(C)) from a single draw.

    L1 evaluates the entropy term analytically; L2 uses the same draw for
    both terms and collapses to zero noise at convergence; L3 keeps the
    noisier score form for mu (its v(C) part is taken from L2, which is the
    form the update rule uses).

    Returns (g_mu (..., d), g_vC local (..., n, K_r), g_vC global (..., K_g)),
    with only the block-diagonal support of v(.) formed.
    """
    cts = state.cinv_t(s)
    if which == "L1":
        g_mu = grad_vec
        outer_of = grad_vec
    elif which == "L2":
        g_mu = grad_vec + cts
        outer_of = g_mu
    elif which == "L3":
        g_mu = grad_vec - cts
        outer_of = grad_vec + cts
    else:
        raise ValueError(f"unknown estimator {which!r}")

    s_loc, s_glob = state.split(s)
    o_loc, o_glob = state.split(outer_of)
    gv_loc = matcalc.pack_lower(o_loc[..., :, None] * s_loc[..., None, :])
    gv_glob = matcalc.pack_lower(o_glob[..., :, None] * s_glob[..., None, :])
    if which == "L1":
        # + v(C^{-T}): only the diagonal of C^{-T} lies on the lower support
        gv_loc = gv_loc.copy()
        gv_loc[..., matcalc.diag_positions(state.r)] += 1.0 / _diag(state.c_local())
        gv_glob = gv_glob.copy()
        gv_glob[..., matcalc.diag_positions(state.g)] += 1.0 / _diag(state.c_global())
    return g_mu, gv_loc, gv_glob


def _diag(mat):
    return np.diagonal(mat, axis1=-2, axis2=-1)


def should_stop(window_means, tau):
    """Least-squares slope over the most recent min(tau, available) window
    means; stop once it turns negative. Never stops on a single mean."""
    k = min(tau, len(window_means))
    if k < 2:
        return False
    return window_slope(window_means, tau) < 0.0


def window_slope(window_means, tau):
    k = min(tau, len(window_means))
    y = np.asarray(window_means[-k:], dtype=float)
    x = np.arange(k, dtype=float)
    xc = x - x.mean()
    return float((xc * (y - y.mean())).sum() / (xc * xc).sum())


def _global_params(data, prior, glob):
    """Split a global-block vector into GlobalParams, honoring KnownOmega."""
    beta = glob[..., :data.p]
    if prior.learns_omega:
        omega = glob[..., data.p:]
    else:
        omega = np.broadcast_to(prior.omega, glob.shape[:-1] + (data.g2,))
    return model.GlobalParams(beta, omega, data.r)


def step(data, prior, config, state, adam, t):
    """One stochastic gradient step; returns the pre-update ELBO sample.

    A recoverable numeric failure (overflow guard, failed factorization,
    failed mode search) retries once with a fresh draw from the same
    iteration stream; a second failure raises DivergedError.
    """
    rng = stream(config.seed, LANE_FIT, t)
    last_err = None
    for _ in range(2):
        s = rng.standard_normal(state.d)
        try:
            theta = state.affine(s)
            b_tilde, glob = state.split(theta)
            gp = _global_params(data, prior, glob)
            value, grad = gradients.value_and_grad(data, gp, b_tilde, config.method, prior)
            break
        except _RECOVERABLE as err:
            last_err = err
    else:
        raise DivergedError(f"iteration {t}: {last_err}") from last_err

    grad_vec = grad.concat(include_omega=prior.learns_omega)
    g_mu, gv_loc, gv_glob = estimator(state, s, grad_vec, config.estimator)
    # chain rule into C*: scale diagonal positions by the current diagonals
    gv_loc = gv_loc * matcalc.dweight(state.c_local())
    gv_glob = gv_glob * matcalc.dweight(state.c_global())

    elbo = float(value + state.log_det_c() + 0.5 * (s * s).sum())

    g_all = np.concatenate([g_mu, gv_loc.ravel(), gv_glob])
    state.set_params(state.get_params() + adam.ascent_step(g_all, config))
    return elbo


def elbo_estimate(data, prior, state, method, n_draws, seed, lane=LANE_FINAL, chunk=250):
    """Monte Carlo ELBO at a fixed state, averaged over fresh draws."""
    vals = []
    logdet = state.log_det_c()
    done = 0
    ci = 0
    while done < n_draws:
        b = min(chunk, n_draws - done)
        rng = stream(seed, lane, ci)
        s = rng.standard_normal((b, state.d))
        theta = state.affine(s)
        b_tilde, glob = state.split(theta)
        gp = _global_params(data, prior, glob)
        transforms = reparam.build_transforms(data, gp, method)
        value = model.log_joint_reparam(data, gp, b_tilde, transforms, prior)
        vals.append(value + logdet + 0.5 * (s * s).sum(axis=-1))
        done += b
        ci += 1
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


def fit(data, prior, config=None, **overrides):
    """Run the optimizer until the stopping rule fires or max_iter is hit."""
    if config is None:
        config = FitConfig(**overrides)
    elif overrides:
        config = replace(config, **overrides)
    if not prior.learns_omega and prior.omega.shape != (data.g2,):
        raise ValueError("fixed omega has the wrong length for this dataset")
    g = data.p + (data.g2 if prior.learns_omega else 0)
    state = VariationalState.initial(data.n, data.r, g)
    adam = AdamState.zeros(state.get_params().size)

    t_start = time.perf_counter()
    means = []
    acc = 0.0
    cnt = 0
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        acc += step(data, prior, config, state, adam, it)
        cnt += 1
        if cnt == config.window:
            means.append(acc / cnt)
            acc = 0.0
            cnt = 0
            if should_stop(means, config.tau):
                converged = True
                break
    wall = time.perf_counter() - t_start

    if config.final_elbo_draws > 0:
        elbo, elbo_se = elbo_estimate(data, prior, state, config.method,
                                      config.final_elbo_draws, config.seed)
    else:
        elbo, elbo_se = float("nan"), float("nan")
    return FitResult(state=state, window_means=np.asarray(means), n_iter=it,
                     wall_time=wall, elbo=elbo, elbo_se=elbo_se,
                     converged=converged, max_iter_reached=not converged,
                     method=config.method, config=config)
