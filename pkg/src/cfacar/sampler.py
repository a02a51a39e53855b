"""Partially collapsed hybrid Gibbs sampler for the CFA-CAR model.

One sweep updates, in order::

    Lambda | Omega, Psi, Y
    Theta  | Omega, Phi, sigma2, tau2          (rho integrated out)
    Rho    | Theta, Lambda, Phi, Psi, ...     (omega integrated out)
    Omega  | Rho, Lambda, Psi, Phi, sigma2, Y
    signs of (Lambda_k, omega_k, rho_k)       (Metropolis flip per pathway)
    gamma  | Omega, Rho, sigma2               (adaptive random-walk Metropolis)
    Psi, sigma2, tau2                         (conjugate inverse-gamma)

Rho and Omega are drawn back to back so that they form a single joint block;
each collapsed draw is therefore followed by a redraw of the quantity it
integrated out before that quantity is conditioned on.

The sign move proposes negating one pathway's loading column, factor row and
perturbation row together.  The Y-likelihood and the symmetric priors on
Lambda and rho are unchanged by it, so only the CAR density of omega enters
the acceptance ratio.  Without it a chain keeps the column signs of its
initial loadings, and a mixed sign pattern biases gamma.

During the first part of burn-in the Y-likelihood terms of the Lambda, Rho,
Omega and Psi conditionals are tempered (precision scaled by ``1/T``) along
a decreasing temperature ladder ending at 1.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from . import kernels
from .model import (
    InvalidStateError,
    Model,
    ModelState,
    cholesky_jitter,
    log_likelihood_omega,
    omega_marginal_cov,
    snr_matrix,
    spike_slab_diag,
)

logger = logging.getLogger(__name__)


class ChainFailure(RuntimeError):
    """A chain reached a non-finite or non-PD state; ``dump`` summarizes it."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class SamplerConfig:
    iterations: int = 4000
    burn_in: int = 2000
    thin: int = 1
    chains: int = 2
    seed: int = 0
    metropolis_sd: float = 0.05
    adapt_target_accept: float = 0.44
    adapt_window: int = 50
    temper_schedule: tuple = (32.0, 16.0, 8.0, 4.0, 2.0, 1.0)
    temper_fraction: float = 0.2
    audit_every: int = 500
    audit_tol: float = 1e-6
    store_draws: bool = True
    sign_moves: bool = True
    gamma_init_fraction: float = 0.5

    def __post_init__(self):
        self.temper_schedule = tuple(float(t) for t in self.temper_schedule)
        if self.iterations < 1 or self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("thin and chains must be >= 1")
        if not self.metropolis_sd > 0:
            raise ValueError("metropolis_sd must be positive")
        ts = self.temper_schedule
        if not ts or ts[-1] != 1.0 or any(a < b for a, b in zip(ts, ts[1:])) or min(ts) < 1.0:
            raise ValueError("temper_schedule must be non-increasing, >= 1 and end at exactly 1.0")
        if not 0.0 <= self.temper_fraction <= 1.0:
            raise ValueError("temper_fraction must lie in [0, 1]")
        if not -1.0 < self.gamma_init_fraction < 1.0:
            raise ValueError("gamma_init_fraction must lie in (-1, 1)")

    @property
    def n_retained(self) -> int:
        return -(-(self.iterations - self.burn_in) // self.thin)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["temper_schedule"] = list(self.temper_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def initial_gamma(model: Model, config: SamplerConfig) -> float:
    """Starting gamma: a fraction of the upper (or, if negative, lower) support bound.

    Starting at a positive value gives the sign moves a direction from the
    first sweep; at gamma = 0 every flip is neutral and the chain can settle
    into a mirrored mode with mixed signs and negative gamma.
    """
    lo, hi = model.support
    f = config.gamma_init_fraction
    return f * hi if f >= 0 else -f * lo


def temperature_ladder(config: SamplerConfig) -> np.ndarray:
    """Temperature of every sweep: hot rungs share ``temper_fraction`` of burn-in equally."""
    temps = np.ones(config.iterations)
    hot = [t for t in config.temper_schedule if t > 1.0]
    if not hot:
        return temps
    per = int(round(config.temper_fraction * config.burn_in)) // len(hot)
    start = 0
    for t in hot:
        temps[start:start + per] = t
        start += per
    return temps


# ---------------------------------------------------------------------------
# V(theta) cache
# ---------------------------------------------------------------------------


def dense_v_inverse(Phi, sigma2: float, tau2: float, v0: float, theta) -> tuple[np.ndarray, float]:
    """Inverse and log-determinant of ``V(theta)`` by direct Cholesky."""
    V = omega_marginal_cov(Phi, sigma2, spike_slab_diag(theta, tau2, v0))
    L = cholesky_jitter(V, "V(theta)")
    Vinv = linalg.cho_solve((L, True), np.eye(V.shape[0]))
    return 0.5 * (Vinv + Vinv.T), 2.0 * float(np.sum(np.log(np.diag(L))))


class ThetaCache:
    """Per-experiment ``V(theta_e)^{-1}`` and ``log|V(theta_e)|``.

    Rebuilt densely at the start of every indicator step (``V`` depends on
    sigma2, tau2 and gamma which move every sweep) and updated by rank-one
    formulas on each flip within the step.
    """

    def __init__(self, q: int, E: int):
        self.Vinv = np.zeros((E, q, q))
        self.logdet = np.zeros(E)

    def rebuild(self, model: Model, state: ModelState, experiments=None) -> None:
        hp = model.hyper
        for e in range(model.E) if experiments is None else experiments:
            self.Vinv[e], self.logdet[e] = dense_v_inverse(state.Phi, state.sigma2, state.tau2, hp.v0, state.Theta[:, e])

    def drift(self, model: Model, state: ModelState) -> float:
        """Largest relative deviation from dense recomputation over free experiments."""
        hp = model.hyper
        worst = 0.0
        for e in np.flatnonzero(model.theta_free):
            Vinv, logdet = dense_v_inverse(state.Phi, state.sigma2, state.tau2, hp.v0, state.Theta[:, e])
            rel = np.max(np.abs(self.Vinv[e] - Vinv)) / np.max(np.abs(Vinv))
            rel_det = abs(self.logdet[e] - logdet) / max(1.0, abs(logdet))
            worst = max(worst, float(rel), float(rel_det))
        return worst


# ---------------------------------------------------------------------------
# conditional draws
# ---------------------------------------------------------------------------


def sample_lambda(state: ModelState, model: Model, rng: np.random.Generator, inv_temp: float = 1.0) -> None:
    """Draw every free loading row from its Gaussian conditional."""
    G = state.Omega @ state.Omega.T
    B = np.ascontiguousarray(state.Omega @ model.Y.T)
    z = rng.standard_normal((model.p, model.q))
    state.Lambda = kernels.lambda_rows(
        np.ascontiguousarray(G), B, np.ascontiguousarray(state.Psi), model.mask.mask,
        1.0 / model.hyper.lambda_prior_var, float(inv_temp), z,
    )


def gene_projections(state: ModelState, model: Model) -> tuple[np.ndarray, np.ndarray]:
    """``K = Lambda^T Psi^{-1} Lambda`` and ``U = Lambda^T Psi^{-1} Y``."""
    LtPinv = state.Lambda.T / state.Psi[None, :]
    return LtPinv @ state.Lambda, LtPinv @ model.Y


def rho_conditional(state: ModelState, model: Model, K=None, U=None, inv_temp: float = 1.0):
    """Precision matrices (per experiment) and precision-times-mean (per column) of rho with omega integrated out.

    With ``S = sigma2 Lambda Phi Lambda^T + Psi`` the Woodbury identity gives
    ``Lambda^T S^{-1} Lambda = K (I + sigma2 Phi K)^{-1}`` and
    ``Lambda^T S^{-1} Y = (I + sigma2 K Phi)^{-1} U``, so only q x q systems
    are solved.
    """
    if K is None or U is None:
        K, U = gene_projections(state, model)
    Phi, s2 = state.Phi, state.sigma2
    q = model.q
    M = np.eye(q) + s2 * Phi @ K
    Q0 = np.linalg.solve(M.T, K).T
    Q0 = 0.5 * (Q0 + Q0.T)
    Ut = np.linalg.solve(np.eye(q) + s2 * K @ Phi, U)
    data_prec = inv_temp * (Phi @ Q0 @ Phi)
    data_prec = 0.5 * (data_prec + data_prec.T)
    b = inv_temp * (Phi @ Ut)
    precs = []
    for e in range(model.E):
        A = data_prec + np.diag(1.0 / spike_slab_diag(state.Theta[:, e], state.tau2, model.hyper.v0))
        precs.append(A)
    return precs, b


def sample_rho(state: ModelState, model: Model, rng: np.random.Generator, K=None, U=None, inv_temp: float = 1.0) -> None:
    precs, b = rho_conditional(state, model, K, U, inv_temp)
    Z = rng.standard_normal((model.q, model.n))
    Rho = np.empty((model.q, model.n))
    for e, cols in enumerate(model.experiment_cols):
        L = cholesky_jitter(precs[e], "rho precision")
        mean = linalg.cho_solve((L, True), b[:, cols])
        Rho[:, cols] = mean + linalg.solve_triangular(L.T, Z[:, cols], lower=False)
    state.Rho = Rho


def sample_theta(state: ModelState, model: Model, cache: ThetaCache, rng: np.random.Generator,
                 probs: np.ndarray | None = None, audit: bool = False) -> float | None:
    """Collapsed single-site sweep over the indicators of every case experiment.

    Replicate columns of an experiment enter through the product of their
    omega densities.  Control experiments keep theta fixed at 0.  With
    ``audit`` the rank-one updated cache is compared against a dense
    recomputation and the drift is returned.
    """
    hp = model.hyper
    c = state.tau2 * (1.0 - hp.v0)
    free = np.flatnonzero(model.theta_free)
    cache.rebuild(model, state, free)
    Phi = np.ascontiguousarray(state.Phi)
    buf = np.empty(model.q)
    for e in free:
        u = rng.random(model.q)
        omega = state.Omega[:, model.experiment_cols[e]]
        theta_e = np.ascontiguousarray(state.Theta[:, e])
        cache.logdet[e] = kernels.theta_sweep(cache.Vinv[e], float(cache.logdet[e]), Phi, omega, theta_e,
                                              c, hp.logit_alpha, u, buf)
        state.Theta[:, e] = theta_e
        if probs is not None:
            probs[:, e] = buf
    if audit:
        return cache.drift(model, state)
    return None


def sample_omega(state: ModelState, model: Model, rng: np.random.Generator, K=None, U=None, inv_temp: float = 1.0) -> None:
    if K is None or U is None:
        K, U = gene_projections(state, model)
    Phi_inv = linalg.cho_solve((state.Phi_chol, True), np.eye(model.q))
    A = inv_temp * K + Phi_inv / state.sigma2
    L = cholesky_jitter(0.5 * (A + A.T), "omega precision")
    a = inv_temp * U + state.Rho / state.sigma2
    Z = rng.standard_normal((model.q, model.n))
    Omega = linalg.cho_solve((L, True), a) + linalg.solve_triangular(L.T, Z, lower=False)
    state.Omega = np.ascontiguousarray(Omega)


def sign_flip_log_ratios(state: ModelState) -> np.ndarray:
    """Log acceptance ratio of negating each pathway's (Lambda, omega, rho) alone."""
    Phi_inv = linalg.cho_solve((state.Phi_chol, True), np.eye(state.Phi.shape[0]))
    M1 = Phi_inv @ state.Omega
    M2 = state.Phi @ state.Rho
    d1 = np.einsum("kn,kn->k", state.Omega, M1) - np.diag(Phi_inv) * np.einsum("kn,kn->k", state.Omega, state.Omega)
    d2 = np.einsum("kn,kn->k", state.Rho, M2) - np.diag(state.Phi) * np.einsum("kn,kn->k", state.Rho, state.Rho)
    return 2.0 * (d1 + d2) / state.sigma2


def sample_signs(state: ModelState, model: Model, rng: np.random.Generator) -> int:
    """Sequential Metropolis sign flips over pathways; returns the number accepted."""
    q = model.q
    Phi_inv = linalg.cho_solve((state.Phi_chol, True), np.eye(q))
    M1 = Phi_inv @ state.Omega
    M2 = state.Phi @ state.Rho
    log_u = np.log(rng.random(q))
    accepted = 0
    for k in range(q):
        w, r = state.Omega[k], state.Rho[k]
        d1 = w @ M1[k] - Phi_inv[k, k] * (w @ w)
        d2 = r @ M2[k] - state.Phi[k, k] * (r @ r)
        if log_u[k] < 2.0 * (d1 + d2) / state.sigma2:
            M1 -= 2.0 * np.outer(Phi_inv[:, k], w)
            M2 -= 2.0 * np.outer(state.Phi[:, k], r)
            state.Omega[k] = -w
            state.Rho[k] = -r
            state.Lambda[:, k] = -state.Lambda[:, k]
            accepted += 1
    return accepted


def gamma_log_acceptance(state: ModelState, model: Model, proposal: float) -> float:
    """``l(Phi*) - l(Phi)``; ``-inf`` outside the support (flat prior)."""
    lo, hi = model.support
    if not lo < proposal < hi:
        return -math.inf
    Phi_new, chol_new = model.phi(proposal)
    new = log_likelihood_omega(state.Omega, state.Rho, Phi_new, state.sigma2, chol_new)
    old = log_likelihood_omega(state.Omega, state.Rho, state.Phi, state.sigma2, state.Phi_chol)
    return new - old


def sample_gamma(state: ModelState, model: Model, rng: np.random.Generator, xi: float) -> bool:
    """Random-walk Metropolis step; returns whether the proposal was accepted."""
    if model.efa:
        return False
    proposal = state.gamma + xi * rng.standard_normal()
    log_u = math.log(rng.random())
    log_r = gamma_log_acceptance(state, model, proposal)
    if log_u < log_r:
        model.set_gamma(state, proposal)
        return True
    return False


def psi_posterior_params(state: ModelState, model: Model, inv_temp: float = 1.0):
    resid = model.Y - state.Lambda @ state.Omega
    ss = np.einsum("ij,ij->i", resid, resid)
    return model.zeta + 0.5 * inv_temp * model.n, model.zeta - 1.0 + 0.5 * inv_temp * ss


def sigma2_posterior_params(state: ModelState, model: Model):
    hp = model.hyper
    resid = state.Omega - state.Phi @ state.Rho
    z = linalg.solve_triangular(state.Phi_chol, resid, lower=True)
    return hp.sigma2_shape + 0.5 * model.q * model.n, hp.sigma2_rate + 0.5 * float(np.sum(z * z))


def tau2_posterior_params(state: ModelState, model: Model):
    hp = model.hyper
    v = np.where(model.column_theta(state) != 0, 1.0, hp.v0)
    return hp.tau2_shape + 0.5 * model.q * model.n, hp.tau2_rate + float(np.sum(state.Rho ** 2 / (2.0 * v)))


def inv_gamma(rng: np.random.Generator, shape, rate):
    """Inverse-gamma draw(s) parameterized by shape and rate."""
    return rate / rng.gamma(shape)


def sample_variances(state: ModelState, model: Model, rng: np.random.Generator, inv_temp: float = 1.0) -> None:
    """Conjugate draws of Psi, sigma2 and tau2.

    Under a tempered likelihood (``inv_temp < 1``) sigma2 and tau2 are held:
    their near-flat priors let them drift toward zero while the data are
    down-weighted, and the chain then stalls in a mode where the spike
    variance of rho stands in for sigma2.
    """
    shape, rate = psi_posterior_params(state, model, inv_temp)
    state.Psi = inv_gamma(rng, np.full(model.p, shape), rate)
    if inv_temp < 1.0:
        return
    state.sigma2 = float(inv_gamma(rng, *sigma2_posterior_params(state, model)))
    state.tau2 = float(inv_gamma(rng, *tau2_posterior_params(state, model)))


def sweep(state: ModelState, model: Model, cache: ThetaCache, rng: np.random.Generator,
          xi: float, inv_temp: float = 1.0, audit: bool = False,
          sign_moves: bool = True) -> tuple[bool, float | None]:
    """One full sampler sweep in place.

    Returns the gamma acceptance flag and, when ``audit`` is set, the drift
    of the indicator cache measured right after the indicator step.
    """
    sample_lambda(state, model, rng, inv_temp)
    drift = sample_theta(state, model, cache, rng, audit=audit)
    K, U = gene_projections(state, model)
    sample_rho(state, model, rng, K, U, inv_temp)
    sample_omega(state, model, rng, K, U, inv_temp)
    if sign_moves and not model.efa:
        sample_signs(state, model, rng)
    accepted = sample_gamma(state, model, rng, xi)
    sample_variances(state, model, rng, inv_temp)
    return accepted, drift


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


@dataclass
class ChainTrace:
    """Retained draws and running summaries of one chain."""

    chain: int
    seed: list
    config: dict
    theta_mean: np.ndarray
    snr_mean: np.ndarray
    means: dict
    draws: dict = field(default_factory=dict)
    gamma_accept_burnin: float = float("nan")
    gamma_accept: float = float("nan")
    metropolis_sd: float = float("nan")
    audit_log: list = field(default_factory=list)
    n_retained: int = 0
    backend: str = kernels.BACKEND
    pathway_ids: list = field(default_factory=list)
    experiment_ids: list = field(default_factory=list)
    gene_ids: list = field(default_factory=list)
    mask_index: tuple = ()

    def abs_parameter_series(self) -> dict:
        """Absolute values of the continuous parameters, flattened per draw."""
        if not self.draws:
            raise ValueError("chain was run without stored draws")
        out = {}
        for name in ("lambda", "omega", "rho", "psi", "gamma", "sigma2", "tau2"):
            x = np.asarray(self.draws[name], dtype=float)
            out[name] = np.abs(x.reshape(x.shape[0], -1))
        return out


def _state_dump(state: ModelState) -> dict:
    def summary(x):
        x = np.asarray(x, dtype=float)
        return {"min": float(np.nanmin(x)), "max": float(np.nanmax(x)), "n_nonfinite": int(np.sum(~np.isfinite(x)))}

    return {f.name: summary(getattr(state, f.name)) for f in dataclasses.fields(state)}


def run_chain(model: Model, config: SamplerConfig, seed=None, chain: int = 0) -> ChainTrace:
    """Run one chain: tempering, adaptive burn-in, then retained sampling."""
    seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(config.seed if seed is None else seed)
    rng = np.random.default_rng(seed_seq)
    hp = model.hyper
    q, E, p = model.q, model.E, model.p
    state = model.initial_state(rng, initial_gamma(model, config))
    cache = ThetaCache(q, E)
    temps = temperature_ladder(config)
    xi = float(config.metropolis_sd)
    T = config.n_retained
    nnz = model.mask.nnz
    rows, cols = model.mask_index

    draws = {}
    if config.store_draws:
        draws = {
            "lambda": np.empty((T, nnz)),
            "omega": np.empty((T, q, model.n)),
            "rho": np.empty((T, q, model.n)),
            "theta": np.empty((T, q, E), dtype=np.int8),
            "gamma": np.empty(T),
            "psi": np.empty((T, p)),
            "sigma2": np.empty(T),
            "tau2": np.empty(T),
        }
    theta_sum = np.zeros((q, E))
    snr_sum = np.zeros((q, E))
    sums = {"lambda": np.zeros((p, q)), "psi": np.zeros(p), "gamma": 0.0, "sigma2": 0.0, "tau2": 0.0,
            "phi": np.zeros((q, q))}
    audit_log = []
    acc_window = 0
    n_window = 0
    n_adapt = 0
    acc_burn = [0, 0]
    acc_post = [0, 0]
    k = 0

    for t in range(config.iterations):
        inv_temp = 1.0 / temps[t]
        try:
            audit = bool(config.audit_every) and (t + 1) % config.audit_every == 0
            accepted, drift = sweep(state, model, cache, rng, xi, inv_temp, audit, config.sign_moves)
        except (InvalidStateError, np.linalg.LinAlgError) as exc:
            raise ChainFailure(f"chain {chain} failed at sweep {t}: {exc}", _state_dump(state)) from exc
        if not state.is_finite():
            raise ChainFailure(f"chain {chain} reached a non-finite state at sweep {t}", _state_dump(state))

        if t < config.burn_in:
            acc_burn[0] += accepted
            acc_burn[1] += 1
            # acceptance under a tempered likelihood says little about the
            # target, so the step size only adapts once the ladder reaches 1
            if not model.efa and temps[t] == 1.0:
                acc_window += accepted
                n_window += 1
                if n_window == config.adapt_window:
                    n_adapt += 1
                    rate = acc_window / n_window
                    xi *= math.exp((rate - config.adapt_target_accept) / math.sqrt(n_adapt))
                    lo, hi = model.support
                    xi = min(max(xi, 1e-5), hi - lo)
                    acc_window = n_window = 0
        else:
            acc_post[0] += accepted
            acc_post[1] += 1

        if drift is not None:
            # the cache is rebuilt densely at the next indicator step anyway;
            # the audit records how far the rank-one updates wandered
            entry = {"sweep": t + 1, "drift": drift, "rebuilt": drift > config.audit_tol}
            if entry["rebuilt"]:
                logger.warning("theta cache drift %.3g at sweep %d; rebuilding", drift, t + 1)
                cache.rebuild(model, state, np.flatnonzero(model.theta_free))
            audit_log.append(entry)

        if t >= config.burn_in and (t - config.burn_in) % config.thin == 0:
            theta_sum += state.Theta
            snr_sum += snr_matrix(state.Rho, state.Theta, state.sigma2, model.col_experiment, hp.v0)
            sums["lambda"] += state.Lambda
            sums["psi"] += state.Psi
            sums["gamma"] += state.gamma
            sums["sigma2"] += state.sigma2
            sums["tau2"] += state.tau2
            sums["phi"] += state.Phi
            if config.store_draws:
                draws["lambda"][k] = state.Lambda[rows, cols]
                draws["omega"][k] = state.Omega
                draws["rho"][k] = state.Rho
                draws["theta"][k] = state.Theta
                draws["gamma"][k] = state.gamma
                draws["psi"][k] = state.Psi
                draws["sigma2"][k] = state.sigma2
                draws["tau2"][k] = state.tau2
            k += 1

    means = {name: (v / k) for name, v in sums.items()}
    return ChainTrace(
        chain=chain,
        seed=[int(x) for x in np.atleast_1d(seed_seq.entropy)] + list(seed_seq.spawn_key),
        config=config.to_dict(),
        theta_mean=theta_sum / k,
        snr_mean=snr_sum / k,
        means=means,
        draws=draws,
        gamma_accept_burnin=acc_burn[0] / acc_burn[1] if acc_burn[1] else float("nan"),
        gamma_accept=acc_post[0] / acc_post[1] if acc_post[1] else float("nan"),
        metropolis_sd=xi,
        audit_log=audit_log,
        n_retained=k,
        backend=kernels.BACKEND,
        pathway_ids=list(model.network.pathway_ids),
        experiment_ids=list(model.data.experiment_ids),
        gene_ids=list(model.data.gene_ids),
        mask_index=(rows.tolist(), cols.tolist()),
    )


def _run_chain_limited(model, config, seed_seq, chain):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        return run_chain(model, config, seed_seq, chain)


def run_chains(model: Model, config: SamplerConfig, jobs: int = 1) -> list[ChainTrace]:
    """Run ``config.chains`` chains with independent streams spawned from ``config.seed``."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    if jobs == 1 or config.chains == 1:
        return [_run_chain_limited(model, config, s, c) for c, s in enumerate(seeds)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(_run_chain_limited)(model, config, s, c) for c, s in enumerate(seeds))


# ---------------------------------------------------------------------------
# trace i/o
# ---------------------------------------------------------------------------


def write_trace(trace: ChainTrace, out_dir) -> Path:
    """One directory per chain: ``.npy`` per parameter block plus ``chain.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, arr in trace.draws.items():
        np.save(out / f"{name}.npy", arr)
    np.save(out / "theta_mean.npy", trace.theta_mean)
    np.save(out / "snr_mean.npy", trace.snr_mean)
    for name, value in trace.means.items():
        np.save(out / f"mean_{name}.npy", np.asarray(value))
    meta = {
        "chain": trace.chain,
        "seed": trace.seed,
        "config": trace.config,
        "gamma_accept_burnin": trace.gamma_accept_burnin,
        "gamma_accept": trace.gamma_accept,
        "metropolis_sd": trace.metropolis_sd,
        "audit_log": trace.audit_log,
        "n_retained": trace.n_retained,
        "backend": trace.backend,
        "pathway_ids": trace.pathway_ids,
        "experiment_ids": trace.experiment_ids,
        "gene_ids": trace.gene_ids,
        "mask_index": [list(trace.mask_index[0]), list(trace.mask_index[1])],
        "blocks": sorted(trace.draws),
    }
    with open(out / "chain.json", "w") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return out


def read_trace(path) -> ChainTrace:
    path = Path(path)
    with open(path / "chain.json") as handle:
        meta = json.load(handle)
    draws = {name: np.load(path / f"{name}.npy") for name in meta["blocks"]}
    means = {}
    for f in sorted(path.glob("mean_*.npy")):
        value = np.load(f)
        means[f.stem[5:]] = float(value) if value.ndim == 0 else value
    return ChainTrace(
        chain=meta["chain"],
        seed=meta["seed"],
        config=meta["config"],
        theta_mean=np.load(path / "theta_mean.npy"),
        snr_mean=np.load(path / "snr_mean.npy"),
        means=means,
        draws=draws,
        gamma_accept_burnin=meta["gamma_accept_burnin"],
        gamma_accept=meta["gamma_accept"],
        metropolis_sd=meta["metropolis_sd"],
        audit_log=meta["audit_log"],
        n_retained=meta["n_retained"],
        backend=meta["backend"],
        pathway_ids=meta["pathway_ids"],
        experiment_ids=meta["experiment_ids"],
        gene_ids=meta["gene_ids"],
        mask_index=tuple(meta["mask_index"]),
    )


def timed_sweeps(model: Model, n: int = 50, seed: int = 0) -> float:
    """Mean wall time of one untempered sweep (seconds)."""
    rng = np.random.default_rng(seed)
    state = model.initial_state(rng)
    cache = ThetaCache(model.q, model.E)
    sweep(state, model, cache, rng, 0.05)
    start = time.perf_counter()
    for _ in range(n):
        sweep(state, model, cache, rng, 0.05)
    return (time.perf_counter() - start) / n
