"""Posterior summaries: centroid selection under BFDR control, SNR, R-hat
convergence diagnostics, model-fit standardization and leave-one-out
validation on control samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .model import ExpressionDataset, Hyperparameters, LoadingMask, Model, Sample, cholesky_jitter, omega_marginal_cov
from .network import PathwayNetwork
from .sampler import ChainTrace, SamplerConfig, run_chains

logger = logging.getLogger(__name__)

RHAT_LIMIT = 1.1


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def centroid_select(theta_post, t: float) -> np.ndarray:
    """Binary selection ``P(theta = 1 | Y) > t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return (np.asarray(theta_post, dtype=float) > t).astype(np.int8)


def bfdr(theta_post, selection) -> float:
    """Expected share of false discoveries among the selected cells.

    An empty selection has no discoveries and is assigned 0.
    """
    post = np.asarray(theta_post, dtype=float)
    sel = np.asarray(selection).astype(bool)
    if post.shape != sel.shape:
        raise ValueError("theta_post and selection must have the same shape")
    n = int(sel.sum())
    if n == 0:
        return 0.0
    return float(np.sum(1.0 - post[sel]) / n)


@dataclass(frozen=True)
class Threshold:
    t: float
    bfdr: float
    n_selected: int
    empty: bool


def threshold_for_bfdr(theta_post, level: float = 0.05) -> Threshold:
    """Smallest threshold whose selection has BFDR at most ``level``.

    Candidates are 0 and the distinct posterior values.  When the only
    feasible selection is empty the threshold is 1 and ``empty`` is set.
    """
    if not 0.0 < level < 1.0 and level != 1.0:
        raise ValueError("level must lie in (0, 1]")
    post = np.asarray(theta_post, dtype=float)
    if post.size == 0:
        raise ValueError("theta_post is empty")
    values = np.sort(post.ravel())[::-1]
    # BFDR of the top-k cells, evaluated once per distinct value
    running = np.cumsum(1.0 - values) / np.arange(1, values.size + 1)
    candidates = np.unique(np.concatenate([[0.0], values]))
    best = None
    for t in candidates:
        k = int(np.sum(values > t))
        rate = float(running[k - 1]) if k else 0.0
        if rate <= level + 1e-12:
            best = (float(t), rate, k)
            break
    if best is None or best[2] == 0:
        return Threshold(1.0, 0.0, 0, True)
    return Threshold(*best, False)


def per_experiment_bfdr(theta_post, selection) -> np.ndarray:
    """BFDR within each experiment column at a common selection."""
    post = np.asarray(theta_post, dtype=float)
    sel = np.asarray(selection)
    return np.array([bfdr(post[:, e], sel[:, e]) for e in range(post.shape[1])])


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


@dataclass
class RhatResult:
    rhat: np.ndarray
    degenerate: np.ndarray


def gelman_rubin(series) -> RhatResult:
    """Potential scale reduction ``sqrt(V / W)`` per parameter.

    ``series`` has shape (chains, draws, ...).  A parameter with zero
    within-chain variance gets R-hat 1 when the chains also agree with each
    other and infinity otherwise; both cases are flagged degenerate.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim < 2:
        raise ValueError("series must have shape (chains, draws, ...)")
    m, n = x.shape[:2]
    if m < 2:
        raise ValueError("R-hat needs at least two chains")
    if n < 2:
        raise ValueError("R-hat needs at least two draws per chain")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B_over_n = means.var(axis=0, ddof=1)
    V = (n - 1) / n * W + B_over_n
    degenerate = W <= 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(V / np.where(degenerate, 1.0, W))
    rhat = np.where(degenerate, np.where(B_over_n > 0, np.inf, 1.0), rhat)
    return RhatResult(rhat, degenerate)


def rhat_table(traces: list[ChainTrace]) -> dict:
    """R-hat of every |continuous parameter| per block across chains."""
    if len(traces) < 2:
        raise ValueError("R-hat unavailable with a single chain")
    blocks = [t.abs_parameter_series() for t in traces]
    lengths = {b["gamma"].shape[0] for b in blocks}
    if len(lengths) != 1:
        raise ValueError("chains must have equal retained lengths")
    return {name: gelman_rubin(np.stack([b[name] for b in blocks])) for name in blocks[0]}


RHAT_FIELDS = ["parameter", "n", "max_rhat", "median_rhat", "n_above_limit", "n_degenerate"]


def rhat_rows(table: dict) -> list[dict]:
    """One row per parameter block: size, max and median R-hat, exceedances."""
    rows = []
    for name, res in table.items():
        rows.append({"parameter": name, "n": int(res.rhat.size), "max_rhat": float(np.max(res.rhat)),
                     "median_rhat": float(np.median(res.rhat)),
                     "n_above_limit": int(np.sum(res.rhat >= RHAT_LIMIT)),
                     "n_degenerate": int(np.sum(res.degenerate))})
    return rows


# ---------------------------------------------------------------------------
# posterior summary
# ---------------------------------------------------------------------------


def snr_summary(traces: list[ChainTrace]) -> np.ndarray:
    """Posterior-mean SNR (q x E) pooled over chains."""
    return np.mean([t.snr_mean for t in traces], axis=0)


def _scalar_summary(x) -> dict:
    x = np.asarray(x, dtype=float)
    q = np.quantile(x, [0.025, 0.5, 0.975])
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "q025": float(q[0]), "median": float(q[1]), "q975": float(q[2])}


@dataclass
class PosteriorSummary:
    """Pooled posterior summaries of one fit."""

    theta_post: np.ndarray
    snr: np.ndarray
    param_summaries: dict
    rhat: dict | None
    pathway_ids: list
    experiment_ids: list
    experiment_is_control: np.ndarray
    n_chains: int
    notes: list = field(default_factory=list)

    @property
    def max_rhat(self) -> float:
        if not self.rhat:
            return float("nan")
        return float(max(np.max(r.rhat) for r in self.rhat.values()))

    @property
    def converged(self) -> bool | None:
        """True when every R-hat is below 1.1; None when unavailable."""
        if not self.rhat:
            return None
        return bool(self.max_rhat < RHAT_LIMIT)

    def rhat_rows(self) -> list[dict]:
        return rhat_rows(self.rhat or {})


def summarize(traces: list[ChainTrace], experiment_is_control=None) -> PosteriorSummary:
    """Pool chains into a :class:`PosteriorSummary`."""
    if not traces:
        raise ValueError("no traces to summarize")
    ref = traces[0]
    for t in traces[1:]:
        if t.pathway_ids != ref.pathway_ids or t.experiment_ids != ref.experiment_ids:
            raise ValueError("traces come from different models")
    theta_post = np.mean([t.theta_mean for t in traces], axis=0)
    notes = []
    params = {}
    if all(t.draws for t in traces):
        for name in ("gamma", "sigma2", "tau2"):
            params[name] = _scalar_summary(np.concatenate([t.draws[name] for t in traces]))
        psi = np.concatenate([t.draws["psi"] for t in traces])
        params["psi_mean"] = _scalar_summary(psi.mean(axis=1))
    else:
        for name in ("gamma", "sigma2", "tau2"):
            params[name] = {"mean": float(np.mean([t.means[name] for t in traces]))}
        notes.append("draws not stored: only posterior means reported")
    rhat = None
    if len(traces) >= 2 and all(t.draws for t in traces):
        rhat = rhat_table(traces)
    else:
        notes.append("R-hat unavailable (needs two or more chains with stored draws)")
    if experiment_is_control is None:
        experiment_is_control = np.zeros(len(ref.experiment_ids), dtype=bool)
    return PosteriorSummary(
        theta_post=theta_post,
        snr=snr_summary(traces),
        param_summaries=params,
        rhat=rhat,
        pathway_ids=list(ref.pathway_ids),
        experiment_ids=list(ref.experiment_ids),
        experiment_is_control=np.asarray(experiment_is_control, dtype=bool),
        n_chains=len(traces),
        notes=notes,
    )


# ---------------------------------------------------------------------------
# model fit
# ---------------------------------------------------------------------------


@dataclass
class ModelFitReport:
    standardized: np.ndarray
    gene_means: np.ndarray
    qq_theoretical: np.ndarray
    qq_empirical: np.ndarray
    pooled_mean: float
    pooled_var: float
    mean_z: float

    def to_dict(self) -> dict:
        return {"pooled_mean": self.pooled_mean, "pooled_var": self.pooled_var, "mean_z": self.mean_z,
                "n_values": int(self.standardized.size)}


def plug_in_covariances(model: Model, Lambda, Phi, sigma2: float, tau2: float, Psi, theta_post) -> list[np.ndarray]:
    """Marginal covariance of ``Y_i`` per experiment from plug-in estimates.

    The spike-and-slab variance uses the posterior inclusion probability:
    ``tau2 * (P + v0 (1 - P))``.
    """
    v0 = model.hyper.v0
    out = []
    for e in range(model.E):
        P = np.asarray(theta_post)[:, e]
        V = omega_marginal_cov(Phi, sigma2, tau2 * (P + v0 * (1.0 - P)))
        C = Lambda @ V @ Lambda.T
        C[np.diag_indices_from(C)] += Psi
        out.append(0.5 * (C + C.T))
    return out


def model_fit_standardize(model: Model, traces: list[ChainTrace]) -> ModelFitReport:
    """Whiten each column by the Cholesky factor of its plug-in covariance.

    Under a well-fitting model the standardized values are iid N(0, 1): the
    report gives their pooled mean and variance, the z-score of the pooled
    mean, per-gene averages over samples and normal QQ coordinates of those
    averages (scaled by sqrt(n) to unit variance).
    """
    Lambda = np.mean([t.means["lambda"] for t in traces], axis=0)
    Phi = np.mean([t.means["phi"] for t in traces], axis=0)
    sigma2 = float(np.mean([t.means["sigma2"] for t in traces]))
    tau2 = float(np.mean([t.means["tau2"] for t in traces]))
    Psi = np.mean([t.means["psi"] for t in traces], axis=0)
    theta_post = np.mean([t.theta_mean for t in traces], axis=0)
    covs = plug_in_covariances(model, Lambda, Phi, sigma2, tau2, Psi, theta_post)
    return standardize_with(model.Y, model.experiment_cols, covs)


def standardize_with(Y, experiment_cols, covs) -> ModelFitReport:
    Y = np.asarray(Y, dtype=float)
    Z = np.empty_like(Y)
    for cols, C in zip(experiment_cols, covs):
        L = cholesky_jitter(C, "plug-in covariance of Y")
        Z[:, cols] = linalg.solve_triangular(L, Y[:, cols], lower=True)
    p, n = Z.shape
    mean = float(Z.mean())
    var = float(Z.var(ddof=1))
    gene_means = Z.mean(axis=1)
    emp = np.sort(gene_means * math.sqrt(n))
    theo = stats.norm.ppf((np.arange(1, p + 1) - 0.5) / p)
    return ModelFitReport(Z, gene_means, theo, emp, mean, var, mean * math.sqrt(Z.size) / math.sqrt(var))


# ---------------------------------------------------------------------------
# leave-one-out control validation
# ---------------------------------------------------------------------------


@dataclass
class LooFold:
    control_id: str
    theta_post: np.ndarray
    threshold: Threshold
    n_selected: int


def loo_dataset(data: ExpressionDataset, sample_id: str) -> ExpressionDataset:
    """Move one control into its own case experiment and recenter on the rest."""
    idx = [s.sample_id for s in data.samples].index(sample_id)
    held = data.samples[idx]
    if not held.is_control:
        raise ValueError(f"{sample_id} is not a control sample")
    samples = [s if i != idx else Sample(s.sample_id, f"loo:{s.sample_id}", 1, False)
               for i, s in enumerate(data.samples)]
    return ExpressionDataset.from_raw(data.Y, data.gene_ids, samples)


def loo_control_validation(data: ExpressionDataset, mask: LoadingMask, network: PathwayNetwork,
                           config: SamplerConfig, hyper: Hyperparameters | None = None, level: float = 0.05,
                           efa: bool = False, controls=None) -> list[LooFold]:
    """Refit once per control with that control treated as an unknown case.

    The BFDR threshold is chosen on the whole fold (all case experiments and
    the held-out column); ``n_selected`` counts selections in the held-out
    column.
    """
    control_ids = [s.sample_id for s in data.samples if s.is_control]
    if len(control_ids) < 2:
        raise ValueError("leave-one-out needs at least two control samples")
    folds = []
    for cid in control_ids if controls is None else controls:
        fold_data = loo_dataset(data, cid)
        model = Model(fold_data, mask, network, hyper, efa=efa)
        traces = run_chains(model, config)
        theta = np.mean([t.theta_mean for t in traces], axis=0)
        thr = threshold_for_bfdr(theta, level)
        col = fold_data.experiment_ids.index(f"loo:{cid}")
        held = theta[:, col]
        n_sel = int(np.sum(centroid_select(held, thr.t))) if not thr.empty else 0
        folds.append(LooFold(cid, held, thr, n_sel))
        logger.info("loo %s: %d selected (t=%.3f)", cid, n_sel, thr.t)
    return folds
