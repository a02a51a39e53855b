"""Data types, priors and deterministic densities of the CFA-CAR model.

Genes load on the pathways that contain them (a confirmatory factor level),
pathway factors follow a conditional autoregressive prior over a pathway
network, and perturbation effects carry a spike-and-slab prior.  Per sample
column ``i``::

    Y_i     ~ N(Lambda omega_i, diag(Psi))
    omega_i ~ N(Phi rho_i, sigma2 Phi),        Phi = s2 R(gamma)
    rho_i   ~ N(0, Sigma(theta_e)),            Sigma_jj = tau2 [theta_je + v0 (1 - theta_je)]

where ``e`` is the experiment the column belongs to (replicates share
``theta``).
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .network import GammaSupportError, GeneSetCollection, PathwayNetwork, gamma_support

logger = logging.getLogger(__name__)


class InvalidStateError(ValueError):
    """A model state produced non-finite or non-PD quantities."""


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    sample_id: str
    experiment_id: str
    replicate_index: int
    is_control: bool


@dataclass
class ExpressionDataset:
    """Centered p x N expression matrix with per-column sample metadata.

    ``Y`` must already be centered on the control-column mean of each gene;
    use :meth:`from_raw` to center an uncentered matrix.
    """

    Y: np.ndarray
    gene_ids: list[str]
    samples: list[Sample]
    experiment_ids: list[str] = field(init=False)
    col_experiment: np.ndarray = field(init=False)
    experiment_is_control: np.ndarray = field(init=False)

    def __post_init__(self):
        self.Y = np.ascontiguousarray(self.Y, dtype=float)
        p, n = self.Y.shape
        if len(self.gene_ids) != p:
            raise ValueError("gene_ids length must match the number of rows of Y")
        if len(set(self.gene_ids)) != p:
            raise ValueError("gene ids must be unique")
        if len(self.samples) != n:
            raise ValueError("sample metadata length must match the number of columns of Y")
        if len({s.sample_id for s in self.samples}) != n:
            raise ValueError("sample ids must be unique")
        experiments: dict[str, bool] = {}
        for s in self.samples:
            if s.experiment_id in experiments and experiments[s.experiment_id] != s.is_control:
                raise ValueError(f"experiment {s.experiment_id!r} mixes case and control columns")
            experiments.setdefault(s.experiment_id, s.is_control)
        self.experiment_ids = list(experiments)
        index = {e: i for i, e in enumerate(self.experiment_ids)}
        self.col_experiment = np.array([index[s.experiment_id] for s in self.samples], dtype=np.intp)
        self.experiment_is_control = np.array([experiments[e] for e in self.experiment_ids], dtype=bool)
        if not self.is_control.any():
            raise ValueError("at least one control column is required for centering")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("expression matrix contains non-finite values")
        resid = np.abs(self.Y[:, self.is_control].mean(axis=1))
        scale = max(1.0, float(np.abs(self.Y).max(initial=0.0)))
        if resid.size and resid.max() > 1e-8 * scale:
            raise ValueError("Y is not centered on the control mean; use ExpressionDataset.from_raw")

    @classmethod
    def from_raw(cls, Y_raw, gene_ids: Sequence[str], samples: Sequence[Sample]) -> "ExpressionDataset":
        Y_raw = np.asarray(Y_raw, dtype=float)
        ctrl = np.array([s.is_control for s in samples], dtype=bool)
        if not ctrl.any():
            raise ValueError("at least one control column is required for centering")
        return cls(Y_raw - Y_raw[:, ctrl].mean(axis=1, keepdims=True), list(gene_ids), list(samples))

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def n_experiments(self) -> int:
        return len(self.experiment_ids)

    @property
    def is_control(self) -> np.ndarray:
        return np.array([s.is_control for s in self.samples], dtype=bool)

    def experiment_columns(self, e: int) -> np.ndarray:
        return np.flatnonzero(self.col_experiment == e)

    def subset_genes(self, gene_ids: Sequence[str]) -> "ExpressionDataset":
        index = {g: i for i, g in enumerate(self.gene_ids)}
        rows = [index[g] for g in gene_ids]
        return ExpressionDataset(self.Y[rows], list(gene_ids), list(self.samples))


# ---------------------------------------------------------------------------
# loading mask
# ---------------------------------------------------------------------------


@dataclass
class LoadingMask:
    """Binary gene x pathway membership fixing the structural zeros of Lambda."""

    mask: np.ndarray
    gene_ids: list[str]
    pathway_ids: list[str]
    excluded_genes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.mask.shape != (len(self.gene_ids), len(self.pathway_ids)):
            raise ValueError("mask shape must be genes x pathways")
        if np.any(self.mask.sum(axis=1) == 0):
            raise ValueError("every retained gene must belong to at least one pathway")

    @property
    def row_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def nnz(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def from_catalog(
        cls, catalog: GeneSetCollection, gene_ids: Sequence[str], pathway_ids: Sequence[str] | None = None
    ) -> "LoadingMask":
        """Mask for ``gene_ids`` x ``pathway_ids``; genes in no pathway are excluded."""
        pathway_ids = list(pathway_ids if pathway_ids is not None else catalog.ids)
        missing = [p for p in pathway_ids if p not in catalog.sets]
        if missing:
            raise ValueError(f"pathways missing from catalog: {missing}")
        full = np.array([[g in catalog.sets[p] for p in pathway_ids] for g in gene_ids], dtype=np.uint8)
        full = full.reshape(len(gene_ids), len(pathway_ids))
        keep = full.sum(axis=1) > 0
        excluded = [g for g, k in zip(gene_ids, keep) if not k]
        if excluded:
            logger.info("excluding %d gene(s) that belong to no retained pathway", len(excluded))
        return cls(full[keep], [g for g, k in zip(gene_ids, keep) if k], pathway_ids, excluded)


def align_inputs(data: ExpressionDataset, catalog: GeneSetCollection, network: PathwayNetwork):
    """Restrict data and catalog to a consistent gene x pathway universe.

    Pathways follow the network order (pathways dropped from the network are
    dropped from the mask).  Returns ``(data, mask)`` with ``data`` limited to
    genes that belong to at least one retained pathway.
    """
    mask = LoadingMask.from_catalog(catalog, data.gene_ids, network.pathway_ids)
    if not mask.gene_ids:
        raise ValueError("no expressed gene belongs to any retained pathway")
    return data.subset_genes(mask.gene_ids), mask


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------


@dataclass
class Hyperparameters:
    alpha: float = 0.1
    v0: float = 0.01
    kappa: float = 0.5
    lambda_prior_var: float = 0.1
    s2: float = 1.0
    delta_gamma: float = 0.005
    sigma2_shape: float = 0.001
    sigma2_rate: float = 0.001
    tau2_shape: float = 0.001
    tau2_rate: float = 0.001

    def __post_init__(self):
        for name in ("alpha", "v0", "kappa"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        for name in ("lambda_prior_var", "s2", "delta_gamma", "sigma2_shape", "sigma2_rate", "tau2_shape", "tau2_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.s2 != 1.0 or self.lambda_prior_var != 0.1:
            logger.warning("identifiability defaults overridden (s2=%g, lambda_prior_var=%g)", self.s2, self.lambda_prior_var)

    @property
    def logit_alpha(self) -> float:
        return math.log(self.alpha) - math.log1p(-self.alpha)

    def zeta(self, n: int) -> float:
        """Shape of the gene-variance prior IG(zeta, zeta - 1) for ``n`` columns."""
        return self.kappa * n / 2.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass
class ModelState:
    """One snapshot of a chain.

    ``Omega`` and ``Rho`` are q x N (one column per sample); ``Theta`` is
    q x E (one column per experiment).  ``Phi`` and its Cholesky factor are
    caches of ``s2 R(gamma)`` kept in step with ``gamma``.
    """

    Lambda: np.ndarray
    Omega: np.ndarray
    Rho: np.ndarray
    Theta: np.ndarray
    gamma: float
    Psi: np.ndarray
    sigma2: float
    tau2: float
    Phi: np.ndarray
    Phi_chol: np.ndarray

    def copy(self) -> "ModelState":
        return ModelState(**{f.name: _copy(getattr(self, f.name)) for f in dataclasses.fields(self)})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, f.name))) for f in dataclasses.fields(self))


def _copy(x):
    return x.copy() if isinstance(x, np.ndarray) else x


class Model:
    """Read-only inputs shared by all chains: data, mask, network, priors.

    ``efa=True`` (or an edgeless network) gives the network-free baseline in
    which ``gamma`` is pinned to 0 and ``R = I``.
    """

    def __init__(self, data: ExpressionDataset, mask: LoadingMask, network: PathwayNetwork,
                 hyper: Hyperparameters | None = None, efa: bool = False):
        if list(mask.gene_ids) != list(data.gene_ids):
            raise ValueError("mask genes must match data genes (use align_inputs)")
        if list(mask.pathway_ids) != list(network.pathway_ids):
            raise ValueError("mask pathways must match network pathways")
        self.data = data
        self.mask = mask
        self.hyper = hyper or Hyperparameters()
        self.efa = bool(efa) or network.is_empty
        self.network = network.empty_like() if efa else network
        self.W = self.network.W
        self.support = gamma_support(self.network, self.hyper.delta_gamma)
        self.Y = data.Y
        self.p, self.n = data.Y.shape
        self.q = network.q
        self.E = data.n_experiments
        self.col_experiment = data.col_experiment
        self.experiment_cols = [data.experiment_columns(e) for e in range(self.E)]
        self.theta_free = ~data.experiment_is_control
        if not self.theta_free.any():
            raise ValueError("no case experiments: nothing to infer")
        self.zeta = self.hyper.zeta(self.n)
        if self.zeta <= 1.0:
            raise ValueError(f"kappa * n / 2 = {self.zeta:g} must exceed 1 for a proper gene-variance prior")
        self.mask_index = np.nonzero(mask.mask)

    def phi(self, gamma: float) -> tuple[np.ndarray, np.ndarray]:
        """``Phi = s2 R(gamma)`` and its lower Cholesky factor."""
        Phi = self.hyper.s2 * correlation_from_gamma(self.W, gamma)
        try:
            chol = np.linalg.cholesky(Phi)
        except np.linalg.LinAlgError:
            raise GammaSupportError(f"Phi is not positive definite at gamma={gamma}") from None
        return Phi, chol

    def initial_state(self, rng: np.random.Generator, gamma: float = 0.0) -> ModelState:
        """Lambda from its prior on free entries, everything else at neutral values.

        ``gamma`` is the starting spatial parameter (pinned to 0 under EFA).
        """
        Lambda = np.where(self.mask.mask, rng.normal(0.0, math.sqrt(self.hyper.lambda_prior_var), self.mask.mask.shape), 0.0)
        if self.efa:
            gamma = 0.0
        lo, hi = self.support
        if not self.efa and not lo < gamma < hi:
            raise ValueError(f"initial gamma {gamma} outside support ({lo}, {hi})")
        Phi, chol = self.phi(gamma)
        return ModelState(
            Lambda=Lambda,
            Omega=np.zeros((self.q, self.n)),
            Rho=np.zeros((self.q, self.n)),
            Theta=np.zeros((self.q, self.E), dtype=np.int8),
            gamma=float(gamma),
            Psi=np.ones(self.p),
            sigma2=1.0,
            tau2=1.0,
            Phi=Phi,
            Phi_chol=chol,
        )

    def set_gamma(self, state: ModelState, gamma: float) -> None:
        state.Phi, state.Phi_chol = self.phi(gamma)
        state.gamma = float(gamma)

    def column_theta(self, state: ModelState) -> np.ndarray:
        """q x N indicators expanded from experiments to their columns."""
        return state.Theta[:, self.col_experiment]


# ---------------------------------------------------------------------------
# deterministic computations
# ---------------------------------------------------------------------------


def correlation_from_gamma(net, gamma: float) -> np.ndarray:
    """Correlation matrix induced by ``G = (I - gamma W)^{-1}``.

    ``R = diag(G)^{-1/2} G diag(G)^{-1/2}``; ``G`` is obtained from a Cholesky
    solve, never an explicit inverse.
    """
    W = np.asarray(getattr(net, "W", net), dtype=float)
    q = W.shape[0]
    if gamma == 0.0:
        return np.eye(q)
    try:
        cf = linalg.cho_factor(np.eye(q) - gamma * W, lower=True)
    except linalg.LinAlgError:
        raise GammaSupportError(f"I - gamma W is not positive definite at gamma={gamma}") from None
    G = linalg.cho_solve(cf, np.eye(q))
    d = 1.0 / np.sqrt(np.diag(G))
    R = G * np.outer(d, d)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def spike_slab_diag(theta, tau2: float, v0: float) -> np.ndarray:
    """Diagonal of ``Sigma(theta)``: ``tau2`` where theta=1, ``v0 tau2`` where theta=0."""
    theta = np.asarray(theta)
    return tau2 * np.where(theta != 0, 1.0, v0)


def omega_marginal_cov(Phi, sigma2: float, sigma_diag) -> np.ndarray:
    """``V(theta) = sigma2 Phi + Phi Sigma(theta) Phi``: covariance of omega with rho integrated out."""
    V = sigma2 * Phi + (Phi * sigma_diag[None, :]) @ Phi.T
    return 0.5 * (V + V.T)


def cholesky_jitter(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, retrying once with ``1e-8 * mean(diag)`` jitter."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        jitter = 1e-8 * float(np.mean(np.diag(A)))
        logger.warning("%s not positive definite; retrying with jitter %.3g", what, jitter)
        try:
            return np.linalg.cholesky(A + jitter * np.eye(A.shape[0]))
        except np.linalg.LinAlgError:
            raise InvalidStateError(f"{what} is not positive definite") from None


def marginal_cov_y(Lambda, Phi, sigma2: float, tau2: float, v0: float, Psi, theta_e) -> np.ndarray:
    """Covariance of ``Y_i`` with omega and rho integrated out.

    ``Lambda Phi Sigma(theta) Phi^T Lambda^T + sigma2 Lambda Phi Lambda^T + Psi``,
    assembled through the q x q inner matrix ``V(theta)``.
    """
    V = omega_marginal_cov(Phi, sigma2, spike_slab_diag(theta_e, tau2, v0))
    C = Lambda @ V @ Lambda.T
    C[np.diag_indices_from(C)] += Psi
    C = 0.5 * (C + C.T)
    cholesky_jitter(C, "marginal covariance of Y")
    return C


def log_likelihood_omega(Omega, Rho, Phi, sigma2: float, Phi_chol=None) -> float:
    """Gamma-dependent part of ``log p(Omega | Rho, Phi, sigma2)``.

    ``-(N/2) log|Phi| - 1/2 sum_i (w_i - Phi r_i)^T (sigma2 Phi)^{-1} (w_i - Phi r_i)``,
    the target of the Metropolis step for gamma.
    """
    n = Omega.shape[1]
    L = np.linalg.cholesky(Phi) if Phi_chol is None else Phi_chol
    resid = Omega - Phi @ Rho
    z = linalg.solve_triangular(L, resid, lower=True)
    val = -n * float(np.sum(np.log(np.diag(L)))) - 0.5 * float(np.sum(z * z)) / sigma2
    if not math.isfinite(val):
        raise InvalidStateError("non-finite omega log-likelihood")
    return val


def marginal_loglik_y(model: Model, state: ModelState) -> float:
    """``sum_i log N(Y_i; Lambda Phi rho_i, Psi + sigma2 Lambda Phi Lambda^T)`` (omega integrated out)."""
    Lam, Phi = state.Lambda, state.Phi
    C = state.sigma2 * (Lam @ Phi @ Lam.T)
    C[np.diag_indices_from(C)] += state.Psi
    L = cholesky_jitter(0.5 * (C + C.T), "marginal covariance of Y")
    resid = model.Y - Lam @ (Phi @ state.Rho)
    z = linalg.solve_triangular(L, resid, lower=True)
    p, n = resid.shape
    return float(-0.5 * n * p * math.log(2 * math.pi) - n * np.sum(np.log(np.diag(L))) - 0.5 * np.sum(z * z))


def sign_flip(state: ModelState, block: Iterable[int], W) -> ModelState:
    """Flip the signs of Lambda columns and Omega/Rho rows for ``block``.

    ``block`` must be a union of connected components of the nonzero pattern
    of ``W``; under that condition the distribution of ``Y`` is unchanged.
    """
    from .network import connected_components

    block = sorted(set(int(b) for b in block))
    W = np.asarray(getattr(W, "W", W))
    members = set(block)
    for comp in connected_components(W):
        inside = members.intersection(comp)
        if inside and len(inside) != len(comp):
            raise ValueError(f"block {block} splits the connected component {comp}")
    out = state.copy()
    out.Lambda[:, block] *= -1
    out.Omega[block, :] *= -1
    out.Rho[block, :] *= -1
    return out


def snr_matrix(Rho, Theta, sigma2: float, col_experiment, v0: float) -> np.ndarray:
    """Per-draw signal-to-noise ratio, q x E.

    For experiment ``e`` the mean over its replicate columns of
    ``|rho| / sigma`` when the pathway is perturbed and
    ``|rho| / (sigma sqrt(v0))`` otherwise.
    """
    col_experiment = np.asarray(col_experiment)
    E = Theta.shape[1]
    scale = np.where(Theta[:, col_experiment] != 0, 1.0, math.sqrt(v0)) * math.sqrt(sigma2)
    ratio = np.abs(Rho) / scale
    counts = np.bincount(col_experiment, minlength=E)
    out = np.zeros((Rho.shape[0], E))
    np.add.at(out.T, col_experiment, ratio.T)
    return out / np.maximum(counts, 1)[None, :]
