"""Simulation harness: toy pathway networks, data at controlled SNR, ROC/AUC
comparison of the network model against the network-free (EFA) baseline,
and robustness to corrupted pathway databases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ExpressionDataset, Hyperparameters, LoadingMask, Model, Sample, correlation_from_gamma
from .network import GeneSetCollection, PathwayNetwork, build_network, gamma_support
from .sampler import ChainFailure, SamplerConfig, run_chains

logger = logging.getLogger(__name__)

SNR_GRID = (0.5, 1.5, 2.5, 3.5, 4.5, 5.5)
CORRUPTION_GRID = (0.01, 0.02, 0.04, 0.08, 0.16, 0.32)


def synthetic_catalogs(
    q: int = 10,
    n_genes: int = 1500,
    n_functions: int = 30,
    pathway_size: tuple[int, int] = (40, 160),
    function_size: tuple[int, int] = (10, 40),
    anchor_fraction: float = 0.9,
    pair_prob: float = 0.6,
    reach: int = 2,
    seed=0,
) -> tuple[GeneSetCollection, GeneSetCollection]:
    """Random pathway and function collections with a sparse, KEGG-like network.

    Pathways are uniform random subsets of an ``n_genes`` universe.  Each
    function draws ``anchor_fraction`` of its genes from one anchor pathway,
    or with probability ``pair_prob`` from the union of that pathway and a
    ring neighbour at most ``reach`` positions away; the remainder comes
    from the whole universe.  Shared functions link pathways in the
    projected network, so links concentrate between ring neighbours.
    """
    rng = np.random.default_rng(seed)
    universe = np.array([f"G{i:04d}" for i in range(n_genes)])
    pathways = {}
    for j in range(q):
        size = rng.integers(pathway_size[0], pathway_size[1] + 1)
        pathways[f"P{j + 1:02d}"] = frozenset(rng.choice(universe, size=size, replace=False).tolist())
    pw_ids = list(pathways)
    functions = {}
    for f in range(n_functions):
        centre = int(rng.integers(q))
        anchors = [centre]
        if q > 1 and rng.random() < pair_prob:
            offset = int(rng.integers(1, reach + 1)) * (1 if rng.random() < 0.5 else -1)
            anchors.append((centre + offset) % q)
        pool = sorted(set().union(*(pathways[pw_ids[a]] for a in anchors)))
        size = int(rng.integers(function_size[0], function_size[1] + 1))
        n_anchor = min(len(pool), int(round(anchor_fraction * size)))
        genes = set(rng.choice(pool, size=n_anchor, replace=False).tolist())
        genes.update(rng.choice(universe, size=size - n_anchor, replace=False).tolist())
        functions[f"F{f + 1:03d}"] = frozenset(genes)
    return GeneSetCollection(pathways), GeneSetCollection(functions)


@dataclass
class SimScenario:
    """One simulated design: network, mask, SNR and case/control layout.

    Case experiments each perturb exactly one pathway with effect ``snr``
    (pathway noise sd fixed to 1, so SNR equals the effect size); the
    control columns form one experiment with indicators fixed to zero.
    """

    network: PathwayNetwork
    mask: LoadingMask
    snr: float
    n_case_experiments: int = 10
    replicates_per_experiment: int = 5
    n_controls: int = 50
    gamma_true: float | None = None
    gamma_fraction: float = 0.9
    psi_true: float = 1.0
    sigma_true: float = 1.0
    lambda_var: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.snr < 0:
            raise ValueError("snr must be non-negative")
        if self.gamma_true is None:
            self.gamma_true = self.gamma_fraction * gamma_support(self.network)[1]

    @property
    def n_cases(self) -> int:
        return self.n_case_experiments * self.replicates_per_experiment


def scenario_from_catalogs(pathways: GeneSetCollection, functions: GeneSetCollection, snr: float,
                           jaccard_threshold: float = 0.03, **kwargs) -> SimScenario:
    net = build_network(pathways, functions, jaccard_threshold)
    mask = LoadingMask.from_catalog(pathways, pathways.genes(), net.pathway_ids)
    return SimScenario(network=net, mask=mask, snr=snr, **kwargs)


def generate_dataset(scenario: SimScenario, return_params: bool = False):
    """Draw a centered dataset and the true q x E perturbation indicators.

    Loadings are N(0, lambda_var) on the mask, factors follow the CAR prior
    with ``Phi = R(gamma_true)``, and genes get N(0, psi_true) noise.
    """
    rng = np.random.default_rng(scenario.seed)
    mask = scenario.mask.mask.astype(bool)
    p, q = mask.shape
    Lambda = np.where(mask, rng.normal(0.0, math.sqrt(scenario.lambda_var), mask.shape), 0.0)
    Phi = correlation_from_gamma(scenario.network.W, scenario.gamma_true)
    chol = np.linalg.cholesky(Phi)
    targets = np.concatenate([rng.permutation(q) for _ in range(-(-scenario.n_case_experiments // q))])
    targets = targets[: scenario.n_case_experiments]

    samples, rho_cols = [], []
    for e in range(scenario.n_case_experiments):
        for r in range(scenario.replicates_per_experiment):
            samples.append(Sample(f"exp{e + 1:02d}_r{r + 1}", f"exp{e + 1:02d}", r + 1, False))
            rho = np.zeros(q)
            rho[targets[e]] = scenario.snr
            rho_cols.append(rho)
    for c in range(scenario.n_controls):
        samples.append(Sample(f"ctrl{c + 1:02d}", "control", c + 1, True))
        rho_cols.append(np.zeros(q))
    Rho = np.array(rho_cols).T
    n = Rho.shape[1]
    Omega = Phi @ Rho + scenario.sigma_true * chol @ rng.standard_normal((q, n))
    Y = Lambda @ Omega + math.sqrt(scenario.psi_true) * rng.standard_normal((p, n))
    data = ExpressionDataset.from_raw(Y, scenario.mask.gene_ids, samples)

    truth = np.zeros((q, data.n_experiments), dtype=np.int8)
    for e in range(scenario.n_case_experiments):
        truth[targets[e], data.experiment_ids.index(f"exp{e + 1:02d}")] = 1
    if return_params:
        return data, truth, {"Lambda": Lambda, "Omega": Omega, "Rho": Rho, "Phi": Phi, "targets": targets}
    return data, truth


def corrupt_catalog(catalog: GeneSetCollection, fraction: float, seed=0) -> GeneSetCollection:
    """Reassign ``round(fraction * n_genes)`` random genes to other pathways.

    Each chosen gene leaves every pathway it belonged to and joins as many
    pathways, drawn uniformly from those that did not contain it.  Pathways
    left empty are dropped.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    genes = catalog.genes()
    n_move = int(round(fraction * len(genes)))
    if n_move == 0:
        return GeneSetCollection(dict(catalog.sets))
    rng = np.random.default_rng(seed)
    ids = catalog.ids
    members = {pid: set(gs) for pid, gs in catalog}
    moved = rng.choice(len(genes), size=n_move, replace=False)
    original = {pid: set(gs) for pid, gs in catalog}
    for gi in sorted(moved):
        g = genes[gi]
        old = [pid for pid in ids if g in original[pid]]
        others = [pid for pid in ids if g not in original[pid]]
        for pid in old:
            members[pid].discard(g)
        k = min(len(old), len(others))
        if k:
            for idx in rng.choice(len(others), size=k, replace=False):
                members[others[idx]].add(g)
    kept = {pid: frozenset(gs) for pid, gs in members.items() if gs}
    if len(kept) < len(members):
        logger.warning("corruption emptied %d pathway(s)", len(members) - len(kept))
    return GeneSetCollection(kept)


@dataclass
class RocResult:
    points: list
    auc: float
    degenerate: bool = False


def roc_from_posterior(theta_post, truth, cells=None) -> RocResult:
    """ROC by sweeping a threshold over the unique posterior values.

    ``cells`` optionally restricts the evaluation to a boolean mask of the
    same shape (e.g. case experiments only).  Ties move diagonally, so the
    trapezoidal AUC equals the Mann-Whitney statistic with ties counted half.
    """
    post = np.asarray(theta_post, dtype=float)
    truth = np.asarray(truth)
    if post.shape != truth.shape:
        raise ValueError("theta_post and truth must have the same shape")
    if cells is not None:
        cells = np.asarray(cells, dtype=bool)
        post, truth = post[cells], truth[cells]
    post, truth = post.ravel(), truth.ravel().astype(bool)
    if not np.isin(np.unique(truth.astype(int)), [0, 1]).all():
        raise ValueError("truth must be binary")
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        return RocResult([(0.0, 0.0), (1.0, 1.0)], float("nan"), degenerate=True)
    points = [(0.0, 0.0)]
    for t in np.unique(post)[::-1]:
        sel = post >= t
        points.append((float(np.sum(sel & ~truth) / n_neg), float(np.sum(sel & truth) / n_pos)))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    fpr = np.array([pt[0] for pt in points])
    tpr = np.array([pt[1] for pt in points])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocResult(points, auc)


def fit_theta_posterior(data, mask, network, config: SamplerConfig, hyper=None, efa=False, jobs=1) -> np.ndarray:
    """Posterior mean of theta (q x E), pooled over chains."""
    model = Model(data, mask, network, hyper or Hyperparameters(), efa=efa)
    traces = run_chains(model, config, jobs=jobs)
    return np.mean([t.theta_mean for t in traces], axis=0)


def _pad_rows(theta_post, fitted_ids, all_ids):
    out = np.zeros((len(all_ids), theta_post.shape[1]))
    index = {p: i for i, p in enumerate(fitted_ids)}
    for i, pid in enumerate(all_ids):
        if pid in index:
            out[i] = theta_post[index[pid]]
    return out


@dataclass
class BenchSpec:
    """Scenario grid for :func:`run_comparison` and :func:`run_robustness`."""

    kind: str = "snr"
    snr: list = field(default_factory=lambda: list(SNR_GRID))
    corruption: list = field(default_factory=lambda: list(CORRUPTION_GRID))
    corruption_snr: float = 3.5
    replicates: int = 10
    models: list = field(default_factory=lambda: ["cfa-car", "efa"])
    q: int = 10
    n_genes: int = 1500
    n_functions: int = 30
    network_seed: int = 1
    jaccard_threshold: float = 0.03
    n_case_experiments: int = 10
    replicates_per_experiment: int = 5
    n_controls: int = 50
    gamma_fraction: float = 0.9
    seed: int = 0
    sampler: dict = field(default_factory=lambda: {"iterations": 2000, "burn_in": 1000, "chains": 1})
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("snr", "corruption"):
            raise ValueError("kind must be 'snr' or 'corruption'")
        grid = self.snr if self.kind == "snr" else self.corruption
        if not grid:
            raise ValueError("scenario grid is empty")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        unknown = set(self.models) - {"cfa-car", "efa"}
        if unknown or not self.models:
            raise ValueError(f"unknown models {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        import dataclasses

        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown scenario keys {sorted(extra)}")
        return cls(**d)

    def catalogs(self):
        return synthetic_catalogs(self.q, self.n_genes, self.n_functions, seed=self.network_seed)

    def scenario(self, pathways, functions, snr: float, seed: int) -> SimScenario:
        return scenario_from_catalogs(
            pathways, functions, snr, self.jaccard_threshold,
            n_case_experiments=self.n_case_experiments,
            replicates_per_experiment=self.replicates_per_experiment,
            n_controls=self.n_controls, gamma_fraction=self.gamma_fraction, seed=seed,
        )


def _replicate_seed(base: int, *keys) -> int:
    return int(np.random.SeedSequence([base, *keys]).generate_state(1)[0])


def _fit_one(data, mask, network, config, hyper, efa, truth, case_cells, all_ids):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        try:
            post = fit_theta_posterior(data, mask, network, config, hyper, efa=efa)
        except (ChainFailure, ValueError) as exc:
            logger.warning("replicate failed: %s", exc)
            return None, None
    post = _pad_rows(post, network.pathway_ids, all_ids)
    return roc_from_posterior(post, truth, case_cells).auc, post


def _summarize(rows_raw, key):
    table = []
    for (level, model), aucs in rows_raw.items():
        ok = [a for a in aucs if a is not None and not math.isnan(a)]
        n_fail = len(aucs) - len(ok)
        mean = float(np.mean(ok)) if ok else float("nan")
        se = float(np.std(ok, ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else 0.0
        table.append({key: level, "model": model, "mean_auc": mean, "stderr": se,
                      "n_ok": len(ok), "n_failed": n_fail, "aucs": list(aucs)})
    return table


def run_comparison(spec: BenchSpec, jobs: int = 1) -> list[dict]:
    """AUC of each model at each SNR over ``spec.replicates`` simulated datasets.

    Both models are fit to the identical dataset in every replicate.
    """
    from joblib import Parallel, delayed

    pathways, functions = spec.catalogs()
    config = SamplerConfig.from_dict({"seed": spec.seed, **spec.sampler})
    hyper = Hyperparameters.from_dict(spec.hyper)
    tasks, keys = [], []
    for snr in spec.snr:
        for r in range(spec.replicates):
            sc = spec.scenario(pathways, functions, snr, _replicate_seed(spec.seed, r, int(round(snr * 1000))))
            data, truth = generate_dataset(sc)
            cells = np.broadcast_to(~data.experiment_is_control[None, :], truth.shape)
            for model in spec.models:
                cfg = SamplerConfig.from_dict({**config.to_dict(), "seed": _replicate_seed(spec.seed, r, 7)})
                tasks.append(delayed(_fit_one)(data, sc.mask, sc.network, cfg, hyper, model == "efa",
                                               truth, cells, sc.network.pathway_ids))
                keys.append((snr, model))
    results = Parallel(n_jobs=jobs)(tasks) if jobs != 1 else [t[0](*t[1], **t[2]) for t in tasks]
    raw: dict = {}
    for key, (auc, _) in zip(keys, results):
        raw.setdefault(key, []).append(auc)
    return _summarize(raw, "snr")


def run_robustness(spec: BenchSpec, jobs: int = 1) -> list[dict]:
    """AUC under randomly reassigned genes at each corruption level (plus level 0).

    The data of replicate ``r`` is generated once from the true catalog; each
    corruption level rebuilds the mask and network from a corrupted catalog
    and refits on the untouched data.
    """
    from joblib import Parallel, delayed

    pathways, functions = spec.catalogs()
    config = SamplerConfig.from_dict({"seed": spec.seed, **spec.sampler})
    hyper = Hyperparameters.from_dict(spec.hyper)
    levels = [0.0] + [float(x) for x in spec.corruption if x != 0]
    tasks, keys = [], []
    for r in range(spec.replicates):
        sc = spec.scenario(pathways, functions, spec.corruption_snr, _replicate_seed(spec.seed, r, 35))
        data, truth = generate_dataset(sc)
        cells = np.broadcast_to(~data.experiment_is_control[None, :], truth.shape)
        all_ids = sc.network.pathway_ids
        for level in levels:
            corrupted = corrupt_catalog(pathways, level, _replicate_seed(spec.seed, r, int(level * 1e4)))
            net = build_network(corrupted, functions, spec.jaccard_threshold)
            mask = LoadingMask.from_catalog(corrupted, data.gene_ids, net.pathway_ids)
            fit_data = data.subset_genes(mask.gene_ids)
            for model in spec.models:
                cfg = SamplerConfig.from_dict({**config.to_dict(), "seed": _replicate_seed(spec.seed, r, 7)})
                tasks.append(delayed(_fit_one)(fit_data, mask, net, cfg, hyper, model == "efa",
                                               truth, cells, all_ids))
                keys.append((level, model))
    results = Parallel(n_jobs=jobs)(tasks) if jobs != 1 else [t[0](*t[1], **t[2]) for t in tasks]
    raw: dict = {}
    for key, (auc, _) in zip(keys, results):
        raw.setdefault(key, []).append(auc)
    return _summarize(raw, "corruption")


def write_simulated_inputs(out_dir, spec: BenchSpec | None = None, snr: float = 3.5, seed: int = 0) -> dict:
    """Write a simulated study as CLI inputs.

    Produces ``expr.tsv``, ``samples.tsv``, ``pathways.gmt``, ``functions.gmt``
    and the true indicators ``truth.csv``; returns their paths.
    """
    from pathlib import Path

    from . import io
    from .network import write_gmt

    spec = spec or BenchSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pathways, functions = spec.catalogs()
    sc = spec.scenario(pathways, functions, snr, seed)
    data, truth = generate_dataset(sc)
    paths = {name: out / name for name in ("expr.tsv", "samples.tsv", "pathways.gmt", "functions.gmt", "truth.csv")}
    io.write_expression(paths["expr.tsv"], data.Y, data.gene_ids, [s.sample_id for s in data.samples])
    io.write_samples(paths["samples.tsv"], data.samples)
    write_gmt(pathways, paths["pathways.gmt"])
    write_gmt(functions, paths["functions.gmt"])
    io.write_matrix_csv(paths["truth.csv"], truth, sc.network.pathway_ids, data.experiment_ids, fmt="%d")
    return {k: str(v) for k, v in paths.items()}
