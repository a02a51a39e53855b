"""Pathway-pathway interaction network built from two gene-set collections.

Pathways are linked through the functional annotations (e.g. GO biological
processes) they overlap with.  The bipartite pathway/function graph is
weighted by Jaccard index, projected onto the pathway node set and cosine
standardized so that ``W`` has a zero diagonal and entries in ``[0, 1]``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_JACCARD_THRESHOLD = 0.03
DEFAULT_DELTA = 0.005


class GMTFormatError(ValueError):
    """Raised for an unparseable GMT line; carries the 1-based line number."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class GammaSupportError(ValueError):
    """The requested spatial scaling parameter makes ``I - gamma W`` indefinite."""


@dataclass(frozen=True)
class GeneSetCollection:
    """Ordered mapping of set id to a non-empty frozenset of gene ids."""

    sets: Mapping[str, frozenset]

    def __post_init__(self):
        clean = {}
        for set_id, genes in self.sets.items():
            if not isinstance(set_id, str) or not set_id:
                raise ValueError(f"invalid gene set id {set_id!r}")
            genes = frozenset(genes)
            if not genes:
                raise ValueError(f"gene set {set_id!r} is empty")
            if any(not isinstance(g, str) or not g for g in genes):
                raise ValueError(f"gene set {set_id!r} contains an empty gene id")
            clean[set_id] = genes
        object.__setattr__(self, "sets", clean)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Iterable[str]]]) -> "GeneSetCollection":
        sets = {}
        for set_id, genes in pairs:
            if set_id in sets:
                raise ValueError(f"duplicate gene set id {set_id!r}")
            sets[set_id] = frozenset(genes)
        return cls(sets)

    @property
    def ids(self) -> list[str]:
        return list(self.sets)

    def genes(self) -> list[str]:
        """Sorted union of all member genes."""
        return sorted(set().union(*self.sets.values())) if self.sets else []

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets.items())

    def subset(self, ids: Iterable[str]) -> "GeneSetCollection":
        return GeneSetCollection({i: self.sets[i] for i in ids})


def read_gmt(path) -> GeneSetCollection:
    """Parse a GMT file: ``set_id<TAB>description<TAB>gene<TAB>gene...``.

    Blank lines are skipped.  Duplicate set ids, lines with fewer than three
    fields and sets without genes raise :class:`GMTFormatError`.
    """
    sets: dict[str, frozenset] = {}
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise GMTFormatError(path, lineno, "expected set id, description and at least one gene")
            set_id = fields[0].strip()
            if not set_id:
                raise GMTFormatError(path, lineno, "empty gene set id")
            if set_id in sets:
                raise GMTFormatError(path, lineno, f"duplicate gene set id {set_id!r}")
            genes = frozenset(g.strip() for g in fields[2:] if g.strip())
            if not genes:
                raise GMTFormatError(path, lineno, f"gene set {set_id!r} has no genes")
            sets[set_id] = genes
    if not sets:
        raise GMTFormatError(path, 0, "no gene sets found")
    return GeneSetCollection(sets)


def write_gmt(collection: GeneSetCollection, path, description: str = "na") -> None:
    with open(path, "w") as handle:
        for set_id, genes in collection:
            handle.write("\t".join([set_id, description, *sorted(genes)]) + "\n")


@dataclass
class BipartiteIncidence:
    """Pathway x function matrix of thresholded Jaccard indices."""

    rows: list[str]
    cols: list[str]
    weights: np.ndarray


def jaccard(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def build_incidence(
    pathways: GeneSetCollection,
    functions: GeneSetCollection,
    jaccard_threshold: float = DEFAULT_JACCARD_THRESHOLD,
) -> BipartiteIncidence:
    """Jaccard-weighted incidence between pathways (rows) and functions (cols).

    Entries below ``jaccard_threshold`` are set to exactly zero.
    """
    if not 0.0 <= jaccard_threshold < 1.0:
        raise ValueError("jaccard_threshold must lie in [0, 1)")
    if len(pathways) == 0 or len(functions) == 0:
        raise ValueError("both gene-set collections must be non-empty")
    weights = np.zeros((len(pathways), len(functions)))
    func_sets = list(functions.sets.values())
    for i, pset in enumerate(pathways.sets.values()):
        for j, fset in enumerate(func_sets):
            if pset.isdisjoint(fset):
                continue
            w = jaccard(pset, fset)
            if w >= jaccard_threshold:
                weights[i, j] = w
    return BipartiteIncidence(pathways.ids, functions.ids, weights)


@dataclass
class PathwayNetwork:
    """Symmetric zero-diagonal weight matrix over an ordered pathway list."""

    pathway_ids: list[str]
    W: np.ndarray
    eig_min: float = field(default=np.nan)
    eig_max: float = field(default=np.nan)
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] != len(self.pathway_ids):
            raise ValueError("W must be square and match the pathway list")
        if not np.allclose(W, W.T, atol=1e-12):
            raise ValueError("W must be symmetric")
        if np.any(np.diag(W) != 0):
            raise ValueError("W must have a zero diagonal")
        self.W = 0.5 * (W + W.T)
        if np.isnan(self.eig_min) or np.isnan(self.eig_max):
            self.eig_min, self.eig_max = extreme_eigenvalues(self.W)

    @property
    def q(self) -> int:
        return len(self.pathway_ids)

    @property
    def is_empty(self) -> bool:
        return not np.any(self.W)

    def subnetwork(self, ids: Iterable[str]) -> "PathwayNetwork":
        """Induced subnetwork on ``ids`` (kept in the given order)."""
        index = {p: i for i, p in enumerate(self.pathway_ids)}
        idx = [index[i] for i in ids]
        return PathwayNetwork([self.pathway_ids[i] for i in idx], self.W[np.ix_(idx, idx)])

    def components(self) -> list[list[int]]:
        """Connected components of the nonzero pattern of ``W``."""
        return connected_components(self.W)

    def empty_like(self) -> "PathwayNetwork":
        """Same pathways, no edges: the network-free (EFA) configuration."""
        return PathwayNetwork(list(self.pathway_ids), np.zeros_like(self.W), dropped=list(self.dropped))


def extreme_eigenvalues(W: np.ndarray) -> tuple[float, float]:
    if W.size == 0:
        return 0.0, 0.0
    evals = np.linalg.eigvalsh(W)
    return float(evals[0]), float(evals[-1])


def connected_components(W: np.ndarray) -> list[list[int]]:
    from scipy.sparse.csgraph import connected_components as _cc

    n, labels = _cc(np.asarray(W) != 0, directed=False)
    return [sorted(np.flatnonzero(labels == c).tolist()) for c in range(n)]


def project_and_standardize(M: BipartiteIncidence) -> PathwayNetwork:
    """Project the incidence onto pathways and cosine-normalize.

    ``A = M M^T`` over pathway rows, then ``W_ij = A_ij / sqrt(A_ii A_jj)`` off
    the diagonal.  Pathways with no retained function (``A_ii = 0``) are
    dropped and listed in ``PathwayNetwork.dropped``.
    """
    weights = np.asarray(M.weights, dtype=float)
    linked = np.any(weights != 0, axis=1)
    keep = np.flatnonzero(linked)
    dropped = [M.rows[i] for i in np.flatnonzero(~linked)]
    if dropped:
        shown = ", ".join(dropped[:10]) + (", ..." if len(dropped) > 10 else "")
        warnings.warn(f"dropping {len(dropped)} pathway(s) without functional links: {shown}")
    Mk = weights[keep]
    A = Mk @ Mk.T
    d = np.sqrt(np.diag(A))
    W = A / np.outer(d, d)
    np.fill_diagonal(W, 0.0)
    np.clip(W, 0.0, 1.0, out=W)
    return PathwayNetwork([M.rows[i] for i in keep], W, dropped=dropped)


def build_network(
    pathways: GeneSetCollection,
    functions: GeneSetCollection,
    jaccard_threshold: float = DEFAULT_JACCARD_THRESHOLD,
) -> PathwayNetwork:
    return project_and_standardize(build_incidence(pathways, functions, jaccard_threshold))


def gamma_support(net, delta: float = DEFAULT_DELTA) -> tuple[float, float]:
    """Admissible interval ``(1/eig_min + delta, 1/eig_max - delta)`` for gamma.

    An edgeless network (the EFA case) has the single admissible point 0.
    """
    if isinstance(net, PathwayNetwork):
        lo_eig, hi_eig = net.eig_min, net.eig_max
        empty = net.is_empty
    else:
        W = np.asarray(net, dtype=float)
        lo_eig, hi_eig = extreme_eigenvalues(W)
        empty = not np.any(W)
    if empty:
        return 0.0, 0.0
    if not lo_eig < 0.0 < hi_eig:
        raise ValueError("W must have eigenvalues of both signs")
    lo, hi = 1.0 / lo_eig + delta, 1.0 / hi_eig - delta
    if lo >= hi:
        raise ValueError(f"delta={delta} leaves an empty gamma support")
    return lo, hi


def write_network(net: PathwayNetwork, out_dir, delta: float = DEFAULT_DELTA, extra: dict | None = None) -> None:
    """Write ``edges.tsv`` (upper triangle, nonzero weights) and ``network.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as handle:
        handle.write("pathway_i\tpathway_j\tweight\n")
        rows, cols = np.triu_indices(net.q, k=1)
        for i, j in zip(rows, cols):
            if net.W[i, j] != 0:
                handle.write(f"{net.pathway_ids[i]}\t{net.pathway_ids[j]}\t{net.W[i, j]:.17g}\n")
    lo, hi = gamma_support(net, delta)
    sidecar = {
        "pathway_ids": list(net.pathway_ids),
        "eig_min": net.eig_min,
        "eig_max": net.eig_max,
        "delta": delta,
        "gamma_support": [lo, hi],
        "dropped": list(net.dropped),
    }
    if extra:
        sidecar.update(extra)
    with open(out / "network.json", "w") as handle:
        json.dump(sidecar, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_network(path) -> PathwayNetwork:
    """Read a network written by :func:`write_network` (directory or sidecar path)."""
    path = Path(path)
    out = path if path.is_dir() else path.parent
    with open(out / "network.json") as handle:
        sidecar = json.load(handle)
    ids = sidecar["pathway_ids"]
    index = {p: i for i, p in enumerate(ids)}
    W = np.zeros((len(ids), len(ids)))
    with open(out / "edges.tsv") as handle:
        next(handle)
        for lineno, line in enumerate(handle, start=2):
            if not line.strip():
                continue
            try:
                a, b, w = line.rstrip("\n").split("\t")
                i, j = index[a], index[b]
                W[i, j] = W[j, i] = float(w)
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{out / 'edges.tsv'}:{lineno}: bad edge line ({exc})") from None
    return PathwayNetwork(ids, W, dropped=sidecar.get("dropped", []))
