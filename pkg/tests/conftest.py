"""Shared builders for small models and random states."""

import numpy as np
import pytest

from cfacar.model import ExpressionDataset, LoadingMask, Model, Sample
from cfacar.network import PathwayNetwork


def random_network(rng, q, blocks=None, density=0.7):
    """Symmetric nonnegative W in [0, 1] with edges only inside ``blocks``.

    ``blocks`` is a list of index lists; each block is made connected by a
    path so the blocks are exactly the connected components.
    """
    blocks = blocks if blocks is not None else [list(range(q))]
    W = np.zeros((q, q))
    for block in blocks:
        for a, b in zip(block, block[1:]):
            W[a, b] = W[b, a] = rng.uniform(0.2, 0.9)
        for i in block:
            for j in block:
                if i < j and W[i, j] == 0 and rng.random() < density:
                    W[i, j] = W[j, i] = rng.uniform(0.05, 0.9)
    return PathwayNetwork([f"P{k}" for k in range(q)], W)


def random_model(rng, q=4, p=12, blocks=None, n_cases=2, replicates=2, n_controls=3, efa=False, hyper=None):
    """Model on random data with a random mask and network."""
    net = random_network(rng, q, blocks)
    mask = (rng.random((p, q)) < 0.4).astype(np.uint8)
    mask[np.arange(p), rng.integers(q, size=p)] = 1
    samples = []
    for e in range(n_cases):
        for r in range(replicates):
            samples.append(Sample(f"e{e}_r{r}", f"e{e}", r, False))
    for c in range(n_controls):
        samples.append(Sample(f"c{c}", "control", c, True))
    genes = [f"g{i}" for i in range(p)]
    data = ExpressionDataset.from_raw(rng.normal(size=(p, len(samples))), genes, samples)
    lm = LoadingMask(mask, genes, net.pathway_ids)
    return Model(data, lm, net, hyper=hyper, efa=efa)


def random_state(model, rng, gamma=None):
    """State with every block drawn at random (indicators included)."""
    lo, hi = model.support
    if gamma is None:
        gamma = 0.0 if model.efa else rng.uniform(0.8 * lo, 0.8 * hi)
    state = model.initial_state(rng, gamma)
    state.Lambda = np.where(model.mask.mask, rng.normal(size=state.Lambda.shape), 0.0)
    state.Omega = rng.normal(size=state.Omega.shape)
    state.Rho = rng.normal(size=state.Rho.shape)
    state.Theta = (rng.random(state.Theta.shape) < 0.5).astype(np.int8)
    state.Theta[:, ~model.theta_free] = 0
    state.Psi = rng.uniform(0.3, 2.0, size=model.p)
    state.sigma2 = float(rng.uniform(0.3, 2.0))
    state.tau2 = float(rng.uniform(0.3, 2.0))
    return state


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
