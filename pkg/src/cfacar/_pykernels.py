"""Pure numpy implementations of the sampler's inner kernels.

These are the fallback used when the compiled ``_kernels`` extension is not
available, and the reference the compiled versions are tested against.
Both backends consume identical pre-drawn random numbers, so a chain is
reproducible regardless of the backend.
"""

import numpy as np


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def theta_sweep(Vinv, logdet, Phi, omega, theta, c, logit_alpha, uniforms, probs_out):
    """One systematic-scan sweep over the indicators of a single experiment.

    ``Vinv`` is the inverse of ``V(theta) = sigma2 Phi + Phi Sigma(theta) Phi``
    and ``logdet`` its log-determinant; both are updated in place on every
    flip with the Sherman-Morrison formula and the matrix determinant lemma.
    ``omega`` holds the replicate columns (q x m) that share ``theta``.
    ``c`` is the slab-minus-spike variance ``tau2 * (1 - v0)``.

    Returns the updated log-determinant.  ``probs_out[j]`` receives the
    conditional probability that ``theta[j] = 1`` used for the draw.
    """
    q, m = omega.shape
    for j in range(q):
        phi_j = Phi[:, j]
        u = Vinv @ phi_j
        s = phi_j @ u
        proj = u @ omega
        ssq = proj @ proj
        if theta[j] == 0:
            d = 1.0 + c * s
            logit = -0.5 * m * np.log(d) + 0.5 * (c / d) * ssq + logit_alpha
        else:
            d = 1.0 - c * s
            logit = 0.5 * m * np.log(d) + 0.5 * (c / d) * ssq + logit_alpha
        prob = _sigmoid(logit)
        probs_out[j] = prob
        new = 1 if uniforms[j] < prob else 0
        if new != theta[j]:
            if theta[j] == 0:
                Vinv -= (c / d) * np.outer(u, u)
            else:
                Vinv += (c / d) * np.outer(u, u)
            logdet += np.log(d)
            theta[j] = new
    return logdet


def lambda_rows(G, B, psi, mask, prior_prec, inv_temp, z):
    """Draw every row of the loading matrix from its Gaussian conditional.

    Row ``k`` restricted to its free entries ``S`` has precision
    ``inv_temp / psi_k * G[S, S] + prior_prec * I`` and precision-times-mean
    ``inv_temp / psi_k * B[S, k]`` with ``G = Omega Omega^T`` and
    ``B = Omega Y^T``.  Fixed entries are embedded as decoupled identity
    blocks so all rows go through one batched Cholesky.
    """
    p, q = mask.shape
    m = mask.astype(bool)
    w = inv_temp / psi
    A = w[:, None, None] * G[None, :, :] * (m[:, :, None] & m[:, None, :])
    diag = np.where(m, prior_prec, 1.0)
    A[:, np.arange(q), np.arange(q)] += diag
    a = np.where(m, (w[None, :] * B).T, 0.0)
    L = np.linalg.cholesky(A)
    y = np.linalg.solve(L, a[:, :, None])
    draw = np.linalg.solve(np.swapaxes(L, 1, 2), y + z[:, :, None])[:, :, 0]
    return np.where(m, draw, 0.0)
