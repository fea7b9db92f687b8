"""Plain numpy reference recursions, written independently of rdpkit's tape code."""

import numpy as np
from scipy.special import logsumexp, softmax


def forward(init, pairwise):
    alphas = [np.asarray(init, dtype=float)]
    for pw in pairwise:
        alphas.append(logsumexp(alphas[-1][:, None] + pw, axis=0))
    return logsumexp(alphas[-1]), alphas


def backward(pairwise, n):
    betas = [np.zeros(n)]
    for pw in pairwise[::-1]:
        betas.append(logsumexp(pw + betas[-1][None, :], axis=1))
    return betas[::-1]


def entropy(init, pairwise):
    """H = log Z - E[score], with node and edge marginals from forward-backward."""
    init = np.asarray(init, dtype=float)
    log_z, alphas = forward(init, pairwise)
    betas = backward(pairwise, init.size)
    node0 = np.exp(alphas[0] + betas[0] - log_z)
    expected = np.sum(np.where(node0 > 0, node0 * init, 0.0))
    for t, pw in enumerate(pairwise):
        edge = np.exp(alphas[t][:, None] + pw + betas[t + 1][None, :] - log_z)
        expected += np.sum(np.where(edge > 0, edge * pw, 0.0))
    return log_z - expected


def inside(spans):
    T = spans.shape[0]
    table = {(i, i): spans[i, i] for i in range(T)}
    for length in range(1, T):
        for i in range(T - length):
            j = i + length
            parts = [logsumexp(table[(i, m)][:, None] + table[(m + 1, j)][None, :]) for m in range(i, j)]
            table[(i, j)] = spans[i, j] + logsumexp(parts)
    return logsumexp(table[(0, T - 1)])


def perturbed_backward(init, pairwise, noise, temperature=1.0):
    """Exact perturb-and-argmax backward pass: hard states and tempered softmax vectors."""
    log_z, alphas = forward(init, pairwise)
    T = len(alphas)
    hard = np.empty(T, dtype=int)
    soft = [None] * T
    logits = alphas[-1] - log_z + noise[-1]
    hard[-1], soft[-1] = np.argmax(logits), softmax(logits / temperature)
    for t in range(T - 2, -1, -1):
        logits = alphas[t] + pairwise[t][:, hard[t + 1]] - alphas[t + 1][hard[t + 1]] + noise[t]
        hard[t], soft[t] = np.argmax(logits), softmax(logits / temperature)
    return hard, soft
