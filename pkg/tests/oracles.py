"""Reference implementations the test suite checks the package against.

Everything here is written the slow, obvious way (python loops, direct
counting, literal formulas) and deliberately shares no code with the
package. When a test says "matches the oracle", it means these.
"""

import numpy as np


def fd_gradient(fn, flat, h=1e-5):
    """Central-difference gradient of a scalar fn over a flat array."""
    flat = np.asarray(flat, dtype=np.float64)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up = fn(bumped)
        bumped[i] = flat[i] - h
        down = fn(bumped)
        grad[i] = (up - down) / (2.0 * h)
    return grad


def auroc_pairs(id_scores, ood_scores):
    """All-pairs rank statistic: P(ood > id) with ties counting half."""
    wins = 0.0
    for o in ood_scores:
        for i in id_scores:
            if o > i:
                wins += 1.0
            elif o == i:
                wins += 0.5
    return wins / (len(id_scores) * len(ood_scores))


def aupr_sweep(id_scores, ood_scores):
    """Exhaustive-threshold average precision, OOD = positive class.

    Sweeps thresholds at every distinct score descending; at each one
    predicted-positive means score >= threshold. Area accumulates
    precision * (recall step), the step-interpolated convention.
    """
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    n_pos = ood_scores.size
    area = 0.0
    prev_recall = 0.0
    for t in sorted(set(np.concatenate([id_scores, ood_scores])), reverse=True):
        tp = float(np.count_nonzero(ood_scores >= t))
        fp = float(np.count_nonzero(id_scores >= t))
        precision = tp / (tp + fp)
        recall = tp / n_pos
        area += precision * (recall - prev_recall)
        prev_recall = recall
    return area


def fpr_at_tpr(id_scores, ood_scores, level=0.95):
    """FPR at the largest threshold whose TPR reaches `level`.

    Candidate thresholds walk the distinct OOD scores from the top;
    the first one that captures a `level` fraction of OOD nodes is the
    operating point.
    """
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    for t in sorted(set(ood_scores), reverse=True):
        tpr = np.count_nonzero(ood_scores >= t) / ood_scores.size
        if tpr >= level:
            return np.count_nonzero(id_scores >= t) / id_scores.size
    raise AssertionError("unreachable: the minimum OOD score has TPR 1")


def kl_mc(mu, sigma, n_samples, rng):
    """Monte Carlo KL(N(mu, sigma^2) || N(0, 1)) with its standard error."""
    x = rng.normal(mu, sigma, size=n_samples)
    log_q = -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)
    log_p = -0.5 * x ** 2 - 0.5 * np.log(2 * np.pi)
    ratios = log_q - log_p
    return ratios.mean(), ratios.std(ddof=1) / np.sqrt(n_samples)
