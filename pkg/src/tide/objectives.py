"""Loss terms: the per-network variational objectives, the
conditional-independence surrogate, similarity-based pairwise MI
estimates, the energy margin regularizer, and their routing into
per-network totals.

All functions build on the autodiff primitives and return 1x1 tensors,
so they compose into one fused backward pass. ``tide_total`` is the
single place that knows which term feeds which network.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import SparseMatrix
from .model import TideModel, LatentDistribution, glorot, reconstruct


class LossError(ValueError):
    pass


def one_hot(labels: np.ndarray, C: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise LossError(f"labels outside [0, {C})")
    out = np.zeros((labels.size, C))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class over the mask rows."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise LossError("cross_entropy: empty mask")
    sub = ad.gather_rows(logits, mask)
    hot = Tensor(one_hot(np.asarray(labels)[mask], logits.shape[1]))
    lse = ad.row_logsumexp(sub)
    true_logit = ad.row_sum(ad.mul(sub, hot))
    return ad.tmean(ad.sub(lse, true_logit))


def kl_standard_normal(dist: LatentDistribution) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over dims, averaged over rows.

    Closed form: -1/2 * sum(1 + log sigma^2 - mu^2 - sigma^2).
    """
    n = dist.mu.shape[0]
    if n == 0:
        raise LossError("kl_standard_normal: empty distribution")
    inner = ad.sub(ad.add(1.0, ad.mul(2.0, ad.log(dist.sigma))),
                   ad.add(ad.mul(dist.mu, dist.mu), ad.mul(dist.sigma, dist.sigma)))
    return ad.mul(ad.tsum(inner), -0.5 / n)


def vib_loss(logits: Tensor, labels: np.ndarray, mask: np.ndarray,
             dist: LatentDistribution, beta: float) -> Tensor:
    """Supervised term plus beta-weighted compression, both on the mask."""
    if beta < 0:
        raise LossError(f"beta must be >= 0, got {beta}")
    ce = cross_entropy(logits, labels, mask)
    if beta == 0.0:
        return ce
    kl = kl_standard_normal(dist.rows(np.asarray(mask, dtype=np.int64)))
    return ad.add(ce, ad.mul(kl, beta))


def club_estimate(s1: Tensor, s2: Tensor, p1: Tensor, p2: Tensor) -> Tensor:
    """Contrastive dependence estimate between two sample sets.

    Projects both sides, scores every pair by a sqrt(h)-scaled dot
    product, and contrasts matched pairs against the all-pairs mean:
    mean_i logsim(i, i) - mean_ij logsim(i, j). Zero when either
    projection is zero or when one side is constant.
    """
    if s1.shape[0] != s2.shape[0]:
        raise LossError(f"sample count mismatch: {s1.shape} vs {s2.shape}")
    n = s1.shape[0]
    if n == 0:
        raise LossError("club_estimate: no samples")
    h = p1.shape[1]
    a = ad.matmul(s1, p1)
    b = ad.matmul(s2, p2)
    logsim = ad.mul(ad.matmul(a, ad.transpose(b)), 1.0 / np.sqrt(h))
    eye = Tensor(np.eye(n))
    positive = ad.mul(ad.tsum(ad.mul(logsim, eye)), 1.0 / n)
    negative = ad.tmean(logsim)
    return ad.sub(positive, negative)


def recon_cind_loss(z_sample: Tensor, X: Tensor, model: TideModel) -> Tensor:
    """Feature-reconstruction surrogate: mean squared error of X-hat."""
    return ad.mse(reconstruct(z_sample, model), X)


def energy_reg_loss(e_id: Tensor, e_ood: Tensor, t_id: float, t_ood: float,
                    flip: bool = False) -> Tensor:
    """Squared-hinge margin penalty on ID and exposure-OOD energies.

    Default orientation penalizes ID energies below t_id and OOD
    energies above t_ood. ``flip`` reverses both hinges (ID pushed
    below t_id, OOD above t_ood), the orientation that separates the
    two populations the way the detector scores them.
    """
    if t_id > t_ood:
        raise LossError(f"t_id={t_id} must not exceed t_ood={t_ood}")
    if e_id.shape[0] == 0 or e_ood.shape[0] == 0:
        raise LossError("energy_reg_loss: empty score set")
    if flip:
        id_hinge = ad.relu(ad.sub(e_id, t_id))
        ood_hinge = ad.relu(ad.sub(t_ood, e_ood))
    else:
        id_hinge = ad.relu(ad.sub(t_id, e_id))
        ood_hinge = ad.relu(ad.sub(e_ood, t_ood))
    return ad.add(ad.tmean(ad.mul(id_hinge, id_hinge)),
                  ad.tmean(ad.mul(ood_hinge, ood_hinge)))


def energy_tensor(logits: Tensor) -> Tensor:
    """Differentiable per-node energy: minus log-sum-exp of the logits."""
    return ad.mul(ad.row_logsumexp(logits), -1.0)


def propagate_energy_tensor(e: Tensor, prop_op: SparseMatrix,
                            alpha: float, k: int) -> Tensor:
    """Differentiable twin of the inference-side energy propagation."""
    for _ in range(int(k)):
        e = ad.add(ad.mul(e, alpha), ad.mul(ad.spmm(prop_op, e), 1.0 - alpha))
    return e


@dataclass
class LossBreakdown:
    """Scalar components plus the per-network routed totals (all to minimize)."""

    vib_z: float = 0.0
    vib_v: float = 0.0
    vib_q: float = 0.0
    cind: float = 0.0
    pmi_zv: float = 0.0
    pmi_zq: float = 0.0
    pmi_vq: float = 0.0
    energy_reg: float = 0.0
    total_z: float = 0.0
    total_v: float = 0.0
    total_q: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def finite(self) -> bool:
        return all(np.isfinite(getattr(self, f.name)) for f in fields(self))


def tide_total(components: dict[str, Tensor | None], config) -> tuple[Tensor, LossBreakdown]:
    """Fuse components into one backward target and route the totals.

    components may hold: vib_z, vib_v, vib_q, cind, pmi_zv, pmi_zq,
    pmi_vq, energy_reg (missing/None entries count as zero). The fused
    scalar carries each term once; restricting its gradient to one
    network's parameters reproduces that network's routed update:

        Z <- vib_z + lambda_cind*cind + a1*pmi_zv + a2*pmi_zq [+ lambda_oe*ereg]
        V <- vib_v + a1*pmi_zv + a3*pmi_vq
        Q <- vib_q + a2*pmi_zq + a3*pmi_vq
    """
    def val(name: str) -> float:
        t = components.get(name)
        return float(t.item()) if t is not None else 0.0

    weights = {
        "vib_z": 1.0,
        "vib_v": 1.0,
        "vib_q": 1.0,
        "cind": config.lambda_cind,
        "pmi_zv": config.alpha1,
        "pmi_zq": config.alpha2,
        "pmi_vq": config.alpha3,
        "energy_reg": config.lambda_oe,
    }
    fused: Tensor | None = None
    for name, w in weights.items():
        t = components.get(name)
        if t is None or w == 0.0:
            continue
        term = ad.mul(t, w) if w != 1.0 else t
        fused = term if fused is None else ad.add(fused, term)
    if fused is None:
        raise LossError("tide_total: no loss components")

    br = LossBreakdown(
        vib_z=val("vib_z"), vib_v=val("vib_v"), vib_q=val("vib_q"),
        cind=val("cind"), pmi_zv=val("pmi_zv"), pmi_zq=val("pmi_zq"),
        pmi_vq=val("pmi_vq"), energy_reg=val("energy_reg"))
    br.total_z = (br.vib_z + config.lambda_cind * br.cind
                  + config.alpha1 * br.pmi_zv + config.alpha2 * br.pmi_zq
                  + config.lambda_oe * br.energy_reg)
    br.total_v = br.vib_v + config.alpha1 * br.pmi_zv + config.alpha3 * br.pmi_vq
    br.total_q = br.vib_q + config.alpha2 * br.pmi_zq + config.alpha3 * br.pmi_vq
    return fused, br


def train_club_head(s1: np.ndarray, s2: np.ndarray, seed: int = 0,
                    steps: int = 200, lr: float = 0.05) -> float:
    """Fit the pair projections by ascent and return the final estimate.

    Standalone helper for measuring dependence between two fixed sample
    sets (the trainer keeps its own critic updates). Adam maximizes the
    contrastive estimate; the returned value is the estimate after the
    last step.
    """
    from .trainer import AdamState, adam_step   # late import; trainer owns Adam

    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.shape[0] != s2.shape[0]:
        raise LossError("train_club_head: sample count mismatch")
    d1, d2 = s1.shape[1], s2.shape[1]
    rng = np.random.default_rng([seed, 5])
    p1 = Tensor(glorot(rng, d1, d1), requires_grad=True)
    p2 = Tensor(glorot(rng, d2, d1), requires_grad=True)
    c1, c2 = Tensor(s1), Tensor(s2)
    params = {"p1": p1, "p2": p2}
    state = AdamState()
    est = 0.0
    for _ in range(steps):
        for p in params.values():
            p.grad = None
        value = club_estimate(c1, c2, p1, p2)
        ad.backward(value, wrt=list(params.values()))
        grads = {n: -p.grad for n, p in params.items()}   # ascent
        adam_step(params, grads, state, lr)
        est = value.item()
    with ad.no_grad():
        est = club_estimate(c1, c2, p1, p2).item()
    return est
