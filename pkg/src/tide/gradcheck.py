"""Finite-difference verification of every loss component's gradients.

Each check closes over a tiny frozen probe problem (10-node sampled
graph, 8-wide model, fixed reparameterization noise) and compares the
tape's gradients against central differences, parameter entry by
parameter entry. The probe dimensions keep the slowest check (the full
routed objective, ~1.3k parameters, two evaluations each) well under
the 30 s budget.

The margin thresholds are placed just inside the initial energy range
so both sides of the squared hinge have active terms; the hinge is C1,
so finite differences stay accurate as long as no probed energy sits
within the step size of a threshold (true for the frozen seeds).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, check_gradients_params
from .detection import propagation_operator
from .graph import sym_normalized_adjacency
from .model import (NOISE_STREAM, build_model, component_rng, encode_feature,
                    encode_joint, encode_structure, predict_logits,
                    reparameterize)
from .objectives import (club_estimate, cross_entropy, energy_reg_loss,
                         energy_tensor, kl_standard_normal,
                         propagate_energy_tensor, recon_cind_loss, tide_total,
                         vib_loss)
from .shift import CsbmParams, ShiftSpec, apply_feature_shift, gen_csbm
from .trainer import TideConfig

COMPONENTS = ("cross_entropy", "kl", "club", "recon", "energy_reg", "tide_total")


@dataclass
class _Probe:
    """Frozen inputs for all checks: graphs, operators, model, noise."""

    g: object
    exposure: object
    model: object
    config: TideConfig
    X: Tensor
    X_exp: Tensor
    A: object
    A_exp: object
    prop_id: object
    prop_exp: object
    eps: dict = field(default_factory=dict)


def _build_probe(seed: int, n: int, d: int, hidden: int, C: int) -> _Probe:
    g = gen_csbm(CsbmParams(n=n, C=C, d=d, p_in=0.6, p_out=0.15,
                            mu_sep=2.0, noise=1.0, seed=seed))
    exposure = apply_feature_shift(
        g, ShiftSpec(kind="feature", intensity=0.8, seed=seed + 1))
    model = build_model(d, hidden, C, seed)
    # Thresholds straddle the initial energies (about -log C) so both
    # hinge sides carry nonzero terms at the probe point.
    config = TideConfig(hidden=hidden, seed=seed, objective_mode="tide",
                        exposure_enabled=True, t_id=-1.15, t_ood=-1.05,
                        epochs=0)
    eps = {tag: component_rng(seed, NOISE_STREAM[tag]).standard_normal((n, hidden))
           for tag in ("z", "v", "q", "z_exposure")}
    return _Probe(g=g, exposure=exposure, model=model, config=config,
                  X=Tensor(g.X), X_exp=Tensor(exposure.X),
                  A=sym_normalized_adjacency(g),
                  A_exp=sym_normalized_adjacency(exposure),
                  prop_id=propagation_operator(g),
                  prop_exp=propagation_operator(exposure),
                  eps=eps)


def _params(probe: _Probe, *groups: str) -> dict[str, Tensor]:
    names = probe.model.names_in(*groups)
    return {n: probe.model.params[n] for n in names}


def _sample(probe: _Probe, tag: str):
    if tag == "z":
        dist = encode_joint(probe.X, probe.A, probe.model)
    elif tag == "v":
        dist = encode_feature(probe.X, probe.model)
    else:
        dist = encode_structure(probe.A, probe.model)
    return reparameterize(dist, probe.eps[tag])


def _energy_margin(probe: _Probe) -> Tensor:
    cfg, model = probe.config, probe.model
    s_id = _sample(probe, "z")
    e_id = propagate_energy_tensor(
        energy_tensor(predict_logits(s_id, probe.A, model, "z")),
        probe.prop_id, cfg.prop_alpha, cfg.prop_k)
    dist_e = encode_joint(probe.X_exp, probe.A_exp, model)
    s_ood = reparameterize(dist_e, probe.eps["z_exposure"])
    e_ood = propagate_energy_tensor(
        energy_tensor(predict_logits(s_ood, probe.A_exp, model, "z")),
        probe.prop_exp, cfg.prop_alpha, cfg.prop_k)
    return energy_reg_loss(ad.gather_rows(e_id, probe.g.mask("train")),
                           ad.gather_rows(e_ood, probe.exposure.mask("train")),
                           cfg.t_id, cfg.t_ood)


def _tide_objective(probe: _Probe) -> Tensor:
    cfg, g, model = probe.config, probe.g, probe.model
    train = g.mask("train")
    comps: dict[str, Tensor] = {}

    dist_z = encode_joint(probe.X, probe.A, model)
    s_z = reparameterize(dist_z, probe.eps["z"])
    logits_z = predict_logits(s_z, probe.A, model, "z")
    comps["vib_z"] = vib_loss(logits_z, g.y, train, dist_z, cfg.beta_z)

    dist_v = encode_feature(probe.X, model)
    s_v = reparameterize(dist_v, probe.eps["v"])
    comps["vib_v"] = vib_loss(predict_logits(s_v, None, model, "v"),
                              g.y, train, dist_v, cfg.beta_v)

    dist_q = encode_structure(probe.A, model)
    s_q = reparameterize(dist_q, probe.eps["q"])
    comps["vib_q"] = vib_loss(predict_logits(s_q, probe.A, model, "q"),
                              g.y, train, dist_q, cfg.beta_q)

    comps["cind"] = recon_cind_loss(s_z, probe.X, model)
    comps["pmi_zv"] = club_estimate(s_z, s_v, model["club_zv.p1"], model["club_zv.p2"])
    comps["pmi_zq"] = club_estimate(s_z, s_q, model["club_zq.p1"], model["club_zq.p2"])
    comps["pmi_vq"] = club_estimate(s_v, s_q, model["club_vq.p1"], model["club_vq.p2"])
    comps["energy_reg"] = _energy_margin(probe)

    fused, _ = tide_total(comps, cfg)
    return fused


def gradient_check_report(seed: int = 0, h: float = 1e-5, n: int = 10,
                          d: int = 5, hidden: int = 8, C: int = 3
                          ) -> dict[str, float]:
    """Max relative gradient error per loss component, worst entry wins."""
    probe = _build_probe(seed, n, d, hidden, C)
    g, model = probe.g, probe.model
    train = g.mask("train")

    checks = {
        "cross_entropy": (
            lambda: cross_entropy(
                predict_logits(_sample(probe, "z"), probe.A, model, "z"),
                g.y, train),
            _params(probe, "z")),
        "kl": (
            lambda: kl_standard_normal(
                encode_joint(probe.X, probe.A, model).rows(train)),
            {nm: p for nm, p in _params(probe, "z").items()
             if nm.startswith("z_enc.")}),
        "club": (
            lambda: club_estimate(_sample(probe, "z"), _sample(probe, "v"),
                                  model["club_zv.p1"], model["club_zv.p2"]),
            {**_params(probe, "z"), **_params(probe, "v"),
             "club_zv.p1": model["club_zv.p1"],
             "club_zv.p2": model["club_zv.p2"]}),
        "recon": (
            lambda: recon_cind_loss(_sample(probe, "z"), probe.X, model),
            {**{nm: p for nm, p in _params(probe, "z").items()
                if nm.startswith("z_enc.")},
             **_params(probe, "recon")}),
        "energy_reg": (
            lambda: _energy_margin(probe),
            _params(probe, "z")),
        "tide_total": (
            lambda: _tide_objective(probe),
            dict(model.parameters())),
    }

    report: dict[str, float] = {}
    for name, (fn, params) in checks.items():
        per_param = check_gradients_params(fn, params, h=h)
        report[name] = max(per_param.values())
    return report
