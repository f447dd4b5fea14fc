"""Joint training of the three networks and deterministic inference.

One epoch is one full-graph forward of every active network, one fused
backward whose per-network gradient restriction implements the loss
routing, an Adam step on the encoder/head/reconstruction parameters,
and (in tide mode) an ascent step on the pair projections so they keep
acting as dependence critics. Inference uses only the joint network's
mean path: logits, argmax predictions, propagated energies.

Runs are bit-deterministic under a fixed seed: initialization and
per-epoch noise come from per-component seed streams, and training
consumes them in a fixed order.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .detection import EnergyScores, energy_score, propagate_energy, propagation_operator
from .graph import Graph, sym_normalized_adjacency
from .model import (NOISE_STREAM, TideModel, build_model, component_rng,
                    encode_feature, encode_joint, encode_structure,
                    joint_logits_at_mean, predict_logits, reparameterize)
from .objectives import (LossBreakdown, club_estimate, cross_entropy,
                         energy_reg_loss, energy_tensor,
                         propagate_energy_tensor, recon_cind_loss, tide_total,
                         vib_loss)

OBJECTIVE_MODES = ("sl", "ib", "ib_cind", "tide")

# Appendix-style search grids, kept for reference by sweep scripts; the
# config does not force values onto them (the supervised baseline needs
# beta = 0, which no grid contains).
BETA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
ALPHA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
LAMBDA_CIND_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
THRESHOLD_GRID = tuple(float(t) for t in range(-9, 1))


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TideConfig:
    """Every knob of a training run; maps 1:1 onto the config JSON."""

    beta_z: float = 1e-3
    beta_v: float = 1e-3
    beta_q: float = 1e-3
    alpha1: float = 1e-2
    alpha2: float = 1e-2
    alpha3: float = 1e-2
    lambda_cind: float = 1e-2
    lambda_oe: float = 1.0
    prop_alpha: float = 0.5
    prop_k: int = 2
    t_id: float = -7.0
    t_ood: float = -2.0
    lr: float = 1e-2
    epochs: int = 200
    hidden: int = 64
    seed: int = 0
    exposure_enabled: bool = False
    ereg_flip: bool = False
    objective_mode: str = "tide"

    def validate(self) -> None:
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ConfigError(
                f"objective_mode must be one of {OBJECTIVE_MODES}, "
                f"got {self.objective_mode!r}")
        for name in ("beta_z", "beta_v", "beta_q", "alpha1", "alpha2",
                     "alpha3", "lambda_cind", "lambda_oe"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not (0.0 <= self.prop_alpha <= 1.0):
            raise ConfigError(f"prop_alpha must be in [0, 1], got {self.prop_alpha}")
        if self.prop_k < 0:
            raise ConfigError("prop_k must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.exposure_enabled and not (self.t_id < self.t_ood):
            raise ConfigError(
                f"exposure needs t_id < t_ood, got {self.t_id} >= {self.t_ood}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TideConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "TideConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}: {err}") from err
        return cls.from_dict(doc)


@dataclass
class AdamState:
    """Per-parameter moments and step counts (beta1=0.9, beta2=0.999)."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """Textbook bias-corrected Adam, in place."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainResult:
    model: TideModel
    log: list[dict]
    best_epoch: int
    best_val_acc: float


def _accuracy(logits: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    if mask.size == 0:
        return float("nan")
    preds = logits[mask].argmax(axis=1)
    return float(np.mean(preds == y[mask]))


def train_tide(g: Graph, config: TideConfig,
               exposure_graph: Graph | None = None) -> TrainResult:
    """Run the full optimization loop and return the best-validation model.

    ``exposure_graph`` supplies auxiliary OOD nodes (its train mask) for
    the energy margin term and is required iff exposure is enabled.
    Model selection: highest validation accuracy, latest epoch wins
    ties; with no val mask the final parameters are kept.
    """
    config.validate()
    mode = config.objective_mode
    train_mask = g.mask("train")
    if train_mask.size == 0:
        raise TrainingError("graph has no train mask")
    if np.any(g.y[train_mask] < 0):
        raise TrainingError("unlabeled node in train mask")
    if config.exposure_enabled and exposure_graph is None:
        raise TrainingError("exposure_enabled requires an exposure graph")

    A = sym_normalized_adjacency(g)
    X = Tensor(g.X)
    val_mask = g.mask("val")
    model = build_model(g.d, config.hidden, g.C, config.seed)
    state = AdamState()
    main_names = model.names_in("z", "v", "q", "recon")
    club_names = model.names_in("club")
    noise = {tag: component_rng(config.seed, NOISE_STREAM[tag])
             for tag in ("z", "v", "q")}

    if config.exposure_enabled:
        exp_train = exposure_graph.mask("train")
        if exp_train.size == 0:
            raise TrainingError("exposure graph has no train mask")
        A_exp = sym_normalized_adjacency(exposure_graph)
        X_exp = Tensor(exposure_graph.X)
        prop_id = propagation_operator(g)
        prop_exp = propagation_operator(exposure_graph)
        exp_noise = component_rng(config.seed, NOISE_STREAM["z_exposure"])

    def guarded(name: str, fn):
        try:
            return fn()
        except (ad.NumericsError, ad.DomainError) as err:
            raise TrainingError(f"component {name}: {err}") from err

    log: list[dict] = []
    best_acc = -np.inf
    best_snapshot = None
    best_epoch = -1

    for epoch in range(config.epochs):
        tick = time.perf_counter()
        model.zero_grad()
        ad.clear_tape()
        comps: dict[str, Tensor] = {}

        try:
            dist_z = encode_joint(X, A, model)
            if mode == "sl":
                sample_z = dist_z.mu
                logits_z = predict_logits(sample_z, A, model, "z")
                comps["vib_z"] = guarded(
                    "vib_z", lambda: cross_entropy(logits_z, g.y, train_mask))
            else:
                eps_z = noise["z"].standard_normal(dist_z.shape)
                sample_z = reparameterize(dist_z, eps_z)
                logits_z = predict_logits(sample_z, A, model, "z")
                comps["vib_z"] = guarded(
                    "vib_z", lambda: vib_loss(logits_z, g.y, train_mask,
                                              dist_z, config.beta_z))
                dist_v = encode_feature(X, model)
                eps_v = noise["v"].standard_normal(dist_v.shape)
                sample_v = reparameterize(dist_v, eps_v)
                logits_v = predict_logits(sample_v, None, model, "v")
                comps["vib_v"] = guarded(
                    "vib_v", lambda: vib_loss(logits_v, g.y, train_mask,
                                              dist_v, config.beta_v))
                dist_q = encode_structure(A, model)
                eps_q = noise["q"].standard_normal(dist_q.shape)
                sample_q = reparameterize(dist_q, eps_q)
                logits_q = predict_logits(sample_q, A, model, "q")
                comps["vib_q"] = guarded(
                    "vib_q", lambda: vib_loss(logits_q, g.y, train_mask,
                                              dist_q, config.beta_q))
                if mode in ("ib_cind", "tide"):
                    comps["cind"] = guarded(
                        "cind", lambda: recon_cind_loss(sample_z, X, model))
                if mode == "tide":
                    comps["pmi_zv"] = guarded(
                        "pmi_zv", lambda: club_estimate(
                            sample_z, sample_v,
                            model["club_zv.p1"], model["club_zv.p2"]))
                    comps["pmi_zq"] = guarded(
                        "pmi_zq", lambda: club_estimate(
                            sample_z, sample_q,
                            model["club_zq.p1"], model["club_zq.p2"]))
                    comps["pmi_vq"] = guarded(
                        "pmi_vq", lambda: club_estimate(
                            sample_v, sample_q,
                            model["club_vq.p1"], model["club_vq.p2"]))

            if config.exposure_enabled:
                def ereg():
                    e_id = propagate_energy_tensor(
                        energy_tensor(logits_z), prop_id,
                        config.prop_alpha, config.prop_k)
                    dist_ze = encode_joint(X_exp, A_exp, model)
                    if mode == "sl":
                        sample_ze = dist_ze.mu
                    else:
                        sample_ze = reparameterize(
                            dist_ze, exp_noise.standard_normal(dist_ze.shape))
                    logits_ze = predict_logits(sample_ze, A_exp, model, "z")
                    e_ood = propagate_energy_tensor(
                        energy_tensor(logits_ze), prop_exp,
                        config.prop_alpha, config.prop_k)
                    return energy_reg_loss(
                        ad.gather_rows(e_id, train_mask),
                        ad.gather_rows(e_ood, exp_train),
                        config.t_id, config.t_ood, config.ereg_flip)
                comps["energy_reg"] = guarded("energy_reg", ereg)

            fused, breakdown = tide_total(comps, config)
            if not breakdown.finite():
                raise TrainingError(f"epoch {epoch}: non-finite loss component")
            guarded("backward", lambda: ad.backward(
                fused, wrt=[model.params[n] for n in main_names]))
        except TrainingError as err:
            raise TrainingError(f"epoch {epoch}: {err}") from err
        except (ad.NumericsError, ad.DomainError) as err:
            # Overflow in an encoder/head forward, outside the per-loss guards.
            raise TrainingError(f"epoch {epoch}: forward pass: {err}") from err

        adam_step({n: model.params[n] for n in main_names},
                  {n: model.params[n].grad for n in main_names},
                  state, config.lr)

        if mode == "tide":
            _critic_step(model, state, config.lr,
                         sample_z.values, sample_v.values, sample_q.values,
                         club_names)

        try:
            val_logits = joint_logits_at_mean(model, g, A)
        except (ad.NumericsError, ad.DomainError) as err:
            raise TrainingError(f"epoch {epoch}: validation pass: {err}") from err
        val_acc = _accuracy(val_logits, g.y, val_mask)
        # >= keeps the newest model on a val-accuracy plateau, so the
        # restored parameters reflect a converged optimizer state.
        if val_mask.size and val_acc >= best_acc:
            best_acc = val_acc
            best_snapshot = model.snapshot()
            best_epoch = epoch
        log.append({
            "epoch": epoch,
            "loss": breakdown.to_dict(),
            "val_acc": val_acc,
            "wall_time_s": time.perf_counter() - tick,
        })

    if best_snapshot is not None:
        model.restore(best_snapshot)
    return TrainResult(model=model, log=log, best_epoch=best_epoch,
                       best_val_acc=float(best_acc) if np.isfinite(best_acc) else float("nan"))


def _critic_step(model: TideModel, state: AdamState, lr: float,
                 z_vals: np.ndarray, v_vals: np.ndarray, q_vals: np.ndarray,
                 club_names: list[str]) -> None:
    """Ascent on the pair projections against frozen samples."""
    for n in club_names:
        model.params[n].grad = None
    ad.clear_tape()
    sz, sv, sq = Tensor(z_vals), Tensor(v_vals), Tensor(q_vals)
    total = ad.add(
        ad.add(club_estimate(sz, sv, model["club_zv.p1"], model["club_zv.p2"]),
               club_estimate(sz, sq, model["club_zq.p1"], model["club_zq.p2"])),
        club_estimate(sv, sq, model["club_vq.p1"], model["club_vq.p2"]))
    ad.backward(total, wrt=[model.params[n] for n in club_names])
    adam_step({n: model.params[n] for n in club_names},
              {n: -model.params[n].grad for n in club_names},
              state, lr)


def train_sl_baseline(g: Graph, config: TideConfig) -> TrainResult:
    """Cross-entropy-only single-classifier run (beta = 0, mean path)."""
    return train_tide(g, replace(config, objective_mode="sl"))


def infer(model: TideModel, g: Graph, config: TideConfig
          ) -> tuple[np.ndarray, EnergyScores]:
    """Predictions and propagated energies from the joint classifier only."""
    logits = joint_logits_at_mean(model, g)
    preds = logits.argmax(axis=1)
    energies = propagate_energy(energy_score(logits), g,
                                config.prop_alpha, config.prop_k)
    return preds, energies


def write_train_log(path, records: list[dict]) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
