"""The three variational networks and their heads.

Joint encoder: 2-layer GCN over (X, A). Feature encoder: 2-layer MLP
over X alone. Structure encoder: 2-layer GCN over a constant all-ones
column, so it can only see A. Each ends in linear mu / sigma heads
(sigma through a softplus with a 1e-6 floor). On top sit a prediction
head per network (graph-convolutional for the joint and structure
networks, row-wise linear for the feature network), an MLP that
reconstructs X from joint samples, and one pair of projection matrices
per network pair for the similarity-based MI estimates.

Parameters live in one ordered dict, initialized Glorot-uniform from
independent per-component seed streams: a model built for a single
network reproduces exactly the sub-parameters of the full model under
the same seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, SparseMatrix, sym_normalized_adjacency

SIGMA_FLOOR = 1e-6

# Seed-stream tags; initialization and per-epoch noise use disjoint streams
# so that dropping a network from a run never shifts another network's draws.
INIT_STREAM = {"z": 1, "v": 2, "q": 3, "recon": 4, "club": 5}
NOISE_STREAM = {"z": 11, "v": 12, "q": 13, "z_exposure": 14}


class ModelError(ValueError):
    pass


@dataclass
class LatentDistribution:
    """Per-node Gaussian posterior; sigma is strictly positive."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ModelError(
                f"mu/sigma shape mismatch: {self.mu.shape} vs {self.sigma.shape}")

    @property
    def shape(self):
        return self.mu.shape

    def rows(self, idx) -> "LatentDistribution":
        return LatentDistribution(ad.gather_rows(self.mu, idx),
                                  ad.gather_rows(self.sigma, idx))


def component_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class TideModel:
    """All parameters of the tri-network detector, in a fixed order."""

    GROUP_PREFIXES = {
        "z": ("z_enc.", "z_head."),
        "v": ("v_enc.", "v_head."),
        "q": ("q_enc.", "q_head."),
        "recon": ("recon.",),
        "club": ("club_",),
    }

    def __init__(self, d: int, hidden: int, C: int, seed: int,
                 params: dict[str, Tensor]):
        self.d = d
        self.hidden = hidden
        self.C = C
        self.seed = seed
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def group_of(self, name: str) -> str:
        for group, prefixes in self.GROUP_PREFIXES.items():
            if name.startswith(prefixes):
                return group
        raise ModelError(f"parameter {name!r} belongs to no group")

    def names_in(self, *groups: str) -> list[str]:
        return [n for n in self.params if self.group_of(n) in groups]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.values.copy() for n, p in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for n, arr in values.items():
            self.params[n].values[...] = arr


def build_model(d: int, hidden: int, C: int, seed: int) -> TideModel:
    """Glorot-initialized model; biases start at zero.

    Draw order within each stream is the declaration order below and is
    part of the checkpoint contract.
    """
    if min(d, hidden, C) < 1:
        raise ModelError(f"bad dims d={d}, hidden={hidden}, C={C}")
    h = hidden
    params: dict[str, Tensor] = {}

    def put(name: str, arr: np.ndarray) -> None:
        params[name] = Tensor(arr, requires_grad=True)

    rng = component_rng(seed, INIT_STREAM["z"])
    put("z_enc.gcn1.W", glorot(rng, d, h))
    put("z_enc.gcn2.W", glorot(rng, h, h))
    put("z_enc.mu.W", glorot(rng, h, h))
    put("z_enc.mu.b", np.zeros((1, h)))
    put("z_enc.sigma.W", glorot(rng, h, h))
    put("z_enc.sigma.b", np.zeros((1, h)))
    put("z_head.W", glorot(rng, h, C))

    rng = component_rng(seed, INIT_STREAM["v"])
    put("v_enc.fc1.W", glorot(rng, d, h))
    put("v_enc.fc1.b", np.zeros((1, h)))
    put("v_enc.fc2.W", glorot(rng, h, h))
    put("v_enc.fc2.b", np.zeros((1, h)))
    put("v_enc.mu.W", glorot(rng, h, h))
    put("v_enc.mu.b", np.zeros((1, h)))
    put("v_enc.sigma.W", glorot(rng, h, h))
    put("v_enc.sigma.b", np.zeros((1, h)))
    put("v_head.W", glorot(rng, h, C))
    put("v_head.b", np.zeros((1, C)))

    rng = component_rng(seed, INIT_STREAM["q"])
    put("q_enc.gcn1.W", glorot(rng, 1, h))
    put("q_enc.gcn2.W", glorot(rng, h, h))
    put("q_enc.mu.W", glorot(rng, h, h))
    put("q_enc.mu.b", np.zeros((1, h)))
    put("q_enc.sigma.W", glorot(rng, h, h))
    put("q_enc.sigma.b", np.zeros((1, h)))
    put("q_head.W", glorot(rng, h, C))

    rng = component_rng(seed, INIT_STREAM["recon"])
    put("recon.fc1.W", glorot(rng, h, h))
    put("recon.fc1.b", np.zeros((1, h)))
    put("recon.out.W", glorot(rng, h, d))
    put("recon.out.b", np.zeros((1, d)))

    rng = component_rng(seed, INIT_STREAM["club"])
    for pair in ("club_zv", "club_zq", "club_vq"):
        put(f"{pair}.p1", glorot(rng, h, h))
        put(f"{pair}.p2", glorot(rng, h, h))

    return TideModel(d, h, C, seed, params)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def gcn_layer(H: Tensor, A_norm: SparseMatrix, W: Tensor,
              activate: bool = True) -> Tensor:
    """One propagation step: optionally ReLU(A_norm @ H @ W)."""
    out = ad.spmm(A_norm, ad.matmul(H, W))
    return ad.relu(out) if activate else out


def _sigma_head(h2: Tensor, W: Tensor, b: Tensor) -> Tensor:
    raw = ad.add(ad.matmul(h2, W), b)
    return ad.add(ad.softplus(raw), SIGMA_FLOOR)


def encode_joint(X: Tensor, A_norm: SparseMatrix, model: TideModel) -> LatentDistribution:
    if X.shape[1] != model.d:
        raise ModelError(f"feature width {X.shape[1]} != model d={model.d}")
    h1 = gcn_layer(X, A_norm, model["z_enc.gcn1.W"])
    h2 = gcn_layer(h1, A_norm, model["z_enc.gcn2.W"])
    mu = ad.add(ad.matmul(h2, model["z_enc.mu.W"]), model["z_enc.mu.b"])
    sigma = _sigma_head(h2, model["z_enc.sigma.W"], model["z_enc.sigma.b"])
    return LatentDistribution(mu, sigma)


def encode_feature(X: Tensor, model: TideModel) -> LatentDistribution:
    if X.shape[1] != model.d:
        raise ModelError(f"feature width {X.shape[1]} != model d={model.d}")
    h1 = ad.relu(ad.add(ad.matmul(X, model["v_enc.fc1.W"]), model["v_enc.fc1.b"]))
    h2 = ad.relu(ad.add(ad.matmul(h1, model["v_enc.fc2.W"]), model["v_enc.fc2.b"]))
    mu = ad.add(ad.matmul(h2, model["v_enc.mu.W"]), model["v_enc.mu.b"])
    sigma = _sigma_head(h2, model["v_enc.sigma.W"], model["v_enc.sigma.b"])
    return LatentDistribution(mu, sigma)


def encode_structure(A_norm: SparseMatrix, model: TideModel) -> LatentDistribution:
    """Structure-only posterior: the input is a constant ones column."""
    ones = Tensor(np.ones((A_norm.n, 1)))
    h1 = gcn_layer(ones, A_norm, model["q_enc.gcn1.W"])
    h2 = gcn_layer(h1, A_norm, model["q_enc.gcn2.W"])
    mu = ad.add(ad.matmul(h2, model["q_enc.mu.W"]), model["q_enc.mu.b"])
    sigma = _sigma_head(h2, model["q_enc.sigma.W"], model["q_enc.sigma.b"])
    return LatentDistribution(mu, sigma)


def reparameterize(dist: LatentDistribution, noise: np.ndarray) -> Tensor:
    return ad.scale_shift(dist.mu, dist.sigma, np.asarray(noise, dtype=np.float64))


def predict_logits(sample: Tensor, A_norm: SparseMatrix | None,
                   model: TideModel, which: str) -> Tensor:
    """Class logits from a latent sample; no softmax (energies need raw)."""
    if which == "z":
        return ad.spmm(A_norm, ad.matmul(sample, model["z_head.W"]))
    if which == "v":
        return ad.add(ad.matmul(sample, model["v_head.W"]), model["v_head.b"])
    if which == "q":
        return ad.spmm(A_norm, ad.matmul(sample, model["q_head.W"]))
    raise ModelError(f"unknown head {which!r}")


def reconstruct(sample: Tensor, model: TideModel) -> Tensor:
    h1 = ad.relu(ad.add(ad.matmul(sample, model["recon.fc1.W"]),
                        model["recon.fc1.b"]))
    return ad.add(ad.matmul(h1, model["recon.out.W"]), model["recon.out.b"])


def joint_logits_at_mean(model: TideModel, g: Graph,
                         A_norm: SparseMatrix | None = None) -> np.ndarray:
    """Deterministic inference logits: mu through the joint classifier."""
    if A_norm is None:
        A_norm = sym_normalized_adjacency(g)
    with ad.no_grad():
        dist = encode_joint(Tensor(g.X), A_norm, model)
        logits = predict_logits(dist.mu, A_norm, model, "z")
    return logits.values


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CKPT_FORMAT = "tide-ckpt-v1"


def config_sha256(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(model: TideModel, path, config_dict: dict | None = None) -> None:
    """Write ``path`` (flat little-endian float64) and ``path.json``."""
    path = Path(path)
    manifest = {
        "format": CKPT_FORMAT,
        "d": model.d,
        "hidden": model.hidden,
        "C": model.C,
        "seed": model.seed,
        "config_sha256": config_sha256(config_dict) if config_dict else None,
        "params": [{"name": n, "shape": list(p.shape)}
                   for n, p in model.params.items()],
    }
    flat = np.concatenate([p.values.reshape(-1) for p in model.params.values()])
    flat.astype("<f8").tofile(path)
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> TideModel:
    path = Path(path)
    manifest_path = path.with_name(path.name + ".json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CKPT_FORMAT:
        raise ModelError(f"{manifest_path}: unknown checkpoint format")
    flat = np.fromfile(path, dtype="<f8").astype(np.float64)
    expected = sum(int(np.prod(e["shape"])) for e in manifest["params"])
    if flat.size != expected:
        raise ModelError(
            f"{path}: has {flat.size} values, manifest expects {expected}")
    params: dict[str, Tensor] = {}
    offset = 0
    for entry in manifest["params"]:
        rows, cols = entry["shape"]
        size = rows * cols
        params[entry["name"]] = Tensor(
            flat[offset:offset + size].reshape(rows, cols), requires_grad=True)
        offset += size
    return TideModel(manifest["d"], manifest["hidden"], manifest["C"],
                     manifest["seed"], params)
