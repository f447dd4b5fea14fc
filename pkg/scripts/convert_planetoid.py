#!/usr/bin/env python3
"""Convert raw Planetoid citation files into the graph bundle format.

Expects the classic eight-file family (ind.<name>.x, .tx, .allx, .y,
.ty, .ally, .graph, .test.index) as distributed with the original
Planetoid code. Assembly follows the usual convention: features are
vstack(allx, tx) with the test block re-ordered by test.index, labels
are the one-hot argmax, train = the x block, val = the next 500 nodes,
test = the test.index nodes.

    python scripts/convert_planetoid.py --raw-dir data/raw --name cora \
        --out data/cora_id.json

The output is a single ID bundle; shifted OOD counterparts come from
``tide generate`` style shifts applied downstream, or from
scripts/run_shift_suite.py fixtures.
"""

import argparse
import pickle
from pathlib import Path

import numpy as np

from tide.graph import make_graph, save_bundle

PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _load_part(raw_dir: Path, name: str, part: str):
    path = raw_dir / f"ind.{name}.{part}"
    with open(path, "rb") as fh:
        # The distributed files are python2 pickles.
        return pickle.load(fh, encoding="latin1")


def _dense(block) -> np.ndarray:
    return np.asarray(block.todense() if hasattr(block, "todense") else block,
                      dtype=np.float64)


def load_planetoid(raw_dir: Path, name: str, row_normalize: bool = True):
    parts = {p: _load_part(raw_dir, name, p) for p in PARTS}
    test_idx = np.loadtxt(raw_dir / f"ind.{name}.test.index", dtype=np.int64)

    X = np.vstack([_dense(parts["allx"]), _dense(parts["tx"])])
    Y = np.vstack([_dense(parts["ally"]), _dense(parts["ty"])])
    # tx/ty rows arrive shuffled; test.index says where row i of the
    # stacked test block actually belongs.
    n_all = parts["allx"].shape[0]
    X[test_idx] = X[n_all:][np.arange(test_idx.size)]
    Y[test_idx] = Y[n_all:][np.arange(test_idx.size)]
    X = X[:test_idx.max() + 1]
    Y = Y[:test_idx.max() + 1]

    if row_normalize:
        norms = X.sum(axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        X = X / norms

    y = Y.argmax(axis=1).astype(np.int64)
    y[Y.sum(axis=1) == 0] = -1  # isolated unlabeled rows in some sets

    n_train = parts["x"].shape[0]
    masks = {
        "train": np.arange(n_train),
        "val": np.arange(n_train, n_train + 500),
        "test_id": np.sort(test_idx),
    }
    edges = [(u, v) for u, nbrs in parts["graph"].items() for v in nbrs]
    return make_graph(X, np.array(edges), y, masks=masks)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raw-dir", type=Path, required=True)
    ap.add_argument("--name", default="cora")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--no-row-normalize", action="store_true")
    args = ap.parse_args(argv)

    g = load_planetoid(args.raw_dir, args.name,
                       row_normalize=not args.no_row_normalize)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(g, args.out)
    print(f"wrote {args.out}: n={g.n} d={g.d} C={g.C} "
          f"edges={len(g.edges)} train={g.mask('train').size} "
          f"val={g.mask('val').size} test={g.mask('test_id').size}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
