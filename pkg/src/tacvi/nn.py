"""Layers, parameter bookkeeping and the named-matrix checkpoint format."""
import json
import math
from pathlib import Path

import numpy as np

from tacvi.tensor import Matrix, add, matmul, relu, sigmoid

CHECKPOINT_FORMAT = "tacvi-matrices/1"


class Linear:
    """x @ W + b with W stored as (d_in, d_out) and b as a 1 x d_out row."""

    def __init__(self, d_in, d_out, rng, name="linear"):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = Matrix(rng.uniform(-bound, bound, (d_in, d_out)),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = Matrix(rng.uniform(-bound, bound, (1, d_out)),
                           requires_grad=True, name=f"{name}.bias")

    @property
    def d_in(self):
        return self.weight.rows

    @property
    def d_out(self):
        return self.weight.cols

    def __call__(self, x):
        return add(matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class MLP:
    """Linear layers with ReLU in between; optional sigmoid on the output."""

    def __init__(self, sizes, rng, name="mlp", out_sigmoid=False):
        self.layers = [Linear(a, b, rng, f"{name}.{i}")
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.out_sigmoid = out_sigmoid

    @property
    def sizes(self):
        return [self.layers[0].d_in] + [layer.d_out for layer in self.layers]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return sigmoid(x) if self.out_sigmoid else x

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def zero_(params):
    for p in params:
        p.data = np.zeros_like(p.data)


def state_dict(params):
    return {p.name: p.data.copy() for p in params}


def load_state(params, state):
    for p in params:
        arr = np.asarray(state[p.name], dtype=np.float64)
        if arr.shape != p.shape:
            raise ValueError(f"{p.name}: checkpoint shape {arr.shape} != {p.shape}")
        p.data = arr.copy()


def _paths(path):
    path = Path(path)
    if path.suffix == ".json":
        return path, path.with_suffix(".bin")
    return path.with_suffix(".json"), path.with_suffix(".bin")


def save_checkpoint(path, tensors, meta=None):
    """Write ``{name: 2-D array}`` as raw little-endian float64 plus a JSON index."""
    index_path, bin_path = _paths(path)
    index_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            if arr.ndim != 2:
                raise ValueError(f"{name}: checkpoint tensors must be 2-D")
            fh.write(arr.tobytes())
            entries.append({"name": name, "rows": arr.shape[0],
                            "cols": arr.shape[1], "offset": offset})
            offset += arr.nbytes
    index = {"format": CHECKPOINT_FORMAT, "data": bin_path.name,
             "meta": meta or {}, "tensors": entries}
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True))
    return index_path


def load_checkpoint(path):
    index_path, _ = _paths(path)
    index = json.loads(index_path.read_text())
    if index.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{index_path}: unknown checkpoint format {index.get('format')!r}")
    raw = (index_path.parent / index["data"]).read_bytes()
    tensors = {}
    for e in index["tensors"]:
        count = e["rows"] * e["cols"]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["rows"], e["cols"]).astype(np.float64)
    return tensors, index["meta"]
