"""Named parameter sets with seeded initialization and exact snapshots.

Parameters are named by path-like string keys (for the message-passing model:
``proj/<node-type>``, ``l<k>/h<t>/attn_q``, ``l<k>/msg_edge/<edge-type>``, and
so on).  Snapshots serialize every matrix losslessly, so a reloaded model
reproduces predictions bit for bit.
"""

from __future__ import annotations

import base64
import json
import math

import numpy as np

from ..autodiff import Tensor
from ..errors import ConfigError, ContractError

SNAPSHOT_FORMAT = "heterograph-params"
SNAPSHOT_VERSION = 1


class ParamSet:
    """Ordered mapping from key to trainable :class:`Tensor`.

    Iteration order is the construction order, which fixes the order of
    random draws during initialization and the order of optimizer updates.
    """

    def __init__(self, tensors, meta=None):
        self._tensors = dict(tensors)
        self.meta = dict(meta or {})

    @classmethod
    def build(cls, layout, seed, meta=None):
        """Initialize from ``layout``: an ordered list of (key, rows, cols, kind).

        ``kind`` is ``"uniform"`` for uniform(-1/sqrt(rows), +1/sqrt(rows))
        draws (rows is the fan-in under the row-vector convention) or
        ``"zeros"``.  One generator seeded once serves the whole layout, so
        the full initialization is a deterministic function of the seed.
        """
        rng = np.random.default_rng(seed)
        tensors = {}
        for key, rows, cols, kind in layout:
            if key in tensors:
                raise ConfigError(f"duplicate parameter key {key!r}")
            if kind == "uniform":
                bound = 1.0 / math.sqrt(rows)
                data = rng.uniform(-bound, bound, size=(rows, cols))
            elif kind == "zeros":
                data = np.zeros((rows, cols))
            else:
                raise ConfigError(f"unknown init kind {kind!r}")
            tensors[key] = Tensor(data, requires_grad=True)
        return cls(tensors, meta=meta)

    def __getitem__(self, key):
        try:
            return self._tensors[key]
        except KeyError:
            raise ContractError(f"unknown parameter key {key!r}") from None

    def __contains__(self, key):
        return key in self._tensors

    def __len__(self):
        return len(self._tensors)

    def keys(self):
        return list(self._tensors)

    def items(self):
        return list(self._tensors.items())

    def tensors(self):
        return list(self._tensors.values())

    @property
    def num_weights(self):
        return sum(t.data.size for t in self._tensors.values())

    def with_values(self, arrays):
        """New ParamSet with the same keys/meta but replaced values."""
        if set(arrays) != set(self._tensors):
            raise ContractError("replacement keys do not match the parameter set")
        tensors = {k: Tensor(arrays[k], requires_grad=True) for k in self._tensors}
        return ParamSet(tensors, meta=self.meta)

    def copy_arrays(self):
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def allclose(self, other, atol=0.0):
        if self.keys() != other.keys():
            return False
        return all(
            np.allclose(self._tensors[k].data, other._tensors[k].data, atol=atol, rtol=0.0)
            for k in self._tensors
        )


def save_params(params, path):
    """Write a ParamSet as versioned JSON with exact base64 payloads."""
    entries = []
    for key, tensor in params.items():
        data = np.ascontiguousarray(tensor.data, dtype="<f8")
        entries.append({
            "key": key,
            "shape": list(data.shape),
            "dtype": "<f8",
            "data": base64.b64encode(data.tobytes()).decode("ascii"),
        })
    doc = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "meta": params.meta,
        "entries": entries,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_params(path):
    """Read a snapshot written by :func:`save_params`; exact round trip."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise ContractError(f"{path}: not a parameter snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise ContractError(f"{path}: unsupported snapshot version {doc.get('version')!r}")
    tensors = {}
    for entry in doc["entries"]:
        if entry["dtype"] != "<f8":
            raise ContractError(f"{path}: unsupported dtype {entry['dtype']!r}")
        raw = base64.b64decode(entry["data"])
        data = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"])
        tensors[entry["key"]] = Tensor(data, requires_grad=True)
    return ParamSet(tensors, meta=doc.get("meta", {}))
