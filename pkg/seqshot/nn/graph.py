from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from seqshot.core.errors import NonFiniteError, ShapeError, StaleCacheError
from seqshot.nn.layers import Layer, layer_from_config

_DEBUG = os.environ.get("SEQSHOT_DEBUG", "") not in ("", "0")
_graph_ids = itertools.count(1)


class Graph:
    """Ordered feed-forward layer list plus a parameter store keyed ``layer.param``.

    ``version`` increases on every parameter update so caches taken before an
    update are recognised as stale.
    """

    def __init__(
        self,
        layers: Iterable[Layer] = (),
        *,
        kind: str = "generic",
        dtype: Any = np.float32,
        seed: int = 0,
        meta: Optional[Dict[str, Any]] = None,
        init: bool = True,
    ) -> None:
        self.layers: List[Layer] = list(layers)
        names = [ly.name for ly in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate layer names in {names}", module="nn_core")
        self.kind = kind
        self.dtype = np.dtype(dtype)
        self.meta: Dict[str, Any] = dict(meta or {})
        self.params: Dict[str, np.ndarray] = {}
        self.version = 0
        self.uid = next(_graph_ids)
        if init:
            rng = np.random.default_rng(seed)
            for ly in self.layers:
                for local, arr in ly.init_params(rng, self.dtype).items():
                    self.params[f"{ly.name}.{local}"] = arr

    # -- parameter store --------------------------------------------------

    def layer(self, name: str) -> Layer:
        for ly in self.layers:
            if ly.name == name:
                return ly
        raise ShapeError(f"unknown layer '{name}'", module="nn_core")

    def layer_names(self) -> List[str]:
        return [ly.name for ly in self.layers]

    def layer_params(self, ly: Layer) -> Dict[str, np.ndarray]:
        prefix = ly.name + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {
            f"{ly.name}.{local}": tuple(shape)
            for ly in self.layers
            for local, shape in ly.param_shapes().items()
        }

    def set_params(self, new: Dict[str, np.ndarray]) -> None:
        shapes = self.param_shapes()
        for k, v in new.items():
            if k not in shapes:
                raise ShapeError(f"unknown parameter '{k}'", module="nn_core")
            if tuple(v.shape) != shapes[k]:
                raise ShapeError(f"parameter '{k}' shape {v.shape} != {shapes[k]}", module="nn_core")
            self.params[k] = np.asarray(v, dtype=self.dtype)
        self.version += 1

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def architecture(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "dtype": self.dtype.name,
            "layers": [ly.config() for ly in self.layers],
            "meta": self.meta,
        }

    @classmethod
    def from_architecture(cls, arch: Dict[str, Any], dtype: Any = None) -> "Graph":
        layers = [layer_from_config(c) for c in arch["layers"]]
        return cls(
            layers,
            kind=arch.get("kind", "generic"),
            dtype=dtype or arch.get("dtype", "float32"),
            meta=arch.get("meta", {}),
            init=False,
        )

    def copy(self) -> "Graph":
        g = Graph.from_architecture(json.loads(json.dumps(self.architecture())), dtype=self.dtype)
        g.params = {k: v.copy() for k, v in self.params.items()}
        return g


@dataclass
class Cache:
    graph_uid: int
    version: int
    entries: List[Tuple[str, Any]]
    activations: Dict[str, np.ndarray]
    x_shape: Tuple[int, ...]


@dataclass
class Gradients:
    params: Dict[str, np.ndarray]
    dx: np.ndarray
    features: Dict[str, np.ndarray] = field(default_factory=dict)


def forward(
    g: Graph,
    x: np.ndarray,
    *,
    stop_at: Optional[str] = None,
    keep: bool = True,
) -> Tuple[np.ndarray, Cache]:
    """Run the layer list on x; returns the output and a cache for backward.

    With ``stop_at`` the pass ends after that layer (used for embedding taps).
    Activations are kept per layer name unless ``keep`` is False.
    """
    h = np.asarray(x, dtype=g.dtype)
    entries: List[Tuple[str, Any]] = []
    acts: Dict[str, np.ndarray] = {}
    for ly in g.layers:
        ly.check_input(h)
        h, c = ly.forward(h, g.layer_params(ly))
        if _DEBUG and not np.all(np.isfinite(h)):
            raise NonFiniteError(f"layer '{ly.name}' produced non-finite values")
        entries.append((ly.name, c))
        if keep:
            acts[ly.name] = h
        if stop_at is not None and ly.name == stop_at:
            break
    else:
        if stop_at is not None:
            raise ShapeError(f"unknown layer '{stop_at}'", module="nn_core")
    return h, Cache(g.uid, g.version, entries, acts, tuple(np.shape(x)))


def backward(g: Graph, cache: Cache, dy: np.ndarray) -> Gradients:
    """Reverse pass from dL/dy at the output of the cached forward.

    ``features[name]`` holds dL/d(output of layer ``name``).
    """
    if cache.graph_uid != g.uid or cache.version != g.version:
        raise StaleCacheError("cache does not belong to the current graph parameters")
    grads: Dict[str, np.ndarray] = {}
    feats: Dict[str, np.ndarray] = {}
    d = np.asarray(dy, dtype=g.dtype)
    for name, c in reversed(cache.entries):
        ly = g.layer(name)
        feats[name] = d
        d, pg = ly.backward(d, c, g.layer_params(ly))
        for local, v in pg.items():
            grads[f"{name}.{local}"] = np.asarray(v, dtype=np.float64)
    return Gradients(params=grads, dx=d, features=feats)
