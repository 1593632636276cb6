"""Layer kinds for the static layer-list engine.

Each layer is a small stateless object: parameters live in the owning
Graph's parameter store and are passed in by local name ("weight", "bias").
``forward`` returns the output and whatever the layer needs to run
``backward``; ``backward`` returns the input gradient and parameter grads.

Layouts: conv2d (N, C, T, F); conv1d and sequences (N, T, C); linear acts on
the last axis.
"""
from __future__ import annotations

from typing import Any, Dict, Tuple

import numpy as np
from scipy.special import expit

from seqshot.core.errors import ShapeError

Params = Dict[str, np.ndarray]


class Layer:
    kind: str = "layer"

    def __init__(self, name: str) -> None:
        self.name = name

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def fan_in(self) -> int:
        return 1

    def init_params(self, rng: np.random.Generator, dtype: Any) -> Params:
        """He-uniform weights, zero biases."""
        out: Params = {}
        bound = float(np.sqrt(6.0 / self.fan_in()))
        for local, shape in self.param_shapes().items():
            if local == "bias":
                out[local] = np.zeros(shape, dtype=dtype)
            else:
                out[local] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return out

    def config(self) -> Dict[str, Any]:
        return {"kind": self.kind, "name": self.name}

    def _fail(self, msg: str) -> ShapeError:
        return ShapeError(f"layer '{self.name}' ({self.kind}): {msg}", module="nn_core")

    def check_input(self, x: np.ndarray) -> None:
        pass

    def forward(self, x: np.ndarray, params: Params) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> Tuple[np.ndarray, Params]:
        raise NotImplementedError


class Linear(Layer):
    kind = "linear"

    def __init__(self, name: str, d_in: int, d_out: int) -> None:
        super().__init__(name)
        self.d_in, self.d_out = int(d_in), int(d_out)

    def param_shapes(self):
        return {"weight": (self.d_out, self.d_in), "bias": (self.d_out,)}

    def fan_in(self) -> int:
        return self.d_in

    def config(self):
        return {**super().config(), "d_in": self.d_in, "d_out": self.d_out}

    def check_input(self, x):
        if x.ndim < 2 or x.shape[-1] != self.d_in:
            raise self._fail(f"expected (..., {self.d_in}), got {x.shape}")

    def forward(self, x, params):
        y = x @ params["weight"].T + params["bias"]
        return y, x

    def backward(self, dy, cache, params):
        x = cache
        x2 = x.reshape(-1, self.d_in)
        dy2 = dy.reshape(-1, self.d_out)
        grads = {
            "weight": dy2.T @ x2,
            "bias": dy2.sum(axis=0, dtype=np.float64),
        }
        return dy @ params["weight"], grads


class Conv1D(Layer):
    """1-d convolution over time on (N, T, C).

    Causal padding left-pads by (kernel-1)*dilation so y[t] only sees x[<=t];
    otherwise the same amount is split around the sequence.
    """

    kind = "conv1d"

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int = 1,
        dilation: int = 1,
        causal: bool = False,
    ) -> None:
        super().__init__(name)
        self.c_in, self.c_out = int(c_in), int(c_out)
        self.kernel, self.stride, self.dilation = int(kernel), int(stride), int(dilation)
        self.causal = bool(causal)

    def param_shapes(self):
        return {"weight": (self.c_out, self.kernel, self.c_in), "bias": (self.c_out,)}

    def fan_in(self) -> int:
        return self.c_in * self.kernel

    def config(self):
        return {
            **super().config(),
            "c_in": self.c_in,
            "c_out": self.c_out,
            "kernel": self.kernel,
            "stride": self.stride,
            "dilation": self.dilation,
            "causal": self.causal,
        }

    def _pads(self) -> Tuple[int, int]:
        total = (self.kernel - 1) * self.dilation
        if self.causal:
            return total, 0
        return total // 2, total - total // 2

    def out_length(self, t: int) -> int:
        left, right = self._pads()
        span = (self.kernel - 1) * self.dilation + 1
        return (t + left + right - span) // self.stride + 1

    def check_input(self, x):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise self._fail(f"expected (N, T, {self.c_in}), got {x.shape}")
        if self.out_length(x.shape[1]) < 1:
            raise self._fail(f"input of {x.shape[1]} frames is too short")

    def forward(self, x, params):
        n, t, _ = x.shape
        left, right = self._pads()
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        t_out = self.out_length(t)
        last = self.stride * (t_out - 1) + 1
        taps = [xp[:, j * self.dilation: j * self.dilation + last: self.stride, :] for j in range(self.kernel)]
        cols = np.stack(taps, axis=2).reshape(n, t_out, self.kernel * self.c_in)
        w = params["weight"].reshape(self.c_out, -1)
        y = cols @ w.T + params["bias"]
        return y, (cols, xp.shape, t)

    def backward(self, dy, cache, params):
        cols, xp_shape, t = cache
        n, t_out, _ = dy.shape
        w = params["weight"].reshape(self.c_out, -1)
        dy2 = dy.reshape(-1, self.c_out)
        grads = {
            "weight": (dy2.T @ cols.reshape(-1, cols.shape[-1])).reshape(self.param_shapes()["weight"]),
            "bias": dy2.sum(axis=0, dtype=np.float64),
        }
        dcols = (dy @ w).reshape(n, t_out, self.kernel, self.c_in)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        last = self.stride * (t_out - 1) + 1
        for j in range(self.kernel):
            dxp[:, j * self.dilation: j * self.dilation + last: self.stride, :] += dcols[:, :, j, :]
        left, _ = self._pads()
        return dxp[:, left:left + t, :], grads

    def receptive_field(self) -> int:
        return (self.kernel - 1) * self.dilation + 1


class Conv2D(Layer):
    """2-d convolution on (N, C, T, F) with explicit per-side padding."""

    kind = "conv2d"

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        kernel: Tuple[int, int] = (3, 3),
        stride: Tuple[int, int] = (1, 1),
        padding: Tuple[Tuple[int, int], Tuple[int, int]] = ((1, 1), (1, 1)),
    ) -> None:
        super().__init__(name)
        self.c_in, self.c_out = int(c_in), int(c_out)
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.stride = (int(stride[0]), int(stride[1]))
        self.padding = ((int(padding[0][0]), int(padding[0][1])), (int(padding[1][0]), int(padding[1][1])))

    def param_shapes(self):
        return {"weight": (self.c_out, self.c_in, *self.kernel), "bias": (self.c_out,)}

    def fan_in(self) -> int:
        return self.c_in * self.kernel[0] * self.kernel[1]

    def config(self):
        return {
            **super().config(),
            "c_in": self.c_in,
            "c_out": self.c_out,
            "kernel": list(self.kernel),
            "stride": list(self.stride),
            "padding": [list(self.padding[0]), list(self.padding[1])],
        }

    def out_shape(self, t: int, f: int) -> Tuple[int, int]:
        (pt0, pt1), (pf0, pf1) = self.padding
        t_out = (t + pt0 + pt1 - self.kernel[0]) // self.stride[0] + 1
        f_out = (f + pf0 + pf1 - self.kernel[1]) // self.stride[1] + 1
        return t_out, f_out

    def check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise self._fail(f"expected (N, {self.c_in}, T, F), got {x.shape}")
        t_out, f_out = self.out_shape(x.shape[2], x.shape[3])
        if t_out < 1 or f_out < 1:
            raise self._fail(f"input {x.shape[2:]} is too small")

    def forward(self, x, params):
        n = x.shape[0]
        (pt0, pt1), (pf0, pf1) = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (pt0, pt1), (pf0, pf1)))
        t_out, f_out = self.out_shape(x.shape[2], x.shape[3])
        kt, kf = self.kernel
        st, sf = self.stride
        lt, lf = st * (t_out - 1) + 1, sf * (f_out - 1) + 1
        taps = [xp[:, :, i:i + lt:st, j:j + lf:sf] for i in range(kt) for j in range(kf)]
        # (N, C, kt*kf, T', F') -> (N, T', F', C*kt*kf)
        cols = np.stack(taps, axis=2).transpose(0, 3, 4, 1, 2).reshape(n * t_out * f_out, -1)
        w = params["weight"].reshape(self.c_out, -1)
        y = (cols @ w.T + params["bias"]).reshape(n, t_out, f_out, self.c_out).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (cols, xp.shape, x.shape)

    def backward(self, dy, cache, params):
        cols, xp_shape, x_shape = cache
        n, _, t_out, f_out = dy.shape
        kt, kf = self.kernel
        st, sf = self.stride
        w = params["weight"].reshape(self.c_out, -1)
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        grads = {
            "weight": (dy2.T @ cols).reshape(self.param_shapes()["weight"]),
            "bias": dy2.sum(axis=0, dtype=np.float64),
        }
        dcols = (dy2 @ w).reshape(n, t_out, f_out, self.c_in, kt, kf)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        lt, lf = st * (t_out - 1) + 1, sf * (f_out - 1) + 1
        for i in range(kt):
            for j in range(kf):
                dxp[:, :, i:i + lt:st, j:j + lf:sf] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        (pt0, _), (pf0, _) = self.padding
        return dxp[:, :, pt0:pt0 + x_shape[2], pf0:pf0 + x_shape[3]], grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, params):
        return dy * cache, {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, params):
        y = expit(x)
        return y, y

    def backward(self, dy, cache, params):
        return dy * cache * (1.0 - cache), {}


class FreqPool(Layer):
    """Mean over frequency, keeping time: (N, C, T, F) -> (N, T, C)."""

    kind = "freq_pool"

    def check_input(self, x):
        if x.ndim != 4:
            raise self._fail(f"expected (N, C, T, F), got {x.shape}")

    def forward(self, x, params):
        y = x.mean(axis=3, dtype=np.float64).astype(x.dtype, copy=False).transpose(0, 2, 1)
        return np.ascontiguousarray(y), x.shape

    def backward(self, dy, cache, params):
        n, c, t, f = cache
        dx = np.broadcast_to(dy.transpose(0, 2, 1)[:, :, :, None] / f, cache)
        return np.ascontiguousarray(dx), {}


class GlobalPool(Layer):
    """Channel-wise global mean over time and frequency: (N, C, T, F) -> (N, C)."""

    kind = "global_pool"

    def check_input(self, x):
        if x.ndim != 4:
            raise self._fail(f"expected (N, C, T, F), got {x.shape}")

    def forward(self, x, params):
        return x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype, copy=False), x.shape

    def backward(self, dy, cache, params):
        n, c, t, f = cache
        dx = np.broadcast_to(dy[:, :, None, None] / (t * f), cache)
        return np.ascontiguousarray(dx), {}


class TimePool(Layer):
    """Mean over time: (N, T, C) -> (N, C)."""

    kind = "time_pool"

    def check_input(self, x):
        if x.ndim != 3:
            raise self._fail(f"expected (N, T, C), got {x.shape}")

    def forward(self, x, params):
        return x.mean(axis=1, dtype=np.float64).astype(x.dtype, copy=False), x.shape

    def backward(self, dy, cache, params):
        n, t, c = cache
        dx = np.broadcast_to(dy[:, None, :] / t, cache)
        return np.ascontiguousarray(dx), {}


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Linear, Conv1D, Conv2D, ReLU, Sigmoid, FreqPool, GlobalPool, TimePool)
}


def layer_from_config(cfg: Dict[str, Any]) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    cls = LAYER_KINDS.get(kind)
    if cls is None:
        raise ShapeError(f"unknown layer kind '{kind}'", module="nn_core")
    if cls is Conv2D:
        cfg["kernel"] = tuple(cfg["kernel"])
        cfg["stride"] = tuple(cfg["stride"])
        cfg["padding"] = tuple(tuple(p) for p in cfg["padding"])
    return cls(**cfg)
