"""Dense tanh network with hand-written reverse-mode gradients and forward-mode JVPs.

The network maps ``(x, time_1, ..., time_k)`` to a scalar. Each time input is
expanded with a sinusoidal embedding before the first layer. The secant model
uses two time inputs ``(l, t)``; the tangent baseline uses one.

Batched arrays are row-major: ``x`` has shape ``(n, d)`` and every time input
has shape ``(n,)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NonFiniteInputError(ValueError):
    pass


@dataclass
class ParamVector:
    """Flat parameter store; ``layout`` holds the (rows, cols) of every weight matrix."""

    values: np.ndarray
    layout: list[tuple[int, int]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.layout = [tuple(int(v) for v in shape) for shape in self.layout]
        if self.values.ndim != 1 or self.values.size != self.expected_size(self.layout):
            raise ValueError(
                f"parameter vector of length {self.values.size} does not match layout "
                f"(expected {self.expected_size(self.layout)})"
            )

    @staticmethod
    def expected_size(layout) -> int:
        return sum(r * c + r for r, c in layout)

    @classmethod
    def zeros(cls, layout) -> "ParamVector":
        return cls(np.zeros(cls.expected_size(layout)), layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), list(self.layout))

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into ``values`` for each layer."""
        out = []
        offset = 0
        for rows, cols in self.layout:
            W = self.values[offset : offset + rows * cols].reshape(rows, cols)
            offset += rows * cols
            b = self.values[offset : offset + rows]
            offset += rows
            out.append((W, b))
        return out

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True)
class DualValue:
    """Scalar dual number ``primal + tangent * eps`` with ``eps**2 = 0``."""

    primal: float
    tangent: float = 0.0

    @staticmethod
    def lift(v) -> "DualValue":
        return v if isinstance(v, DualValue) else DualValue(float(v), 0.0)

    def __add__(self, other):
        o = DualValue.lift(other)
        return DualValue(self.primal + o.primal, self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = DualValue.lift(other)
        return DualValue(self.primal - o.primal, self.tangent - o.tangent)

    def __rsub__(self, other):
        return DualValue.lift(other) - self

    def __mul__(self, other):
        o = DualValue.lift(other)
        return DualValue(self.primal * o.primal, self.tangent * o.primal + self.primal * o.tangent)

    __rmul__ = __mul__

    def __neg__(self):
        return DualValue(-self.primal, -self.tangent)

    def tanh(self) -> "DualValue":
        y = math.tanh(self.primal)
        return DualValue(y, (1.0 - y * y) * self.tangent)

    def sin(self) -> "DualValue":
        return DualValue(math.sin(self.primal), math.cos(self.primal) * self.tangent)

    def cos(self) -> "DualValue":
        return DualValue(math.cos(self.primal), -math.sin(self.primal) * self.tangent)


def _frequencies(n_freq: int) -> np.ndarray:
    return (2.0 ** np.arange(n_freq)) * np.pi


@dataclass
class SecantNet:
    """Scalar MLP over ``(x, *times)``.

    ``n_times=2`` gives the secant model u(x, l, t); ``n_times=1`` gives the
    tangent baseline s(x, t). Each time ``s`` is embedded as
    ``[s, sin(2^k pi s), cos(2^k pi s)]`` for ``k < n_freq``.
    """

    dim: int
    hidden_widths: list[int] = field(default_factory=lambda: [128, 128, 128])
    n_freq: int = 4
    n_times: int = 2
    params: ParamVector | None = None

    def __post_init__(self):
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if self.dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValueError("dimensions and widths must be positive")
        if self.params is None:
            self.params = ParamVector.zeros(self.layout)
        elif list(self.params.layout) != self.layout:
            raise ValueError("parameter layout does not match topology")

    @property
    def embed_dim(self) -> int:
        return self.n_times * (1 + 2 * self.n_freq)

    @property
    def input_dim(self) -> int:
        return self.dim + self.embed_dim

    @property
    def layout(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_widths, 1]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    @classmethod
    def init(cls, dim, hidden_widths=(128, 128, 128), n_freq=4, n_times=2, rng=None) -> "SecantNet":
        """Uniform fan-in initialisation; the output layer starts at zero."""
        rng = np.random.default_rng(rng)
        net = cls(dim, list(hidden_widths), n_freq, n_times)
        layers = net.params.unpack()
        for k, (W, b) in enumerate(layers):
            if k == len(layers) - 1:
                continue
            bound = 1.0 / math.sqrt(W.shape[1])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        return net

    def topology(self) -> dict:
        return {
            "dim": self.dim,
            "hidden_widths": list(self.hidden_widths),
            "n_freq": self.n_freq,
            "n_times": self.n_times,
        }

    # -- batched core -----------------------------------------------------

    def _prepare(self, x, times):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected x with trailing dimension {self.dim}, got shape {x.shape}")
        if len(times) != self.n_times:
            raise ValueError(f"expected {self.n_times} time inputs, got {len(times)}")
        n = x.shape[0]
        ts = [np.broadcast_to(np.asarray(s, dtype=np.float64), (n,)) for s in times]
        if not np.all(np.isfinite(x)) or not all(np.all(np.isfinite(s)) for s in ts):
            raise NonFiniteInputError("non-finite network input")
        return x, ts, single

    def _embed(self, ts):
        """Time features and their derivative with respect to each time input."""
        freqs = _frequencies(self.n_freq)
        feats, dfeats = [], []
        for s in ts:
            arg = s[:, None] * freqs
            sin, cos = np.sin(arg), np.cos(arg)
            feats.append(np.concatenate([s[:, None], sin, cos], axis=1))
            dfeats.append(np.concatenate([np.ones_like(s)[:, None], cos * freqs, -sin * freqs], axis=1))
        return feats, dfeats

    def _run(self, x, ts, dx=None, dts=None):
        """Forward pass; with a direction, also carries the tangent (dual) stream."""
        feats, dfeats = self._embed(ts)
        a = np.concatenate([x, *feats], axis=1)
        with_jvp = dx is not None
        if with_jvp:
            da = np.concatenate([dx] + [df * ds[:, None] for df, ds in zip(dfeats, dts)], axis=1)
        acts = [a]
        layers = self.params.unpack()
        for k, (W, b) in enumerate(layers):
            h = a @ W.T + b
            if with_jvp:
                dh = da @ W.T
            if k < len(layers) - 1:
                a = np.tanh(h)
                if with_jvp:
                    da = (1.0 - a * a) * dh
                acts.append(a)
            else:
                a = h
                if with_jvp:
                    da = dh
        out = a[:, 0]
        dout = da[:, 0] if with_jvp else None
        return out, dout, acts

    def _backward(self, acts, upstream) -> ParamVector:
        layers = self.params.unpack()
        grad = ParamVector.zeros(self.layout)
        glayers = grad.unpack()
        delta = np.asarray(upstream, dtype=np.float64)[:, None]
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            gW, gb = glayers[k]
            a_in = acts[k]
            gW[...] = delta.T @ a_in
            gb[...] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ W) * (1.0 - a_in * a_in)
        return grad

    # -- public surface ---------------------------------------------------

    def forward(self, x, *times):
        x, ts, single = self._prepare(x, times)
        out, _, _ = self._run(x, ts)
        return out[0] if single else out

    def jvp(self, x, *times, direction):
        """Directional derivative of the output along ``direction = (dx, *dtimes)``.

        Parameters are constants here, so nothing from this path reaches
        :meth:`grad_params`.
        """
        x, ts, single = self._prepare(x, times)
        dx, *dts = direction
        dx = np.asarray(dx, dtype=np.float64)
        if single:
            dx = dx.reshape(1, -1)
        elif dx.ndim == 1:
            dx = np.broadcast_to(dx, x.shape)
        if dx.shape != x.shape:
            raise ValueError(f"direction shape {dx.shape} does not match x shape {x.shape}")
        if len(dts) != self.n_times:
            raise ValueError(f"expected {self.n_times} time directions, got {len(dts)}")
        dts = [np.broadcast_to(np.asarray(s, dtype=np.float64), (x.shape[0],)) for s in dts]
        _, dout, _ = self._run(x, ts, dx, dts)
        return dout[0] if single else dout

    def forward_jvp(self, x, times, direction):
        """Output, JVP, and the activation cache needed by :meth:`grad_from_cache`."""
        x, ts, _ = self._prepare(x, times)
        dx, *dts = direction
        dts = [np.broadcast_to(np.asarray(s, dtype=np.float64), (x.shape[0],)) for s in dts]
        out, dout, acts = self._run(x, ts, np.asarray(dx, dtype=np.float64), dts)
        return out, dout, acts

    def forward_cached(self, x, times):
        x, ts, _ = self._prepare(x, times)
        out, _, acts = self._run(x, ts)
        return out, acts

    def grad_from_cache(self, acts, upstream) -> ParamVector:
        return self._backward(acts, upstream)

    def grad_params(self, x, *times, upstream) -> ParamVector:
        """Sum over the batch of ``upstream[i] * d out_i / d params``."""
        x, ts, _ = self._prepare(x, times)
        upstream = np.atleast_1d(np.asarray(upstream, dtype=np.float64))
        if upstream.shape != (x.shape[0],):
            raise ValueError("upstream must hold one value per sample")
        _, _, acts = self._run(x, ts)
        return self._backward(acts, upstream)

    def forward_dual(self, x, times, direction) -> DualValue:
        """Unvectorised dual-number evaluation of one sample; reference for :meth:`jvp`."""
        dx, *dts = direction
        inputs = [DualValue(float(v), float(dv)) for v, dv in zip(x, dx)]
        freqs = _frequencies(self.n_freq)
        for s, ds in zip(times, dts):
            sd = DualValue(float(s), float(ds))
            inputs.append(sd)
            inputs.extend((sd * w).sin() for w in freqs)
            inputs.extend((sd * w).cos() for w in freqs)
        a = inputs
        layers = self.params.unpack()
        for k, (W, b) in enumerate(layers):
            h = []
            for i in range(W.shape[0]):
                acc = DualValue(float(b[i]))
                for j in range(W.shape[1]):
                    acc = acc + a[j] * float(W[i, j])
                h.append(acc)
            a = [v.tanh() for v in h] if k < len(layers) - 1 else h
        return a[0]


def forward(net: SecantNet, x, l, t):
    return net.forward(x, l, t)


def jvp(net: SecantNet, x, l, t, direction):
    return net.jvp(x, l, t, direction=direction)


def grad_params(net: SecantNet, x_batch, l_batch, t_batch, upstream) -> ParamVector:
    return net.grad_params(x_batch, l_batch, t_batch, upstream=upstream)


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptimizerState:
    """Network plus adaptive-moment buffers and the step counter."""

    net: SecantNet
    m: ParamVector
    v: ParamVector
    step: int = 0
    skipped: int = 0
    loss_history: list[tuple[int, float]] = field(default_factory=list)

    @classmethod
    def fresh(cls, net: SecantNet) -> "OptimizerState":
        return cls(net, ParamVector.zeros(net.layout), ParamVector.zeros(net.layout))


def adam_step(state: OptimizerState, grads: ParamVector, cfg: AdamConfig) -> bool:
    """Apply one Adam update in place. Returns False (and skips) on non-finite gradients."""
    g = grads.values
    if not np.all(np.isfinite(g)):
        state.skipped += 1
        return False
    state.step += 1
    m, v = state.m.values, state.v.values
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * g
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**state.step)
    v_hat = v / (1.0 - cfg.beta2**state.step)
    state.net.params.values -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return True


def save_checkpoint(state: OptimizerState, path) -> None:
    """Write an ``.npz`` holding topology (JSON), parameters, moments, counters and loss curve."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hist = np.array(state.loss_history, dtype=np.float64).reshape(-1, 2)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            topology=np.array(json.dumps(state.net.topology())),
            params=state.net.params.values,
            m=state.m.values,
            v=state.v.values,
            counters=np.array([state.step, state.skipped], dtype=np.int64),
            loss_history=hist,
        )


def load_checkpoint(path) -> OptimizerState:
    with np.load(path, allow_pickle=False) as data:
        topo = json.loads(str(data["topology"]))
        net = SecantNet(**topo)
        net.params = ParamVector(data["params"].copy(), net.layout)
        state = OptimizerState(
            net,
            ParamVector(data["m"].copy(), net.layout),
            ParamVector(data["v"].copy(), net.layout),
            step=int(data["counters"][0]),
            skipped=int(data["counters"][1]),
            loss_history=[(int(s), float(v)) for s, v in data["loss_history"]],
        )
    return state
