"""Single-step recurrent cells: forward computation and exact reverse-mode gradients.

The plain RNN cell computes

    h_t = g(W h_{t-1} + V x_t + b),    g in {relu, tanh, linear}

and its backward step propagates ``delta_{t-1} = W^T (delta_t * g'(z_t))``
where ``z_t`` is the cached pre-activation. The rectifier uses the
subgradient convention g'(0) = 0, matching g(0) = 0 in the forward pass.

The LSTM cell is the standard forget-gate variant without peepholes:

    i = sigmoid(Wi h + Vi x + bi)        input gate
    f = sigmoid(Wf h + Vf x + bf)        forget gate
    o = sigmoid(Wo h + Vo x + bo)        output gate
    g = tanh(Wg h + Vg x + bg)           candidate
    c = f * c_prev + i * g
    h = o * tanh(c)

States may be a single vector (H,) or a batch of lanes (B, H) sharing the
parameters; weight gradients are summed over lanes (the 1/B of a mean loss
arrives through the incoming delta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndcore import ShapeError

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass
class RnnParams:
    """Weights of one RNN cell: recurrent W (HxH), input V (HxD), bias b (H)."""

    W: np.ndarray
    V: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        h = self.W.shape[0]
        if self.W.shape != (h, h):
            raise ShapeError(f"recurrent matrix must be square, got {self.W.shape}")
        if self.V.shape[0] != h or self.b.shape != (h,):
            raise ShapeError(
                f"inconsistent parameter shapes: W {self.W.shape}, V {self.V.shape}, b {self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.V.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "V": self.V, "b": self.b}


_GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """Weights of one LSTM cell, one (W, V, b) triple per gate i/f/o/g."""

    Wi: np.ndarray
    Vi: np.ndarray
    bi: np.ndarray
    Wf: np.ndarray
    Vf: np.ndarray
    bf: np.ndarray
    Wo: np.ndarray
    Vo: np.ndarray
    bo: np.ndarray
    Wg: np.ndarray
    Vg: np.ndarray
    bg: np.ndarray

    def __post_init__(self):
        h = self.Wi.shape[0]
        d = self.Vi.shape[1]
        for gate in _GATES:
            w, v, b = getattr(self, f"W{gate}"), getattr(self, f"V{gate}"), getattr(self, f"b{gate}")
            if w.shape != (h, h) or v.shape != (h, d) or b.shape != (h,):
                raise ShapeError(
                    f"gate {gate!r} has shapes W {w.shape}, V {v.shape}, b {b.shape};"
                    f" expected ({h},{h}), ({h},{d}), ({h},)"
                )

    @property
    def hidden(self) -> int:
        return self.Wi.shape[0]

    @property
    def input_dim(self) -> int:
        return self.Vi.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for gate in _GATES:
            out[f"W{gate}"] = getattr(self, f"W{gate}")
            out[f"V{gate}"] = getattr(self, f"V{gate}")
            out[f"b{gate}"] = getattr(self, f"b{gate}")
        return out


@dataclass
class StepCache:
    """Forward-pass values one RNN backstep needs: pre-activation and operands."""

    z: np.ndarray
    h: np.ndarray
    h_prev: np.ndarray
    x: np.ndarray


@dataclass
class LstmStepCache:
    """Forward-pass values one LSTM backstep needs (gate activations and cell states)."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tc: np.ndarray  # tanh(c), reused by h = o * tanh(c)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_state(p, h_prev: np.ndarray, x: np.ndarray) -> None:
    if h_prev.ndim not in (1, 2) or h_prev.ndim != x.ndim:
        raise ShapeError(
            f"state and input must both be 1-D or both 2-D, got {h_prev.shape} and {x.shape}"
        )
    if h_prev.shape[-1] != p.hidden or x.shape[-1] != p.input_dim:
        raise ShapeError(
            f"step: state {h_prev.shape} / input {x.shape} do not match parameters"
            f" (hidden={p.hidden}, input_dim={p.input_dim})"
        )
    if h_prev.ndim == 2 and h_prev.shape[0] != x.shape[0]:
        raise ShapeError(f"batch sizes differ: state {h_prev.shape} vs input {x.shape}")


def _weight_grads(dz: np.ndarray, h_prev: np.ndarray, x: np.ndarray):
    """(dW, dV, db) from a pre-activation delta; sums over batch lanes."""
    if dz.ndim == 1:
        return np.outer(dz, h_prev), np.outer(dz, x), dz.copy()
    return dz.T @ h_prev, dz.T @ x, dz.sum(axis=0)


def rnn_step(p: RnnParams, h_prev, x) -> tuple[np.ndarray, StepCache]:
    """One forward step h = g(W h_prev + V x + b); returns the new state and its cache."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_state(p, h_prev, x)
    z = h_prev @ p.W.T + x @ p.V.T + p.b
    if p.activation == "relu":
        h = np.maximum(z, 0.0)
    elif p.activation == "tanh":
        h = np.tanh(z)
    else:
        h = z
    return h, StepCache(z=z, h=h, h_prev=h_prev, x=x)


def rnn_backstep(
    p: RnnParams, cache: StepCache, dh
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Reverse one step: returns (dh_prev, dW, dV, db) for the incoming delta dh."""
    dh = np.asarray(dh, dtype=np.float64)
    if cache.z.shape[-1] != p.hidden:
        raise ShapeError(f"cache hidden size {cache.z.shape[-1]} does not match parameters ({p.hidden})")
    if dh.shape != cache.z.shape:
        raise ShapeError(f"delta shape {dh.shape} does not match cached step shape {cache.z.shape}")
    if p.activation == "relu":
        masked = dh * (cache.z > 0.0)
    elif p.activation == "tanh":
        masked = dh * (1.0 - cache.h * cache.h)
    else:
        masked = dh.copy()
    dh_prev = masked @ p.W
    dw, dv, db = _weight_grads(masked, cache.h_prev, cache.x)
    return dh_prev, dw, dv, db


def lstm_step(p: LstmParams, h_prev, c_prev, x) -> tuple[np.ndarray, np.ndarray, LstmStepCache]:
    """One LSTM step; returns (h, c, cache)."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_state(p, h_prev, x)
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"cell state shape {c_prev.shape} differs from hidden state {h_prev.shape}")
    i = sigmoid(h_prev @ p.Wi.T + x @ p.Vi.T + p.bi)
    f = sigmoid(h_prev @ p.Wf.T + x @ p.Vf.T + p.bf)
    o = sigmoid(h_prev @ p.Wo.T + x @ p.Vo.T + p.bo)
    g = np.tanh(h_prev @ p.Wg.T + x @ p.Vg.T + p.bg)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, LstmStepCache(x=x, h_prev=h_prev, c_prev=c_prev, i=i, f=f, o=o, g=g, c=c, tc=tc)


def lstm_backstep(
    p: LstmParams, cache: LstmStepCache, dh, dc
) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Reverse one LSTM step: returns (dh_prev, dc_prev, per-block gradients).

    Gate derivatives use sigma' = s(1-s) and tanh' = 1 - t**2 on the cached
    activations; the returned dict covers all twelve parameter blocks.
    """
    dh = np.asarray(dh, dtype=np.float64)
    dc = np.asarray(dc, dtype=np.float64)
    if dh.shape != cache.i.shape or dc.shape != cache.i.shape:
        raise ShapeError(
            f"delta shapes {dh.shape} / {dc.shape} do not match cached step shape {cache.i.shape}"
        )
    do = dh * cache.tc
    dc_total = dc + dh * cache.o * (1.0 - cache.tc * cache.tc)
    di = dc_total * cache.g
    df = dc_total * cache.c_prev
    dg = dc_total * cache.i
    dc_prev = dc_total * cache.f
    dzi = di * cache.i * (1.0 - cache.i)
    dzf = df * cache.f * (1.0 - cache.f)
    dzo = do * cache.o * (1.0 - cache.o)
    dzg = dg * (1.0 - cache.g * cache.g)
    dh_prev = dzi @ p.Wi + dzf @ p.Wf + dzo @ p.Wo + dzg @ p.Wg
    grads: dict[str, np.ndarray] = {}
    for gate, dz in (("i", dzi), ("f", dzf), ("o", dzo), ("g", dzg)):
        dw, dv, db = _weight_grads(dz, cache.h_prev, cache.x)
        grads[f"W{gate}"] = dw
        grads[f"V{gate}"] = dv
        grads[f"b{gate}"] = db
    return dh_prev, dc_prev, grads
