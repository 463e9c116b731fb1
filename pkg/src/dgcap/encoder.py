"""LSTM cell and the per-stream bidirectional frame encoders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .params import LayerNorm, Linear, ParamStore, make_layer_norm, make_linear


@dataclass
class LstmParams:
    """Gate blocks are stacked in the order input, forget, candidate, output."""

    w_ih: Tensor   # (4h, d_in)
    w_hh: Tensor   # (4h, h)
    bias: Tensor   # (4h,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @property
    def d_in(self) -> int:
        return self.w_ih.shape[1]


def make_lstm(store: ParamStore, name: str, d_in: int, hidden: int) -> LstmParams:
    k = 1.0 / np.sqrt(hidden)
    w_ih = store.uniform(f"{name}.w_ih", (4 * hidden, d_in), k)
    w_hh = store.uniform(f"{name}.w_hh", (4 * hidden, hidden), k)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return LstmParams(w_ih, w_hh, store.add(f"{name}.bias", b))


def _gates(pre: Tensor, hidden: int):
    i, f, g, o = ad.split(pre, [hidden] * 4, axis=-1)
    return ad.sigmoid(i), ad.sigmoid(f), ad.tanh(g), ad.sigmoid(o)


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams,
                   x_proj: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """One LSTM step. Works on a single vector or a batch of rows.

    ``x_proj`` lets callers pass a precomputed ``x @ w_ih.T`` for the step.
    """
    h = p.hidden
    if h_prev.shape[-1] != h or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm state shapes {h_prev.shape}/{c_prev.shape} do not match hidden size {h}")
    if x_proj is None:
        if x.shape[-1] != p.d_in:
            raise ShapeError(f"lstm input width {x.shape[-1]} != {p.d_in}")
        x_proj = ad.linear(x, p.w_ih)
    pre = x_proj + ad.linear(h_prev, p.w_hh, p.bias)
    i, f, g, o = _gates(pre, h)
    c = f * c_prev + i * g
    return o * ad.tanh(c), c


def run_lstm(xs: Tensor, p: LstmParams, reverse: bool = False) -> list[Tensor]:
    """Unroll over axis 1 of ``xs`` (batch, L, d_in); returns per-step hidden states in time order."""
    if xs.ndim != 3:
        raise ShapeError(f"expected (batch, L, d) input, got shape {xs.shape}")
    batch, length, _ = xs.shape
    if length == 0:
        raise ShapeError("cannot encode an empty frame sequence")
    if xs.shape[-1] != p.d_in:
        raise ShapeError(f"lstm input width {xs.shape[-1]} != {p.d_in}")
    proj = ad.linear(xs, p.w_ih)
    h = Tensor(np.zeros((batch, p.hidden)))
    c = Tensor(np.zeros((batch, p.hidden)))
    outs: list[Tensor | None] = [None] * length
    steps = range(length - 1, -1, -1) if reverse else range(length)
    for t in steps:
        h, c = lstm_cell_step(None, h, c, p, x_proj=proj[:, t])
        outs[t] = h
    return outs


@dataclass
class BiLstmEncoder:
    fwd: LstmParams
    bwd: LstmParams
    proj: Linear         # 2*d_h -> D_v'
    norm: LayerNorm

    def directions(self, V: Tensor) -> Tensor:
        """Concatenated forward/backward hidden states, (batch, L, 2*d_h)."""
        f = run_lstm(V, self.fwd)
        b = run_lstm(V, self.bwd, reverse=True)
        return ad.stack([ad.concat([hf, hb], axis=-1) for hf, hb in zip(f, b)], axis=1)

    def __call__(self, V: Tensor) -> Tensor:
        return bilstm_encode(V, self)


def bilstm_encode(V: Tensor, enc: BiLstmEncoder) -> Tensor:
    """Encode (batch, L, D) or (L, D) frames into (…, L, D_v') contextual features."""
    single = V.ndim == 2
    if single:
        V = ad.reshape(V, (1,) + V.shape)
    if V.ndim != 3 or V.shape[1] == 0:
        raise ShapeError(f"bilstm_encode needs a nonempty frame sequence, got shape {V.shape}")
    if enc.fwd.hidden != enc.bwd.hidden:
        raise ShapeError("forward and backward cells must share the hidden size")
    out = ad.layer_norm(enc.proj(enc.directions(V)), enc.norm.gain, enc.norm.bias)
    return ad.reshape(out, out.shape[1:]) if single else out


def make_bilstm(store: ParamStore, name: str, d_in: int, hidden: int, d_out: int) -> BiLstmEncoder:
    return BiLstmEncoder(
        fwd=make_lstm(store, f"{name}.fwd", d_in, hidden),
        bwd=make_lstm(store, f"{name}.bwd", d_in, hidden),
        proj=make_linear(store, f"{name}.proj", 2 * hidden, d_out),
        norm=make_layer_norm(store, f"{name}.norm", d_out),
    )
