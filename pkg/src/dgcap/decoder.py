"""Hierarchical decoder pieces: attention LSTM input, multi-attention, gated fusion, word head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import LstmParams, lstm_cell_step
from .errors import ShapeError
from .graphs import EnhancedFeatures
from .params import LayerNorm, Linear, ParamStore, make_linear


@dataclass
class AttentionNetwork:
    query: Linear
    key: Linear
    value: Linear

    @property
    def d_k(self) -> int:
        return self.key.out_dim

    def keys_values(self, F: Tensor) -> tuple[Tensor, Tensor]:
        return self.key(F), self.value(F)


def make_attention(store: ParamStore, name: str, d_query: int, d_feat: int, d_k: int) -> AttentionNetwork:
    return AttentionNetwork(
        query=make_linear(store, f"{name}.query", d_query, d_k),
        key=make_linear(store, f"{name}.key", d_feat, d_k),
        value=make_linear(store, f"{name}.value", d_feat, d_k),
    )


def attend_kv(net: AttentionNetwork, h: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """Scaled dot-product attention of a one-row query over precomputed keys/values."""
    single = h.ndim == 1
    if single:
        h, K, V = (ad.reshape(t, (1,) + t.shape) for t in (h, K, V))
    batch = h.shape[0]
    if K.shape[-2] == 0:
        raise ShapeError("attention over an empty sequence")
    Q = ad.reshape(net.query(h), (batch, 1, net.d_k))
    scores = (Q @ ad.transpose(K)) * (1.0 / math.sqrt(net.d_k))
    ctx = ad.reshape(ad.softmax(scores, axis=-1) @ V, (batch, net.d_k))
    return ad.reshape(ctx, (net.d_k,)) if single else ctx


def attend(net: AttentionNetwork, h: Tensor, F: Tensor) -> Tensor:
    return attend_kv(net, h, *net.keys_values(F))


def multi_attention(nets: dict[str, AttentionNetwork], h: Tensor, E: EnhancedFeatures) -> dict[str, Tensor]:
    """One context per enhanced stream, each from its own attention network."""
    return {tag: attend(nets[tag], h, F) for tag, F in E.items()}


@dataclass
class GateUnit:
    gate: Linear     # [X; Y; h] -> lambda
    f_x: Linear
    f_y: Linear


def make_gate(store: ParamStore, name: str, d_x: int, d_y: int, d_h: int, d_out: int) -> GateUnit:
    return GateUnit(
        gate=make_linear(store, f"{name}.gate", d_x + d_y + d_h, d_out),
        f_x=make_linear(store, f"{name}.f_x", d_x, d_out),
        f_y=make_linear(store, f"{name}.f_y", d_y, d_out),
    )


def gate_value(g: GateUnit, X: Tensor, Y: Tensor, h: Tensor) -> Tensor:
    if g.gate.in_dim != X.shape[-1] + Y.shape[-1] + h.shape[-1]:
        raise ShapeError(f"gate expects input width {g.gate.in_dim}, got "
                         f"{X.shape[-1]}+{Y.shape[-1]}+{h.shape[-1]}")
    return ad.sigmoid(g.gate(ad.concat([X, Y, h], axis=-1)))


def gated_fuse(g: GateUnit, X: Tensor, Y: Tensor, h: Tensor) -> Tensor:
    lam = gate_value(g, X, Y, h)
    return lam * g.f_x(X) + (1.0 - lam) * g.f_y(Y)


def hierarchical_fusion(gates: dict[str, GateUnit], h: Tensor, contexts: dict[str, Tensor]) -> Tensor:
    """Two-level fusion; with only one graph per stream the first level is skipped."""
    if "app_gat" in contexts and "app_forg" in contexts:
        c_a = gated_fuse(gates["appearance"], contexts["app_gat"], contexts["app_forg"], h)
        c_m = gated_fuse(gates["motion"], contexts["mot_gat"], contexts["mot_forg"], h)
    else:
        key = "gat" if "app_gat" in contexts else "forg"
        c_a, c_m = contexts[f"app_{key}"], contexts[f"mot_{key}"]
    return gated_fuse(gates["final"], c_a, c_m, h)


def global_average(F_a: Tensor, F_m: Tensor) -> Tensor:
    """Mean over frames of the concatenated appearance/motion features."""
    if F_a.shape[:-1] != F_m.shape[:-1]:
        raise ShapeError(f"global_average: frame axes differ, {F_a.shape} vs {F_m.shape}")
    return ad.mean(ad.concat([F_a, F_m], axis=-1), axis=-2)


@dataclass
class DecoderState:
    h_att: Tensor
    c_att: Tensor
    h_lang: Tensor
    c_lang: Tensor
    w_prev: Tensor | None = None
    t: int = 1

    def select(self, rows) -> "DecoderState":
        """Reorder / duplicate batch rows (used by beam search)."""
        rows = np.asarray(rows, dtype=np.int64)
        pick = lambda x: None if x is None else ad.getitem(x, rows)  # noqa: E731
        return DecoderState(pick(self.h_att), pick(self.c_att), pick(self.h_lang), pick(self.c_lang),
                            pick(self.w_prev), self.t)


def attention_lstm_step(state: DecoderState, fbar: Tensor, w_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    x = ad.concat([state.h_lang, fbar, w_prev], axis=-1)
    return lstm_cell_step(x, state.h_att, state.c_att, p)


@dataclass
class WordHead:
    hidden: Linear
    out: Linear

    def logits(self, h: Tensor) -> Tensor:
        return self.out(ad.tanh(self.hidden(h)))


def language_lstm_step(state: DecoderState, h_att: Tensor, ctx: Tensor, p: LstmParams,
                       head: WordHead, norm: LayerNorm | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (h_lang, c_lang, logits); softmax(logits) is the word distribution."""
    if norm is not None:
        ctx = ad.layer_norm(ctx, norm.gain, norm.bias)
    h, c = lstm_cell_step(ad.concat([ctx, h_att], axis=-1), state.h_lang, state.c_lang, p)
    return h, c, head.logits(h)
