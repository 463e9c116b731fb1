"""Frame-frame (GAT) and frame-object (FORG) feature enhancement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .params import Linear, ParamStore, make_linear


@dataclass
class GatParams:
    W_g: Tensor   # (D_v', D_v)
    a: Tensor     # (2 * D_v',)


@dataclass
class ForgParams:
    psi: Linear       # frame -> correlation space, followed by tanh
    phi: Linear       # object -> correlation space, followed by tanh
    W_f: Tensor       # (D_p, D_o)


@dataclass
class EnhancedFeatures:
    """The four enhanced sequences; entries disabled by an ablation are None."""

    app_gat: Tensor | None = None
    mot_gat: Tensor | None = None
    app_forg: Tensor | None = None
    mot_forg: Tensor | None = None

    TAGS = {
        "app_gat": ("appearance", "gat"),
        "mot_gat": ("motion", "gat"),
        "app_forg": ("appearance", "forg"),
        "mot_forg": ("motion", "forg"),
    }

    def items(self) -> list[tuple[str, Tensor]]:
        return [(k, getattr(self, k)) for k in self.TAGS if getattr(self, k) is not None]


def make_gat(store: ParamStore, name: str, d_in: int, d_out: int) -> GatParams:
    W = store.uniform(f"{name}.W_g", (d_out, d_in), 1.0 / np.sqrt(d_in))
    a = store.uniform(f"{name}.a", (2 * d_out,), 1.0 / np.sqrt(d_out))
    return GatParams(W, a)


def make_forg(store: ParamStore, name: str, d_frame: int, d_obj: int, d_corr: int) -> ForgParams:
    return ForgParams(
        psi=make_linear(store, f"{name}.psi", d_frame, d_corr),
        phi=make_linear(store, f"{name}.phi", d_obj, d_corr),
        W_f=store.uniform(f"{name}.W_f", (d_frame, d_obj), 1.0 / np.sqrt(d_obj)),
    )


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"expected (L, D) or (batch, L, D), got shape {x.shape}")
    return x, False


def _canonical_order(F: np.ndarray) -> np.ndarray:
    """Per-video row order that depends only on the set of frames, shape (batch, L)."""
    return np.stack([np.lexsort(f.T[::-1]) for f in F])


def _gather_rows(x: Tensor, order: np.ndarray) -> Tensor:
    return x[np.arange(order.shape[0])[:, None], order]


def _gat_sorted(F: Tensor, p: GatParams) -> tuple[Tensor, Tensor]:
    batch, L, _ = F.shape
    dv = p.W_g.shape[0]
    Z = ad.linear(F, p.W_g)
    a_src = ad.reshape(p.a[:dv], (dv, 1))
    a_dst = ad.reshape(p.a[dv:], (dv, 1))
    s_src = ad.broadcast_to(Z @ a_src, (batch, L, L))
    s_dst = ad.broadcast_to(ad.transpose(Z @ a_dst), (batch, L, L))
    return ad.softmax(ad.leaky_relu(s_src + s_dst), axis=-1), Z


def _gat_prepare(F: Tensor, p: GatParams):
    F, single = _batched(F)
    batch, L, d = F.shape
    if L == 0:
        raise ShapeError("GAT needs at least one frame")
    if p.W_g.shape[1] != d:
        raise ShapeError(f"GAT W_g {p.W_g.shape} does not accept features of width {d}")
    # Frames are processed in a canonical order so the neighbour sums are
    # reassociated identically for any input order; this makes the output
    # bit-exactly permutation-equivariant.
    order = _canonical_order(F.data)
    inverse = np.argsort(order, axis=-1)
    return _gather_rows(F, order), inverse, single


def gat_attention(F: Tensor, p: GatParams) -> tuple[Tensor, Tensor]:
    """Return (alpha, W_g f) for a complete frame graph with self-loops."""
    Fs, inv, single = _gat_prepare(F, p)
    alpha, Z = _gat_sorted(Fs, p)
    b = np.arange(inv.shape[0])[:, None, None]
    alpha = alpha[b, inv[:, :, None], inv[:, None, :]]
    Z = _gather_rows(Z, inv)
    if single:
        return alpha[0], Z[0]
    return alpha, Z


def gat_enhance(F: Tensor, p: GatParams) -> Tensor:
    Fs, inv, single = _gat_prepare(F, p)
    alpha, Z = _gat_sorted(Fs, p)
    out = _gather_rows(ad.tanh(alpha @ Z), inv)
    return out[0] if single else out


def forg_kernel(F: Tensor, O: Tensor, p: ForgParams) -> Tensor:
    """(…, L, R) frame-object correlations psi(f_i) . phi(v_j)."""
    return ad.tanh(p.psi(F)) @ ad.transpose(ad.tanh(p.phi(O)))


def forg_enhance(F: Tensor, O: Tensor, p: ForgParams, raw_sum: bool = False) -> Tensor:
    """Residual frame update with kernel-weighted messages from every object of the video.

    The summed message is divided by the object count R unless ``raw_sum``.
    """
    if O.ndim != F.ndim or O.shape[-2] == 0:
        raise ShapeError(f"FORG needs a nonempty object set matching frames, got {O.shape} vs {F.shape}")
    if p.W_f.shape[0] != F.shape[-1]:
        raise ShapeError(f"FORG W_f output width {p.W_f.shape[0]} != frame feature width {F.shape[-1]}")
    if p.W_f.shape[1] != O.shape[-1]:
        raise ShapeError(f"FORG W_f {p.W_f.shape} does not accept objects of width {O.shape[-1]}")
    msg = forg_kernel(F, O, p) @ ad.linear(O, p.W_f)
    if not raw_sum:
        msg = msg * (1.0 / O.shape[-2])
    return F + msg


def dual_graphs(F_a: Tensor, F_m: Tensor, O: Tensor,
                gat_a: GatParams | None, gat_m: GatParams | None,
                forg_a: ForgParams | None, forg_m: ForgParams | None,
                raw_sum: bool = False) -> EnhancedFeatures:
    """Apply whichever enhancers are given; passing None for a pair disables that graph."""
    if F_a.shape[-2] != F_m.shape[-2]:
        raise ShapeError(f"appearance and motion lengths differ: {F_a.shape} vs {F_m.shape}")
    out = EnhancedFeatures()
    if gat_a is not None:
        out.app_gat = gat_enhance(F_a, gat_a)
        out.mot_gat = gat_enhance(F_m, gat_m)
    if forg_a is not None:
        out.app_forg = forg_enhance(F_a, O, forg_a, raw_sum)
        out.mot_forg = forg_enhance(F_m, O, forg_m, raw_sum)
    return out
