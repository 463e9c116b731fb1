"""The full encoder -> dual graphs -> hierarchical decoder captioner."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .data import BOS, PAD, FeatureBundle, stack_bundles
from .decoder import (
    AttentionNetwork,
    DecoderState,
    GateUnit,
    WordHead,
    attend_kv,
    attention_lstm_step,
    global_average,
    hierarchical_fusion,
    language_lstm_step,
    make_attention,
    make_gate,
)
from .encoder import bilstm_encode, make_bilstm, make_lstm
from .errors import ContractError, ShapeError
from .graphs import EnhancedFeatures, dual_graphs, make_forg, make_gat
from .params import ParamStore, make_layer_norm, make_linear

STREAMS = ("app_gat", "mot_gat", "app_forg", "mot_forg")


@dataclass
class Encoded:
    """Per-video quantities that stay fixed across decoding steps."""

    enhanced: EnhancedFeatures
    fbar: Tensor
    keys: dict[str, Tensor]
    values: dict[str, Tensor]

    @property
    def batch(self) -> int:
        return self.fbar.shape[0]

    def expand(self, n: int) -> "Encoded":
        """Repeat a single-video encoding ``n`` times along the batch axis."""
        if self.batch != 1:
            raise ContractError("expand() needs a single-video encoding")
        rep = lambda t: ad.broadcast_to(t, (n,) + t.shape[1:])  # noqa: E731
        return Encoded(self.enhanced, rep(self.fbar), {k: rep(v) for k, v in self.keys.items()},
                       {k: rep(v) for k, v in self.values.items()})


class CaptionModel:
    def __init__(self, config: ModelConfig, seed: int | None = None):
        self.config = c = config
        self.store = ParamStore(np.random.default_rng(c.seed if seed is None else seed))
        s = self.store
        self.enc_app = make_bilstm(s, "enc_app", c.appearance_dim, c.encoder_hidden, c.feature_dim)
        self.enc_mot = make_bilstm(s, "enc_mot", c.motion_dim, c.encoder_hidden, c.feature_dim)

        use_gat = c.graphs in ("dual", "gat")
        use_forg = c.graphs in ("dual", "forg")
        self.gat_app = make_gat(s, "gat_app", c.feature_dim, c.feature_dim) if use_gat else None
        self.gat_mot = make_gat(s, "gat_mot", c.feature_dim, c.feature_dim) if use_gat else None
        self.forg_app = make_forg(s, "forg_app", c.feature_dim, c.object_dim, c.correlation_dim) if use_forg else None
        self.forg_mot = make_forg(s, "forg_mot", c.feature_dim, c.object_dim, c.correlation_dim) if use_forg else None
        self.streams = [k for k in STREAMS if (use_gat and k.endswith("gat")) or (use_forg and k.endswith("forg"))]

        self.embedding = s.uniform("embedding", (c.vocab_size, c.embed_dim), 0.1)
        self.att_lstm = make_lstm(s, "att_lstm", c.hidden_size + 2 * c.feature_dim + c.embed_dim, c.hidden_size)
        self.attention: dict[str, AttentionNetwork] = {
            k: make_attention(s, f"attn.{k}", c.hidden_size, c.feature_dim, c.attention_dim) for k in self.streams
        }
        self.gates: dict[str, GateUnit] = {}
        if c.fusion == "gate":
            d_k, d_f, h = c.attention_dim, c.fusion_dim, c.hidden_size
            if c.graphs == "dual":
                self.gates["appearance"] = make_gate(s, "gate.appearance", d_k, d_k, h, d_f)
                self.gates["motion"] = make_gate(s, "gate.motion", d_k, d_k, h, d_f)
                self.gates["final"] = make_gate(s, "gate.final", d_f, d_f, h, d_f)
            else:
                self.gates["final"] = make_gate(s, "gate.final", d_k, d_k, h, d_f)
            ctx_dim = d_f
        else:
            ctx_dim = c.attention_dim * len(self.streams)
        self.ctx_dim = ctx_dim
        self.ctx_norm = make_layer_norm(s, "ctx_norm", ctx_dim)
        self.lang_lstm = make_lstm(s, "lang_lstm", ctx_dim + c.hidden_size, c.hidden_size)
        self.head = WordHead(make_linear(s, "head.hidden", c.hidden_size, c.mlp_hidden),
                             make_linear(s, "head.out", c.mlp_hidden, c.vocab_size))

    # -- parameters -----------------------------------------------------
    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.tensors

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ContractError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self.params.items():
            if arrays[k].shape != t.shape:
                raise ShapeError(f"parameter {k}: shape {arrays[k].shape} != {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)

    # -- forward --------------------------------------------------------
    def features(self, bundles: list[FeatureBundle]) -> tuple[Tensor, Tensor, Tensor]:
        c = self.config
        app, mot, obj = stack_bundles(bundles)
        if app.shape[2] != c.appearance_dim or mot.shape[2] != c.motion_dim or obj.shape[2] != c.object_dim:
            raise ShapeError(f"bundle widths {bundles[0].dims} do not match config "
                             f"({c.appearance_dim}, {c.motion_dim}, {c.object_dim})")
        return Tensor(app), Tensor(mot), Tensor(obj)

    def encode_frames(self, V_a: Tensor, V_m: Tensor) -> tuple[Tensor, Tensor]:
        return bilstm_encode(V_a, self.enc_app), bilstm_encode(V_m, self.enc_mot)

    def enhance(self, F_a: Tensor, F_m: Tensor, O: Tensor) -> EnhancedFeatures:
        return dual_graphs(F_a, F_m, O, self.gat_app, self.gat_mot, self.forg_app, self.forg_mot,
                           raw_sum=self.config.forg_raw_sum)

    def encode(self, V_a: Tensor, V_m: Tensor, O: Tensor) -> Encoded:
        F_a, F_m = self.encode_frames(V_a, V_m)
        E = self.enhance(F_a, F_m, O)
        keys, values = {}, {}
        for tag, F in E.items():
            keys[tag], values[tag] = self.attention[tag].keys_values(F)
        return Encoded(E, global_average(F_a, F_m), keys, values)

    def encode_bundles(self, bundles: list[FeatureBundle]) -> Encoded:
        return self.encode(*self.features(bundles))

    def init_state(self, batch: int) -> DecoderState:
        h = self.config.hidden_size
        z = lambda: Tensor(np.zeros((batch, h)))  # noqa: E731
        return DecoderState(z(), z(), z(), z(), None, 1)

    def contexts(self, h_att: Tensor, enc: Encoded) -> dict[str, Tensor]:
        return {k: attend_kv(self.attention[k], h_att, enc.keys[k], enc.values[k]) for k in self.streams}

    def fuse(self, h_att: Tensor, contexts: dict[str, Tensor]) -> Tensor:
        if self.config.fusion == "concat":
            return ad.concat([contexts[k] for k in self.streams], axis=-1)
        return hierarchical_fusion(self.gates, h_att, contexts)

    def step(self, state: DecoderState, prev_ids, enc: Encoded) -> tuple[DecoderState, Tensor]:
        """Advance both LSTMs by one word; returns the new state and vocabulary logits."""
        w = ad.embedding(self.embedding, prev_ids)
        h_att, c_att = attention_lstm_step(state, enc.fbar, w, self.att_lstm)
        ctx = self.fuse(h_att, self.contexts(h_att, enc))
        h_lang, c_lang, logits = language_lstm_step(state, h_att, ctx, self.lang_lstm, self.head, self.ctx_norm)
        return DecoderState(h_att, c_att, h_lang, c_lang, w, state.t + 1), logits

    def step_log_probs(self, state: DecoderState, prev_ids, enc: Encoded) -> tuple[DecoderState, np.ndarray]:
        new, logits = self.step(state, prev_ids, enc)
        return new, ad.log_softmax(logits).data

    def loss(self, bundles: list[FeatureBundle], captions) -> Tensor:
        """Mean over videos of the summed cross-entropy of each caption, teacher forced.

        ``captions`` is (batch, T) token ids starting with BOS; PAD targets are
        masked out and trailing all-pad steps are skipped.
        """
        return self.loss_from_features(self.features(bundles), captions)

    def loss_from_features(self, feats: tuple[Tensor, Tensor, Tensor], captions) -> Tensor:
        ids = np.asarray(captions, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[0] != feats[0].shape[0]:
            raise ShapeError(f"{ids.shape[0]} captions for {feats[0].shape[0]} videos")
        if ids.shape[1] < 2 or not np.all(ids[:, 0] == BOS) or not np.any(ids[:, 1:] != PAD):
            raise ContractError("captions must start with BOS and contain at least one target token")
        targets = ids[:, 1:]
        mask = (targets != PAD).astype(np.float64)
        steps = int(np.nonzero(mask.any(axis=0))[0].max()) + 1
        enc = self.encode(*feats)
        state = self.init_state(ids.shape[0])
        logits = []
        for t in range(steps):
            state, lg = self.step(state, ids[:, t], enc)
            logits.append(lg)
        total = ad.cross_entropy(ad.stack(logits, axis=1), targets[:, :steps], mask[:, :steps])
        return total * (1.0 / ids.shape[0])


def forward_teacher_forced(model: CaptionModel, bundle: FeatureBundle, caption) -> Tensor:
    """Summed cross-entropy of one caption for one video."""
    return model.loss([bundle], caption)
