"""Finite-difference check of the whole captioner."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .data import SyntheticVocabSpec, generate_synthetic_dataset
from .model import CaptionModel


def e2e_grad_check(cfg: ModelConfig, n_coords: int = 20, seed: int = 0, floor: float = 1e-5) -> float:
    """Finite-difference check of the full model loss on random data.

    Coordinates are drawn among parameters whose analytic gradient exceeds
    ``floor``; below that the relative error measures float cancellation in
    the central difference rather than the gradient.
    """
    rng = np.random.default_rng(seed)
    model = CaptionModel(cfg, seed=seed)
    bundles, _ = generate_synthetic_dataset(seed, 2, cfg.frames, cfg.objects_per_frame,
                                            (cfg.appearance_dim, cfg.motion_dim, cfg.object_dim),
                                            SyntheticVocabSpec(words_per_slot=1, slots=1))
    T = min(cfg.max_len, 6)
    caps = rng.integers(4, cfg.vocab_size, size=(2, T))
    caps[:, 0] = 1
    caps[:, -1] = 2
    feats = model.features(bundles)
    params = list(model.params.values())
    loss = model.loss_from_features(feats, caps)
    model.zero_grad()
    ad.backward(loss)
    pool = [(k, idx) for k, p in enumerate(params) if p.grad is not None
            for idx in zip(*np.nonzero(np.abs(p.grad) > floor))]
    picks = [pool[i] for i in rng.choice(len(pool), size=min(n_coords, len(pool)), replace=False)]
    return ad.grad_check(lambda *_: model.loss_from_features(feats, caps), params, coords=picks)
