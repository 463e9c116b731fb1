"""End-to-end acceptance checks; each test reports one PASS/FAIL line in the pytest summary."""
import itertools
import time
import warnings

import numpy as np
import pytest

from dgcap import CaptionModel, beam_search, greedy_decode, tiny_config
from dgcap import autodiff as ad
from dgcap.autodiff import Tensor, no_grad
from dgcap.cli import main as cli_main
from dgcap.data import (
    BOS,
    EOS,
    UNK,
    build_vocabulary,
    bundle_bytes,
    generate_synthetic_dataset,
    load_feature_bundle,
    save_feature_bundle,
    tokenize,
)
from dgcap.decoder import gate_value, gated_fuse
from dgcap.gradcheck import e2e_grad_check
from dgcap.graphs import ForgParams, forg_enhance, gat_attention, gat_enhance
from dgcap.metrics import EvalCorpus, bleu4, cider, rouge_l
from dgcap.train import load_checkpoint, save_checkpoint, train

# Tolerances and budgets.
PER_OP_TOL = 1e-5
E2E_TOL = 1e-4
GRAD_BUDGET_S = 60.0
OVERFIT_LOSS = 0.05
OVERFIT_EPOCHS = 500
OVERFIT_BUDGET_S = 300.0
BEAM_INITS, GREEDY_INITS = 20, 50
ROW_SUM_TOL = 1e-6
PROB_SUM_TOL = 1e-6
METRIC_TOL = 1e-9

ABLATIONS = {"gat-only": {"graphs": "gat"}, "forg-only": {"graphs": "forg"}, "no-gate": {"fusion": "concat"}}


def _line(n, title, ok, detail):
    return f"[criterion {n}] {title}: {'PASS' if ok else 'FAIL'} ({detail})"


def _record(log, n, title, results):
    """``results`` is a list of (ok, detail); records one line and fails the test if any check failed."""
    ok = all(r for r, _ in results)
    log.append(_line(n, title, ok, "; ".join(d for _, d in results)))
    failed = [d for r, d in results if not r]
    assert ok, "; ".join(failed)


# -- suite 1: gradients -------------------------------------------------------
def _per_op_max():
    rng = np.random.default_rng(0)
    gain, bias = Tensor(rng.uniform(0.5, 1.5, 5)), Tensor(rng.normal(size=5))
    W = Tensor(rng.normal(size=(5, 4)))
    ops = [
        lambda x: ad.tanh(x), lambda x: ad.sigmoid(x), lambda x: ad.exp(x),
        lambda x: ad.leaky_relu(x + 0.05), lambda x: ad.softmax(x), lambda x: ad.log_softmax(x),
        lambda x: x @ W, lambda x: ad.layer_norm(x, gain, bias), lambda x: ad.concat([x, x * x], -1),
        lambda x: ad.mean(x, axis=0), lambda x: ad.transpose(x), lambda x: x[1:, ::2],
        lambda x: ad.embedding(x, [0, 2]), lambda x: ad.log(x * x + 1.0),
    ]
    worst = 0.0
    for k, op in enumerate(ops):
        x = Tensor(np.random.default_rng(k).uniform(-2, 2, size=(3, 5)))
        probe = {}

        def f(x, op=op, probe=probe):
            y = op(x)
            p = probe.setdefault("p", np.random.default_rng(99).normal(size=y.shape))
            return ad.reduce_sum(y * Tensor(p))

        worst = max(worst, ad.grad_check(f, [x]))
    ce_logits = Tensor(rng.uniform(-2, 2, size=(4, 6)))
    worst = max(worst, ad.grad_check(lambda z: ad.cross_entropy(z, [1, 2, 3, 4]), [ce_logits]))
    return worst


def gradient_suite(**over):
    t0 = time.perf_counter()
    per_op = _per_op_max()
    cfg = tiny_config(**over)
    e2e = max(e2e_grad_check(cfg, n_coords=20, seed=s) for s in range(2))
    dt = time.perf_counter() - t0
    return [(per_op < PER_OP_TOL, f"per-op max {per_op:.1e} < {PER_OP_TOL:g}"),
            (e2e < E2E_TOL, f"end-to-end {e2e:.1e} < {E2E_TOL:g}"),
            (dt < GRAD_BUDGET_S, f"{dt:.1f} s < {GRAD_BUDGET_S:g} s")]


# -- suite 2: overfit -------------------------------------------------------
def overfit_suite(**over):
    t0 = time.perf_counter()
    bundles, caps = generate_synthetic_dataset(0, 8, 4, 2, (8, 8, 8))
    vocab = build_vocabulary(caps.values(), min_count=1)
    longest = max(len(tokenize(c)) + 2 for c in caps.values())
    cfg = tiny_config(feature_dim=16, encoder_hidden=16, hidden_size=16, embed_dim=16,
                      vocab_size=len(vocab), **over)
    res = train(cfg, bundles, {k: [v] for k, v in caps.items()}, vocab, epochs=OVERFIT_EPOCHS,
                stop_below=OVERFIT_LOSS)
    exact = sum(vocab.decode(greedy_decode(res.model, b, cfg.max_len)) == tokenize(caps[b.video_id])
                for b in bundles)
    dt = time.perf_counter() - t0
    final = res.epoch_losses[-1]
    return [(longest <= 6, f"captions <= {longest} tokens"),
            (final < OVERFIT_LOSS, f"loss {final:.4f} < {OVERFIT_LOSS} after {len(res.epoch_losses)} epochs"),
            (exact == 8, f"greedy exact {exact}/8"),
            (dt < OVERFIT_BUDGET_S, f"{dt:.1f} s < {OVERFIT_BUDGET_S:g} s")]


# -- suite 3: beam search oracle ----------------------------------------------
def _bundle(seed):
    return generate_synthetic_dataset(seed, 1, 4, 2, (8, 8, 8))[0][0]


def _enumerate_best(model, bundle, allowed, max_len):
    with no_grad():
        enc = model.encode_bundles([bundle])

        def logp(seq):
            state, prev, total = model.init_state(1), BOS, 0.0
            for w in seq:
                state, lp = model.step_log_probs(state, [prev], enc)
                total += float(lp[0, w])
                prev = w
            return total

        seqs = [s for n in range(1, max_len + 1) for s in itertools.product(allowed, repeat=n)
                if EOS not in s[:-1] and (s[-1] == EOS or n == max_len)]
        return list(min(seqs, key=lambda s: (-logp(s) / len(s), s)))


def beam_suite(**over):
    beam_ok = sum(beam_search(m, _bundle(i), beam=125, max_len=3) == _enumerate_best(m, _bundle(i), (EOS, UNK, 4), 3)
                  for i in range(BEAM_INITS) for m in [CaptionModel(tiny_config(vocab_size=5, **over), seed=i)])
    greedy_ok = sum(beam_search(m, _bundle(i), beam=1) == greedy_decode(m, _bundle(i))
                    for i in range(GREEDY_INITS) for m in [CaptionModel(tiny_config(**over), seed=100 + i)])
    return [(beam_ok == BEAM_INITS, f"beam 125 = enumeration on {beam_ok}/{BEAM_INITS}"),
            (greedy_ok == GREEDY_INITS, f"beam 1 = greedy on {greedy_ok}/{GREEDY_INITS}")]


# -- suite 4: algebraic invariants ------------------------------------------
def invariant_suite(**over):
    cfg = tiny_config(**over)
    model = CaptionModel(cfg, seed=0)
    bundles, _ = generate_synthetic_dataset(3, 4, cfg.frames, cfg.objects_per_frame,
                                            (cfg.appearance_dim, cfg.motion_dim, cfg.object_dim))
    rng = np.random.default_rng(0)
    out = []
    with no_grad():
        V_a, V_m, O = model.features(bundles)
        F_a, F_m = model.encode_frames(V_a, V_m)

        if model.gat_app is not None:
            dev, exact = 0.0, True
            for F, p in ((F_a, model.gat_app), (F_m, model.gat_mot)):
                alpha, _ = gat_attention(F, p)
                dev = max(dev, float(np.abs(alpha.data.sum(-1) - 1).max()))
                for _ in range(5):
                    perm = rng.permutation(cfg.frames)
                    exact &= np.array_equal(gat_enhance(F[:, perm], p).data, gat_enhance(F, p).data[:, perm])
            out += [(dev <= ROW_SUM_TOL, f"GAT row sums off by {dev:.1e}"),
                    (exact, "GAT permutation-equivariance bit-exact" if exact else "GAT not bit-exact")]

        if model.forg_app is not None:
            same = True
            for F, p in ((F_a, model.forg_app), (F_m, model.forg_mot)):
                zeroed = ForgParams(p.psi, p.phi, Tensor(np.zeros_like(p.W_f.data)))
                same &= np.array_equal(forg_enhance(F, O, zeroed).data, F.data)
            out.append((same, "FORG with W_f=0 is the identity"))

        enc = model.encode(V_a, V_m, O)
        state = model.init_state(len(bundles))
        prev = [BOS] * len(bundles)
        worst_p, gate_ok, checked = 0.0, True, 0
        for _ in range(cfg.max_len):
            new_state, logits = model.step(state, prev, enc)
            worst_p = max(worst_p, float(np.abs(ad.softmax(logits).data.sum(-1) - 1).max()))
            ctx = model.contexts(new_state.h_att, enc)
            for g, X, Y in _gate_inputs(model, ctx, new_state.h_att):
                fx, fy = g.f_x(X).data, g.f_y(Y).data
                val = gated_fuse(g, X, Y, new_state.h_att).data
                lam = gate_value(g, X, Y, new_state.h_att).data
                slack = 1e-12 * np.maximum(np.abs(fx), np.abs(fy))
                gate_ok &= bool(np.all(val >= np.minimum(fx, fy) - slack) and np.all(val <= np.maximum(fx, fy) + slack))
                gate_ok &= bool(np.all((lam >= 0) & (lam <= 1)))
                checked += 1
            state, prev = new_state, np.argmax(logits.data, axis=-1)
        out.append((worst_p <= PROB_SUM_TOL, f"p_t sums off by {worst_p:.1e} over {cfg.max_len} steps"))
        if model.gates:
            out.append((gate_ok, f"gated outputs inside [f_X, f_Y] on {checked} gate evaluations"))
    return out


def _gate_inputs(model, ctx, h):
    gates = model.gates
    if not gates:
        return []
    if "appearance" in gates:
        c_a = gated_fuse(gates["appearance"], ctx["app_gat"], ctx["app_forg"], h)
        c_m = gated_fuse(gates["motion"], ctx["mot_gat"], ctx["mot_forg"], h)
        return [(gates["appearance"], ctx["app_gat"], ctx["app_forg"]),
                (gates["motion"], ctx["mot_gat"], ctx["mot_forg"]), (gates["final"], c_a, c_m)]
    key = "gat" if "app_gat" in ctx else "forg"
    return [(gates["final"], ctx[f"app_{key}"], ctx[f"mot_{key}"])]


SUITES = {1: ("gradient suite", gradient_suite), 2: ("overfit suite", overfit_suite),
          3: ("beam-search oracle", beam_suite), 4: ("algebraic invariants", invariant_suite)}


@pytest.mark.parametrize("n", sorted(SUITES))
def test_criteria_1_to_4(n, acceptance_log):
    title, suite = SUITES[n]
    _record(acceptance_log, n, title, suite())


# -- criterion 5: metric oracles --------------------------------------------
def test_criterion_5_metric_oracles(acceptance_log):
    def c(h, r):
        return EvalCorpus({k: v.split() for k, v in h.items()}, {k: [x.split() for x in v] for k, v in r.items()})

    ident = c({"a": "a man runs", "b": "the dog sat on a mat"}, {"a": ["a man runs"], "b": ["the dog sat on a mat"]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        single = cider(c({"a": "a man runs"}, {"a": ["a man runs"]}))
    b = bleu4(c({"v": "the cat sat on the mat"}, {"v": ["the cat sat on a mat"]}))
    b_ref = (5 / 6 * 3 / 5 * 2 / 4 * 1 / 3) ** 0.25
    r = rouge_l(c({"v": "the cat sat"}, {"v": ["the dog sat"]}))
    b2 = 1.2 ** 2
    r_ref = (1 + b2) * (2 / 3) ** 2 / (2 / 3 + b2 * 2 / 3)
    ci = cider(c({"a": "a man runs fast", "b": "the dog sat"}, {"a": ["a man runs fast"], "b": ["the dog sat"]}))
    ci_ref = 10 * (1.0 + 0.75) / 2
    _record(acceptance_log, 5, "metric oracles", [
        (bleu4(ident) == 1.0 and rouge_l(ident) == 1.0, f"identical corpus BLEU4={bleu4(ident)} ROUGEL={rouge_l(ident)}"),
        (single == 0.0, f"single-video CIDEr={single}"),
        (abs(b - b_ref) < METRIC_TOL, f"BLEU worked example off by {abs(b - b_ref):.1e}"),
        (abs(r - r_ref) < METRIC_TOL, f"ROUGE-L worked example off by {abs(r - r_ref):.1e}"),
        (abs(ci - ci_ref) < METRIC_TOL, f"CIDEr worked example off by {abs(ci - ci_ref):.1e}"),
    ])


# -- criterion 6: determinism and round-trips ------------------------------------
def test_criterion_6_determinism(tmp_path, acceptance_log):
    data = tmp_path / "data"
    assert cli_main(["gen-synthetic", "--out-dir", str(data), "--n-videos", "8", "--seed", "4"]) == 0
    runs = []
    for name in ("run1", "run2"):
        code = cli_main(["train", "--config", str(data / "config.json"), "--features", str(data / "features"),
                         "--captions", str(data / "captions.tsv"), "--vocab", str(data / "vocab.tsv"),
                         "--epochs", "5", "--seed", "7", "--out-dir", str(tmp_path / name)])
        assert code == 0
        runs.append((tmp_path / name / "loss.csv").read_bytes())

    bundle = load_feature_bundle(next((data / "features").glob("*.dgvc")))
    save_feature_bundle(bundle, tmp_path / "copy.dgvc")
    again = load_feature_bundle(tmp_path / "copy.dgvc")
    bundle_ok = bundle_bytes(again) == bundle_bytes(bundle) and all(
        np.array_equal(x, y) for x, y in ((again.appearance, bundle.appearance), (again.motion, bundle.motion),
                                          (again.objects.values, bundle.objects.values)))

    ck_path = tmp_path / "run1" / "checkpoint.dgvc"
    ckpt = load_checkpoint(ck_path)
    save_checkpoint(tmp_path / "ck_copy.dgvc", ckpt)
    back = load_checkpoint(tmp_path / "ck_copy.dgvc")
    ck_ok = (ck_path.read_bytes() == (tmp_path / "ck_copy.dgvc").read_bytes()
             and all(np.array_equal(back.params[k], v) for k, v in ckpt.params.items()))
    rows = runs[0].count(b"\n") - 1
    _record(acceptance_log, 6, "determinism", [
        (runs[0] == runs[1], f"loss CSVs identical ({rows} rows)"),
        (bundle_ok, "feature bundle round-trip bit-exact"),
        (ck_ok, "checkpoint round-trip bit-exact"),
    ])


# -- criterion 7: ablations ---------------------------------------------------
def test_criterion_7_ablations(acceptance_log):
    results = []
    for name, over in ABLATIONS.items():
        model = CaptionModel(tiny_config(**over), seed=0)
        has_gat, has_forg = model.gat_app is not None, model.forg_app is not None
        structure = {"gat-only": has_gat and not has_forg, "forg-only": has_forg and not has_gat,
                     "no-gate": not model.gates}[name]
        results.append((structure, f"{name}: structure as configured"))
        for n, (title, suite) in SUITES.items():
            checks = suite(**over)
            ok = all(r for r, _ in checks)
            results.append((ok, f"{name} suite {n} {'ok' if ok else 'FAILED: ' + '; '.join(d for r, d in checks if not r)}"))
    _record(acceptance_log, 7, "ablation parity", results)
