"""Acceptance criteria.

One test per criterion; each prints a single ``ACCEPTANCE n: PASS/FAIL``
line. Criteria 1-3 are oracle and invariant checks, criterion 4 is the
shuffled-label null control, criteria 5-8 are directional desk-scale
reproductions over five seeds (paired attack beats single-model attacks
on a pruned model, multi-reference aggregation beats its single-model
comparators, members' posteriors shift more than non-members' under
compression, and DP-SGD noise mitigates the paired attack), and
criterion 9 is byte-identical report determinism.

The directional suites run a 30-class synthetic world whose victims
memorize their training split (gap well above 25 points) and whose
pruning levels {85, 92, 97}% with a brief fine-tune reproduce the
capacity-limited regime the attacks exploit: member losses grow with
sparsity while non-member losses stay flat.
"""

import numpy as np
import pytest

from compaudit import attacks, checkpoint, compress, data, meta, metrics, nn, pipeline
from compaudit.attacks import ADV1, ADV2, SrConstruction
from compaudit.metrics import AttackScoreSet, balanced_accuracy
from compaudit.plan import parse_plan_text

from tests.test_metrics import confusion_ba_oracle, pairwise_auc_oracle, tpr_scan_oracle
from tests.test_nn import central_difference_grads

SEEDS = (101, 202, 303, 404, 505)

# shared world for the directional criteria (5, 6, 7)
SUITE = dict(
    n=2400, d=64, classes=30, spread=2.2,
    victim_n=300, shadow_n=600,
    hidden=(256, 128), dropout=0.1,
    lr=0.15, batch=32, epochs=30, l2=1e-4,
    levels=(0.85, 0.92, 0.97), ft_epochs=4,
)
MR_MLP = meta.MlpHyper(standardize=False, epochs=1200, learning_rate=0.2)


def _report(n: int, ok: bool, detail: str):
    print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 1. metric oracles


def test_acceptance_1_metric_oracles():
    rng = np.random.default_rng(0)
    worst_auc = 0.0
    for _ in range(100):
        member = np.round(rng.random(rng.integers(2, 51)), 2)
        nonmember = np.round(rng.random(rng.integers(2, 51)), 2)
        s = AttackScoreSet(member, nonmember)
        worst_auc = max(worst_auc, abs(metrics.roc_auc(s) - pairwise_auc_oracle(member, nonmember)))
        for cap in (0.0, 0.01, 0.1, 0.5):
            assert metrics.tpr_at_fpr(s, cap) == tpr_scan_oracle(member, nonmember, cap)
        for t in (0.25, 0.5, 0.75):
            assert metrics.balanced_accuracy(s, t) == pytest.approx(
                confusion_ba_oracle(member, nonmember, t), abs=1e-12
            )
    _report(1, worst_auc <= 1e-9,
            f"AUC within {worst_auc:.2e} of the pairwise oracle; TPR@FPR matches the "
            "exhaustive scan exactly; balanced accuracy matches the hand confusion matrix")


# ---------------------------------------------------------------------------
# 2. compression invariants


def test_acceptance_2_compression_invariants():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 8))
    y = rng.integers(0, 4, 80)
    cfg = nn.TrainConfig(learning_rate=0.1, batch_size=16, max_epochs=10, seed=3)
    checks = []
    for seed in (0, 1, 2):
        model = nn.init_fcn([8, 12, 6, 4], seed=seed, dropout_rates=[0.0, 0.0])
        total = sum(w.size for w in model.weights)
        for sparsity in (0.5, 0.8):
            cm = compress.prune_l1(model, sparsity)
            zeros = sum(int(np.sum(w == 0.0)) for w in cm.model.weights)
            checks.append(abs(zeros - np.floor(sparsity * total)) <= 1)
            again = compress.prune_l1(cm.model, sparsity)
            checks.append(all(np.array_equal(a, b) for a, b in zip(again.model.weights, cm.model.weights)))
        qm = compress.quantize_int8(model)
        for orig, snapped, s in zip(model.weights, qm.model.weights, qm.constraint.quant_scales):
            checks.append(bool(np.all(np.abs(snapped - orig) <= s / 2 + 1e-15)))
        cl = compress.cluster_weights(model, 4, seed=seed)
        checks.append(all(np.unique(w).size <= 4 for w in cl.model.weights))
        _, _, hist = compress.kmeans_1d(model.weights[0].ravel(), 4, seed=seed)
        checks.append(all(a >= b - 1e-12 for a, b in zip(hist, hist[1:])))
        for cm in (compress.prune_l1(model, 0.6), cl, qm):
            tuned = compress.finetune_compressed(cm, (X, y), (X, y), cfg)
            checks.append(tuned.verify())
    _report(2, all(checks),
            "exact prune sparsity and idempotence, int8 round-trip error <= s/2, "
            "<= N cluster values with a monotone Lloyd objective, constraints exact "
            "through 10 fine-tune epochs")


# ---------------------------------------------------------------------------
# 3. gradient checks


def test_acceptance_3_gradient_checks():
    model = nn.init_fcn([5, 4, 3], seed=5, dropout_rates=[0.0])
    rng = np.random.default_rng(8)
    X = rng.normal(size=(7, 5))
    y = rng.integers(0, 3, 7)
    _, dWs, dbs = nn.loss_and_gradients(model, X, y, l2_lambda=0.01)
    nWs, nbs = central_difference_grads(model, X, y, 0.01)
    engine_ok = all(
        np.allclose(a, f, rtol=1e-4, atol=1e-7) for a, f in zip(dWs + dbs, nWs + nbs)
    )

    Xb = rng.normal(size=(12, 4))
    yb = rng.integers(0, 2, 12)
    w = rng.normal(size=4) * 0.3
    b = 0.1
    _, gw, gb = meta.lr_loss_and_gradients(w, b, Xb, yb, 0.01)
    h = 1e-5
    lr_ok = True
    for i in range(4):
        up, dn = w.copy(), w.copy()
        up[i] += h
        dn[i] -= h
        fd = (meta.lr_loss_and_gradients(up, b, Xb, yb, 0.01)[0]
              - meta.lr_loss_and_gradients(dn, b, Xb, yb, 0.01)[0]) / (2 * h)
        lr_ok &= abs(gw[i] - fd) <= 1e-4 * max(1.0, abs(fd))

    W1 = rng.normal(size=(4, 4)) * 0.5
    b1 = rng.normal(size=4) * 0.1
    w2 = rng.normal(size=4) * 0.5
    b2 = 0.05
    _, gW1, gb1, gw2, gb2 = meta.mlp_loss_and_gradients(W1, b1, w2, b2, Xb, yb, 0.01)
    mlp_ok = True
    for (i, j), g in np.ndenumerate(gW1):
        up, dn = W1.copy(), W1.copy()
        up[i, j] += h
        dn[i, j] -= h
        fd = (meta.mlp_loss_and_gradients(up, b1, w2, b2, Xb, yb, 0.01)[0]
              - meta.mlp_loss_and_gradients(dn, b1, w2, b2, Xb, yb, 0.01)[0]) / (2 * h)
        mlp_ok &= abs(g - fd) <= 1e-4 * max(1.0, abs(fd))
    _report(3, engine_ok and lr_ok and mlp_ok,
            "engine, logistic, and MLP gradients match central finite differences "
            "within 1e-4 relative")


# ---------------------------------------------------------------------------
# directional suite shared by criteria 5, 6, 7


def _train_fcn(ds, idx, seed, cfg_seed, p):
    layer_sizes = [p["d"], *p["hidden"], p["classes"]]
    drops = [p["dropout"]] * len(p["hidden"])
    cfg = nn.TrainConfig(learning_rate=p["lr"], batch_size=p["batch"],
                         max_epochs=p["epochs"], l2_lambda=p["l2"], seed=cfg_seed)
    return nn.train(nn.init_fcn(layer_sizes, seed=seed, dropout_rates=drops), ds.xy(idx), None, cfg)


def _build_world(seed, p):
    ds = data.synth_generate(p["n"], p["d"], p["classes"], p["spread"], seed=seed)
    split = data.make_split(
        ds, data.SplitSizes(p["victim_n"], p["victim_n"], p["shadow_n"], p["shadow_n"]),
        seed=seed + 1,
    )
    victim = _train_fcn(ds, split.victim_train, seed + 2, seed + 3, p)
    shadow = _train_fcn(ds, split.shadow_train, seed + 4, seed + 5, p)
    v_models, s_models = [], []
    for i, level in enumerate(p["levels"]):
        ft = nn.TrainConfig(learning_rate=p["lr"], batch_size=p["batch"],
                            max_epochs=p["ft_epochs"], l2_lambda=p["l2"], seed=seed + 6 + i)
        v_models.append(compress.finetune_compressed(
            compress.prune_l1(victim, level), ds.xy(split.victim_train), None, ft))
        s_models.append(compress.finetune_compressed(
            compress.prune_l1(shadow, level), ds.xy(split.shadow_train), None, ft))
    return ds, split, victim, shadow, v_models, s_models


def _nr_battery(ds, split, victim_model, shadow_model, seed):
    """Balanced accuracy of every single-model attack on one target."""
    out = {}
    for metric in ("loss", "mentr"):
        _, scores = attacks.run_nr_metric(ds, split, victim_model, shadow_model, metric=metric)
        out[metric] = balanced_accuracy(scores)
    for with_label, name in ((False, "posterior"), (True, "posterior_label")):
        for kind in ("lr", "rf"):
            _, scores = attacks.run_nr_training(
                ds, split, victim_model, shadow_model, clf_kind=kind,
                with_label=with_label, seed=seed,
            )
            out[f"{name}_{kind}"] = balanced_accuracy(scores)
    return out


@pytest.fixture(scope="session")
def overfit_suite():
    """Per-seed measurements for the directional criteria."""
    rows = []
    for seed in SEEDS:
        ds, split, victim, shadow, v_models, s_models = _build_world(seed, SUITE)
        row = {"seed": seed}
        row["gap"] = (
            nn.evaluate_accuracy(victim, *ds.xy(split.victim_train))
            - nn.evaluate_accuracy(victim, *ds.xy(split.victim_test))
        )
        row["nr"] = {
            f"{vm.degree_tag:.0f}": _nr_battery(ds, split, vm, sm, seed + 10)
            for vm, sm in zip(v_models, s_models)
        }
        row["sr"] = {}
        for vm, sm in zip(v_models, s_models):
            _, scores = attacks.run_sr(
                ds, split, victim, vm, shadow, sm,
                SrConstruction.SORTED_CONCAT_LABEL, "rf", seed=seed + 20,
            )
            row["sr"][f"{vm.degree_tag:.0f}"] = balanced_accuracy(scores)
        _, mr1 = attacks.run_mr(
            ds, split, victim, v_models, shadow, s_models, adversary=ADV1,
            seed=seed + 30, mlp_hyper=MR_MLP,
        )
        _, mr2 = attacks.run_mr(
            ds, split, victim, v_models, shadow, s_models, adversary=ADV2,
            seed=seed + 40, mlp_hyper=MR_MLP,
        )
        row["mr1"] = balanced_accuracy(mr1)
        row["mr2"] = balanced_accuracy(mr2)
        Xm, _ = ds.xy(split.victim_train)
        Xn, _ = ds.xy(split.victim_test)
        heaviest = v_models[-1].model
        row["kl_member"] = float(np.mean(
            metrics.kl_divergence_batch(nn.forward(victim, Xm), nn.forward(heaviest, Xm))
        ))
        row["kl_nonmember"] = float(np.mean(
            metrics.kl_divergence_batch(nn.forward(victim, Xn), nn.forward(heaviest, Xn))
        ))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# 4. null calibration


def test_acceptance_4_null_calibration():
    p = dict(n=800, d=16, classes=6, spread=1.2, victim_n=150, shadow_n=150,
             hidden=(32, 16), dropout=0.1, lr=0.15, batch=25, epochs=20, l2=1e-4,
             levels=(0.7, 0.9), ft_epochs=3)
    per_attack: dict[str, list[float]] = {}
    for seed in SEEDS:
        ds, split, victim, shadow, v_models, s_models = _build_world(seed, p)
        score_sets = {}
        for metric in ("loss", "mentr"):
            _, scores = attacks.run_nr_metric(ds, split, v_models[0], s_models[0], metric=metric)
            score_sets[f"nr_{metric}"] = scores
        for with_label, name in ((False, "posterior"), (True, "posterior_label")):
            for kind in ("lr", "rf"):
                _, scores = attacks.run_nr_training(
                    ds, split, v_models[0], s_models[0], clf_kind=kind,
                    with_label=with_label, seed=seed + 50,
                )
                score_sets[f"nr_{name}_{kind}"] = scores
        for method in SrConstruction:
            for kind in ("lr", "rf"):
                _, scores = attacks.run_sr(
                    ds, split, victim, v_models[0], shadow, s_models[0],
                    method, kind, seed=seed + 60,
                )
                score_sets[f"sr_{method.value}_{kind}"] = scores
        for adversary in (ADV1, ADV2):
            _, scores = attacks.run_mr(
                ds, split, victim, v_models, shadow, s_models, adversary=adversary,
                seed=seed + 70, mlp_hyper=MR_MLP,
            )
            score_sets[f"mr_{adversary}"] = scores
        for name, scores in score_sets.items():
            shuffled = attacks.shuffled_score_set(scores, seed=seed + 80)
            per_attack.setdefault(name, []).append(balanced_accuracy(shuffled))
    medians = {name: float(np.median(vals)) for name, vals in per_attack.items()}
    ok = all(0.45 <= m <= 0.55 for m in medians.values())
    detail = ", ".join(f"{k}={v:.3f}" for k, v in sorted(medians.items()))
    _report(4, ok, f"shuffled-label balanced accuracy medians in [0.45, 0.55]: {detail}")


# ---------------------------------------------------------------------------
# 5. paired attack beats single-model attacks on the same pruned model


def test_acceptance_5_sr_exceeds_best_nr(overfit_suite):
    level = f"{SUITE['levels'][0] * 100:.0f}"
    gaps = [row["gap"] for row in overfit_suite]
    margins = [row["sr"][level] - max(row["nr"][level].values()) for row in overfit_suite]
    gap_ok = float(np.median(gaps)) >= 0.25
    margin_ok = float(np.median(margins)) >= 0.02
    _report(5, gap_ok and margin_ok,
            f"victim train-test gap median {np.median(gaps):.3f} (>= 0.25); paired attack "
            f"(sorted+label, random forest) beats the best single-model attack on the "
            f"{level}%-pruned model by {np.median(margins) * 100:.1f} points median (>= 2)")


# ---------------------------------------------------------------------------
# 6. multi-reference aggregation beats its single-model comparators


def test_acceptance_6_mr_orderings(overfit_suite):
    mr1_margins = [row["mr1"] - max(row["sr"].values()) for row in overfit_suite]
    best_nr = [max(max(b.values()) for b in row["nr"].values()) for row in overfit_suite]
    mr2_margins = [row["mr2"] - bn for row, bn in zip(overfit_suite, best_nr)]
    mr1_holds = sum(m >= 0 for m in mr1_margins)
    mr2_holds = sum(m >= 0 for m in mr2_margins)
    median_ok = (
        float(np.median([r["mr1"] for r in overfit_suite]))
        >= float(np.median([max(r["sr"].values()) for r in overfit_suite]))
        and float(np.median([r["mr2"] for r in overfit_suite])) >= float(np.median(best_nr))
    )
    ok = mr1_holds >= 4 and mr2_holds >= 4 and median_ok
    _report(6, ok,
            f"adversary-1 aggregation >= best single-model paired attack in {mr1_holds}/5 seeds "
            f"(median margin {np.median(mr1_margins) * 100:+.1f} points); adversary-2 "
            f"aggregation >= best single-model attack in {mr2_holds}/5 seeds "
            f"(median margin {np.median(mr2_margins) * 100:+.1f} points)")


# ---------------------------------------------------------------------------
# 7. members' posteriors shift more than non-members' under compression


def test_acceptance_7_kl_asymmetry(overfit_suite):
    diffs = [row["kl_member"] - row["kl_nonmember"] for row in overfit_suite]
    ok = float(np.median(diffs)) > 0.0
    _report(7, ok,
            f"KL(original || pruned) member mean exceeds non-member mean by "
            f"{np.median(diffs):+.3f} nats median over 5 seeds")


# ---------------------------------------------------------------------------
# 8. DP-SGD mitigation


def test_acceptance_8_dpsgd_mitigation():
    p = dict(n=1800, d=64, classes=30, spread=2.2, victim_n=300, shadow_n=450,
             hidden=(256, 128), dropout=0.1, lr=0.2, batch=32, epochs=30, l2=1e-4)

    def sr_ba(seed, sigma):
        ds = data.synth_generate(p["n"], p["d"], p["classes"], p["spread"], seed=seed)
        split = data.make_split(
            ds, data.SplitSizes(p["victim_n"], p["victim_n"], p["shadow_n"], p["shadow_n"]),
            seed=seed + 1,
        )
        dp = nn.DpConfig(clip_norm=1.0, noise_multiplier=sigma, delta=1e-5)
        layer_sizes = [p["d"], *p["hidden"], p["classes"]]
        drops = [p["dropout"]] * len(p["hidden"])

        def fit(idx, init_seed, cfg_seed):
            cfg = nn.TrainConfig(learning_rate=p["lr"], batch_size=p["batch"],
                                 max_epochs=p["epochs"], l2_lambda=p["l2"], seed=cfg_seed)
            return nn.train_dpsgd(
                nn.init_fcn(layer_sizes, seed=init_seed, dropout_rates=drops),
                ds.xy(idx), cfg, dp,
            )

        victim = fit(split.victim_train, seed + 2, seed + 3)
        shadow = fit(split.shadow_train, seed + 4, seed + 5)
        ft = nn.TrainConfig(learning_rate=p["lr"], batch_size=p["batch"],
                            max_epochs=4, l2_lambda=p["l2"], seed=seed + 6)
        vm = compress.finetune_compressed(
            compress.prune_l1(victim, 0.7), ds.xy(split.victim_train), None, ft, dp=dp)
        sm = compress.finetune_compressed(
            compress.prune_l1(shadow, 0.7), ds.xy(split.shadow_train), None, ft, dp=dp)
        _, scores = attacks.run_sr(
            ds, split, victim, vm, shadow, sm,
            SrConstruction.SORTED_CONCAT_LABEL, "rf", seed=seed + 7,
        )
        return balanced_accuracy(scores)

    drops = [sr_ba(seed, 0.0) - sr_ba(seed, 0.5) for seed in SEEDS]
    median_drop = float(np.median(drops))
    _report(8, median_drop >= 0.05,
            f"paired-attack balanced accuracy falls by {median_drop * 100:.1f} points median "
            "(>= 5) when the DP-SGD noise multiplier grows from 0 to 0.5 at clip norm 1")


# ---------------------------------------------------------------------------
# 9. determinism


ACCEPT_PLAN = """
[dataset]
kind = synth
samples = 600
features = 12
classes = 4
spread = 1.5
seed = 9

[split]
victim_train = 120
victim_test = 120
shadow_train = 120
shadow_test = 120

[train]
learning_rate = 0.15
batch_size = 24
max_epochs = 12
hidden = 24,12
dropout = 0.1

[compression]
prune = 0.7,0.9
int8 = true
finetune_epochs = 3

[attacks]
nr = loss,posterior_rf
sr_methods = sorted_concat_label
sr_classifiers = rf
mr = adv2

[metrics]
fpr_caps = 0.01,0.1

[run]
repetitions = 2
seed_base = 424242
"""


def test_acceptance_9_determinism(tmp_path):
    plan = parse_plan_text(ACCEPT_PLAN)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    pipeline.run_plan(plan, out_a)
    pipeline.run_plan(plan, out_b)
    files = sorted(p.relative_to(out_a) for p in (out_a / "report").rglob("*") if p.is_file())
    identical = all(
        (out_a / f).read_bytes() == (out_b / f).read_bytes() for f in files
    )
    resumed = True
    pipeline.clear_downstream(out_a, "attack")
    pipeline.run_plan(plan, out_a)
    resumed = all(
        (out_a / f).read_bytes() == (out_b / f).read_bytes() for f in files
    )
    _report(9, identical and resumed,
            f"rerunning the plan reproduces {len(files)} report files byte-identically, "
            "including after deleting downstream checkpoints")
