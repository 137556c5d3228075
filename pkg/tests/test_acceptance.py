"""End-to-end acceptance checks.

Each test records a single PASS/FAIL line; the lines are printed together in
the terminal summary (see conftest.py) and also to stdout.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from mrmn import cli, models, training
from mrmn.baselines import bpr_backward, cml_backward, cml_score, configure_lrml
from mrmn.data import leave_one_out_split
from mrmn.evaluation import EvalReport, RankingRecord, evaluate, hit_ratio_at_k, ndcg_at_k
from mrmn.forward import attention_softmax, predict, relation_vector, score
from mrmn.params import HyperParams, ModelParameters
from mrmn.synthetic import TypeSpec, planted_log
from mrmn.training import TrainingTriplet, backward

import gradcheck

RESULTS = []


def record(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# -- 1: gradient oracle ----------------------------------------------------


def test_gradient_oracle():
    rng = np.random.default_rng(20240)
    start = time.perf_counter()
    worst = {"mrmn-reuse": 0.0, "mrmn-recompute": 0.0, "cml": 0.0, "mf-bpr": 0.0}
    counts = dict.fromkeys(worst, 0)
    for mode in ("reuse", "recompute"):
        key = f"mrmn-{mode}"
        while counts[key] < 100:
            d, n = int(rng.choice([2, 3])), int(rng.choice([2, 3]))
            params, hp, triplet = gradcheck.random_config(rng, d, n, mode)
            triplet = TrainingTriplet(*triplet)
            loss, grads = backward(triplet, params, hp)
            if loss < 1e-3:
                continue
            numeric = gradcheck.numeric_gradients(lambda q: gradcheck.mrmn_loss(triplet, q, hp), params)
            worst[key] = max(worst[key], gradcheck.max_relative_error(gradcheck.dense_gradients(grads, params), numeric))
            counts[key] += 1
    while counts["cml"] < 100 or counts["mf-bpr"] < 100:
        d = int(rng.choice([2, 3]))
        params, _, triplet = gradcheck.random_config(rng, d, 2)
        params = ModelParameters(params.users, params.items, {}, np.zeros((0, d)))
        triplet = TrainingTriplet(*triplet)
        if counts["cml"] < 100:
            margin = float(rng.uniform(0.5, 2.0))
            loss, grads = cml_backward(triplet, params, margin)
            if loss >= 1e-3:
                numeric = gradcheck.numeric_gradients(lambda q: gradcheck.cml_loss(triplet, q, margin), params)
                err = gradcheck.max_relative_error(gradcheck.dense_gradients(grads, params), numeric)
                worst["cml"] = max(worst["cml"], err)
                counts["cml"] += 1
        if counts["mf-bpr"] < 100:
            reg = float(rng.choice([0.0, 1e-3, 1e-1]))
            _, grads = bpr_backward(triplet, params, reg)
            numeric = gradcheck.numeric_gradients(lambda q: gradcheck.bpr_loss(triplet, q, reg), params)
            worst["mf-bpr"] = max(worst["mf-bpr"], gradcheck.max_relative_error(gradcheck.dense_gradients(grads, params), numeric))
            counts["mf-bpr"] += 1
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 10
    detail = ", ".join(f"{k} max rel err {v:.2e} over {counts[k]}" for k, v in worst.items())
    record(1, "gradient oracle", ok, f"{detail}; {elapsed:.1f}s (limit 10s)")


# -- 2: forward invariants -------------------------------------------------


def test_forward_invariants():
    rng = np.random.default_rng(7)
    failures = []
    for trial in range(1000):
        d, n = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        logits = rng.normal(0, 5, n)
        w = attention_softmax(logits)
        if abs(w.sum() - 1) > 1e-9 or np.any(w < 0):
            failures.append(f"normalisation #{trial}")
        if not np.allclose(attention_softmax(logits + rng.normal(0, 50)), w, rtol=0, atol=1e-12):
            failures.append(f"shift #{trial}")
        memory = rng.normal(size=(n, d))
        r = relation_vector(w, memory)
        tol = 1e-12 * (1 + np.abs(memory).max())
        if np.any(r < memory.min(axis=0) - tol) or np.any(r > memory.max(axis=0) + tol):
            failures.append(f"hull #{trial}")
        u, i = rng.uniform(-1, 1, (2, d))
        if score(u, r, i) < 0 or score(u, r, u + r) != 0.0:
            failures.append(f"score zero/non-negative #{trial}")
        if score(u, r, i) == 0.0 and not np.array_equal(i, u + r):
            failures.append(f"score zero off target #{trial}")
        # degenerate memory: MRMN reduces to CML exactly
        params = ModelParameters(u[None], i[None], {"a": rng.normal(size=(d, n))}, np.zeros((n, d)))
        if predict(0, 0, "a", params).score != cml_score(u, i):
            failures.append(f"M=0 #{trial}")
    record(2, "forward invariants", not failures,
           "1000 random inputs, " + ("all invariants hold" if not failures else f"{len(failures)} violations: {failures[:5]}"))


# -- 3: ranking metric oracle ----------------------------------------------


def _brute_force(rank, k):
    ranked = ["neg"] * (rank - 1) + ["gt"]
    hr, dcg = 0, 0.0
    for pos, item in enumerate(ranked[:k], start=1):
        if item == "gt":
            hr = 1
            dcg = 1.0 / math.log2(pos + 1)
    return hr, dcg


def test_ranking_metric_oracle():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        rank, k = int(rng.integers(1, 102)), int(rng.integers(1, 102))
        hr, dcg = _brute_force(rank, k)
        mismatches += hit_ratio_at_k(rank, k) != hr or ndcg_at_k(rank, k) != dcg
    report = EvalReport(k=10, per_user=[RankingRecord(u, 0, [], r) for u, r in enumerate([1, 5, 20])])
    hr_err = abs(report.hr_at_k - 2 / 3)
    ndcg_err = abs(report.ndcg_at_k - (1 + 1 / math.log2(6)) / 3)
    ok = mismatches == 0 and hr_err <= 1e-12 and ndcg_err <= 1e-12
    record(3, "ranking metric oracle", ok,
           f"{mismatches} mismatches in 1000 rank/K pairs; fixture HR err {hr_err:.1e}, NDCG err {ndcg_err:.1e}")


# -- 4: random scorer calibration ------------------------------------------


class RandomScorer:
    higher_is_better = False

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def score_items(self, user, items, ftype):
        return self.rng.random(len(items))


def test_random_scorer_calibration():
    start = time.perf_counter()
    log = planted_log(2400, 600, 10, [TypeSpec("purchase", 3, 0.5), TypeSpec("click", 4, 0.5)], seed=11)
    ds = leave_one_out_split(log)
    report = evaluate(RandomScorer(5), ds, k=10, negatives=100, seed=0)
    elapsed = time.perf_counter() - start
    n = len(report.per_user)
    p = 10 / 101
    sigma = math.sqrt(p * (1 - p) / n)
    ok = n >= 2000 and abs(report.hr_at_k - p) <= 3 * sigma and elapsed < 30
    record(4, "random scorer calibration", ok,
           f"HR@10 {report.hr_at_k:.4f} vs {p:.4f} +/- {3 * sigma:.4f} over {n} users; {elapsed:.1f}s (limit 30s)")


# -- 5: memorisation -------------------------------------------------------


def test_memorisation():
    start = time.perf_counter()
    log = planted_log(20, 30, 4, [TypeSpec("purchase", 3, 0.7), TypeSpec("click", 5, 0.7)], seed=0)
    ds = leave_one_out_split(log)
    hp = HyperParams(margins={"purchase": 0.2, "click": 0.1}, learning_rate=0.05, seed=0)
    model = models.build(hp, ds)
    training.fit(model, ds, 500, 0)
    good = total = 0
    for user, item, ftype in ds.triplets():
        negatives = [j for j in range(ds.n_items) if j not in ds.all_interacted[user]]
        scores = model.score_items(user, [item, *negatives], ftype)
        good += np.mean(scores[1:] > scores[0]) >= 0.9
        total += 1
    elapsed = time.perf_counter() - start
    per_user = len(log.records) / len(log.users)
    frac = good / total
    ok = frac >= 0.9 and elapsed < 60
    record(5, "memorisation", ok,
           f"{frac:.3f} of {total} train pairs beat >= 90% of unseen items "
           f"({per_user:.1f} interactions/user, 500 epochs); {elapsed:.1f}s (limit 60s)")


# -- 6 and 9: multi-relation benefit, attention profiles --------------------

SEEDS = range(5)


def _benefit_dataset(seed):
    log = planted_log(300, 500, 10, [TypeSpec("purchase", 4, 0.9), TypeSpec("click", 15, 0.8)], seed=seed)
    return leave_one_out_split(log)


@pytest.fixture(scope="module")
def benefit_runs():
    start = time.perf_counter()
    runs = []
    for seed in SEEDS:
        ds = _benefit_dataset(seed)
        hp = HyperParams(dim=20, slots=10, margins={"purchase": 0.2, "click": 0.1}, learning_rate=0.05, seed=seed)
        mrmn = models.build(hp, ds)
        training.fit(mrmn, ds, 30, seed)
        mrmn_report = evaluate(mrmn, ds, seed=seed, eval_type="purchase")

        lrml_hp, lrml_ds = configure_lrml(replace(hp, model="lrml"), ds.restrict_types(["purchase"]), "purchase")
        lrml = models.build(lrml_hp, lrml_ds)
        training.fit(lrml, lrml_ds, 30, seed)
        lrml_report = evaluate(lrml, ds, seed=seed, eval_type="purchase")
        runs.append({"dataset": ds, "mrmn": mrmn, "mrmn_hr": mrmn_report.hr_at_k, "lrml_hr": lrml_report.hr_at_k})
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_multi_relation_benefit(benefit_runs):
    runs, elapsed = benefit_runs
    mrmn = np.mean([r["mrmn_hr"] for r in runs])
    lrml = np.mean([r["lrml_hr"] for r in runs])
    ok = mrmn > lrml and elapsed < 300
    record(6, "multi-relation benefit", ok,
           f"mean HR@10 MRMN {mrmn:.4f} vs LRML primary-only {lrml:.4f} over {len(runs)} seeds; "
           f"{elapsed:.0f}s (limit 300s)")


@pytest.mark.slow
def test_attention_profiles(benefit_runs):
    runs, _ = benefit_runs
    worst_sum_err, distances = 0.0, []
    for seed, run in zip(SEEDS, runs):
        rows = cli.mean_attention(run["mrmn"].params, run["dataset"], samples=10000, seed=seed)
        for w in rows.values():
            worst_sum_err = max(worst_sum_err, abs(float(w.sum()) - 1.0))
        names = list(rows)
        distances.append(max(
            float(np.abs(rows[a] - rows[b]).sum()) for n, a in enumerate(names) for b in names[n + 1:]
        ))
    ok = worst_sum_err <= 1e-6 and all(dist > 0.05 for dist in distances)
    record(9, "attention profiles", ok,
           f"max |row sum - 1| {worst_sum_err:.1e}; per-seed max L1 between type rows "
           f"{[round(x, 4) for x in distances]} (need > 0.05)")


# -- 7: margin order -------------------------------------------------------


@pytest.mark.slow
def test_margin_order():
    specs = [TypeSpec("purchase", 4, 0.95), TypeSpec("cart", 4, 0.6), TypeSpec("collect", 6, 0.4),
             TypeSpec("click", 20, 0.25)]
    names = [s.name for s in specs]
    desc = [0.2, 0.15, 0.1, 0.05]
    results = {"descending": [], "reversed": []}
    for seed in SEEDS:
        ds = leave_one_out_split(planted_log(300, 500, 10, specs, seed=seed))
        for label, margins in (("descending", desc), ("reversed", desc[::-1])):
            hp = HyperParams(margins=dict(zip(names, margins)), learning_rate=0.05, seed=seed)
            model = models.build(hp, ds)
            training.fit(model, ds, 20, seed)
            results[label].append(evaluate(model, ds, seed=seed, eval_type="purchase").hr_at_k)
    hi, lo = np.mean(results["descending"]), np.mean(results["reversed"])
    record(7, "margin order", hi > lo, f"mean HR@10 descending {hi:.4f} vs reversed {lo:.4f} over 5 seeds")


# -- 8: determinism --------------------------------------------------------


def test_pipeline_determinism(tmp_path):
    log = planted_log(80, 200, 5, [TypeSpec("purchase", 3, 0.9), TypeSpec("click", 8, 0.7)], seed=2)
    raw = tmp_path / "raw.csv"
    raw.write_text(log.dumps(canonical=False), encoding="utf-8")
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        common = ["--out", str(out), "--seed", "13", "--dim", "8", "--slots", "4",
                  "--margins", "purchase:0.2,click:0.1", "--primary-type", "purchase"]
        codes = [
            cli.main(["ingest", "--data", str(raw), *common]),
            cli.main(["train", "--data", str(out / "dataset.csv"), "--epochs", "5", *common]),
            cli.main(["evaluate", "--data", str(out / "dataset.csv"), "--eval-type", "all", *common]),
        ]
        assert codes == [0, 0, 0]
        files = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        # wall-clock epoch time is the one field allowed to differ
        files["train_log.csv"] = b"\n".join(
            line.rsplit(b",", 1)[0] for line in files["train_log.csv"].splitlines()
        )
        outputs.append(files)
    a, b = outputs
    differing = sorted(name for name in a if a[name] != b.get(name))
    ok = set(a) == set(b) and not differing and "model.ckpt" in a and any(n.startswith("report_") for n in a)
    record(8, "determinism", ok, f"{len(a)} files compared byte for byte (train log without its timing column), "
                         f"differing: {differing or 'none'}")
