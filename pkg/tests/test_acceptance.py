"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (outside pytest's capture)
before asserting, so a plain ``pytest -v`` log doubles as the report.
"""

import math
import time

import numpy as np

import oracles
from supertoken import classifier as clf
from supertoken import io
from supertoken.baseline import patch_baseline_associate
from supertoken.bench import run_bench
from supertoken.cli import main
from supertoken.config import PipelineConfig
from supertoken.dicf import filter_centers, separation_loss, separation_loss_grad
from supertoken.hsi import FeatureMap, pca_feature_provider, spectral_derivative
from supertoken.metrics import REPORT_KEYS, scores
from supertoken.pipeline import run_cluster, train_toy
from supertoken.scpa import (CenterSet, aggregate, associate_masked, distance_matrix,
                             init_center_grid, make_centers)
from supertoken.softlabel import (class_counts, hard_assign, hard_labels, soft_cross_entropy,
                                  soft_labels)
from supertoken.synthetic import random_cube, separable_cube, straddling_region_cube

TOY = PipelineConfig(m1=16, m2=8, mask_size=4, dicf_k=3)


def _verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def _rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)))


def _distinct_coords(rng, h, w, m):
    flat = rng.choice(h * w, size=m, replace=False)
    return np.stack(np.divmod(flat, w), axis=1)


def test_clustering_matches_loop_oracle(capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, mismatched = 0.0, 0
    for _ in range(120):
        h, w = rng.integers(1, 13, size=2)
        b = int(rng.integers(2, 7))
        m = int(rng.integers(1, min(6, h * w) + 1))
        k = int(rng.integers(1, m + 1))
        cube = random_cube(int(h), int(w), b, seed=int(rng.integers(1 << 30)))
        feats = FeatureMap(rng.normal(size=(h, w, int(rng.integers(1, 5)))))
        deriv = spectral_derivative(cube)
        ctr = _distinct_coords(rng, h, w, m)
        centers = make_centers(ctr, cube, deriv, feats)
        d_ref, a_ref, assign_ref, tok_ref = oracles.cluster(cube.values, feats.values,
                                                           ctr.tolist(), k)
        d = distance_matrix(cube, deriv, feats, centers).total
        assoc = associate_masked(cube, deriv, feats, centers, k)
        tok = aggregate(assoc, feats.flat(), centers).features
        worst = max(worst, _rel(d, d_ref), _rel(assoc.to_dense(), a_ref), _rel(tok, tok_ref))
        mismatched += int(np.any(hard_assign(assoc).tokens != assign_ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and mismatched == 0 and elapsed < 30
    _verdict(capsys, 1, ok, f"120 instances, worst rel err {worst:.2e}, "
             f"{mismatched} assignment mismatches, {elapsed:.1f}s")


def test_filter_matches_enumeration(capsys):
    rng = np.random.default_rng(202)
    worst, index_errors, range_errors = 0.0, 0, 0
    for trial in range(150):
        m = int(rng.integers(3, 13))
        k = int(rng.integers(1, min(4, m - 1) + 1))
        keep = int(rng.integers(2, m + 1))
        h, w = (int(v) for v in rng.integers(4, 16, size=2))
        b = int(rng.integers(2, 6))
        coords = _distinct_coords(rng, h, w, m)
        if trial % 3 == 0:
            # coarse values so distance and density ties show up
            spec = rng.integers(0, 3, size=(m, b)).astype(float)
            # distinct rows keep the separation of any kept subset positive
            sem = np.stack(np.divmod(rng.choice(16, size=m, replace=False), 4), axis=1) * 1.0
        else:
            spec = rng.uniform(size=(m, b))
            sem = rng.normal(size=(m, 3))
        der = np.diff(spec, axis=1)
        centers = CenterSet(coords, spec, der, sem)
        got = filter_centers(None, centers, k, keep, h, w)
        d = oracles.center_distances(coords.tolist(), spec, der, sem, h, w)
        rho, eta, score, kept = oracles.dicf(d, k, keep)
        d_e, loss = oracles.separation(sem[kept])
        index_errors += int(got.kept_indices.tolist() != kept)
        worst = max(worst, _rel(got.distances, d), _rel(got.density, rho),
                    _rel(got.isolation, eta), _rel(got.scores, score),
                    _rel(np.array([got.separation, got.loss]), np.array([d_e, loss])))
        d_max = d.max()
        range_errors += int(not (np.all(got.density > 0) and np.all(got.density <= 1)
                                 and np.all(got.isolation > 0) and np.all(got.isolation <= d_max)
                                 and np.all(got.scores > 0) and np.all(got.scores <= d_max)))
    ok = index_errors == 0 and worst <= 1e-9 and range_errors == 0
    _verdict(capsys, 2, ok, f"150 center sets, {index_errors} kept-set mismatches, "
             f"worst rel err {worst:.2e}, {range_errors} range violations")


def test_soft_label_properties(capsys):
    rng = np.random.default_rng(303)
    failures = []
    for _ in range(100):
        m, c = int(rng.integers(1, 12)), int(rng.integers(2, 8))
        counts = rng.integers(0, 6, size=(m, c)) * (rng.random((m, c)) < 0.5)
        soft = soft_labels(counts)
        sums = soft.values.sum(axis=1)
        if np.any(np.abs(sums[soft.valid] - 1.0) > 1e-9):
            failures.append("row sum")
        pure = np.count_nonzero(counts, axis=1) == 1
        onehot = (counts > 0).astype(float)
        if not np.array_equal(soft.values[pure], onehot[pure]):
            failures.append("pure row")
        if soft.valid.any():
            ce = soft_cross_entropy(np.full((m, c), 1.0 / c), soft)
            if abs(ce - math.log(c)) > 1e-9:
                failures.append("uniform CE")
        # hard-label mode equals one-hot(argmax) supervision
        want = np.zeros((m, c))
        want[np.arange(m), np.argmax(counts, axis=1)] = 1.0
        want[~soft.valid] = 0.0
        hard = hard_labels(soft)
        if not np.array_equal(hard.values, want):
            failures.append("hard labels")
        if hard.valid.any():
            probs = rng.dirichlet(np.ones(c), size=m)
            if soft_cross_entropy(probs, hard) != soft_cross_entropy(probs, soft_labels(want)):
                failures.append("hard CE")
    # same check on a clustered fixture
    cube, labels = separable_cube(seed=3)
    res = run_cluster(cube, TOY)
    counts = class_counts(res.assignment, labels)
    want = np.eye(3)[np.argmax(counts, axis=1)]
    if not np.array_equal(hard_labels(soft_labels(counts)).values, want):
        failures.append("clustered fixture")
    _verdict(capsys, 3, not failures, f"100 random count matrices + clustered fixture, "
             f"failures: {sorted(set(failures)) or 'none'}")


def test_gradients_match_finite_differences(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    params = {k: v * 8 for k, v in clf.init_params(8, 3, seed=4).items()}
    tokens = rng.normal(size=(6, 8))
    labels = soft_labels(rng.integers(0, 4, size=(6, 3)) + np.eye(6, 3, dtype=int))
    _, sst = separation_loss(tokens)
    _, grads = clf.loss_and_gradient(tokens, params, labels, sst=sst)
    errors = {}
    for name, value in params.items():
        num = oracles.numeric_grad(
            lambda: clf.loss_and_gradient(tokens, params, labels, sst=sst)[0], value)
        errors[name] = oracles.rel_error(grads[name], num)
    # the separation term is differentiated with respect to the token features
    feats = tokens.copy()
    num = oracles.numeric_grad(lambda: separation_loss(feats)[1], feats)
    errors["separation"] = oracles.rel_error(separation_loss_grad(tokens), num)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and elapsed < 60
    _verdict(capsys, 4, ok, f"{len(errors)} tensors, worst rel err {errors[worst]:.2e} "
             f"({worst}), {elapsed:.1f}s")


def test_toy_end_to_end(capsys, tmp_path):
    t0 = time.perf_counter()
    cube, labels = separable_cube(seed=0)
    io.write_cube(tmp_path / "cube.hsic", cube)
    io.write_labels(tmp_path / "labels.hsil", labels)
    (tmp_path / "toy.cfg").write_text("m1=16\nm2=8\nmask_size=4\ndicf_k=3\n")
    common = ["--cube", str(tmp_path / "cube.hsic"), "--labels", str(tmp_path / "labels.hsil"),
              "--config", str(tmp_path / "toy.cfg"), "--threads", "1"]
    assert main(["train-toy", *common, "--steps", "200", "--out", str(tmp_path / "run")]) == 0
    trace = [float(line.split()[1])
             for line in (tmp_path / "run" / "trace.txt").read_text().splitlines()]
    assert main(["eval", *common, "--checkpoint", str(tmp_path / "run" / "checkpoint.hsck"),
                 "--out", str(tmp_path / "eval")]) == 0
    oa = float((tmp_path / "eval" / "metrics.txt").read_text().split()[0].split("=")[1])
    elapsed = time.perf_counter() - t0
    ok = trace[-1] < 0.5 * trace[0] and oa >= 0.95 and elapsed < 120
    _verdict(capsys, 5, ok, f"loss {trace[0]:.4f} -> {trace[-1]:.4f} "
             f"({trace[-1] / trace[0]:.2%}), eval OA {oa:.4f}, {elapsed:.1f}s")


def test_global_path_avoids_patch_truncation(capsys):
    cube, mask = straddling_region_cube()
    deriv = spectral_derivative(cube)
    feats = pca_feature_provider(cube, 3, 0)
    inside = mask.ravel()
    assoc, _ = patch_baseline_associate(cube, deriv, feats, 12, 4, 4)
    patch_tokens = len(np.unique(hard_assign(assoc).tokens[inside]))
    centers = make_centers(init_center_grid(24, 24, 9), cube, deriv, feats)
    glob = hard_assign(associate_masked(cube, deriv, feats, centers, 9)).tokens[inside]
    share = np.bincount(glob).max() / inside.sum()
    ok = patch_tokens >= 2 and share >= 0.95
    _verdict(capsys, 6, ok, f"uniform 7x7 region: {patch_tokens} tokens with 12x12 patches, "
             f"dominant global token covers {share:.1%}")


def test_global_association_beats_patch_baseline(capsys):
    rep = run_bench(PipelineConfig(), [(256, 256, 32)], repetitions=5, threads=1)
    row = rep["results"][0]
    g, p = row["global"]["median_s"], row["baseline"]["median_s"]
    _verdict(capsys, 7, g < p, f"256x256x32 M=256 k={row['mask_size']}: global median {g:.3f}s, "
             f"patch baseline median {p:.3f}s over 5 repetitions ({p / g:.2f}x)")


def test_metrics_match_second_implementation(capsys):
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(250):
        c = int(rng.integers(1, 9))
        cm = rng.integers(0, 30, size=(c, c)) * (rng.random((c, c)) < 0.7)
        cm[rng.integers(c), rng.integers(c)] += 1
        got, want = scores(cm), oracles.report(cm.tolist())
        worst = max(worst, max(abs(got[k] - want[k]) for k in REPORT_KEYS))
    kappas = []
    for _ in range(20):
        c = int(rng.integers(2, 9))
        kappas.append(abs(scores(np.outer(rng.integers(1, 6, c), rng.integers(1, 6, c)))["kappa"]))
    diagonal = all(scores(np.diag(rng.integers(1, 9, size=c)))[k] == 1.0
                   for c in range(1, 9) for k in REPORT_KEYS)
    ok = worst <= 1e-9 and max(kappas) <= 1e-12 and diagonal
    _verdict(capsys, 8, ok, f"250 matrices, worst abs diff {worst:.2e}; independence "
             f"max |kappa| {max(kappas):.1e}; diagonal all ones: {diagonal}")


def test_results_do_not_depend_on_thread_count(capsys, tmp_path):
    # 70 x 70 > one work chunk, so the threaded association path is exercised
    io.write_cube(tmp_path / "cube.hsic", random_cube(70, 70, 6, seed=9))
    (tmp_path / "c.cfg").write_text("m1=36\nm2=12\nmask_size=9\ndicf_k=4\nchannels=4\n")
    maps, toks, traces, ckpts = [], [], [], []
    for t in (1, 2, 8):
        out = tmp_path / f"t{t}"
        assert main(["cluster", "--cube", str(tmp_path / "cube.hsic"), "--config",
                     str(tmp_path / "c.cfg"), "--threads", str(t), "--out", str(out)]) == 0
        maps.append(io.read_labels(out / "token_map.hsil").labels)
        toks.append(io.read_matrix(out / "tokens.hsic"))
        cube, labels = separable_cube(seed=5)
        res = train_toy(TOY, cube, labels, steps=50, threads=t)
        traces.append(res.trace)
        ckpts.append(io.encode_checkpoint(res.params))
    cluster_ok = all(np.array_equal(maps[0], m) for m in maps) and \
        all(np.allclose(toks[0], x, rtol=1e-6, atol=0) for x in toks)
    train_ok = all(tr == traces[0] for tr in traces) and len(set(ckpts)) == 1
    _verdict(capsys, 9, cluster_ok and train_ok, f"threads 1/2/8: cluster identical to 1e-6: "
             f"{cluster_ok}; train_toy bit-exact: {train_ok}")


def test_default_configuration_runs(capsys):
    cfg = PipelineConfig()
    assert (cfg.m1, cfg.m2, cfg.mask_size, cfg.dicf_k, cfg.repeats_1, cfg.repeats_2) == \
        (256, 128, 9, 9, 3, 4)
    t0 = time.perf_counter()
    res = run_cluster(random_cube(256, 256, 32, seed=10), cfg)
    elapsed = time.perf_counter() - t0
    ok = res.tokens.count == 128 and len(np.unique(res.filtered.kept_indices)) == 128 \
        and elapsed < 60
    _verdict(capsys, 10, ok, f"256x256x32 with default config: {res.tokens.count} tokens "
             f"in {elapsed:.1f}s")
