"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; every criterion asserts both its claim and its runtime budget.
"""

import itertools
import math
import time

import numpy as np
import pytest

from drbn import dataio
from drbn.cli import main as cli_main
from drbn.dataio import (
    PatchSpec,
    binarize,
    make_text_mask,
    sample_patches,
    synthetic_digits,
    synthetic_textures,
    write_idx,
    write_pgm,
)
from drbn.inference import (
    CaConfig,
    FlipCache,
    InferenceNet,
    aug_ca_map,
    ca_flip_ratio,
    exact_map,
    inference_net_bound,
    train_inference_net,
)
from drbn.learning import (
    CLOSED_FORM_GAUSSIAN,
    TrainConfig,
    benchmark_learning,
    flatten_grad,
    flatten_params,
    joint_grad,
    joint_table,
    learning_objective,
    pretrain_layerwise,
    unflatten_params,
    variational_bound_exact,
    variational_bound_grad,
    exact_loglik_grad,
)
from drbn.model import (
    BINARY,
    GAUSSIAN,
    DataBatch,
    LabelHead,
    LatentState,
    LayerParams,
    ModelParams,
    ancestral_sample,
    joint_log_prob,
    joint_log_prob_batch,
    logsumexp,
    sigmoid,
)
from drbn.restoration import (
    ImageGray,
    RestorationProblem,
    corrupt,
    default_beta_schedule,
    gaussian_noise,
    psnr,
    restore_hqs,
    text_overlay,
)


def report(name: str, ok: bool, detail: str, elapsed: float, budget: float):
    line = (f"ACCEPTANCE {name}: {'PASS' if ok and elapsed < budget else 'FAIL'} "
            f"[{detail}; {elapsed:.1f}s of {budget:.0f}s budget]")
    print(line)
    assert ok, line
    assert elapsed < budget, line


@pytest.fixture(scope="module")
def digit_corpus():
    tensor, _ = synthetic_digits(1000, side=14, seed=2024)
    return binarize(tensor, mode="bernoulli", seed=99)


def random_binary(n_d, n_h, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return ModelParams(BINARY, [n_d, n_h],
                       [LayerParams(rng.normal(0, scale, (n_d, n_h)), rng.normal(0, scale, n_d))],
                       rng.normal(0, scale, n_h))


def random_gaussian(n_d, n_h, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return ModelParams(GAUSSIAN, [n_d, n_h],
                       [LayerParams(rng.normal(0, scale, (n_d, n_h)), rng.normal(0, scale, n_d),
                                    rng.uniform(0.3, 2.0, n_d))],
                       rng.normal(0, scale, n_h))


def test_c1_small_network_likelihood_ordering(digit_corpus):
    t0 = time.perf_counter()
    cfg = TrainConfig(epochs=150, lr=0.2, batch_size=100, e_step="aug_ca",
                      ca_cfg=CaConfig(restarts=2))
    rows = benchmark_learning(digit_corpus, [5], ["exact", "maxmax", "variational"],
                              cfg, seeds=[0, 1, 2])
    med = {r["method"]: r["mean_log_likelihood"] for r in rows}
    ordered = med["exact"] >= med["maxmax"] >= med["variational"]
    tight = (med["exact"] - med["maxmax"]) < 2.0
    separated = (med["maxmax"] - med["variational"]) > 2.0
    report("C1 small-network likelihood ordering",
           ordered and tight and separated,
           f"exact={med['exact']:.2f} maxmax={med['maxmax']:.2f} "
           f"variational={med['variational']:.2f}",
           time.perf_counter() - t0, 600)


def test_c2_hidden_size_sweep(digit_corpus):
    t0 = time.perf_counter()
    cfg = TrainConfig(epochs=40, lr=0.2, batch_size=100, e_step="aug_ca",
                      ca_cfg=CaConfig(restarts=2))
    rows = benchmark_learning(digit_corpus, [5, 10, 15, 20], ["maxmax", "variational"],
                              cfg, seeds=[0, 1, 2])
    curve = {(r["n_h"], r["method"]): r["mean_log_likelihood"] for r in rows}
    gaps = {n: curve[(n, "maxmax")] - curve[(n, "variational")] for n in (5, 10, 15, 20)}
    report("C2 hidden-size sweep dominance",
           all(g >= 0 for g in gaps.values()),
           "gaps " + " ".join(f"n{n}:{g:+.2f}" for n, g in gaps.items()),
           time.perf_counter() - t0, 1800)


def test_c3_map_oracle_agreement():
    t0 = time.perf_counter()
    match = close = total = 0
    for t in range(100):
        params = random_binary(6, 10, seed=t)
        data, _ = ancestral_sample(params, rng_seed=t, count=10)
        net = train_inference_net(params, data, epochs=30, lr=0.1, rng_seed=t, batch_size=10)
        cfg = CaConfig(restarts=5, seed=t)
        for x in data.vectors:
            rep = aug_ca_map(x, params, net, cfg)
            best = exact_map(x, params)
            total += 1
            match += int(np.array_equal(rep.map_state.layers[0], best.map_state.layers[0]))
            close += int(rep.joint_log_prob >= best.joint_log_prob - 0.1)
    report("C3 MAP oracle agreement",
           match >= 0.90 * total and close >= 0.99 * total,
           f"exact-match {match}/{total}, within 0.1 nat {close}/{total}",
           time.perf_counter() - t0, 120)


def test_c4_ratio_update_equivalence():
    from drbn.inference import ca_flip_logit
    t0 = time.perf_counter()
    worst = 0.0
    for kind in (BINARY, GAUSSIAN):
        rng = np.random.default_rng(0 if kind == BINARY else 1)
        for trial in range(1000):
            n_d, n_h = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            params = (random_binary if kind == BINARY else random_gaussian)(
                n_d, n_h, seed=10_000 + trial)
            x = (rng.random(n_d) < 0.5).astype(float) if kind == BINARY \
                else rng.normal(0, 1, n_d)
            h = (rng.random(n_h) < 0.5).astype(np.uint8)
            j = int(rng.integers(0, n_h))
            cache = FlipCache(x, params, h)
            # from-scratch path: two full joints, then the same conditional
            h1 = h.copy(); h1[j] = 1
            h0 = h.copy(); h0[j] = 0
            l1 = joint_log_prob(x, LatentState([h1]), params)
            l0 = joint_log_prob(x, LatentState([h0]), params)
            logit_got = ca_flip_logit(j, x, h, cache)
            worst = max(worst, abs(logit_got - (l1 - l0)) / max(abs(l1 - l0), 1e-12))
            got = ca_flip_ratio(j, x, h, cache)
            want = float(sigmoid(l1 - l0))
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
    # operation-count probe: per-update work independent of latent width,
    # linear in the child width
    ops = {}
    for n_h in (6, 600):
        params = random_binary(10, n_h, seed=5)
        x = np.zeros(10)
        h = np.zeros(n_h, dtype=np.uint8)
        cache = FlipCache(x, params, h)
        ca_flip_ratio(0, x, h, cache)
        cache.flip(0, 1, 0)
        ops[n_h] = cache.ops
    ops_nd = {}
    for n_d in (10, 20):
        params = random_binary(n_d, 6, seed=5)
        cache = FlipCache(np.zeros(n_d), params, np.zeros(6, dtype=np.uint8))
        ca_flip_ratio(0, np.zeros(n_d), np.zeros(6, dtype=np.uint8), cache)
        cache.flip(0, 1, 0)
        ops_nd[n_d] = cache.ops
    probe_ok = ops[6] == ops[600] and ops_nd[20] == 2 * ops_nd[10]
    report("C4 ratio-update equivalence",
           worst < 1e-9 and probe_ok,
           f"worst relative gap {worst:.2e}; ops n_h-invariant {ops[6]}=={ops[600]}, "
           f"linear in n_d {ops_nd[10]}->{ops_nd[20]}",
           time.perf_counter() - t0, 60)


def central_fd(f, vec, eps=1e-5):
    g = np.zeros_like(vec)
    for i in range(vec.size):
        up, dn = vec.copy(), vec.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (f(up) - f(dn)) / (2 * eps)
    return g


def test_c5_gradient_validation():
    t0 = time.perf_counter()
    gaps = {}
    rng = np.random.default_rng(7)

    # binary update-step gradient (single layer)
    m = random_binary(4, 3, seed=70, scale=0.8)
    X = (rng.random((6, 4)) < 0.5).astype(float)
    H = [(rng.random((6, 3)) < 0.5).astype(float)]
    g = flatten_grad(joint_grad(m, X, H), m)
    fd = central_fd(lambda v: learning_objective(unflatten_params(v, m), X, H),
                    flatten_params(m))
    gaps["binary-m-step"] = float(np.abs(g - fd).max())

    # global fine-tune gradient (deep stack, both kinds)
    for kind, seed in ((BINARY, 71), (GAUSSIAN, 72)):
        r2 = np.random.default_rng(seed)
        var = r2.uniform(0.3, 2, 4) if kind == GAUSSIAN else None
        deep = ModelParams(kind, [4, 3, 2],
                           [LayerParams(r2.normal(0, 0.8, (4, 3)), r2.normal(0, 0.5, 4), var),
                            LayerParams(r2.normal(0, 0.8, (3, 2)), r2.normal(0, 0.5, 3))],
                           r2.normal(0, 0.5, 2))
        Xd = r2.normal(0, 1, (5, 4)) if kind == GAUSSIAN else (r2.random((5, 4)) < 0.5).astype(float)
        Hd = [(r2.random((5, 3)) < 0.5).astype(float), (r2.random((5, 2)) < 0.5).astype(float)]
        g = flatten_grad(joint_grad(deep, Xd, Hd), deep)
        fd = central_fd(lambda v: learning_objective(unflatten_params(v, deep), Xd, Hd),
                        flatten_params(deep))
        gaps[f"global-finetune-{kind}"] = float(np.abs(g - fd).max())

    # supervised gradient including the label head
    r3 = np.random.default_rng(73)
    sup = ModelParams(BINARY, [4, 3],
                      [LayerParams(r3.normal(0, 0.8, (4, 3)), r3.normal(0, 0.5, 4))],
                      r3.normal(0, 0.5, 3),
                      label_head=LabelHead(r3.normal(0, 0.8, (3, 3)), r3.normal(0, 0.5, 3)))
    Xs = (r3.random((6, 4)) < 0.5).astype(float)
    Hs = [(r3.random((6, 3)) < 0.5).astype(float)]
    ys = r3.integers(0, 3, 6)
    g = flatten_grad(joint_grad(sup, Xs, Hs, labels=ys), sup)
    fd = central_fd(lambda v: learning_objective(unflatten_params(v, sup), Xs, Hs, labels=ys),
                    flatten_params(sup))
    gaps["supervised"] = float(np.abs(g - fd).max())

    # variational baseline bound gradient (model and net blocks)
    m4 = random_binary(4, 3, seed=74, scale=0.8)
    r4 = np.random.default_rng(74)
    net = InferenceNet([r4.normal(0, 0.5, (3, 4))], [r4.normal(0, 0.5, 3)])
    X4 = (r4.random((5, 4)) < 0.5).astype(float)
    pg, dV, ds = variational_bound_grad(m4, net, X4)
    g = np.concatenate([flatten_grad(pg, m4), dV.ravel(), ds])
    t_size = flatten_params(m4).size

    def f_bound(vec):
        p = unflatten_params(vec[:t_size], m4)
        V = vec[t_size:t_size + 12].reshape(3, 4)
        s = vec[t_size + 12:]
        return variational_bound_exact(p, InferenceNet([V], [s]), X4)

    fd = central_fd(f_bound, np.concatenate([flatten_params(m4),
                                             net.weights[0].ravel(), net.biases[0]]))
    gaps["variational"] = float(np.abs(g - fd).max())

    # exact enumerated-likelihood gradient
    m5 = random_binary(4, 4, seed=75, scale=0.8)
    X5 = (np.random.default_rng(75).random((6, 4)) < 0.5).astype(float)
    g = flatten_grad(exact_loglik_grad(m5, X5), m5)
    fd = central_fd(lambda v: float(logsumexp(joint_table(unflatten_params(v, m5), X5),
                                              axis=1).sum()),
                    flatten_params(m5))
    gaps["exact-tiny"] = float(np.abs(g - fd).max())

    worst = max(gaps.values())
    report("C5 gradient validation",
           worst < 1e-5,
           "max-abs gaps " + " ".join(f"{k}:{v:.1e}" for k, v in gaps.items()),
           time.perf_counter() - t0, 60)


def test_c6_normalization_and_bound_ordering():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_norm = 0.0
    bounds_ok = True
    for trial in range(50):
        n_d = int(rng.integers(2, 6))
        n_h = int(rng.integers(2, min(14 - n_d, 8) + 1))
        params = random_binary(n_d, n_h, seed=600 + trial)
        # full normalization over visibles and latents
        table = joint_table(params, np.array(list(itertools.product((0.0, 1.0), repeat=n_d))))
        total = float(np.exp(table).sum())
        worst_norm = max(worst_norm, abs(total - 1.0))
        # bound ordering on a few inputs
        data, _ = ancestral_sample(params, rng_seed=trial, count=5)
        net = train_inference_net(params, data, epochs=3, lr=0.1, rng_seed=trial, batch_size=5)
        cfg = CaConfig(restarts=2, seed=trial)
        for x in data.vectors:
            exact = float(logsumexp(joint_table(params, x[None, :])[0]))
            from drbn.inference import marginal_log_likelihood_max
            max_form = marginal_log_likelihood_max(x, params, map_source="ca", cfg=cfg)
            net_bound = inference_net_bound(x, params, net)
            if max_form > exact + 1e-9 or net_bound > exact + 1e-9:
                bounds_ok = False
    report("C6 normalization and bound ordering",
           worst_norm < 1e-8 and bounds_ok,
           f"worst |sum-1| {worst_norm:.2e}; max-form and net bounds below exact everywhere",
           time.perf_counter() - t0, 120)


def test_c7_restoration_direction():
    t0 = time.perf_counter()
    train_imgs = synthetic_textures(8, size=32, seed=100)
    test_imgs = synthetic_textures(12, size=32, seed=200)[8:]
    patches = sample_patches(train_imgs, PatchSpec(8, 10000, seed=0))
    cfg = TrainConfig(epochs=6, m_step=CLOSED_FORM_GAUSSIAN, e_step="ca",
                      ca_cfg=CaConfig(restarts=1), seed=0, lr=0.1)
    prior = pretrain_layerwise(patches, [64, 50, 50], cfg)
    net = train_inference_net(prior, patches, epochs=5, lr=0.1, rng_seed=1)
    mean_psnr = {}
    min_gain = np.inf
    for noise_name in ("text", "gaussian"):
        for method in ("ca", "aug_ca"):
            finals = []
            for i, clean in enumerate(test_imgs):
                if noise_name == "text":
                    noise = text_overlay(make_text_mask((32, 32), seed=300 + i, coverage=0.12))
                    lam, schedule = 1e6, default_beta_schedule(0.25)
                else:
                    noise = gaussian_noise(0.4, 0.4)
                    lam = 1.0 / (0.4 * 0.4 ** 2)
                    schedule = default_beta_schedule(float(np.sqrt(0.4)) * 0.4)
                corrupted, _ = corrupt(clean, noise, seed=50 + i)
                problem = RestorationProblem(corrupted, noise, lam=lam, patch_size=8,
                                             beta_schedule=schedule)
                restored, _ = restore_hqs(problem, prior, net=net,
                                          cfg=CaConfig(restarts=1, seed=0), map_method=method)
                before = psnr(ImageGray(np.clip(corrupted.pixels, 0, 1)), clean)
                after = psnr(restored, clean)
                min_gain = min(min_gain, after - before)
                finals.append(after)
            mean_psnr[(noise_name, method)] = float(np.mean(finals))
    aug_dominates = all(mean_psnr[(n, "aug_ca")] >= mean_psnr[(n, "ca")]
                        for n in ("text", "gaussian"))
    report("C7 restoration direction",
           min_gain >= 3.0 and aug_dominates,
           f"min gain {min_gain:+.2f} dB; mean PSNR aug/ca "
           + " ".join(f"{n}:{mean_psnr[(n, 'aug_ca')]:.1f}/{mean_psnr[(n, 'ca')]:.1f}"
                      for n in ("text", "gaussian")),
           time.perf_counter() - t0, 900)


def test_c8_sampling_correctness():
    t0 = time.perf_counter()
    params = random_binary(3, 3, seed=2, scale=0.7)
    n = 100_000
    batch, states = ancestral_sample(params, rng_seed=7, count=n)
    H = np.stack([s.layers[0] for s in states])
    codes = (batch.vectors @ (2 ** np.arange(3)) + (H @ (2 ** np.arange(3))) * 8).astype(int)
    counts = np.bincount(codes, minlength=64)
    worst_sigma = 0.0
    for code in range(64):
        x = np.array([(code >> i) & 1 for i in range(3)], dtype=float)
        h = np.array([(code >> (i + 3)) & 1 for i in range(3)])
        p = math.exp(joint_log_prob(x, LatentState([h]), params))
        se = math.sqrt(p * (1 - p) / n)
        worst_sigma = max(worst_sigma, abs(counts[code] / n - p) / max(se, 1e-12))
    report("C8 sampling correctness",
           worst_sigma <= 3.0,
           f"worst per-configuration deviation {worst_sigma:.2f} standard errors",
           time.perf_counter() - t0, 60)


def test_c9_command_determinism(tmp_path):
    t0 = time.perf_counter()
    work = tmp_path

    tensor, labels = synthetic_digits(60, side=8, seed=5)
    digits = str(work / "digits.idx")
    write_idx(digits, tensor)
    labels_p = str(work / "labels.idx")
    write_idx(labels_p, dataio.IdxTensor((60,), (labels % 2).astype(np.uint8)))
    cfg_p = str(work / "cfg.json")
    with open(cfg_p, "w") as f:
        import json
        json.dump({"hidden_sizes": [4], "epochs": 3, "lr": 0.2, "batch_size": 30,
                   "m_step": "sgd_binary", "e_step": "ca", "ca": {"restarts": 2},
                   "binarize": {"mode": "bernoulli", "seed": 3}}, f)
    clean = synthetic_textures(1, size=20, seed=9)[0]
    clean_p = str(work / "clean.pgm")
    write_pgm(clean_p, clean)
    mask_p = str(work / "mask.pgm")
    write_pgm(mask_p, ImageGray(make_text_mask((20, 20), seed=4).astype(float)))

    # a small gaussian patch prior for the imaging commands
    prior_imgs = synthetic_textures(4, size=20, seed=11)
    batch = sample_patches(prior_imgs, PatchSpec(5, 2000, seed=0))
    pcfg = TrainConfig(epochs=4, m_step=CLOSED_FORM_GAUSSIAN, e_step="ca",
                       ca_cfg=CaConfig(restarts=1), seed=0, lr=0.1)
    prior = pretrain_layerwise(batch, [25, 8], pcfg)
    prior_p = str(work / "prior.json")
    dataio.save_model(prior_p, prior)

    model_p = str(work / "model_0.json")
    assert cli_main(["train", "--config", cfg_p, "--data", digits,
                     "--out", model_p, "--seed", "7"]) == 0
    tuned_p = str(work / "tuned_0.json")
    assert cli_main(["finetune", "--config", cfg_p, "--model", model_p, "--data", digits,
                     "--labels", labels_p, "--out", tuned_p, "--seed", "7"]) == 0

    def run_twice(argv_fn, outs):
        blobs = []
        for tag in ("x", "y"):
            paths = [str(work / f"{tag}_{o}") for o in outs]
            assert cli_main(argv_fn(paths)) == 0, argv_fn(paths)
            blobs.append(tuple(open(p, "rb").read() for p in paths))
        return blobs[0] == blobs[1]

    checks = {
        "train": run_twice(lambda o: ["train", "--config", cfg_p, "--data", digits,
                                      "--out", o[0], "--seed", "9"], ["m.json"]),
        "finetune": run_twice(lambda o: ["finetune", "--config", cfg_p, "--model", model_p,
                                         "--data", digits, "--labels", labels_p,
                                         "--out", o[0], "--seed", "9"], ["t.json"]),
        "classify": run_twice(lambda o: ["classify", "--model", tuned_p, "--data", digits,
                                         "--out", o[0], "--seed", "9",
                                         "--restarts", "2"], ["c.csv"]),
        "infer": run_twice(lambda o: ["infer", "--model", model_p, "--data", digits,
                                      "--map-method", "augca", "--restarts", "2",
                                      "--out", o[0], "--seed", "9"], ["i.csv"]),
        "loglik": run_twice(lambda o: ["loglik", "--model", model_p, "--data", digits,
                                       "--map-method", "ca", "--restarts", "2",
                                       "--out", o[0], "--seed", "9"], ["l.csv"]),
        "benchmark": run_twice(lambda o: ["benchmark", "--data", digits,
                                          "--hidden-sizes", "3", "--methods", "maxmax",
                                          "--seeds", "0", "--epochs", "2",
                                          "--out", o[0], "--seed", "9"], ["b.csv"]),
        "corrupt": run_twice(lambda o: ["corrupt", "--data", clean_p,
                                        "--noise", "gaussian:0.3:0.4", "--seed", "9",
                                        "--out", o[0], "--mask-out", o[1]],
                             ["co.pgm", "cm.pgm"]),
        "restore": run_twice(lambda o: ["restore", "--model", prior_p, "--data", clean_p,
                                        "--noise", f"text:{mask_p}", "--patch-size", "5",
                                        "--map-method", "augca", "--restarts", "1",
                                        "--log", o[1], "--out", o[0], "--seed", "9"],
                             ["r.pgm", "r.csv"]),
        "reconstruct": run_twice(lambda o: ["reconstruct", "--model", str(work / "small.json"),
                                            "--data", str(work / "small.pgm"),
                                            "--map-method", "ca",
                                            "--out", o[0], "--seed", "9"], ["rc.pgm"])
        if _write_small(work, prior_imgs) else False,
        "generate": run_twice(lambda o: ["generate", "--model", prior_p, "--count", "2",
                                         "--shape", "5x5", "--seed", "9",
                                         "--out", o[0][:-len("_000.pgm")]],
                              ["g_000.pgm", "g_001.pgm"]),
    }
    bad = [k for k, ok in checks.items() if not ok]
    report("C9 seeded-command determinism",
           not bad,
           f"checked {len(checks)} commands" + (f"; unstable: {bad}" if bad else ""),
           time.perf_counter() - t0, 300)


def _write_small(work, prior_imgs):
    # 5x5 image + matched 25-wide model for the reconstruct determinism check
    batch = sample_patches(prior_imgs, PatchSpec(5, 1500, seed=1))
    cfg = TrainConfig(epochs=3, m_step=CLOSED_FORM_GAUSSIAN, e_step="ca",
                      ca_cfg=CaConfig(restarts=1), seed=0, lr=0.1)
    small = pretrain_layerwise(batch, [25, 6], cfg)
    dataio.save_model(str(work / "small.json"), small)
    write_pgm(str(work / "small.pgm"), ImageGray(prior_imgs[0].pixels[:5, :5]))
    return True
