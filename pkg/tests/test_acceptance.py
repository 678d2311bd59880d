"""Exit-criteria suite: one test and one printed verdict line per criterion.

Criteria 5, 6, 7 and 9 share one desk corpus and one training run, set up
from ``configs/desk.json``.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

import test_numerics_ops as oracles
from presstyle import numerics as nx
from presstyle.cli import main
from presstyle.data import GRAVITY, AttributeVector
from presstyle.har import HarConfig, adjusted_rand, mean_shift, har_protocol
from presstyle.metrics import binary_r2, evaluate, mean_frame_baseline, rmse
from presstyle.model import NetConfig, TransferNet, train, transfer
from presstyle.synth import ACTIVITIES, GenerationConfig, generate_corpus, generate_sequence, make_script

pytestmark = pytest.mark.acceptance

DESK = json.loads((Path(__file__).resolve().parents[1] / "configs" / "desk.json").read_text())
GRAD_TOL = 1e-4
TRIALS = 100


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    cfg = GenerationConfig.from_dict({**DESK["generation"], "seed": DESK["seed"]})
    return generate_corpus(cfg, tmp_path_factory.mktemp("desk"))


@pytest.fixture(scope="module")
def trained(desk):
    return train(desk, NetConfig.from_dict({**DESK["training"], "seed": DESK["seed"]}))


def seen_test(manifest):
    seen = set(manifest.scripts("train"))
    return [e.load() for e in manifest.split("test") if e.script in seen]


# ---------------------------------------------------------------- 1


def _probe_loss(fn, rng, *arrays):
    probe = rng.normal(size=fn(*arrays).shape)
    return lambda *t: (fn(*t) * probe).sum()


def _primitive_trial(kind, rng):
    """Max relative gradient error of one randomized primitive check."""
    if kind == "conv":
        c, k, s, p = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x, w, b = rng.normal(size=(2, c, 5, 6)), rng.normal(size=(2, c, k, k)), rng.normal(size=2)
        f = lambda x, w, b: nx.conv2d(x, w, b, s, p)  # noqa: E731
        return max(nx.check_gradients(_probe_loss(f, rng, x, w, b), [x, w, b]))
    if kind == "transpose-conv":
        k, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        x, w, b = rng.normal(size=(2, 2, 3, 4)), rng.normal(size=(2, 3, k, k)), rng.normal(size=3)
        f = lambda x, w, b: nx.conv2d_transpose(x, w, b, s)  # noqa: E731
        return max(nx.check_gradients(_probe_loss(f, rng, x, w, b), [x, w, b]))
    if kind == "pool path":
        x = rng.normal(size=(2, 2, int(rng.integers(2, 8)), int(rng.integers(2, 8))))

        def f(x):
            p, rec = nx.max_pool2d(x)
            return nx.max_unpool2d(p * 1.5, rec)

        return nx.check_gradients(_probe_loss(f, rng, x), [x])[0]
    if kind == "batch-norm":
        x, g, b = rng.normal(size=(3, 2, 3, 3)) * rng.uniform(0.5, 3), rng.normal(size=2), rng.normal(size=2)
        f = lambda x, g, b: nx.batch_norm(x, g, b, nx.BatchNormState.fresh(2), train=True)  # noqa: E731
        return max(nx.check_gradients(_probe_loss(f, rng, x, g, b), [x, g, b]))
    if kind == "dense":
        x, w, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
        return max(nx.check_gradients(_probe_loss(nx.dense, rng, x, w, b), [x, w, b]))
    if kind == "relu":
        x = rng.normal(size=(4, 6))
        x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
        return nx.check_gradients(_probe_loss(nx.relu, rng, x), [x])[0]
    if kind == "content loss":
        g, t = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 3, 4, 5))
        return max(nx.check_gradients(nx.content_loss, [g, t]))
    raise ValueError(kind)


def _network_trial(rng):
    """Spot-check the whole transfer network, reduced widths and geometry, float64."""
    cfg = NetConfig(widths=(3, 4, 4), latent=8, frames=3, rows=16, cols=16, dtype="float64",
                    seed=int(rng.integers(1 << 30)))
    net = TransferNet(cfg)
    x = rng.uniform(0, 20, size=(3, 3, 16, 16))
    y = rng.uniform(0, 20, size=(3, 3, 16, 16))
    a_src, a_tgt = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    params = net.trainable()
    nx.backward(net.loss(x, a_src, a_tgt, y), list(params.values()))
    gmax = max(float(np.abs(p.grad).max()) for p in params.values())
    worst = 0.0
    names = list(params)
    for name in rng.choice(names, size=8, replace=False):
        p = params[name]
        if "conv" in name and name.endswith(".b"):
            # batch norm follows every conv: the bias gradient is exactly zero
            worst = max(worst, float(np.abs(p.grad).max()) / gmax * 1e5)
            continue
        idx = np.unravel_index(int(rng.integers(p.data.size)), p.data.shape)
        worst = max(worst, nx.relative_error(p.grad[idx], _kink_safe_diff(net, p, idx, x, a_src, a_tgt, y),
                                             floor=1e-6 * gmax))
    return worst


def _kink_safe_diff(net, p, idx, *batch):
    """Central difference; when the two one-sided slopes disagree the step
    straddles a ReLU or pooling switch, so retry with a smaller step."""
    old = p.data[idx]
    f0 = float(net.loss(*batch).data)
    for h in (1e-6, 1e-7, 1e-8):
        f = []
        for v in (old + h, old - h):
            p.data[idx] = v
            f.append(float(net.loss(*batch).data))
        p.data[idx] = old
        fwd, bwd = (f[0] - f0) / h, (f0 - f[1]) / h
        if abs(fwd - bwd) <= 1e-3 * max(abs(fwd), abs(bwd), 1e-3):
            break
    return (f[0] - f[1]) / (2 * h)


def test_1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    kinds = ["conv", "transpose-conv", "pool path", "batch-norm", "dense", "relu", "content loss"]
    worst = {}
    for kind in kinds:
        worst[kind] = max(_primitive_trial(kind, np.random.default_rng([1, i, len(kind)])) for i in range(TRIALS))
    worst["network"] = max(_network_trial(np.random.default_rng([2, i])) for i in range(TRIALS))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) < GRAD_TOL and secs < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(1, ok, f"max rel error over {TRIALS} trials each: {detail}; {secs:.0f} s (limits {GRAD_TOL:g}, 120 s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_2_oracle_equivalence(verdict):
    rng = np.random.default_rng(2)
    conv_err = dense_err = adj_err = 0.0
    for _ in range(20):
        c, k, s, p = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x, w, b = rng.normal(size=(c, 7, 6)), rng.normal(size=(2, c, k, k)), rng.normal(size=2)
        conv_err = max(conv_err, np.abs(nx.conv2d(x, w, b, s, p).data - oracles.naive_conv2d(x, w, b, s, p)).max())
        xd, wd, bd = rng.normal(size=(4, 9)), rng.normal(size=(9, 5)), rng.normal(size=5)
        dense_err = max(dense_err, np.abs(nx.dense(xd, wd, bd).data - oracles.naive_dense(xd, wd, bd)).max())
        cx = nx.conv2d(x, w, stride=s, padding=p).data
        y = rng.normal(size=cx.shape)
        ty = nx.conv2d_transpose(y, w, stride=s, padding=p, output_size=x.shape[1:]).data
        lhs, rhs = np.vdot(cx, y), np.vdot(x, ty)
        adj_err = max(adj_err, abs(lhs - rhs) / max(1.0, abs(lhs)))
    ok = conv_err < 1e-6 and dense_err < 1e-6 and adj_err < 1e-9
    verdict(2, ok, f"conv2d {conv_err:.1e} (< 1e-6), dense {dense_err:.1e} (< 1e-6), "
                   f"transpose adjoint {adj_err:.1e} (< 1e-9)")
    assert ok


# ---------------------------------------------------------------- 3


def test_3_metric_correctness(verdict):
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 5, size=(20, 80, 28)) * (rng.random((20, 80, 28)) < 0.3)
    half = np.zeros((4, 80, 28))
    half[:, :40] = 1.0
    checks = {
        "rmse(x,x)=0": rmse(x, x) == 0.0,
        "rmse(x+c,x)=c": abs(rmse(x + 2.5, x) - 2.5) < 1e-12,
        "binary_r2(x,x)=1": binary_r2(x, x) == 1.0,
        "complement=-3": abs(binary_r2(1.0 - half, half) - (-3.0)) < 1e-12,
        "rescale invariance": binary_r2(7.0 * x[::-1], 0.3 * x) == binary_r2(x[::-1], x),
    }
    ok = all(checks.values())
    verdict(3, ok, ", ".join(f"{k} {'ok' if v else 'BROKEN'}" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------- 4


def test_4_conservation(verdict):
    worst_sum, worst_ratio, n_full = 0.0, 0.0, 0
    bodies = [AttributeVector(0, 52.0, 152.0), AttributeVector(1, 75.0, 175.0), AttributeVector(1, 104.0, 201.0)]
    for k, act in enumerate(ACTIVITIES):
        script = make_script(act, 10.0, seed=40 + k)
        full = script.full_support()
        seqs = [generate_sequence(script, b) for b in bodies]
        for s in seqs:
            w = s.attributes.weight * GRAVITY
            worst_sum = max(worst_sum, float(np.abs(s.total_force()[full] / w - 1.0).max()))
        n_full += int(full.sum()) * len(seqs)
        live = seqs[0].total_force() > 0
        ratio = seqs[1].total_force()[live] / seqs[0].total_force()[live]
        expect = bodies[1].weight / bodies[0].weight
        worst_ratio = max(worst_ratio, float(np.abs(ratio / expect - 1.0).max()))
    ok = worst_sum < 1e-3 and worst_ratio < 1e-9 and n_full > 0
    verdict(4, ok, f"{n_full} full-support frames: max |sum/(w*9.81) - 1| {worst_sum:.1e} (< 1e-3); "
                   f"weight ratio rel error {worst_ratio:.1e} (< 1e-9)")
    assert ok


# ---------------------------------------------------------------- 5


def test_5_training_smoke(desk, trained, verdict):
    h = trained.history
    first, final = h[0]["train_loss"], h[-1]["train_loss"]
    cfg = NetConfig.from_dict(DESK["training"])
    lengths = {len(e.load()) for e in desk.split("train")}
    setup = (len(desk.subjects("train")) == 16 and len(desk.scripts("train")) == 4 and min(lengths) >= 600
             and cfg.batch_size == 64)
    ended = trained.stopped_early or len(h) == cfg.max_epochs
    ok = setup and final <= 0.5 * first and ended and trained.seconds < 600
    how = "early stop" if trained.stopped_early else "max epochs reached"
    verdict(5, ok, f"train loss {first:.0f} -> {final:.0f} (ratio {final / first:.2f}, limit 0.50); "
                   f"{len(h)} epochs, {how}; {trained.seconds:.0f} s (limit 600 s)")
    assert ok


# ---------------------------------------------------------------- 6


def test_6_identity_transfer(desk, trained, verdict):
    seqs = seen_test(desk)
    outs = [transfer(s, s.attributes, trained.model) for s in seqs]
    r2 = float(np.mean([binary_r2(o, s) for o, s in zip(outs, seqs)]))
    model_rmse = float(np.mean([rmse(o, s) for o, s in zip(outs, seqs)]))
    base_rmse = float(np.mean([rmse(mean_frame_baseline(s), s) for s in seqs]))
    ok = r2 >= 0.7 and model_rmse < base_rmse
    verdict(6, ok, f"{len(seqs)} held-out seen-script sequences: binary R2 {r2:.3f} (need >= 0.7); "
                   f"RMSE {model_rmse:.3f} vs per-frame-mean baseline {base_rmse:.3f}")
    assert ok


# ---------------------------------------------------------------- 7


def _spearman(a, b):
    # rank-difference form in integers: exactly 1.0 when the orders agree
    ra, rb = np.argsort(np.argsort(a)), np.argsort(np.argsort(b))
    n = len(ra)
    return 1.0 - 6.0 * int(((ra - rb) ** 2).sum()) / (n * (n * n - 1))


def test_7_attribute_responsiveness(desk, trained, verdict):
    levels = (0.8, 0.9, 1.0, 1.1, 1.2)
    seqs = seen_test(desk)[::2]
    force = np.zeros(len(levels))
    for s in seqs:
        a = s.attributes
        for i, k in enumerate(levels):
            out = transfer(s, AttributeVector(a.sex, a.weight * k, a.height), trained.model)
            force[i] += out.total_force().mean() / len(seqs)
    rho = _spearman(force, levels)
    ok = rho == 1.0 and np.all(np.diff(force) > 0)
    verdict(7, ok, f"mean total force at weight x{levels}: {np.round(force, 1).tolist()} N; Spearman {rho:.2f}")
    assert ok


# ---------------------------------------------------------------- 8


def test_8_mean_shift(verdict):
    rng = np.random.default_rng(8)
    centers = rng.normal(size=(4, 12))
    centers *= 10.0 / np.sqrt(((centers[:, None] - centers[None]) ** 2).sum(-1)[~np.eye(4, dtype=bool)]).min()
    x = np.concatenate([c + rng.normal(size=(50, 12)) for c in centers])
    truth = np.repeat(np.arange(4), 50)
    model, labels = mean_shift(x)
    ari = adjusted_rand(labels, truth)
    perm = rng.permutation(len(x))
    m_perm, l_perm = mean_shift(x[perm], model.bandwidth)
    m_move, l_move = mean_shift(x + 123.0, model.bandwidth)
    d_order = float(np.abs(m_perm.modes - model.modes).max())
    d_move = float(np.abs(m_move.modes - 123.0 - model.modes).max())
    same = np.array_equal(l_perm, labels[perm]) and np.array_equal(l_move, labels)
    ok = model.n_clusters == 4 and ari >= 0.9 and d_order < 1e-6 and d_move < 1e-6 and same
    verdict(8, ok, f"{model.n_clusters} modes, ARI {ari:.3f} (>= 0.9); order drift {d_order:.1e}, "
                   f"translation drift {d_move:.1e} (< 1e-6)")
    assert ok


# ---------------------------------------------------------------- 9


def test_9_har_protocol_and_report(desk, trained, verdict):
    t0 = time.perf_counter()
    rep = har_protocol(desk, trained.model, HarConfig.from_dict({**DESK["har"], "seed": DESK["seed"]}))
    secs = time.perf_counter() - t0
    summary = rep.summary()
    text = rep.to_text()
    har_ok = (len(rep.scores["Real"]) == 10 and all(c in text for c in ("Real", "Synthetic", "Real+Synthetic"))
                 and text.count("±") == 3 and summary["Real"][0] >= 0.8)
    ev = evaluate(desk, trained.model, protocol="both")
    cats = {t: sorted(r.category for r in ev.rows if r.tag == t) for t in ("seen", "unseen")}
    avg_err = max(
        abs(ev.averages()[t][m] - np.mean([getattr(r, m) for r in ev.rows if r.tag == t]))
        for t in cats for m in ("rmse", "binary_r2")
    )
    report_ok = all(len(c) == 4 for c in cats.values()) and avg_err < 1e-9 and "average" in ev.to_text()
    ok = har_ok and report_ok
    f1 = ", ".join(f"{c} {m:.3f}±{s:.3f}" for c, (m, s) in summary.items())
    verdict(9, ok, f"macro F1 over {len(rep.scores['Real'])} iterations: {f1} (Real needs >= 0.8), "
                   f"{rep.n_clusters} pseudo-classes, {secs:.0f} s; report has 4+4 categories, "
                   f"average drift {avg_err:.1e} (< 1e-9)")
    assert ok


# ---------------------------------------------------------------- 10


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


def test_10_reproducibility(tmp_path, verdict):
    t = tmp_path
    runs = {
        "gen": ["gen", "--out", str(t / "gen"), "--subjects-per-sex", "1", "--test-subjects-per-sex", "2",
                "--unseen-scripts", "--duration", "3", "--seed", "10"],
    }
    man = str(t / "gen" / "manifest.json")
    runs["train"] = ["train", "--manifest", man, "--out", str(t / "train"), "--widths", "2,2,2",
                     "--max-epochs", "2", "--steps-per-epoch", "2", "--batch-size", "8"]
    weights = str(t / "train" / "weights.ptnw")
    runs["eval"] = ["eval", "--manifest", man, "--weights", weights, "--out", str(t / "eval")]
    runs["har-eval"] = ["har-eval", "--manifest", man, "--weights", weights, "--iterations", "1",
                        "--out", str(t / "har")]
    for name, argv in runs.items():
        assert main(argv) == 0, name
    src = next(Path(t / "gen").glob("walk1_TM01.pseq"))
    main(["transfer", "--in", str(src), "--weights", weights, "--target-sex", "female", "--target-weight", "58",
          "--target-height", "160", "--out", str(t / "x" / "out.pseq")])
    same = {}
    for name, sub in (("gen", "gen"), ("train", "train"), ("eval", "eval"), ("har-eval", "har")):
        replay = t / f"{sub}-replay"
        assert main([name, "--config", str(t / sub / "run.json"), "--threads", "1", "--out", str(replay)]) == 0
        same[name] = _files(replay) == _files(t / sub)
    replay = t / "x-replay" / "out.pseq"
    main(["transfer", "--config", str(t / "x" / "out.pseq.run.json"), "--threads", "1", "--out", str(replay)])
    same["transfer"] = replay.read_bytes() == (t / "x" / "out.pseq").read_bytes()
    ok = all(same.values())
    verdict(10, ok, "byte-identical replay: " + ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok
