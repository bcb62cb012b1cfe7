"""End-to-end acceptance suite. Each test records one PASS/FAIL line.

The ablation experiment (criterion 3) trains 15 models and takes about ten
minutes on one CPU core.
"""

import contextlib
import io
import itertools
import time
from fractions import Fraction

import numpy as np
import pytest

from clamdet import cli, datakit, encoders, evalstat, model, objectives, trainer
from clamdet import tensor as tn
from clamdet.datakit import SynthSpec
from clamdet.encoders import LayerStack, Waveform
from clamdet.evalstat import MatchRecord, Prediction
from clamdet.model import ModelConfig
from clamdet.objectives import LossConfig
from clamdet.tensor import Tensor
from clamdet.trainer import TrainConfig

SEEDS = (1, 2, 3, 4, 5)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def brute_triplet(a, p, alpha):
    """Triple loop over ordered (anchor, negative) pairs, no vectorization."""
    n = len(a)
    if n <= 1:
        return 0.0
    total = 0.0
    for i in range(n):
        pos = sum((a[i][k] - p[i][k]) ** 2 for k in range(len(a[i])))
        for j in range(n):
            if j != i:
                neg = sum((a[i][k] - p[j][k]) ** 2 for k in range(len(a[i])))
                total += max(0.0, pos - neg + alpha)
    return total / (n * (n - 1))


def enumerated_pvalue(c, d):
    n = c + d
    if n == 0:
        return 1.0
    hits = sum(1 for flips in itertools.product((0, 1), repeat=n) if sum(flips) <= min(c, d))
    return float(min(Fraction(1), Fraction(2 * hits, 2 ** n)))


def paired_preds(c, d):
    cells = [(1, 1)] * 3 + [(0, 0)] * 2 + [(1, 0)] * c + [(0, 1)] * d
    pa, pb = [], []
    for i, (ok_a, ok_b) in enumerate(cells):
        t = i % 2
        pa.append(Prediction(f"x{i}", t, t if ok_a else 1 - t, 0.5))
        pb.append(Prediction(f"x{i}", t, t if ok_b else 1 - t, 0.5))
    return pa, pb


def test_c1_gradient_correctness(report):
    t0 = time.process_time()
    reps = cli.run_gradcheck(100, seed=0, h=1e-6, tol=1e-5)
    cpu = time.process_time() - t0
    passed = sum(r.passed for r in reps)
    worst_rel = max(r.max_rel_error for r in reps)
    worst_abs = max(r.max_abs_error for r in reps)
    ok = passed == 100 and cpu < 120
    report(1, ok, f"gradcheck {passed}/100 configs at h=1e-6 rel<1e-5 (max rel {worst_rel:.2e}, "
                  f"max abs {worst_abs:.2e}), {cpu:.0f}s CPU (< 120s)")
    assert ok


def test_c2_triplet_oracle(report):
    rng = np.random.default_rng(0)
    worst = 0.0
    sizes = set()
    for _ in range(200):
        n, e = int(rng.integers(0, 9)), int(rng.integers(1, 6))
        sizes.add(n)
        a, p = rng.standard_normal((n, e)), rng.standard_normal((n, e))
        alpha = float(rng.uniform(0.1, 3.0))
        got = objectives.triplet_inbatch(Tensor(a), Tensor(p), alpha).item()
        worst = max(worst, abs(got - brute_triplet(a.tolist(), p.tolist(), alpha)))
    guard = all(objectives.triplet_inbatch(Tensor(np.ones((n, 3))), Tensor(np.zeros((n, 3))), 1.0).item() == 0.0
                for n in (0, 1))
    ok = worst <= 1e-9 and guard and {0, 1} <= sizes
    report(2, ok, f"triplet vs brute force over 200 batches N<=8, max |diff| {worst:.1e} (<= 1e-9), "
                  f"N<=1 guard {'ok' if guard else 'broken'}")
    assert ok


@pytest.mark.slow
def test_c3_ablation_trend(report):
    t0 = time.process_time()
    spec = SynthSpec()
    ds = datakit.synth_feature_dataset(spec)
    splits = np.array(datakit.assign_synth_splits(len(ds), 250, 500, spec.seed))
    tr, va, te = (ds.subset(np.flatnonzero(splits == s)) for s in ("train", "val", "test"))
    variants = {
        "triplet": TrainConfig(),
        "none": TrainConfig(loss=LossConfig(alignment="none")),
        "music": TrainConfig(loss=LossConfig(alignment="none"), model=ModelConfig(streams="music")),
    }
    f1 = {}
    for name, cfg in variants.items():
        assert cfg.epochs <= 30
        f1[name] = [trainer.score(trainer.train(cfg, tr, va, seed).params, te)["f1"] for seed in SEEDS]
    cpu = time.process_time() - t0
    mean = {k: float(np.mean(v)) for k, v in f1.items()}
    ok = (mean["triplet"] >= 0.95 and mean["triplet"] - mean["none"] >= 0.01
          and mean["music"] < mean["none"] and cpu < 1800)
    report(3, ok, f"train/test {len(tr)}/{len(te)}, mean test F1 over 5 seeds: triplet {mean['triplet']:.4f} "
                  f"(>= 0.95), none {mean['none']:.4f} (gap {mean['triplet'] - mean['none']:.4f} >= 0.01), "
                  f"music-only {mean['music']:.4f} (< none), {cpu / 60:.1f} min CPU (< 30)")
    assert len(tr) == 2000 and len(te) == 500
    assert ok


def test_c4_lambda_zero_is_none(report):
    spec = SynthSpec(n_real=40, n_fake=40, T=8, d=8, L=2, latent_dim=2, seed=5)
    ds = datakit.synth_feature_dataset(spec)
    idx = np.arange(len(ds))
    tr, va = ds.subset(idx[::2]), ds.subset(idx[1::2])
    mcfg = ModelConfig(n_layers=2, dim=8, embed_dim=4, heads=2, head_hidden=4)
    same = True
    for seed in SEEDS:
        runs = [trainer.train(TrainConfig(epochs=3, batch_size=8, loss=loss, model=mcfg), tr, va, seed)
                for loss in (LossConfig(weight=0.0), LossConfig(alignment="none"))]
        a, b = runs
        same &= [trainer.format_history_line(r) for r in a.history] == \
                [trainer.format_history_line(r) for r in b.history]
        same &= all(a.params[n].data.tobytes() == b.params[n].data.tobytes() for n in a.params.names())
    report(4, same, "lambda=0 vs alignment none: history and parameters bit-identical for 5 seeds")
    assert same


def test_c5_mcnemar_exact(report):
    exact = symmetric = True
    for c in range(21):
        for d in range(21 - c):
            pa, pb = paired_preds(c, d)
            p_ab = evalstat.mcnemar_exact(pa, pb)["p_value"]
            exact &= p_ab == enumerated_pvalue(c, d)
            symmetric &= p_ab == evalstat.mcnemar_exact(pb, pa)["p_value"]
    p10 = evalstat.binomial_two_sided(10, 0)
    ok = exact and symmetric and abs(p10 - 0.001953125) <= 1e-9
    report(5, ok, f"enumeration match for all c+d<=20: {exact}, swap-symmetric: {symmetric}, "
                  f"c=10,d=0 p={p10!r} (0.001953125 +- 1e-9)")
    assert ok


def test_c6_elo_invariants(report):
    rng = np.random.default_rng(7)
    names = [f"m{i}" for i in range(12)]
    drift = 0.0
    for _ in range(5):
        log = []
        for _ in range(10_000):
            a, b = rng.choice(len(names), 2, replace=False)
            log.append(MatchRecord(names[a], names[b], bool(rng.integers(0, 2))))
        r = evalstat.elo_rank(log)
        drift = max(drift, abs(sum(r.values()) - 1000.0 * len(r)))
    others = ["p", "q", "r"]
    log = [MatchRecord("x", o, True) for o in others] + [MatchRecord(o, "x", False) for o in others]
    log += [MatchRecord(a, b, bool(i % 2)) for i, (a, b) in enumerate(itertools.permutations(others, 2))]
    top = evalstat.leaderboard(evalstat.elo_rank(log))[0][0]
    single = evalstat.elo_rank([MatchRecord("a", "b", True)], 32, 1000)
    ok = drift <= 1e-9 and top == "x" and single == {"a": 1016.0, "b": 984.0}
    report(6, ok, f"rating sum drift {drift:.1e} over 10,000-match logs (<= 1e-9), all-wins model ranks "
                  f"{'first' if top == 'x' else 'not first'}, single win -> {single['a']}/{single['b']}")
    assert ok


def test_c7_kl_diagnostic(report):
    rng = np.random.default_rng(3)
    gibbs = True
    for _ in range(1000):
        k = int(rng.integers(2, 12))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        gibbs &= datakit.kl_discrete(p, q) > 0 and datakit.kl_discrete(p, p) == 0.0
    couplings = (0.0, 0.25, 0.5, 0.75, 1.0)
    # 200 tracks per class keeps this under half a minute; see the ledger
    kl = [float(np.mean([datakit.coupling_gap(SynthSpec(n_real=200, n_fake=200, coupling=c, seed=s))
                         for s in SEEDS])) for c in couplings]
    monotone = all(b <= a for a, b in zip(kl, kl[1:]))
    ok = gibbs and monotone
    report(7, ok, f"Gibbs over 1000 pairs: {gibbs}; mean KL by coupling {couplings}: "
                  f"{[round(x, 4) for x in kl]} nonincreasing: {monotone}")
    assert ok


def run_cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli.dispatch([str(a) for a in argv])
    return code, buf.getvalue()


def test_c8_cli_determinism(report, tmp_path):
    rng = np.random.default_rng(0)
    wav = tmp_path / "wav"
    wav.mkdir()
    rows = ["id\tpath\tlabel\ttier\tgenerator\tsplit"]
    for i in range(4):
        encoders.write_wav(Waveform(0.3 * rng.uniform(-1, 1, 8000), 16_000), wav / f"w{i}.wav")
        rows.append(f"w{i}\tw{i}.wav\t{i % 2}\t{'Real' if i % 2 == 0 else 'FullyFake'}\tx\ttrain")
    (wav / "m.tsv").write_text("\n".join(rows) + "\n")
    preds = [Prediction(f"t{i}", i % 2, (i // 3) % 2, 0.5) for i in range(12)]
    evalstat.write_predictions(preds, tmp_path / "pa.tsv")
    evalstat.write_predictions([Prediction(p.id, p.true, p.true, 0.9) for p in preds], tmp_path / "pb.tsv")
    (tmp_path / "matches.tsv").write_text("model_a\tmodel_b\toutcome\nx\ty\ta_wins\ny\tz\ta_wins\nz\tx\tb_wins\n")

    synth = ["--n-real", 16, "--n-fake", 16, "--frames", 8, "--dim", 8, "--layers", 2, "--latent-dim", 2,
             "--n-val", 6, "--n-test", 8, "--seed", 3]
    small = ["--dim", 8, "--layers", 2, "--heads", 2, "--embed-dim", 4, "--head-hidden", 4,
             "--epochs", 2, "--batch-size", 8]

    def commands(out):
        manifest = tmp_path / "synth" / "manifest.tsv"
        return {
            "synth": ["synth", *synth, "--out", out],
            "encode": ["encode", "--manifest", wav / "m.tsv", "--filters", 8, "--layers", 2, "--out", out],
            "train": ["train", *small, "--manifest", manifest, "--seeds", "1,2", "--out", out],
            "eval": ["eval", "--checkpoint", tmp_path / "ckpt" / "checkpoint_seed1.ckpt",
                     "--manifest", manifest, "--out", out],
            "gradcheck": ["gradcheck", "--trials", 3, "--h", 1e-4, "--out", out],
            "mcnemar": ["mcnemar", tmp_path / "pa.tsv", tmp_path / "pb.tsv", "--out", out],
            "elo": ["elo", tmp_path / "matches.tsv", "--out", out],
            "sweep-lambda": ["sweep-lambda", *small, "--epochs", 1, "--lambdas", "0,0.5",
                             "--manifest", manifest, "--out", out],
        }

    assert run_cli(*commands(tmp_path / "synth")["synth"])[0] == 0
    assert run_cli(*commands(tmp_path / "ckpt")["train"])[0] == 0
    differing = []
    for name in commands(tmp_path):
        results = []
        for tag in ("a", "b"):
            out = tmp_path / "det" / name / tag
            code, stdout = run_cli(*commands(out)[name])
            assert code == 0, name
            # the output directory is the one input that differs between the runs
            results.append((stdout.replace(str(out), "<out>"), tree_bytes(out)))
        if results[0] != results[1]:
            differing.append(name)
    ok = not differing
    report(8, ok, f"8 commands run twice, stdout and output bytes identical"
                  + (f"; differing: {differing}" if differing else ""))
    assert ok


def test_c9_format_round_trips(report, tmp_path):
    rng = np.random.default_rng(9)
    stack = LayerStack(rng.standard_normal((3, 5, 4)).astype(np.float32), "vocal", 0.008)
    encoders.save_layerstack(stack, tmp_path / "s.clms")
    back = encoders.load_layerstack(tmp_path / "s.clms")
    stack_ok = (back.layers.tobytes() == stack.layers.tobytes() and back.stream == stack.stream
                and back.frame_hop == stack.frame_hop)
    params = model.init_params(ModelConfig(n_layers=2, dim=4, embed_dim=3, heads=2, head_hidden=5), 1)
    model.save_checkpoint(tmp_path / "c.ckpt", params, {"train.lr": 0.003})
    loaded, _ = model.load_checkpoint(tmp_path / "c.ckpt")
    ckpt_ok = all(loaded[n].data.tobytes() == params[n].data.tobytes() for n in params.names())

    errors = []
    for path, exc, loader in [(tmp_path / "s.clms", encoders.LayerStackFormatError, encoders.load_layerstack),
                              (tmp_path / "c.ckpt", tn.BlobFormatError, model.load_checkpoint)]:
        buf = path.read_bytes()
        (tmp_path / "bad").write_bytes(b"XXXX" + buf[4:])
        (tmp_path / "short").write_bytes(buf[:-5])
        # truncation is an OSError subclass for both formats
        for name, want in (("bad", exc), ("short", OSError)):
            try:
                loader(tmp_path / name)
                errors.append(f"{path.suffix}/{name}: no error")
            except want:
                pass
    ok = stack_ok and ckpt_ok and not errors
    report(9, ok, f"LayerStack round trip bit-exact: {stack_ok}, checkpoint bit-exact: {ckpt_ok}, "
                  f"bad magic and truncation raise typed errors: {not errors}")
    assert ok
