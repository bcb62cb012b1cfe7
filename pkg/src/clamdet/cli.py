"""Command-line entry point.

Every command accepts ``--config FILE`` holding flat ``key=value`` lines with
dot-namespaced keys (``loss.margin=1.0``). Explicit flags override the file;
unknown keys are rejected. Resolved settings are echoed to ``run.meta`` in the
output directory.

Exit codes: 0 success, 1 usage or validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import datakit, encoders, evalstat, model, objectives, trainer
from . import tensor as tn

log = logging.getLogger("clamdet")


class UsageError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise ValueError("empty integer list")
    return vals


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise ValueError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ValueError("empty number list")
    return vals


@dataclass(frozen=True)
class Opt:
    key: str
    flag: str
    type: Callable[[str], Any]
    default: Any
    help: str
    choices: tuple | None = None


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


SEED = Opt("run.seed", "--seed", int, 1, "base seed; all randomness derives from it")

MODEL_OPTS = [
    Opt("model.n_layers", "--layers", int, 4, "encoder layers per stream (L)"),
    Opt("model.dim", "--dim", int, 32, "feature dimension per layer (d)"),
    Opt("model.embed_dim", "--embed-dim", int, 32, "stream embedding size (e)"),
    Opt("model.heads", "--heads", int, 4, "attention heads (H)"),
    Opt("model.streams", "--streams", str, "both", "streams fed to the classifier",
        ("both", "music", "vocal")),
    Opt("model.head_hidden", "--head-hidden", int, 32, "tanh hidden units in the head; 0 = linear head"),
]
LOSS_OPTS = [
    Opt("loss.alignment", "--alignment", str, "triplet", "alignment loss added to BCE",
        objectives.ALIGNMENT_KINDS),
    Opt("loss.lambda", "--lambda", float, objectives.PUBLISHED_LAMBDA, "alignment weight"),
    Opt("loss.margin", "--margin", float, 1.0, "triplet margin (alpha)"),
    Opt("loss.huber_delta", "--huber-delta", float, 1.0, "Huber threshold"),
]
TRAIN_OPTS = [
    Opt("data.manifest", "--manifest", str, None, "manifest TSV of feature tracks (required)"),
    Opt("train.lr", "--lr", float, 3e-3, "AdamW learning rate"),
    Opt("train.beta1", "--beta1", float, 0.9, "AdamW first-moment decay"),
    Opt("train.beta2", "--beta2", float, 0.999, "AdamW second-moment decay"),
    Opt("train.eps", "--eps", float, 1e-8, "AdamW epsilon"),
    Opt("train.weight_decay", "--weight-decay", float, 0.01, "decoupled weight decay"),
    Opt("train.batch_size", "--batch-size", int, 16, "tracks per batch"),
    Opt("train.epochs", "--epochs", int, 30, "training epochs"),
    Opt("train.seeds", "--seeds", _int_list, None, "comma-separated seeds (default: --seed)"),
    SEED,
] + LOSS_OPTS + MODEL_OPTS

COMMAND_OPTS: dict[str, list[Opt]] = {
    "synth": [
        Opt("synth.n_real", "--n-real", int, 1375, "real tracks"),
        Opt("synth.n_fake", "--n-fake", int, 1375, "fake tracks"),
        Opt("synth.latent_dim", "--latent-dim", int, 4, "shared latent dimension"),
        Opt("synth.frames", "--frames", int, 32, "frames per track (T)"),
        Opt("synth.dim", "--dim", int, 32, "features per frame (d)"),
        Opt("synth.layers", "--layers", int, 4, "layers per stack (L)"),
        Opt("synth.coupling", "--coupling", float, 0.2, "fake cross-stream coupling in [0, 1]"),
        Opt("synth.noise_scale", "--noise-scale", float, 0.25, "additive feature noise"),
        Opt("synth.n_val", "--n-val", int, 250, "tracks assigned to the val split"),
        Opt("synth.n_test", "--n-test", int, 500, "tracks assigned to the test split"),
        SEED,
    ],
    "encode": [
        Opt("data.manifest", "--manifest", str, None, "manifest TSV whose paths are WAV files (required)"),
        Opt("encode.target_rate", "--target-rate", float, float(encoders.TARGET_RATE), "resample rate in Hz"),
        Opt("encode.max_duration", "--max-duration", float, encoders.MAX_DURATION, "head-trim length in seconds"),
        Opt("encode.filters", "--filters", int, 32, "filterbank size (d)"),
        Opt("encode.layers", "--layers", int, 4, "layers per stack (L)"),
        Opt("encode.music_window", "--music-window", int, 1024, "music analysis window (samples)"),
        Opt("encode.music_hop", "--music-hop", int, 512, "music hop (samples)"),
        Opt("encode.vocal_window", "--vocal-window", int, 256, "vocal analysis window (samples)"),
        Opt("encode.vocal_hop", "--vocal-hop", int, 128, "vocal hop (samples)"),
        Opt("encode.workers", "--workers", int, 1, "parallel encoder threads; output order is fixed"),
        SEED,
    ],
    "train": TRAIN_OPTS,
    "eval": [
        Opt("eval.checkpoint", "--checkpoint", str, None, "checkpoint file (required)"),
        Opt("data.manifest", "--manifest", str, None, "manifest TSV of feature tracks (required)"),
        Opt("eval.split", "--split", str, "test", "split to evaluate", datakit.SPLITS),
        SEED,
    ],
    "gradcheck": [
        Opt("gradcheck.trials", "--trials", int, 20, "random micro-configurations"),
        Opt("gradcheck.h", "--h", float, 1e-6, "central-difference step"),
        Opt("gradcheck.tol", "--tol", float, 1e-5, "maximum relative error"),
        SEED,
    ],
    "mcnemar": [SEED],
    "elo": [
        Opt("elo.k", "--k", float, 32.0, "K factor"),
        Opt("elo.initial", "--initial", float, 1000.0, "starting rating"),
        SEED,
    ],
    "sweep-lambda": [Opt("sweep.lambdas", "--lambdas", _float_list, (0.1, 0.25, 0.5, 0.75, 1.0),
                         "comma-separated alignment weights")] + TRAIN_OPTS,
}

HELP = {
    "synth": "generate a synthetic paired-stream dataset (features + manifest)",
    "encode": "encode a manifest of WAV files into music/vocal layer stacks",
    "train": "train the detector; one history and checkpoint per seed",
    "eval": "score a checkpoint on a manifest split; per-generator F1 report",
    "gradcheck": "finite-difference check of the full loss on random micro-models",
    "mcnemar": "exact two-sided McNemar test between two prediction files",
    "elo": "Elo leaderboard from a pairwise match log",
    "sweep-lambda": "train across alignment weights and tabulate F1",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clamdet", description="Dual-stream synthetic-music detector toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, opts in COMMAND_OPTS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        if name == "mcnemar":
            p.add_argument("preds_a", help="predictions TSV of model A (id true pred score)")
            p.add_argument("preds_b", help="predictions TSV of model B")
        if name == "elo":
            p.add_argument("matches", help="match log TSV (model_a model_b outcome)")
        p.add_argument("--config", help="key=value file; flags override its values")
        p.add_argument("--out", help="output directory (required for commands that write files)")
        for o in opts:
            default_txt = "required" if o.default is None and o.key != "train.seeds" else _fmt(o.default)
            p.add_argument(o.flag, dest=o.key, type=o.type, default=None, choices=o.choices,
                           help=f"{o.help} [{o.key}; default {default_txt}]")
    return parser


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    opts = {o.key: o for o in COMMAND_OPTS[command]}
    values = {k: o.default for k, o in opts.items()}
    if ns.config:
        for key, raw in read_config_file(ns.config).items():
            if key not in opts:
                raise UsageError(f"{ns.config}: unknown key {key!r} for command {command!r}")
            o = opts[key]
            try:
                val = o.type(raw)
            except ValueError as exc:
                raise UsageError(f"{ns.config}: bad value for {key}: {exc}") from None
            if o.choices and val not in o.choices:
                raise UsageError(f"{ns.config}: {key} must be one of {o.choices}")
            values[key] = val
    for key in opts:
        v = getattr(ns, key, None)
        if v is not None:
            values[key] = v
    for key, o in opts.items():
        if values[key] is None and o.default is None and key != "train.seeds":
            raise UsageError(f"{command}: missing required setting {key} ({o.flag})")
    return values


def write_meta(out: Path, command: str, values: dict[str, Any], extra: dict | None = None) -> None:
    lines = [f"command={command}"] + [f"{k}={_fmt(v)}" for k, v in sorted(values.items())]
    for k, v in sorted((extra or {}).items()):
        lines.append(f"{k}={_fmt(v)}")
    (out / "run.meta").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require_out(ns) -> Path:
    if not ns.out:
        raise UsageError(f"{ns.command}: --out is required")
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------------

def cmd_synth(ns, v) -> int:
    out = _require_out(ns)
    spec = datakit.SynthSpec(n_real=v["synth.n_real"], n_fake=v["synth.n_fake"],
                             latent_dim=v["synth.latent_dim"], T=v["synth.frames"], d=v["synth.dim"],
                             L=v["synth.layers"], coupling=v["synth.coupling"],
                             noise_scale=v["synth.noise_scale"], seed=v["run.seed"])
    records = datakit.materialize_synth(spec, out, v["synth.n_val"], v["synth.n_test"])
    write_meta(out, "synth", v)
    counts = {s: sum(r.split == s for r in records) for s in datakit.SPLITS}
    print(f"wrote {len(records)} tracks to {out / 'manifest.tsv'} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def cmd_encode(ns, v) -> int:
    out = _require_out(ns)
    manifest = Path(v["data.manifest"])
    records = datakit.parse_manifest(manifest)
    specs = {
        "music": encoders.EncoderSpec("music", v["encode.music_window"], v["encode.music_hop"],
                                      v["encode.filters"], v["encode.layers"], 2 * v["run.seed"]),
        "vocal": encoders.EncoderSpec("vocal", v["encode.vocal_window"], v["encode.vocal_hop"],
                                      v["encode.filters"], v["encode.layers"], 2 * v["run.seed"] + 1),
    }
    waves = [encoders.preprocess(encoders.read_wav(manifest.parent / r.path), v["encode.target_rate"],
                                 v["encode.max_duration"]) for r in records]
    (out / "features").mkdir(exist_ok=True)
    stacks = {s: encoders.encode_many(waves, spec, v["encode.workers"]) for s, spec in specs.items()}
    new = []
    for i, r in enumerate(records):
        paths = []
        for s in ("music", "vocal"):
            rel = f"features/{r.id}.{s}.clms"
            encoders.save_layerstack(stacks[s][i], out / rel)
            paths.append(rel)
        new.append(datakit.TrackRecord(r.id, ",".join(paths), r.label, r.tier, r.generator, r.split))
    datakit.write_manifest(new, out / "manifest.tsv")
    write_meta(out, "encode", v)
    print(f"encoded {len(new)} tracks into {out / 'manifest.tsv'}")
    return 0


def train_config(v: dict, weight: float | None = None) -> trainer.TrainConfig:
    seeds = v["train.seeds"] or (v["run.seed"],)
    loss = objectives.LossConfig(margin=v["loss.margin"], alignment=v["loss.alignment"],
                                 weight=v["loss.lambda"] if weight is None else weight,
                                 huber_delta=v["loss.huber_delta"])
    mcfg = model.ModelConfig(n_layers=v["model.n_layers"], dim=v["model.dim"],
                             embed_dim=v["model.embed_dim"], heads=v["model.heads"],
                             streams=v["model.streams"], head_hidden=v["model.head_hidden"])
    return trainer.TrainConfig(lr=v["train.lr"], betas=(v["train.beta1"], v["train.beta2"]),
                               eps=v["train.eps"], weight_decay=v["train.weight_decay"],
                               batch_size=v["train.batch_size"], epochs=v["train.epochs"],
                               seeds=tuple(seeds), loss=loss, model=mcfg)


def _load_splits(manifest: str):
    path = Path(manifest)
    records = datakit.parse_manifest(path)
    return {s: datakit.load_split(records, path.parent, s) for s in datakit.SPLITS}


def _checkpoint_header(cfg: trainer.TrainConfig, seed: int) -> dict:
    return {"L": cfg.model.n_layers, "d": cfg.model.dim, "e": cfg.model.embed_dim,
            "H": cfg.model.heads, "alpha": cfg.loss.margin, "lambda": cfg.loss.weight,
            "alignment": cfg.loss.alignment, "seed": seed}


def _run_training(cfg, splits, out: Path, tag: str = "") -> list[dict]:
    rows = []
    for seed in cfg.seeds:
        hist_path = out / f"history{tag}_seed{seed}.tsv"
        with open(hist_path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(trainer.HISTORY_FIELDS) + "\n")

            def emit(row, fh=fh):
                fh.write(trainer.format_history_line(row) + "\n")
                fh.flush()
            res = trainer.train(cfg, splits["train"], splits["val"], seed, on_epoch=emit)
        model.save_checkpoint(out / f"checkpoint{tag}_seed{seed}.ckpt", res.params,
                              _checkpoint_header(cfg, seed))
        val = trainer.score(res.params, splits["val"])
        row = {"seed": seed, "best_epoch": res.best_epoch, "val_f1": val["f1"]}
        if len(splits["test"]):
            row["test_f1"] = trainer.score(res.params, splits["test"])["f1"]
        rows.append(row)
    return rows


def cmd_train(ns, v) -> int:
    out = _require_out(ns)
    cfg = train_config(v)
    splits = _load_splits(v["data.manifest"])
    rows = _run_training(cfg, splits, out)
    has_test = all("test_f1" in r for r in rows)
    header = ["seed", "best_epoch", "val_f1"] + (["test_f1"] if has_test else [])
    body = [[r["seed"], r["best_epoch"], f"{r['val_f1']:.4f}"] + ([f"{r['test_f1']:.4f}"] if has_test else [])
            for r in rows]
    mean_row = ["mean", "", f"{np.mean([r['val_f1'] for r in rows]):.4f}"]
    if has_test:
        mean_row.append(f"{np.mean([r['test_f1'] for r in rows]):.4f}")
    text = evalstat.format_table(header, body + [mean_row])
    (out / "summary.txt").write_text(text, encoding="utf-8")
    write_meta(out, "train", v, {"run.seeds_resolved": cfg.seeds})
    print(text, end="")
    return 0


def cmd_eval(ns, v) -> int:
    out = _require_out(ns)
    params, _ = model.load_checkpoint(v["eval.checkpoint"])
    path = Path(v["data.manifest"])
    records = datakit.parse_manifest(path)
    ds = datakit.load_split(records, path.parent, v["eval.split"])
    if len(ds) == 0:
        raise datakit.ManifestError(f"split {v['eval.split']!r} of {path} is empty")
    logits = trainer.predict_logits(params, ds)
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits, -700, 700)))
    preds = [evalstat.Prediction(tid, int(t), int(z > 0), float(p))
             for tid, t, z, p in zip(ds.ids, ds.labels, logits, probs)]
    evalstat.write_predictions(preds, out / "predictions.tsv")
    gens = dict(zip(ds.ids, ds.generators))
    rows = evalstat.per_generator_report(preds, gens)
    text = evalstat.format_table(["Dataset", "Total Samples", "F1 Score (%)"],
                                 [(g, f"{n:,}", f"{f:.2f}") for g, n, f in rows])
    m = evalstat.prediction_metrics(preds)
    text += f"\naccuracy {m['accuracy']:.4f}  precision {m['precision']:.4f}  " \
            f"recall {m['recall']:.4f}  f1 {m['f1']:.4f}\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    with open(out / "report.tsv", "w", encoding="utf-8") as fh:
        fh.write("dataset\tsamples\tf1_percent\n")
        for g, n, f in rows:
            fh.write(f"{g}\t{n}\t{f:.4f}\n")
    write_meta(out, "eval", v)
    print(text, end="")
    return 0


def random_micro_case(rng: np.random.Generator):
    """A random small model, batch and loss configuration for gradient checks."""
    L, T = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    H = int(rng.integers(1, 3))
    d = H * int(rng.integers(1, 8 // H + 1))
    e = int(rng.integers(1, 5))
    hidden = int(rng.integers(0, 4))
    cfg = model.ModelConfig(n_layers=L, dim=d, embed_dim=e, heads=H, head_hidden=hidden)
    B = int(rng.integers(2, 5))
    labels = rng.integers(0, 2, size=B)
    labels[:2] = 0
    kind = str(rng.choice(["triplet", "mse", "huber", "cosine", "l1"]))
    loss = objectives.LossConfig(margin=float(rng.uniform(0.2, 2.0)), alignment=kind,
                                 weight=float(rng.uniform(0.1, 1.0)), huber_delta=float(rng.uniform(0.05, 1.0)))
    params = model.init_params(cfg, int(rng.integers(0, 2 ** 31)))
    music = rng.standard_normal((B, L, T, d))
    vocal = rng.standard_normal((B, L, T, d))
    return cfg, params, music, vocal, labels, loss


def micro_loss_fn(cfg, names, music, vocal, labels, loss_cfg):
    """Total loss as a function of the parameter tensors, inputs held fixed."""
    music, vocal = tn.Tensor(music), tn.Tensor(vocal)

    def fn(*tensors):
        p = model.ClamParams(cfg, dict(zip(names, tensors)))
        logits, emb = model.forward(music, vocal, p)
        bce = objectives.bce_with_logits(logits, labels)
        real = np.flatnonzero(labels == 0)
        align = objectives.alignment_variant(loss_cfg.alignment, tn.take_rows(emb["music"], real),
                                             tn.take_rows(emb["vocal"], real), loss_cfg)
        return objectives.total_loss(bce, align, loss_cfg.weight)
    return fn


def run_gradcheck(trials: int, seed: int, h: float, tol: float) -> list[tn.GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        cfg, params, music, vocal, labels, loss_cfg = random_micro_case(rng)
        names = params.names()
        fn = micro_loss_fn(cfg, names, music, vocal, labels, loss_cfg)
        reports.append(tn.grad_check(fn, [params[n].data for n in names], h=h, tol=tol))
    return reports


def cmd_gradcheck(ns, v) -> int:
    reports = run_gradcheck(v["gradcheck.trials"], v["run.seed"], v["gradcheck.h"], v["gradcheck.tol"])
    lines = [f"trial {i}: max_rel_error={r.max_rel_error:.3e} max_abs_error={r.max_abs_error:.3e} "
             f"excluded={r.excluded} "
             f"{'PASS' if r.passed else 'FAIL'}" for i, r in enumerate(reports)]
    ok = all(r.passed for r in reports)
    lines.append(f"{sum(r.passed for r in reports)}/{len(reports)} passed")
    text = "\n".join(lines) + "\n"
    if ns.out:
        out = _require_out(ns)
        (out / "gradcheck.txt").write_text(text, encoding="utf-8")
        write_meta(out, "gradcheck", v)
    print(text, end="")
    return 0 if ok else 2


def cmd_mcnemar(ns, v) -> int:
    a = evalstat.read_predictions(ns.preds_a)
    b = evalstat.read_predictions(ns.preds_b)
    res = evalstat.mcnemar_exact(a, b)
    both, neither, only_a, only_b = res["table"]
    text = evalstat.format_table(["", "B correct", "B wrong"],
                                 [["A correct", both, only_a], ["A wrong", only_b, neither]])
    text += f"a={both} b={neither} c={only_a} d={only_b}\np={res['p_value']!r}\n"
    if ns.out:
        out = _require_out(ns)
        (out / "mcnemar.tsv").write_text(
            f"a\tb\tc\td\tp_value\n{both}\t{neither}\t{only_a}\t{only_b}\t{res['p_value']!r}\n",
            encoding="utf-8")
        write_meta(out, "mcnemar", v, {"input.a": ns.preds_a, "input.b": ns.preds_b})
    print(text, end="")
    return 0


def cmd_elo(ns, v) -> int:
    matches = evalstat.read_matches(ns.matches)
    ratings = evalstat.elo_rank(matches, v["elo.k"], v["elo.initial"])
    board = evalstat.leaderboard(ratings)
    text = evalstat.format_table(["Rank", "Model", "Elo"],
                                 [(i + 1, m, f"{r:.2f}") for i, (m, r) in enumerate(board)], "rlr")
    if ns.out:
        out = _require_out(ns)
        with open(out / "leaderboard.tsv", "w", encoding="utf-8") as fh:
            fh.write("rank\tmodel\telo\n")
            for i, (m, r) in enumerate(board):
                fh.write(f"{i + 1}\t{m}\t{r!r}\n")
        write_meta(out, "elo", v, {"input.matches": ns.matches})
    print(text, end="")
    return 0


def cmd_sweep(ns, v) -> int:
    out = _require_out(ns)
    splits = _load_splits(v["data.manifest"])
    body = []
    with open(out / "sweep.tsv", "w", encoding="utf-8") as fh:
        fh.write("lambda\tmean_val_f1\tmean_test_f1\n")
        for lam in v["sweep.lambdas"]:
            cfg = train_config(v, weight=lam)
            rows = _run_training(cfg, splits, out, tag=f"_lambda{lam!r}")
            val = float(np.mean([r["val_f1"] for r in rows]))
            test = float(np.mean([r["test_f1"] for r in rows])) if all("test_f1" in r for r in rows) else float("nan")
            fh.write(f"{lam!r}\t{val!r}\t{test!r}\n")
            body.append((f"{lam:g}", f"{val:.4f}", f"{test:.4f}"))
    text = evalstat.format_table(["lambda", "mean val F1", "mean test F1"], body)
    (out / "sweep.txt").write_text(text, encoding="utf-8")
    write_meta(out, "sweep-lambda", v)
    print(text, end="")
    return 0


COMMANDS = {"synth": cmd_synth, "encode": cmd_encode, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "mcnemar": cmd_mcnemar, "elo": cmd_elo,
            "sweep-lambda": cmd_sweep}

VALIDATION_ERRORS = (UsageError, encoders.ConfigError, datakit.ManifestError,
                     evalstat.ContractError, datakit.DomainError)


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        values = resolve(ns.command, ns)
        return COMMANDS[ns.command](ns, values)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
