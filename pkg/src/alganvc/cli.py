"""Command-line interface.

Subcommands: features synth | features stats | train | convert | eval mcd |
theory-check | blrs-trace.  A TOML config file supplies training settings;
flags override file values; every output-producing run echoes the fully
resolved configuration into its output directory.  ALGAN_LOG=debug|info
raises log verbosity.  Exit codes: 0 success, 1 failure (single-line
error on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import blrs as blrs_mod
from . import evalkit, features, trainer
from .blocks import LRELU_SLOPE, SELU_ALPHA, SELU_LAMBDA
from .blrs import BlrsState, blrs_step, blrs_trace, write_trace_csv
from .losses import (
    DiscreteDistPair,
    LossWeights,
    TargetLabels,
    adaptive_norm_min,
    closed_form_generator_objective,
    optimal_discriminator,
    pearson_chi_square,
)
from .tensor import Tensor, backward

log = logging.getLogger("alganvc")

_PROFILES = {
    "a": features.speaker_a_profile,
    "b": features.speaker_b_profile,
}


def _setup_logging() -> None:
    level_name = os.environ.get("ALGAN_LOG", "").lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)


def _echo_config(out_dir: Path, doc: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


_TRAIN_KEYS = {
    "seed", "epochs", "frames_per_batch", "batches_per_epoch", "eta_g", "eta_d",
    "alpha", "beta", "w_rec", "w_id", "lambda_scale", "c1", "c2", "lr_floor",
    "lr_ceiling", "blrs_clamp", "precision", "update_generators_first",
    "checkpoint_interval", "generator", "discriminator",
}


def _resolve_train_config(args) -> trainer.TrainConfig:
    """Defaults, then config file, then explicit flags."""
    values = {}
    if args.config is not None:
        doc = _load_config_file(args.config)
        unknown = set(doc) - _TRAIN_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for key in ("seed", "epochs", "alpha", "beta"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "precision", None) is not None:
        values["precision"] = args.precision
    if getattr(args, "no_blrs_clamp", False):
        values["blrs_clamp"] = False
    return trainer.TrainConfig(**values)


# -- subcommand handlers -----------------------------------------------------


def _cmd_features_synth(args) -> int:
    profile = _PROFILES[args.profile]()
    archive = features.synth_corpus(
        args.seed, args.utterances, args.frames, profile, mcep_dim=args.mcep_dim
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"speaker_{args.profile}.algf"
    n = features.write_archive(archive, path)
    _echo_config(out_dir, {
        "command": "features synth", "profile": args.profile, "seed": args.seed,
        "utterances": args.utterances, "frames": args.frames,
        "mcep_dim": args.mcep_dim, "output": str(path),
    })
    print(f"wrote {path} ({n} bytes, {len(archive.utterances)} utterances)")
    return 0


def _cmd_features_stats(args) -> int:
    archive = features.read_archive(args.archive)
    stats = features.speaker_stats(archive)
    out_dir = Path(args.out) if args.out else Path(args.archive).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / (Path(args.archive).stem + ".stats.json")
    features.save_stats(stats, path)
    print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    corpus_x = features.read_archive(args.x)
    corpus_y = features.read_archive(args.y)
    out_dir = Path(args.out)
    _echo_config(out_dir, json.loads(cfg.to_json()))
    ckpt, reports = trainer.train(cfg, corpus_x, corpus_y, out_dir=out_dir)
    print(
        f"trained {cfg.epochs} epochs; full loss {reports[0].full:.6f} -> "
        f"{reports[-1].full:.6f}; checkpoint {out_dir / 'checkpoint.algc'}"
    )
    return 0


def _cmd_convert(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    archive = features.read_archive(args.input)
    ckpt_dir = Path(args.ckpt).parent
    src_name, tgt_name = ("x", "y") if args.direction == "x2y" else ("y", "x")
    src_path = args.src_stats or ckpt_dir / f"{src_name}.stats.json"
    tgt_path = args.tgt_stats or ckpt_dir / f"{tgt_name}.stats.json"
    for p in (src_path, tgt_path):
        if not Path(p).exists():
            raise ValueError(
                f"stats sidecar not found: {p} (pass --src-stats/--tgt-stats)"
            )
    src_stats = features.load_stats(src_path)
    tgt_stats = features.load_stats(tgt_path)
    converted = trainer.convert(ckpt, archive, args.direction, src_stats, tgt_stats)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "converted.algf"
    features.write_archive(converted, path)
    _echo_config(out_dir, {
        "command": "convert", "checkpoint": str(args.ckpt), "input": str(args.input),
        "direction": args.direction, "src_stats": str(src_path),
        "tgt_stats": str(tgt_path), "output": str(path),
    })
    print(f"wrote {path}")
    return 0


def _concat_mceps(archive: features.FeatureArchive) -> np.ndarray:
    return np.concatenate([u.mcep for u in archive.utterances], axis=1)


def _cmd_eval_mcd(args) -> int:
    ref = features.read_archive(args.reference)
    conv = features.read_archive(args.converted)
    if ref.mcep_dim != conv.mcep_dim:
        raise ValueError("archives disagree on mcep_dim")
    a = _concat_mceps(ref)
    b = _concat_mceps(conv)
    if a.shape != b.shape:
        raise ValueError(f"archives disagree on total frames: {a.shape} vs {b.shape}")
    report = evalkit.evaluate(a, b, config={
        "reference": str(args.reference), "converted": str(args.converted),
    })
    print(f"{report.mcd_db:.4f} dB")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        evalkit.emit_report(report, out_dir / f"mcd_report.{args.format}", args.format)
    return 0


def _cmd_blrs_trace(args) -> int:
    pairs = _read_loss_pairs(args.losses)
    initial = BlrsState(
        eta_g=args.eta_g, eta_d=args.eta_d, lambda_scale=args.lambda_scale,
        c1=args.c1, c2=args.c2, clamp=not args.no_blrs_clamp,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "blrs_trace.csv"
    write_trace_csv(path, initial, pairs)
    _echo_config(out_dir, {
        "command": "blrs-trace", "losses": str(args.losses),
        "eta_g": args.eta_g, "eta_d": args.eta_d, "lambda_scale": args.lambda_scale,
        "c1": args.c1, "c2": args.c2, "clamp": not args.no_blrs_clamp,
        "output": str(path),
    })
    print(f"wrote {path}")
    return 0


def _read_loss_pairs(path) -> list:
    """Accept either a bare epoch,g_loss,d_loss CSV or a training losses.csv."""
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        fields = reader.fieldnames or []
        pairs = []
        if {"g_loss", "d_loss"} <= set(fields):
            for row in reader:
                pairs.append((float(row["g_loss"]), float(row["d_loss"])))
        elif {"full", "adv_D_x", "adv_D_y"} <= set(fields):
            for row in reader:
                d_loss = float(row["adv_D_x"]) + float(row["adv_D_y"])
                pairs.append((float(row["full"]) - d_loss, d_loss))
        else:
            raise ValueError(
                "loss CSV needs either g_loss,d_loss columns or a training "
                "losses.csv header"
            )
    if not pairs:
        raise ValueError("loss CSV contains no rows")
    return pairs


# -- theory checks -----------------------------------------------------------


def _np_activations():
    def relu(v):
        return np.maximum(v, 0.0)

    def elu(v):
        return np.where(v > 0, v, np.expm1(np.minimum(v, 0.0)))

    def selu(v):
        return SELU_LAMBDA * np.where(
            v > 0, v, SELU_ALPHA * np.expm1(np.minimum(v, 0.0))
        )

    def lrelu(v):
        return np.where(v > 0, v, LRELU_SLOPE * v)

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    return (relu, elu, selu, lrelu, sigmoid)


def _check_optimal_discriminator() -> tuple:
    """Gradient descent against frozen distributions must reach the closed form."""
    w = LossWeights(alpha=0.0, beta=1.0)
    labels = TargetLabels()
    dist = DiscreteDistPair(p_y=[0.8, 0.2], p_hat_y=[0.1, 0.9])
    target = optimal_discriminator(dist, labels, w)
    p_y = Tensor(dist.p_y)
    p_hat = Tensor(dist.p_hat_y)
    d = Tensor(np.zeros(2), requires_grad=True)
    steps = 0
    for steps in range(1, 5001):
        loss = 0.5 * (p_y * (d - labels.b).square()).sum() \
            + 0.5 * (p_hat * (d - labels.a).square()).sum()
        backward(loss)
        d.data -= 0.5 * d.grad
        d.grad = None
        if np.abs(d.data - target).max() <= 0.02:
            break
    err = float(np.abs(d.data - target).max())
    ok = err <= 0.02 and steps <= 5000
    return ok, f"{steps} steps, max abs err {err:.4f}"


def _check_chi_square() -> tuple:
    cases = [
        (pearson_chi_square([0.5, 0.5], [0.25, 0.75]), 0.25),
        (pearson_chi_square([0.3, 0.7], [0.3, 0.7]), 0.0),
        (closed_form_generator_objective(
            DiscreteDistPair(p_y=[1.0, 0.0], p_hat_y=[0.0, 1.0])), 2.0),
        (closed_form_generator_objective(
            DiscreteDistPair(p_y=[0.4, 0.6], p_hat_y=[0.4, 0.6], normalized=False)), 0.0),
    ]
    for got, want in cases:
        if abs(got - want) > 1e-12:
            return False, f"expected {want}, got {got!r}"
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        p = rng.random(8) + 1e-9
        q = rng.random(8)
        p /= p.sum()
        q /= q.sum()
        if pearson_chi_square(p, q) < 0:
            return False, "negative divergence"
    return True, "hand values exact, 1000 fuzz pairs nonnegative"


def _check_adaptive_loss(n_triples: int = 2000) -> tuple:
    acts = _np_activations()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(n_triples):
        f = rng.normal(0.0, 2.0, (3, 4))
        target = float(rng.choice([-1.0, 0.0, 1.0]))
        alpha = float(rng.random())
        w = LossWeights.from_alpha(alpha)
        got = adaptive_norm_min(Tensor(f), target, w).item()
        branch_losses = [
            alpha * np.abs(a(f) - target).mean()
            + (1.0 - alpha) * ((a(f) - target) ** 2).mean()
            for a in acts
        ]
        want = min(branch_losses)
        worst = max(worst, abs(got - want))
        if abs(got - want) > 1e-12 or any(got > bl + 1e-12 for bl in branch_losses):
            return False, f"mismatch {got!r} vs {want!r}"
    return True, f"{n_triples} triples, worst gap {worst:.2e}"


def _check_blrs_branches() -> tuple:
    s = BlrsState()
    s = blrs_step(s, 1.0, 0.5)  # epoch 1 records only
    if (s.eta_g, s.eta_d) != (blrs_mod.DEFAULT_ETA_G, blrs_mod.DEFAULT_ETA_D):
        return False, "epoch-1 no-op violated"
    up = blrs_step(s, 2.0, 0.51)  # lambda*1.0 = 0.05 > 0.01
    if not (math.isclose(up.eta_g, 2e-4 - 1e-6) and math.isclose(up.eta_d, 1e-4 + 1e-5)):
        return False, f"G-dominant branch wrong: {up.eta_g}, {up.eta_d}"
    down = blrs_step(s, 1.1, 1.5)  # lambda*0.1 = 0.005 < 1.0
    if not (math.isclose(down.eta_g, 2e-4 + 1e-5) and math.isclose(down.eta_d, 1e-4 - 1e-6)):
        return False, f"D-dominant branch wrong: {down.eta_g}, {down.eta_d}"
    flat = blrs_step(s, 1.0, 0.5)  # identical losses: both deltas exactly 0
    if (flat.eta_g, flat.eta_d) != (s.eta_g, s.eta_d):
        return False, "tie branch changed rates"
    return True, "all three branches and the epoch-1 no-op"


def _check_blrs_guardrails() -> tuple:
    rng = np.random.default_rng(11)
    state = BlrsState()
    for _ in range(10000):
        state = blrs_step(state, float(rng.normal(1.0, 5.0)), float(rng.normal(1.0, 5.0)))
        if not (state.floor <= state.eta_g <= state.ceiling
                and state.floor <= state.eta_d <= state.ceiling):
            return False, f"rates escaped guardrails at epoch {state.epoch}"
    return True, "10000 fuzzed epochs stayed within guardrails"


def _check_blrs_replay() -> tuple:
    rng = np.random.default_rng(3)
    losses = [(float(rng.normal(2, 1)), float(rng.normal(1, 1))) for _ in range(200)]
    first = blrs_trace(BlrsState(), losses)
    second = blrs_trace(BlrsState(), losses)
    ok = all(a == b for a, b in zip(first, second)) and len(first) == len(second)
    return ok, "trace replay bitwise identical"


def _cmd_theory_check(args) -> int:
    checks = [
        ("optimal-discriminator-gd", _check_optimal_discriminator),
        ("chi-square-closed-form", _check_chi_square),
        ("adaptive-loss-bruteforce", _check_adaptive_loss),
        ("blrs-branch-table", _check_blrs_branches),
        ("blrs-guardrails", _check_blrs_guardrails),
        ("blrs-replay", _check_blrs_replay),
    ]
    failures = 0
    for name, fn in checks:
        ok, detail = fn()
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failures += 1
    return 0 if failures == 0 else 1


# -- parser ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alganvc",
        description="One-to-one voice-conversion training on MCEP features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_feat = sub.add_parser("features", help="synthetic corpora and statistics")
    feat_sub = p_feat.add_subparsers(dest="features_command", required=True)

    p_synth = feat_sub.add_parser("synth", help="generate a synthetic speaker corpus")
    p_synth.add_argument("--profile", choices=sorted(_PROFILES), required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--utterances", type=int, default=20)
    p_synth.add_argument("--frames", type=int, default=256)
    p_synth.add_argument("--mcep-dim", type=int, default=24)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=_cmd_features_synth)

    p_stats = feat_sub.add_parser("stats", help="write the stats sidecar of an archive")
    p_stats.add_argument("archive")
    p_stats.add_argument("--out", help="output directory (default: alongside archive)")
    p_stats.set_defaults(func=_cmd_features_stats)

    p_train = sub.add_parser("train", help="train the four-network model")
    p_train.add_argument("--x", required=True, help="speaker X feature archive")
    p_train.add_argument("--y", required=True, help="speaker Y feature archive")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--config", help="TOML config file")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--alpha", type=float)
    p_train.add_argument("--beta", type=float)
    p_train.add_argument("--precision", choices=("32", "64"))
    p_train.add_argument("--no-blrs-clamp", action="store_true",
                         help="disable learning-rate guardrails")
    p_train.set_defaults(func=_cmd_train)

    p_conv = sub.add_parser("convert", help="convert an archive through a checkpoint")
    p_conv.add_argument("--ckpt", required=True)
    p_conv.add_argument("--input", required=True)
    p_conv.add_argument("--direction", choices=trainer.DIRECTIONS, required=True)
    p_conv.add_argument("--src-stats", help="source stats sidecar (default: next to ckpt)")
    p_conv.add_argument("--tgt-stats", help="target stats sidecar (default: next to ckpt)")
    p_conv.add_argument("--out", required=True, help="output directory")
    p_conv.set_defaults(func=_cmd_convert)

    p_eval = sub.add_parser("eval", help="objective evaluation")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)
    p_mcd = eval_sub.add_parser("mcd", help="mel-cepstral distortion between archives")
    p_mcd.add_argument("reference")
    p_mcd.add_argument("converted")
    p_mcd.add_argument("--out", help="optional report directory")
    p_mcd.add_argument("--format", choices=("json", "csv"), default="json")
    p_mcd.set_defaults(func=_cmd_eval_mcd)

    p_theory = sub.add_parser(
        "theory-check", help="run the closed-form and scheduler oracle suite"
    )
    p_theory.set_defaults(func=_cmd_theory_check)

    p_trace = sub.add_parser("blrs-trace", help="replay a loss log through the scheduler")
    p_trace.add_argument("--losses", required=True, help="CSV of per-epoch losses")
    p_trace.add_argument("--out", required=True, help="output directory")
    p_trace.add_argument("--eta-g", type=float, default=blrs_mod.DEFAULT_ETA_G)
    p_trace.add_argument("--eta-d", type=float, default=blrs_mod.DEFAULT_ETA_D)
    p_trace.add_argument("--lambda-scale", type=float, default=blrs_mod.DEFAULT_LAMBDA)
    p_trace.add_argument("--c1", type=float, default=blrs_mod.DEFAULT_C1)
    p_trace.add_argument("--c2", type=float, default=blrs_mod.DEFAULT_C2)
    p_trace.add_argument("--no-blrs-clamp", action="store_true")
    p_trace.set_defaults(func=_cmd_blrs_trace)

    return parser


def dispatch(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, trainer.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    try:
        return dispatch(argv)
    except SystemExit as exc:  # argparse --help or usage errors
        code = exc.code
        return 0 if code is None else int(code)


if __name__ == "__main__":
    sys.exit(main())
