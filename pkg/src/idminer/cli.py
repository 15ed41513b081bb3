"""Command-line entry point: ``idminer <command> ...``.

Every command prints machine-readable JSON (or writes CSV) and records its
exact inputs in a ``run.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from . import protocols as P
from .baseline import MeanFeatureClassifier, fit_baseline
from .errors import IdMinerError, UsageError
from .gradcheck import run_grad_checks
from .metrics import accuracy, auc, avg_drop, calibrated_accuracy
from .model import CHECKPOINT_VERSION, load_checkpoint
from .synth import (SURROGATE_KINDS, SurrogateSpec, atomic_write, build_rddp_dataset, normalize_kind,
                    parse_config)
from .trainer import TrainConfig, default_model_config, resume, train, write_loss_log

BUNDLED_CONFIGS = ("desk", "tiny")
DEFAULT_SURROGATE_LEVEL = 3


def _dump(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run(path: Path, command: str, args: argparse.Namespace, inputs: dict[str, Path], **extra) -> None:
    # the output location is implied by where run.json lives; leaving it out keeps reruns comparable
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "out")}
    body = {"command": command, "version": __version__,
            "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
            "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in sorted(inputs.items())}}
    body.update(extra)
    body["run_digest"] = hashlib.sha256(_dump(body)).hexdigest()
    atomic_write(path, _dump(body))


def config_text(spec: str) -> tuple[str, str]:
    """Read a config by path, or by bundled name (``desk``, ``tiny``)."""
    if spec in BUNDLED_CONFIGS:
        return resources.files("idminer").joinpath(f"configs/{spec}.ini").read_text(), f"bundled:{spec}"
    return Path(spec).read_text(), spec


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------------------------


def cmd_synth_gen(args):
    text, source = config_text(args.config)
    cfg = parse_config(text)
    out = Path(args.out)
    corpus = build_rddp_dataset(cfg, args.seed, out)
    m = corpus.manifest
    counts = {tag: len(m.entries(tag=tag)) for tag in (D.GENUINE, D.FORGED, D.RECONSTRUCTED, D.SURROGATE)}
    _write_run(out / "run.json", "synth-gen", args, {}, seed=args.seed, config_source=source,
               config_digest=cfg.digest())
    _emit({"manifest": str(out / "manifest.json"), "records": len(m.records), "counts": counts,
           "config_digest": cfg.digest()})


def _train_config(args, base: dict | None = None) -> TrainConfig:
    kw = dict(base or {})
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("tau", "tau"), ("lam", "lam"), ("seed", "seed"),
                      ("beta1", "beta1"), ("beta2", "beta2"), ("adam_eps", "eps"), ("classes", "classes"),
                      ("videos_per_class", "videos_per_class"), ("frames_per_pair", "frames_per_pair"),
                      ("steps_per_epoch", "steps_per_epoch"), ("checkpoint_every", "checkpoint_every"),
                      ("neg_samples", "neg_samples")):
        v = getattr(args, flag)
        if v is not None:
            kw[key] = v
    if args.no_artifact_loss:
        kw["artifact_loss"] = False
    return TrainConfig(**kw)


def cmd_train(args):
    manifest = Path(args.manifest)
    ds = D.Dataset.open(manifest)
    out = Path(args.out)
    if args.resume:
        _, saved = load_checkpoint(Path(args.resume).read_bytes())
        cfg = _train_config(args, saved)
        result = resume(Path(args.resume).read_bytes(), ds, cfg, checkpoint_path=out)
        inputs = {"manifest": manifest, "resume": Path(args.resume)}
    else:
        cfg = _train_config(args)
        overrides = {}
        if args.encoder_widths:
            widths = tuple(int(w) for w in args.encoder_widths.split(","))
            overrides["encoder_widths"] = widths
            overrides["encoder_activations"] = ("tanh",) * (len(widths) - 1) + ("linear",)
        if args.hidden:
            overrides["hidden"] = args.hidden
        if args.rep_dim:
            overrides["rep_dim"] = args.rep_dim
        result = train(ds, cfg, model_config=default_model_config(ds, **overrides), checkpoint_path=out)
        inputs = {"manifest": manifest}
    log_path = out.with_name(out.name + ".loss.csv")
    write_loss_log(result.log, log_path)
    _write_run(out.with_name(out.name + ".run.json"), "train", args, inputs,
               train_config=cfg.to_dict(), model_config=result.model.config.to_dict(),
               checkpoint_sha256=_sha256(out))
    last = result.log[-1] if result.log else None
    _emit({"checkpoint": str(out), "loss_log": str(log_path), "steps": result.model.store.step_count,
           "final_loss": None if last is None else {"l_identity": last[1], "l_artifact": last[2], "l_total": last[3]},
           "tau": cfg.tau, "lambda": cfg.lam, "betas": [cfg.beta1, cfg.beta2], "lr": cfg.lr, "epochs": cfg.epochs})


def _scorer(args):
    if args.ckpt:
        model, _ = load_checkpoint(Path(args.ckpt).read_bytes())
        return P.IDMinerScorer(model)
    if args.baseline:
        return MeanFeatureClassifier.from_json(json.loads(Path(args.baseline).read_text()))
    raise UsageError("give --ckpt (ID-Miner) or --baseline (reference classifier)")


def _protocol_list(args) -> list[P.ProtocolKind]:
    mode = args.mode or (P.REFERENCE_BASED if args.ckpt else P.REFERENCE_FREE)
    level = DEFAULT_SURROGATE_LEVEL if args.level is None else args.level
    kinds = SURROGATE_KINDS if args.kind in (None, "all") else (normalize_kind(args.kind),)
    if args.protocol == "all":
        return ([P.ProtocolKind(P.CONVENTIONAL, mode), P.ProtocolKind(P.WHITEHAT, mode)] +
                [P.ProtocolKind(P.SURROGATE, mode, SurrogateSpec(k, level)) for k in kinds])
    name = P.PROTOCOL_ALIASES[args.protocol]
    if name == P.SURROGATE:
        return [P.ProtocolKind(name, mode, SurrogateSpec(k, level)) for k in kinds]
    return [P.ProtocolKind(name, mode)]


def cmd_eval(args):
    manifest = Path(args.manifest)
    ds = D.Dataset.open(manifest)
    scorer = _scorer(args)
    out = Path(args.out)
    reports = []
    for proto in _protocol_list(args):
        rep = P.evaluate(scorer, ds, proto, split=args.split, threshold=args.threshold)
        reports.append(rep.to_json())
        stem = proto.name if proto.surrogate is None else f"{proto.name}-{proto.surrogate.tag}"
        atomic_write(out / f"scores-{stem}.csv", P.scores_csv(rep.pairs, rep.scores))
    result = {"reports": reports}
    conv = [r for r in reports if r["protocol"] == P.CONVENTIONAL]
    rddp = [r for r in reports if r["protocol"] != P.CONVENTIONAL]
    if conv and rddp:
        result["avg_drop"] = {key: avg_drop(conv[0][key], [r[key] for r in rddp]) for key in ("auc", "acc")}
    atomic_write(out / "metrics.json", _dump(result))
    inputs = {"manifest": manifest}
    inputs.update({k: Path(getattr(args, k)) for k in ("ckpt", "baseline") if getattr(args, k)})
    _write_run(out / "run.json", "eval", args, inputs)
    _emit(result)


def cmd_reid(args):
    manifest = Path(args.manifest)
    ds = D.Dataset.open(manifest)
    scorer = _scorer(args)
    represent = scorer.model.represent if isinstance(scorer, P.IDMinerScorer) else scorer.represent
    res = P.evaluate_reid(represent, ds, split=args.split).to_json()
    if args.out:
        out = Path(args.out)
        atomic_write(out / "reid.json", _dump(res))
        inputs = {"manifest": manifest}
        inputs.update({k: Path(getattr(args, k)) for k in ("ckpt", "baseline") if getattr(args, k)})
        _write_run(out / "run.json", "reid", args, inputs)
    _emit(res)


def _levels(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",")]


def cmd_sweep(args):
    manifest = Path(args.manifest)
    ds = D.Dataset.open(manifest)
    scorer = _scorer(args)
    mode = args.mode or (P.REFERENCE_BASED if args.ckpt else P.REFERENCE_FREE)
    kinds = SURROGATE_KINDS if args.kinds == "all" else tuple(normalize_kind(k) for k in args.kinds.split(","))
    lines = ["kind,level,auc,acc,n_pairs"]
    for kind in kinds:
        for level in sorted(_levels(args.levels)):
            rep = P.evaluate(scorer, ds, P.ProtocolKind(P.SURROGATE, mode, SurrogateSpec(kind, level)), args.split)
            lines.append(f"{kind},{level},{rep.auc!r},{rep.acc!r},{rep.n_pairs}")
    payload = ("\n".join(lines) + "\n").encode()
    if args.out:
        out = Path(args.out)
        atomic_write(out, payload)
        inputs = {"manifest": manifest}
        inputs.update({k: Path(getattr(args, k)) for k in ("ckpt", "baseline") if getattr(args, k)})
        _write_run(out.with_name(out.name + ".run.json"), "sweep", args, inputs)
    sys.stdout.write(payload.decode())


def cmd_grad_check(args):
    results, elapsed = run_grad_checks(args.seed, args.configs)
    worst = {}
    for r in results:
        worst[r.component] = max(worst.get(r.component, 0.0), r.max_rel_error)
    ok = all(r.ok for r in results)
    _emit({"ok": ok, "configs": args.configs, "seed": args.seed, "max_rel_error": worst,
           "failures": [r.to_json() for r in results if not r.ok], "seconds": round(elapsed, 1)})
    return 0 if ok else 1


def cmd_baseline(args):
    manifest = Path(args.manifest)
    ds = D.Dataset.open(manifest)
    clf = fit_baseline(ds, split="train", c=args.C)
    out = Path(args.out)
    atomic_write(out, _dump(clf.to_json()))
    _write_run(out.with_name(out.name + ".run.json"), "baseline", args, {"manifest": manifest})
    _emit({"baseline": str(out), "features": int(clf.coef.size)})


def cmd_score_metrics(args):
    if args.frame_scores:
        per_video = P.read_frame_scores(Path(args.frame_scores).read_bytes())
        labels = json.loads(Path(args.labels).read_text()) if args.labels else None
        if labels is None:
            raise UsageError("--frame-scores needs --labels (JSON map video_id -> 0/1)")
        ids = sorted(per_video)
        scores = np.array([per_video[i] for i in ids])
        y = np.array([int(labels[i]) for i in ids])
    else:
        scores, y = P.read_scores_csv(Path(args.scores).read_bytes())
    acc_c, thr = calibrated_accuracy(scores, y)
    _emit({"auc": auc(scores, y), "acc": accuracy(scores, y, args.threshold), "acc_calibrated": acc_c,
           "calibrated_threshold": thr, "n_pairs": int(y.size)})


# -- parser ------------------------------------------------------------------------------------


def _add_scorer_flags(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", help="ID-Miner checkpoint")
    p.add_argument("--baseline", help="reference classifier JSON (from `idminer baseline`)")
    p.add_argument("--mode", choices=(P.REFERENCE_BASED, P.REFERENCE_FREE))
    p.add_argument("--split", default="test")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idminer", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version",
                    version=f"idminer {__version__} (manifest v{D.MANIFEST_VERSION}, checkpoint v{CHECKPOINT_VERSION})")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic FAU corpus")
    p.add_argument("--config", default="desk", help="config path or bundled name (desk, tiny)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="train ID-Miner")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--adam-eps", type=float)
    p.add_argument("--classes", type=int)
    p.add_argument("--videos-per-class", type=int)
    p.add_argument("--frames-per-pair", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--checkpoint-every", type=int, help="epochs between checkpoints (0: only at the end)")
    p.add_argument("--neg-samples", type=int)
    p.add_argument("--no-artifact-loss", action="store_true")
    p.add_argument("--encoder-widths", help="comma-separated, e.g. 32,32,32")
    p.add_argument("--hidden", type=int)
    p.add_argument("--rep-dim", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate under a protocol")
    _add_scorer_flags(p)
    p.add_argument("--protocol", default="conventional",
                   choices=("conventional", "whitehat", "rddp_whitehat", "surrogate", "rddp_surrogate", "all"))
    p.add_argument("--kind", help="surrogate kind or 'all'")
    p.add_argument("--level", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reid", help="puppeteer re-identification")
    _add_scorer_flags(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_reid)

    p = sub.add_parser("sweep", help="surrogate sensitivity table")
    _add_scorer_flags(p)
    p.add_argument("--levels", default="0..5")
    p.add_argument("--kinds", default="all")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grad-check", help="finite-difference check of all backward passes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=20)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("baseline", help="fit the mean-feature reference classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="classifier JSON path")
    p.add_argument("--C", type=float, default=1.0, help="inverse L2 strength")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("score-metrics", help="AUC/ACC of an external score file")
    p.add_argument("--scores", help="CSV with label and score columns")
    p.add_argument("--frame-scores", help="CSV video_id,frame,score (averaged per video)")
    p.add_argument("--labels", help="JSON map video_id -> label, for --frame-scores")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_score_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except (IdMinerError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"idminer {args.command}: error: {msg}\n")
        return 2
