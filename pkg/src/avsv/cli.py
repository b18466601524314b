"""Command-line front end: gen-data, trials, train, eval and verify.

Exit codes: 0 success, 2 config error, 3 data error, 4 capability error,
5 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from avsv.checkpoint import (
    encoder_from_dict,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    topology_from_dict,
)
from avsv.data.features import read_wav, wav_to_logmel
from avsv.data.protocol import CONDITIONS, read_trials, sample_trials, split_train_val, with_condition, write_trials
from avsv.data.sample import AVSample
from avsv.data.storage import load_dataset, save_dataset
from avsv.data.synth import gen_synthetic
from avsv.errors import AVSVError, CapabilityError, ConfigError, DataError
from avsv.evaluation import (
    FUSION,
    SIDES,
    check_capable,
    compute_eer,
    cosine,
    fuse_scores,
    native_condition,
    report_table,
    score_trials,
    side_embedding,
    write_scores,
)
from avsv.models.config import MID_FUSION, MULTI_VIEW, UNIMODAL_A, UNIMODAL_V
from avsv.models.zoo import build_model
from avsv.runconfig import load_run_config
from avsv.trainer import train

log = logging.getLogger("avsv")

TOPOLOGY_FLAGS = {
    "unimodal-a": UNIMODAL_A,
    "unimodal-v": UNIMODAL_V,
    "midfusion": MID_FUSION,
    "multiview": MULTI_VIEW,
}


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    if getattr(args, "threads", None) is not None:
        overrides.append(f"run.threads={args.threads}")
    return load_run_config(args.config, overrides)


def _path(value, key: str) -> Path:
    if not value:
        raise ConfigError(f"no path given for {key}")
    return Path(value)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _path(args.out or cfg["paths.data"], "paths.data")
    ds = gen_synthetic(cfg.synth(), threads=cfg["run.threads"])
    save_dataset(ds, out)
    missing = sum(r.missing_face for r in ds.manifest.records)
    print(f"wrote {out}: {ds.manifest.speakers} speakers, {len(ds)} utterances, {missing} without a face")
    return 0


def cmd_trials(args) -> int:
    cfg = _config(args)
    ds = load_dataset(_path(args.data or cfg["paths.data"], "paths.data"))
    out = _path(args.out or cfg["paths.trials"], "paths.trials")
    split = args.split or cfg["eval.trial_split"]
    if split not in ("val", "all"):
        raise ConfigError(f"eval.trial_split: expected val or all, got {split!r}")
    manifest = ds.subset(split_train_val(ds.manifest)[1]).manifest if split == "val" else ds.manifest
    conditions = _conditions(args.conditions, cfg)
    base = sample_trials(manifest, cfg["run.seed"])
    trials = [t for c in conditions for t in with_condition(base, c)]
    write_trials(trials, out)
    print(f"wrote {out}: {len(base)} trials x {len(conditions)} conditions")
    return 0


def _conditions(flag, cfg) -> list:
    conds = [c.strip() for c in flag.split(",")] if flag else cfg.conditions()
    bad = [c for c in conds if c not in CONDITIONS]
    if bad:
        raise ConfigError(f"eval.conditions: unknown condition(s) {bad}; expected {list(CONDITIONS)}")
    return conds


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_dataset(_path(args.data or cfg["paths.data"], "paths.data"))
    out = _path(args.out or cfg["paths.out"], "paths.out")
    tr, va = split_train_val(ds.manifest)
    train_set, val_set = ds.subset(tr), ds.subset(va)
    train_cfg = cfg.train()
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        model = build_model(topology_from_dict(resume.topology), encoder_from_dict(resume.audio_cfg),
                            encoder_from_dict(resume.video_cfg), seed=cfg["run.seed"])
        if args.topology and TOPOLOGY_FLAGS[args.topology] != model.kind:
            raise CapabilityError(f"--topology {args.topology} does not match the {model.kind} checkpoint")
    else:
        if not args.topology:
            raise ConfigError("--topology is required unless --resume is given")
        topo = cfg.topology(TOPOLOGY_FLAGS[args.topology], train_set.manifest.speakers)
        model = build_model(topo, cfg.audio_encoder(), cfg.video_encoder(ds.manifest.frame_shape),
                            seed=cfg["run.seed"])
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.csv")
    ckpt, history = train(model, train_set, val_set, train_cfg, resume=resume, log_path=log_path,
                          threads=cfg["run.threads"], on_epoch=lambda c: save_checkpoint(c, out))
    save_checkpoint(ckpt, out)
    last = history[-1] if history else None
    summary = f"train {last.train_loss:.4f} val {last.val_loss:.4f} lr {last.lr:.6g}" if last else "no epochs run"
    print(f"wrote {out}: {model.kind}, epoch {ckpt.epoch}, {summary}")
    return 0


def _parse_recipe(recipe: str, models: dict) -> list:
    """``a+v+av`` or ``mv:AA+mv:VV`` -> list of (tag, condition)."""
    parts = []
    for item in recipe.split("+"):
        tag, _, cond = item.strip().partition(":")
        if tag not in models:
            raise ConfigError(f"fusion recipe {recipe!r} names unknown system {tag!r}")
        cond = cond or native_condition(models[tag])
        if not cond:
            raise ConfigError(f"fusion recipe {recipe!r}: give a condition for {models[tag].kind} system {tag!r}")
        parts.append((tag, cond))
    return parts


def cmd_eval(args) -> int:
    cfg = _config(args)
    ds = load_dataset(_path(args.data or cfg["paths.data"], "paths.data"))
    trials = read_trials(_path(args.trials or cfg["paths.trials"], "paths.trials"))
    out = _path(args.out or cfg["paths.out"], "paths.out")
    models = {}
    for spec in args.checkpoints:
        tag, sep, path = spec.partition("=")
        if not sep or not tag:
            raise ConfigError(f"--checkpoints expects tag=path, got {spec!r}")
        if tag in models:
            raise ConfigError(f"system tag {tag!r} given twice")
        models[tag] = model_from_checkpoint(load_checkpoint(path))
    conds = _conditions(args.conditions, cfg) if args.conditions else None
    if conds is not None:
        trials = [t for t in trials if t.condition in conds]
        missing = [c for c in conds if c not in {t.condition for t in trials}]
        if missing:
            raise DataError(f"trial list has no trials for condition(s) {missing}")
    if not trials:
        raise DataError("no trials to score")
    sets = score_trials(models, trials, ds, threads=cfg["run.threads"])
    for recipe in args.fuse or []:
        parts = _parse_recipe(recipe, models)
        for tag, cond in parts:
            if (tag, cond) not in sets:
                check_capable(models[tag], cond, tag)
                raise DataError(f"fusion recipe {recipe!r}: no {cond} trials were scored for {tag!r}")
        name = "+".join(f"{t}:{c}" for t, c in parts)
        sets[(name, FUSION)] = fuse_scores([sets[p] for p in parts], system=name)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for (system, cond), s in sets.items():
        fname = f"scores_{system.replace(':', '-')}_{cond}.txt"
        write_scores(s, out / fname)
        results[(system, cond)] = compute_eer(s)
    text, csv_text = report_table(results)
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(csv_text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _load_side(ref: str, ds, frame_shape) -> AVSample:
    if ref.lower().endswith(".wav"):
        samples, rate = read_wav(ref)
        feats = wav_to_logmel(samples, rate)
        # no face available: the single zero frame convention
        return AVSample(-1, -1, -1, feats, np.zeros((1,) + tuple(frame_shape), dtype=np.float32), True)
    try:
        utt = int(ref)
    except ValueError as exc:
        raise ConfigError(f"sample reference {ref!r} is neither an utterance id nor a .wav file") from exc
    if ds is None:
        raise ConfigError(f"utterance id {utt} needs --data")
    by_id = ds.by_id()
    if utt not in by_id:
        raise DataError(f"utterance {utt} is not in the dataset")
    return by_id[utt]


def cmd_verify(args) -> int:
    cfg = _config(args)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    condition = args.condition
    if condition not in CONDITIONS:
        raise ConfigError(f"unknown condition {condition!r}; expected one of {list(CONDITIONS)}")
    check_capable(model, condition)
    data = args.data or cfg["paths.data"]
    ds = load_dataset(data) if data else None
    enrol = _load_side(args.enrol, ds, model.video_cfg.frame_shape)
    test = _load_side(args.test, ds, model.video_cfg.frame_shape)
    e_side, t_side = SIDES[condition]
    score = cosine(side_embedding(model, enrol, e_side), side_embedding(model, test, t_side))
    threshold = cfg["eval.threshold"] if args.threshold is None else args.threshold
    decision = "accept" if score >= threshold else "reject"
    print(f"score {score:.6f}")
    print(f"decision {decision} (threshold {threshold:g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat 'section.key = value' config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, help="shortcut for run.seed")
        p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
        return p

    p = common(sub.add_parser("gen-data", help="generate the synthetic corpus"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("trials", help="sample a trial list"))
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--split", choices=("val", "all"))
    p.add_argument("--conditions", help="comma-separated conditions")
    p.set_defaults(func=cmd_trials)

    p = common(sub.add_parser("train", help="train one topology"))
    p.add_argument("--data")
    p.add_argument("--topology", choices=sorted(TOPOLOGY_FLAGS))
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="CSV loss log (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="score trials, fuse and report EER"))
    p.add_argument("--checkpoints", nargs="+", required=True, metavar="TAG=PATH")
    p.add_argument("--data")
    p.add_argument("--trials")
    p.add_argument("--conditions", help="comma-separated subset of the trial conditions")
    p.add_argument("--fuse", action="append", metavar="RECIPE", help="e.g. a+v+av or mv:AA+mv:VV")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("verify", help="score one enrol/test pair"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--enrol", required=True, help="utterance id or .wav file")
    p.add_argument("--test", required=True, help="utterance id or .wav file")
    p.add_argument("--condition", default="AA")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except AVSVError as exc:
        print(f"avsv {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"avsv {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
