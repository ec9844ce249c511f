"""Command-line experiment harness.

Each subcommand reads the TOML config (``--config``), applies flag
overrides and writes WAV, CSV, JSON or checkpoint files. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import checkpoint as ckpt_io
from . import config as config_mod
from . import experiments as ex
from . import training
from .bridge import DegenerateInputError, NumericalError, estimate_scale
from .config import Config, ConfigError
from .corpus import SynthConfig, synth_utterance
from .denoiser import CountingDenoiser
from .dsp import (AudioBuffer, DegradationRecord, DegradationSpec, FilterFamily, WavError, degrade, random_spec,
                  read_wav, write_manifest, write_wav)
from .metrics import AGGREGATE_FIELDS, aggregate, evaluate_pair
from .objective import make_final_objective
from .samplers import grid_from_options, sample

log = logging.getLogger("wavebridge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CORPUS_MANIFEST = "manifest.csv"


def _load_config(args) -> Config:
    cfg = config_mod.load(args.config) if args.config else Config().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _read_corpus_manifest(path: Path) -> List[Path]:
    if not path.exists():
        raise ex.DataError(f"manifest {path} does not exist")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ex.DataError(f"manifest {path} lists no files")
    if "path" not in rows[0]:
        raise ex.DataError(f"manifest {path} has no 'path' column")
    files = [path.parent / r["path"] for r in rows]
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        raise ex.DataError(f"missing files: {', '.join(missing[:5])}")
    return files


def _pairs(manifest) -> list:
    return [item.pair for item in ex.load_pairs(manifest)]


def _grid(args, cfg: Config):
    sampler = args.sampler or cfg.sampler.kind
    t_min = cfg.sampler.t_min if args.t_min is None else args.t_min
    if args.preset is not None:
        return grid_from_options(preset=args.preset, sampler=args.sampler, t_min=t_min)
    steps = args.steps if args.steps is not None else cfg.sampler.steps
    if steps is None:
        return grid_from_options(preset=cfg.sampler.preset, sampler=args.sampler, t_min=t_min)
    return grid_from_options(steps=steps, sampler=sampler, t_min=t_min)


def _scale(cfg: Config, pairs) -> float:
    if cfg.train.estimate_scale:
        return estimate_scale(pairs)
    return cfg.train.scale_factor


def cmd_synth(args, cfg: Config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scfg = SynthConfig(rate=cfg.data.target_rate, duration=args.duration)
    with open(out / CORPUS_MANIFEST, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path"])
        for i in range(args.count):
            name = f"utt{i:05d}.wav"
            write_wav(out / name, synth_utterance(np.random.default_rng([cfg.seed, i]), scfg))
            w.writerow([name])
    log.info("wrote %d utterances to %s", args.count, out)
    return EXIT_OK


def degradation_spec(cfg: Config, index: int, input_rate: Optional[int] = None, family: Optional[str] = None,
                     order: Optional[int] = None) -> DegradationSpec:
    """Spec for corpus item ``index``; drawn from ``(seed, index)`` unless pinned by flags."""
    d = cfg.data
    spec = random_spec(np.random.default_rng([cfg.seed, index]), d.min_input_rate, d.max_input_rate,
                       [FilterFamily(f) for f in d.families])
    if input_rate is None and family is None and order is None:
        return spec
    return DegradationSpec(family or spec.family, order or spec.order, input_rate or spec.input_rate)


def cmd_degrade(args, cfg: Config) -> int:
    sources = _read_corpus_manifest(Path(args.manifest))
    out = Path(args.out)
    (out / "lr").mkdir(parents=True, exist_ok=True)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    d = cfg.data
    records = []
    for i, src in enumerate(sources):
        try:
            audio = read_wav(src)
        except WavError as exc:
            raise ex.DataError(str(exc)) from exc
        if audio.rate != d.target_rate:
            audio = AudioBuffer(ex.to_target_rate(audio, d.target_rate), d.target_rate)
        spec = degradation_spec(cfg, i, args.input_rate, args.family, args.order)
        pair = degrade(audio, spec)
        name = f"{i:05d}_{src.stem}.wav"
        write_wav(out / "lr" / name, AudioBuffer(pair.x_lr, d.target_rate))
        write_wav(out / "hr" / name, AudioBuffer(pair.x_hr, d.target_rate))
        records.append(DegradationRecord(f"lr/{name}", f"hr/{name}", spec.input_rate, spec.family.value,
                                         spec.order, cfg.seed))
    write_manifest(out / CORPUS_MANIFEST, records)
    log.info("degraded %d files into %s", len(records), out)
    return EXIT_OK


def cmd_train(args, cfg: Config) -> int:
    pairs = _pairs(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "model.bsrk"
    t = cfg.train
    steps = t.steps if args.steps is None else args.steps
    if args.resume and ckpt_path.exists():
        run = training.TrainingRun.from_checkpoint(ckpt_io.load(ckpt_path))
        log.info("resuming from step %d", run.step)
    else:
        run = training.TrainingRun.fresh(cfg.model.wavenet(), _scale(cfg, pairs), cfg.schedule.params(),
                                         cfg.seed, t.lr)
    training.train(run, pairs, steps, batch_size=t.batch_size, window_len=t.window_len, t_min=t.t_min, lr=t.lr,
                   lr_schedule=args.lr_schedule, dtype=np.dtype(t.dtype), log_path=out / "train_log.csv",
                   checkpoint_path=ckpt_path, checkpoint_every=t.checkpoint_every, log_every=t.log_every,
                   config=cfg.to_dict())
    return EXIT_OK


def cmd_finetune(args, cfg: Config) -> int:
    base_path = Path(args.checkpoint)
    if not base_path.exists():
        raise ex.DataError(f"checkpoint {base_path} does not exist")
    pairs = _pairs(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "model.bsrk"
    t = cfg.train
    lr = t.finetune_lr or t.lr
    steps = t.finetune_steps if args.steps is None else args.steps
    if args.resume and ckpt_path.exists():
        run = training.TrainingRun.from_checkpoint(ckpt_io.load(ckpt_path))
    else:
        run = training.start_finetune(training.TrainingRun.from_checkpoint(ckpt_io.load(base_path)), cfg.seed, lr)
    objective = make_final_objective(run.scale, cfg.aux.loss_config(cfg.data.target_rate))
    training.train(run, pairs, steps, batch_size=t.batch_size, window_len=t.window_len, t_min=t.t_min, lr=lr,
                   lr_schedule=args.lr_schedule, objective=objective, dtype=np.dtype(t.dtype),
                   log_path=out / "train_log.csv", checkpoint_path=ckpt_path, checkpoint_every=t.checkpoint_every,
                   log_every=t.log_every, config=cfg.to_dict())
    return EXIT_OK


def cmd_sample(args, cfg: Config) -> int:
    model, scale, sched = training.load_model(args.checkpoint)
    grid = _grid(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rate = cfg.data.target_rate
    for i, path in enumerate(args.inputs):
        path = Path(path)
        if not path.exists():
            raise ex.DataError(f"{path} does not exist")
        try:
            audio = read_wav(path)
        except WavError as exc:
            raise ex.DataError(str(exc)) from exc
        counter = CountingDenoiser(model)
        x_lr = ex.to_target_rate(audio, rate)
        y = sample(counter, x_lr, scale, grid, sched, np.random.default_rng([cfg.seed, i]))
        write_wav(out / path.name, AudioBuffer(y, rate))
        print(f"{path.name}\tnfe={counter.calls}")
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    items = ex.load_pairs(args.manifest)
    rows, reports = [], []
    for item in items:
        p = item.pair
        if args.estimates:
            est_path = Path(args.estimates) / f"{item.name}.wav"
            if not est_path.exists():
                raise ex.DataError(f"no estimate for {item.name} in {args.estimates}")
            est = read_wav(est_path).samples
        else:
            est = p.x_lr
        if est.size != p.x_hr.size:
            raise ex.DataError(f"{item.name}: estimate has {est.size} samples, reference {p.x_hr.size}")
        r = evaluate_pair(est, p.x_hr, p.cutoff_hz, p.target_rate)
        reports.append(r)
        rows.append(dict(name=item.name, **vars(r)))
    summary = aggregate(reports)
    out_csv = Path(args.out_csv)
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    Path(args.out_json).write_text(json.dumps({k: summary[k] for k in AGGREGATE_FIELDS}, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_inspect_schedule(args, cfg: Config) -> int:
    sched = cfg.schedule.params()
    x0 = synth_utterance(np.random.default_rng(cfg.seed), SynthConfig(rate=cfg.data.target_rate)).samples
    table = ex.schedule_table(sched, x0, args.cutoff, cfg.data.target_rate, args.points)
    ex.write_table(args.out, table, ex.SCHEDULE_FIELDS)
    drift = float(np.max(np.abs(table["lf_energy_bridge"] - 1.0)))
    print(f"bridge low-band energy drift {drift:.3e}; VP reference at t=1 keeps {table['lf_energy_vp'][-1]:.3e}")
    return EXIT_OK


def cmd_benchmark(args, cfg: Config) -> int:
    pairs = _pairs(args.manifest)
    models = {}
    for spec in args.checkpoint:
        label, sep, path = spec.partition("=")
        if not sep:
            label, path = Path(spec).parent.name or spec, spec
        if not Path(path).exists():
            raise ex.DataError(f"checkpoint {path} does not exist")
        models[label] = training.load_model(path)
    sampler = args.sampler or cfg.sampler.kind
    t_min = cfg.sampler.t_min if args.t_min is None else args.t_min
    grids = [(n, grid_from_options(steps=n, sampler=sampler, t_min=t_min)) for n in args.steps]
    rows = ex.benchmark(models, pairs, grids, seed=cfg.seed, mag_cfg=cfg.aux.loss_config(cfg.data.target_rate))
    ex.write_rows(args.out, rows)
    for r in rows:
        print(f"{r['label']:>14} {r['sampler']:>5} {r['steps']:>3}  lsd={r['lsd']:.3f} lf={r['lsd_lf']:.3f} "
              f"hf={r['lsd_hf']:.3f} l_mag={r['l_mag']:.3f}")
    return EXIT_OK


def _add_grid_flags(p: argparse.ArgumentParser, multi_steps: bool = False):
    if multi_steps:
        p.add_argument("--steps", type=int, nargs="+", default=[1, 2, 4, 8], help="sampling step counts")
    else:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--steps", type=int, help="uniform grid with N steps")
        g.add_argument("--preset", type=int, choices=(1, 2, 4), help="fixed grid with this many denoiser calls")
    p.add_argument("--sampler", choices=("ode1", "sde1", "sde2"))
    p.add_argument("--t-min", type=float, dest="t_min")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavebridge", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML config file (defaults are used when omitted)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic harmonic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=250)
    p.add_argument("--duration", type=float, default=0.7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", help="low-pass and resample a corpus into training pairs")
    p.add_argument("--manifest", required=True, help="corpus manifest.csv with a 'path' column")
    p.add_argument("--out", required=True)
    p.add_argument("--input-rate", type=int, dest="input_rate", help="fixed input rate instead of a random one")
    p.add_argument("--family", choices=[f.value for f in FilterFamily])
    p.add_argument("--order", type=int)
    p.set_defaults(func=cmd_degrade)

    for name, fn, text in (("train", cmd_train, "train with the bridge loss"),
                           ("finetune", cmd_finetune, "fine-tune with the auxiliary losses")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--manifest", required=True, help="degradation manifest")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--steps", type=int)
        p.add_argument("--resume", action="store_true")
        p.add_argument("--lr-schedule", choices=("constant", "cosine"), default="constant", dest="lr_schedule")
        if name == "finetune":
            p.add_argument("--checkpoint", required=True, help="base model")
        p.set_defaults(func=fn)

    p = sub.add_parser("sample", help="super-resolve WAV files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    _add_grid_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metrics of estimates against references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--estimates", help="directory of estimates named like the degraded files (passthrough if omitted)")
    p.add_argument("--out-csv", required=True, dest="out_csv")
    p.add_argument("--out-json", required=True, dest="out_json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-schedule", help="tabulate schedule coefficients and mean-trajectory band energy")
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=1001)
    p.add_argument("--cutoff", type=float, default=4000.0, help="low-band edge in Hz")
    p.set_defaults(func=cmd_inspect_schedule)

    p = sub.add_parser("benchmark", help="model x steps grid of test-set metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", action="append", required=True, help="LABEL=PATH, repeatable")
    p.add_argument("--out", required=True)
    _add_grid_flags(p, multi_steps=True)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ex.DataError, WavError, ckpt_io.CheckpointError, DegenerateInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # invalid flag combinations surface as ValueError from the library
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
