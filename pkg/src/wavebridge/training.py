"""Training and fine-tuning loops with CSV logging and resumable checkpoints."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint as ckpt_io
from .bridge import Objective, WaveformPair, bridge_objective, training_step
from .denoiser import TinyWaveNet, WaveNetConfig
from .optim import Adam, AdamState
from .schedule import ScheduleKind, ScheduleParams

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "L_bridge", "L_mag", "L_phase")


def random_crops(pairs: Sequence[WaveformPair], batch: int, window: int,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw ``batch`` aligned windows; utterances shorter than ``window`` set the crop length."""
    window = min(window, min(p.x_hr.size for p in pairs))
    idx = rng.integers(len(pairs), size=batch)
    hr, lr = [], []
    for i in idx:
        p = pairs[i]
        start = int(rng.integers(0, p.x_hr.size - window + 1))
        hr.append(p.x_hr[start:start + window])
        lr.append(p.x_lr[start:start + window])
    return np.stack(hr), np.stack(lr)


def learning_rate(step: int, total: int, base: float, schedule: str = "constant", floor: float = 0.05) -> float:
    """Constant, or cosine decay from ``base`` to ``floor * base`` over ``total`` steps."""
    if schedule == "constant" or total <= 0:
        return base
    if schedule != "cosine":
        raise ValueError(f"unknown learning-rate schedule {schedule!r}")
    frac = min(step / total, 1.0)
    return base * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * frac)))


@dataclass
class TrainingRun:
    model: TinyWaveNet
    optimizer: Adam
    rng: np.random.Generator
    scale: float
    schedule: ScheduleParams
    step: int = 0
    phase: str = "bridge"
    meta: Optional[Dict[str, Any]] = None

    @classmethod
    def fresh(cls, model_cfg: WaveNetConfig, scale: float, schedule: ScheduleParams, seed: int,
              lr: float, phase: str = "bridge") -> "TrainingRun":
        model = TinyWaveNet(model_cfg, seed=seed)
        return cls(model, Adam(model.params, lr=lr), np.random.default_rng([seed, 1]), scale, schedule,
                   phase=phase)

    def to_checkpoint(self, config: Optional[Dict[str, Any]] = None) -> ckpt_io.Checkpoint:
        tensors = dict(self.model.params)
        st = self.optimizer.state
        tensors.update({f"adam.m.{k}": v for k, v in st.m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in st.v.items()})
        cfg = self.model.config
        header = {
            "kind": "wavebridge-model",
            "phase": self.phase,
            "step": self.step,
            "scale": self.scale,
            "schedule": {"kind": self.schedule.kind.value, "beta0": self.schedule.beta0,
                         "beta1": self.schedule.beta1},
            "model": {"channels": cfg.channels, "dilations": list(cfg.dilations), "kernel": cfg.kernel,
                      "embed_dim": cfg.embed_dim},
            "adam": {"step": st.step, "skipped": st.skipped, "lr": self.optimizer.lr},
            "rng": self.rng.bit_generator.state,
            "config": config or {},
            "meta": self.meta or {},
        }
        return ckpt_io.Checkpoint(tensors, header)

    @classmethod
    def from_checkpoint(cls, ck: ckpt_io.Checkpoint) -> "TrainingRun":
        h = ck.header
        try:
            mcfg = WaveNetConfig(h["model"]["channels"], tuple(h["model"]["dilations"]), h["model"]["kernel"],
                                 h["model"]["embed_dim"])
            sched = ScheduleParams(ScheduleKind(h["schedule"]["kind"]), h["schedule"]["beta0"],
                                   h["schedule"]["beta1"])
            params = {k: v.astype(np.float64) for k, v in ck.tensors.items() if not k.startswith("adam.")}
            model = TinyWaveNet(mcfg, params=params)
            m = {k[len("adam.m."):]: v.astype(np.float64) for k, v in ck.tensors.items() if k.startswith("adam.m.")}
            v = {k[len("adam.v."):]: v.astype(np.float64) for k, v in ck.tensors.items() if k.startswith("adam.v.")}
            opt = Adam(model.params, lr=h["adam"]["lr"])
            opt.state = AdamState(h["adam"]["step"], m, v, h["adam"]["skipped"])
            rng = np.random.default_rng()
            rng.bit_generator.state = h["rng"]
            return cls(model, opt, rng, float(h["scale"]), sched, int(h["step"]), h["phase"], h.get("meta"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ckpt_io.CheckpointError(f"checkpoint is missing or has malformed fields: {exc}") from exc


def load_model(path) -> Tuple[TinyWaveNet, float, ScheduleParams]:
    """Model, scale factor and schedule stored in a checkpoint."""
    run = TrainingRun.from_checkpoint(ckpt_io.load(path))
    return run.model, run.scale, run.schedule


def _open_log(path: Optional[Path], resume: bool):
    if path is None:
        return None, None
    path = Path(path)
    fresh = not (resume and path.exists())
    fh = open(path, "w" if fresh else "a", newline="")
    writer = csv.writer(fh)
    if fresh:
        writer.writerow(LOG_FIELDS)
    return fh, writer


def train(run: TrainingRun, pairs: Sequence[WaveformPair], total_steps: int, *, batch_size: int = 4,
          window_len: int = 32768, t_min: float = 1e-5, lr: float = 5e-5, lr_schedule: str = "constant",
          objective: Objective = bridge_objective, dtype=np.float32, log_path=None, checkpoint_path=None,
          checkpoint_every: int = 1000, log_every: int = 500, config: Optional[Dict[str, Any]] = None) -> TrainingRun:
    """Advance ``run`` until ``run.step == total_steps``.

    One CSV row is written per step. A checkpoint is written every
    ``checkpoint_every`` steps and at the end, so an interrupted run can resume.
    """
    if not pairs:
        raise ValueError("no training pairs")
    fh, writer = _open_log(log_path, resume=run.step > 0)
    try:
        while run.step < total_steps:
            run.optimizer.lr = learning_rate(run.step, total_steps, lr, lr_schedule)
            x_hr, x_lr = random_crops(pairs, batch_size, window_len, run.rng)
            loss, parts, grads = training_step(x_hr, x_lr, run.scale, run.schedule, run.model, run.rng,
                                               t_min=t_min, objective=objective, dtype=dtype)
            run.optimizer.step(grads)
            run.step += 1
            if writer is not None:
                writer.writerow([run.step, parts.get("bridge", loss), parts.get("mag", 0.0), parts.get("phase", 0.0)])
            if run.step % log_every == 0:
                log.info("%s step %d loss %.5f", run.phase, run.step, loss)
            if checkpoint_path is not None and run.step % checkpoint_every == 0:
                ckpt_io.save(checkpoint_path, run.to_checkpoint(config))
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_path is not None:
        ckpt_io.save(checkpoint_path, run.to_checkpoint(config))
    return run


def start_finetune(base: TrainingRun, seed: int, lr: float) -> TrainingRun:
    """Fresh optimizer and generator on top of trained weights; steps count from zero."""
    model = TinyWaveNet(base.model.config, params=dict(base.model.params))
    meta = dict(base.meta or {})
    meta["base_step"] = base.step
    return TrainingRun(model, Adam(model.params, lr=lr), np.random.default_rng([seed, 2]), base.scale,
                       base.schedule, 0, "finetune", meta)


def read_log(path) -> Dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in LOG_FIELDS}
