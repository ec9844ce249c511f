"""Report builders shared by the CLI: schedule tables, pair loading and benchmark grids."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .bridge import WaveformPair
from .denoiser import CountingDenoiser
from .dsp import AudioBuffer, WavError, brickwall, read_manifest, read_wav
from .metrics import AGGREGATE_FIELDS, aggregate, evaluate_pair
from .objective import AuxLossConfig, mag_loss
from .samplers import InferenceGrid, sample
from .schedule import ScheduleParams, coefficients


class DataError(ValueError):
    """Missing or inconsistent input files."""


SCHEDULE_FIELDS = ("t", "a_t", "b_t", "c_t", "sigma2", "sigma_bar2", "a_plus_b", "lf_energy_bridge",
                   "lf_energy_vp")


def schedule_table(sched: ScheduleParams, x0: np.ndarray, cutoff_hz: float, rate: float = 48000,
                   points: int = 1001, reference: Optional[ScheduleParams] = None) -> Dict[str, np.ndarray]:
    """Per-t coefficients plus the low-band energy of two mean trajectories.

    The bridge runs from ``x0`` to its ideal low-pass copy; the reference is a
    VP diffusion whose mean is ``alpha_t * x0``. Energies are relative to t = 0.
    """
    if points < 2:
        raise ValueError("need at least two grid points")
    reference = reference or ScheduleParams.default("vp")
    t = np.linspace(0.0, 1.0, points)
    co = coefficients(sched, t)
    x0 = np.asarray(x0, dtype=float)
    low0 = brickwall(x0, cutoff_hz, rate)
    # the degraded endpoint shares x0's low band exactly, so the band is linear in (a, b)
    e00 = float(np.dot(low0, low0))
    if e00 == 0:
        raise ValueError("the signal has no energy below the cutoff")
    lowT = brickwall(low0, cutoff_hz, rate)
    e0T, eTT = float(np.dot(low0, lowT)), float(np.dot(lowT, lowT))
    a, b = co.a_t, co.b_t
    bridge_energy = (a * a * e00 + 2 * a * b * e0T + b * b * eTT) / e00
    vp_energy = reference.alpha(t) ** 2
    return {
        "t": t, "a_t": a, "b_t": b, "c_t": co.c_t, "sigma2": co.sigma2_t, "sigma_bar2": co.sigma_bar2_t,
        "a_plus_b": a + b, "lf_energy_bridge": bridge_energy, "lf_energy_vp": vp_energy,
    }


def write_table(path, columns: Mapping[str, Sequence], fields: Sequence[str]):
    rows = zip(*(columns[f] for f in fields))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path) -> Dict[str, list]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: [r[k] for r in rows] for k in rows[0]}


def to_target_rate(audio: AudioBuffer, target_rate: int) -> np.ndarray:
    """Bring an input recording to the model rate; already-upsampled inputs pass through."""
    if audio.rate == target_rate:
        return audio.samples
    g = math.gcd(int(audio.rate), int(target_rate))
    out = signal.resample_poly(audio.samples, target_rate // g, audio.rate // g)
    n = int(round(audio.samples.size * target_rate / audio.rate))
    return np.pad(out, (0, max(0, n - out.size)))[:n]


@dataclass
class PairItem:
    name: str
    pair: WaveformPair


def load_pairs(manifest) -> List[PairItem]:
    """Read every (degraded, reference) pair listed in a degradation manifest."""
    manifest = Path(manifest)
    try:
        records = read_manifest(manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from exc
    if not records:
        raise DataError(f"manifest {manifest} lists no files")
    root = manifest.parent
    items = []
    for r in records:
        lr_path, hr_path = root / r.path, root / r.reference
        for p in (lr_path, hr_path):
            if not p.exists():
                raise DataError(f"{p} listed in {manifest} does not exist")
        try:
            lr, hr = read_wav(lr_path), read_wav(hr_path)
        except WavError as exc:
            raise DataError(str(exc)) from exc
        if lr.rate != hr.rate or lr.samples.size != hr.samples.size:
            raise DataError(f"{lr_path} and {hr_path} differ in rate or length")
        items.append(PairItem(Path(r.path).stem, WaveformPair(hr.samples, lr.samples, hr.rate, r.input_rate,
                                                              r.input_rate / 2)))
    return items


BENCHMARK_FIELDS = ("label", "schedule", "sampler", "steps", "nfe") + AGGREGATE_FIELDS[:-1] + ("l_mag", "n")


def spectral_mag_loss(est: np.ndarray, ref: np.ndarray, cfg: AuxLossConfig) -> float:
    return float(mag_loss(np.atleast_2d(est), np.atleast_2d(ref), cfg).value)


def evaluate_estimates(estimates: Sequence[np.ndarray], pairs: Sequence[WaveformPair],
                       mag_cfg: AuxLossConfig) -> Dict[str, float]:
    reports = [evaluate_pair(y, p.x_hr, p.cutoff_hz, p.target_rate) for y, p in zip(estimates, pairs)]
    out = aggregate(reports)
    out["l_mag"] = float(np.mean([spectral_mag_loss(y, p.x_hr, mag_cfg) for y, p in zip(estimates, pairs)]))
    return out


def benchmark(models: Mapping[str, Tuple[object, float, ScheduleParams]], pairs: Sequence[WaveformPair],
              grids: Iterable[Tuple[int, InferenceGrid]], seed: int = 0,
              mag_cfg: AuxLossConfig = AuxLossConfig()) -> List[dict]:
    """One row per (model, grid) plus a passthrough row; metrics are test-set means.

    ``l_mag`` is the multi-resolution magnitude loss of the estimate against the reference.
    """
    grids = list(grids)
    rows = [dict(label="passthrough", schedule="-", sampler="-", steps=0, nfe=0,
                 **evaluate_estimates([p.x_lr for p in pairs], pairs, mag_cfg))]
    for label, (model, scale, sched) in models.items():
        for steps, grid in grids:
            counter = CountingDenoiser(model)
            estimates = []
            for i, p in enumerate(pairs):
                rng = np.random.default_rng([seed, i])
                estimates.append(sample(counter, p.x_lr, scale, grid, sched, rng))
            rows.append(dict(label=label, schedule=sched.kind.value, sampler=grid.kind.value, steps=steps,
                             nfe=counter.calls // len(pairs), **evaluate_estimates(estimates, pairs, mag_cfg)))
    return rows


def write_rows(path, rows: Sequence[dict], fields: Sequence[str] = BENCHMARK_FIELDS):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fields})
