"""Seeded experiment cells and the sweep runner built on them.

A cell simulates one scenario, extracts the SOI under one setting and
evaluates the result.  Three experiments are provided:

* ``block_length`` -- CSV block length versus iSIR and SOI attenuation spread;
* ``pilot_corruption`` -- SDR as oracle-pilot frames are swapped for
  interferer frames;
* ``outcome_counts`` -- outcome categories without pilot, with an oracle
  pilot, with a partly corrupted pilot, and with that pilot plus deflation.
"""
from __future__ import annotations

import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import assess, deflation, ive, metrics, pilot, simkit
from .configio import write_kv
from .stft import FrameSpec, analyze, synthesize
from .wavio import write_wav

DEFAULT_FRAMES = FrameSpec(1024, 200, "hamming")
EXPERIMENTS = ("block_length", "pilot_corruption", "outcome_counts")
CONDITIONS = ("no_pilot", "oracle_pilot", "corrupted_pilot", "corrupted_pilot_deflation")


def mic1_references(mixture: simkit.Mixture, soi: int = 0) -> np.ndarray:
    """First-microphone stems, SOI first, shape ``(n_src, n)``."""
    order = [soi] + [j for j in range(len(mixture.stems)) if j != soi]
    return np.stack([mixture.stems[j][:, 0] for j in order])


def to_time(spec_like, X, n: int) -> np.ndarray:
    """Synthesize a single-channel ``(K, L)`` estimate and trim to ``n`` samples."""
    return synthesize(X.with_data(spec_like[:, :, None]))[:n, 0]


def corr_argmax(y: np.ndarray, mixture: simkit.Mixture) -> int:
    """Index of the speaker stem (first mic) most correlated with ``y``."""
    c = []
    for j in range(mixture.scenario.n_speakers):
        s = mixture.stems[j][:, 0]
        den = np.linalg.norm(y) * np.linalg.norm(s)
        c.append(abs(y @ s) / den if den > 0 else 0.0)
    return int(np.argmax(c))


def _with(cfg: ive.SolverConfig, **kw) -> ive.SolverConfig:
    base = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    base.update(kw)
    return ive.SolverConfig(**base)


def masks(mixture: simkit.Mixture, spec: FrameSpec, soi: int, thro: float):
    """Oracle masks and dominance ratios of the SOI and of the strongest rival."""
    roles = mixture.roles(soi)
    rival = 1 - soi if soi in (0, 1) else 0
    return (
        pilot.oracle_mask(roles, spec, thro),
        pilot.oracle_mask(mixture.roles(rival), spec, thro),
        pilot.dominance_ratio(roles, spec),
        pilot.dominance_ratio(mixture.roles(rival), spec),
    )


def targeting_cell(scenario, soi: int, solver: ive.SolverConfig, spec=DEFAULT_FRAMES, thro=2.0) -> dict:
    """Whether piloted and unpiloted runs pick the designated SOI."""
    m = simkit.simulate(scenario)
    X = analyze(m.signal, spec, scenario.sample_rate)
    n = m.signal.shape[0]
    mask = pilot.oracle_mask(m.roles(soi), spec, thro)
    blind = ive.run(X, _with(solver, pilot=None))
    guided = ive.run(X, _with(solver, pilot=pilot.build_pilot(X, mask)))
    return {
        "blind_hit": corr_argmax(to_time(blind.image, X, n), m) == soi,
        "piloted_hit": corr_argmax(to_time(guided.image, X, n), m) == soi,
    }


def corruption_cell(scenario, fraction: float, solver, spec=DEFAULT_FRAMES, thro=2.0, soi=0, out_dir=None) -> dict:
    m = simkit.simulate(scenario)
    X = analyze(m.signal, spec, scenario.sample_rate)
    n = m.signal.shape[0]
    om, im, rs, ri = masks(m, spec, soi, thro)
    mask = pilot.corrupt_mask(om, fraction, im, rs, ri, seed=scenario.seed)
    res = ive.run(X, _with(solver, pilot=pilot.build_pilot(X, mask)))
    y = to_time(res.image, X, n)
    rep = metrics.evaluate(y, mic1_references(m, soi), m.signal[:, 0])
    _keep(out_dir, m, y)
    return {"sdr_db": rep.sdr_db, "sir_db": rep.sir_db, "isdr_db": rep.isdr_db, "isir_db": rep.isir_db}


def block_length_cell(scenario, block_len: int, solver, spec=DEFAULT_FRAMES, thro=2.0, soi=0, out_dir=None) -> dict:
    m = simkit.simulate(scenario)
    X = analyze(m.signal, spec, scenario.sample_rate)
    n = m.signal.shape[0]
    mask = pilot.oracle_mask(m.roles(soi), spec, thro)
    res = ive.run(X, _with(solver, block_len=int(block_len), pilot=pilot.build_pilot(X, mask)))
    y = to_time(res.image, X, n)
    ref = analyze(m.stems[soi][:, 0], spec, scenario.sample_rate).data[:, :, 0]
    att = metrics.attenuation_std(res.image, ref)
    rep = metrics.evaluate(y, mic1_references(m, soi), m.signal[:, 0], attenuation=att)
    _keep(out_dir, m, y)
    return {"isir_db": rep.isir_db, "isdr_db": rep.isdr_db, "attenuation_std": att, "iterations": res.iterations_run}


def outcome_cell(
    scenario,
    condition: str,
    solver,
    spec=DEFAULT_FRAMES,
    thro=2.0,
    soi=0,
    corruption=0.4,
    max_steps=None,
    out_dir=None,
) -> dict:
    if condition not in CONDITIONS:
        raise ValueError(f"condition must be one of {CONDITIONS}")
    m = simkit.simulate(scenario)
    X = analyze(m.signal, spec, scenario.sample_rate)
    n = m.signal.shape[0]
    om, im, rs, ri = masks(m, spec, soi, thro)
    if condition == "no_pilot":
        mask = np.zeros_like(om)
    elif condition == "oracle_pilot":
        mask = om
    else:
        mask = pilot.corrupt_mask(om, corruption, im, rs, ri, seed=scenario.seed)
    origin = "estimate"
    if condition == "corrupted_pilot_deflation":
        steps = max_steps or min(3, X.n_channels - 1)
        backend = assess.AssessmentBackend.oracle(m.stems[soi][:, 0], scenario.sample_rate)
        cfg = deflation.DeflationConfig(max_steps=steps, solver=solver, assessment=backend)
        out = deflation.extract_with_deflation(X, soi, cfg, mask, n_samples=n)
        y, origin = out.signal, out.origin
    else:
        res = ive.run(X, _with(solver, pilot=pilot.build_pilot(X, mask)))
        y = to_time(res.image, X, n)
    rep = metrics.evaluate(y, mic1_references(m, soi), m.signal[:, 0])
    _keep(out_dir, m, y)
    return {"isdr_db": rep.isdr_db, "isir_db": rep.isir_db, "category": assess.categorize(rep.isdr_db), "origin": origin}


def _keep(out_dir, mixture, y):
    if out_dir is None:
        return
    simkit.write_scenario(mixture, out_dir)
    write_wav(os.path.join(out_dir, "estimate.wav"), y, mixture.scenario.sample_rate)


# -- sweep runner -----------------------------------------------------------

_DEFAULT_SCENARIOS = {
    "block_length": dict(n_channels=2, n_speakers=2, noise=False, mixing="block_varying", duration=10.1),
    "pilot_corruption": dict(n_channels=2, n_speakers=2, noise=False, mixing="block_varying", duration=5.0),
    "outcome_counts": dict(n_channels=3, n_speakers=2, noise=False, mixing="block_varying", duration=5.0),
}
_DEFAULT_VALUES = {
    "block_length": [50, 200, 800],
    "pilot_corruption": [round(0.1 * i, 1) for i in range(11)],
    "outcome_counts": list(CONDITIONS),
}


def parse_seeds(text: str) -> list[int]:
    """``"0-9"``, ``"1,4,7"`` or a mix such as ``"0-3,10"``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


@dataclass
class SweepSpec:
    experiment: str
    seeds: list
    values: list
    scenario: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    frame_len: int = 1024
    hop: int = 200
    window: str = "hamming"
    thro: float = 2.0
    sois: list = field(default_factory=lambda: [0])
    corruption: float = 0.4
    max_steps: int | None = None
    keep_audio: bool = False

    @property
    def frames(self) -> FrameSpec:
        return FrameSpec(self.frame_len, self.hop, self.window)

    def as_dict(self) -> dict:
        d = {
            "experiment": self.experiment,
            "seeds": ",".join(str(s) for s in self.seeds),
            "values": ",".join(str(v) for v in self.values),
            "frame_len": self.frame_len,
            "hop": self.hop,
            "window": self.window,
            "thro": self.thro,
            "sois": ",".join(str(s) for s in self.sois),
            "corruption": self.corruption,
            "max_steps": "" if self.max_steps is None else self.max_steps,
            "keep_audio": int(self.keep_audio),
        }
        d.update({f"scenario.{k}": v for k, v in self.scenario.items()})
        d.update({f"solver.{k}": v for k, v in self.solver.items()})
        return d


_SOLVER_TYPES = {
    "mode": str,
    "iterations": int,
    "block_len": int,
    "block_shift": int,
    "forgetting": float,
    "pilot_strength": float,
    "tol": float,
}


def parse_sweep(kv: dict) -> SweepSpec:
    """Build a :class:`SweepSpec` from flat ``key=value`` pairs."""
    exp = kv.get("experiment")
    if exp not in EXPERIMENTS:
        raise ValueError(f"experiment must be one of {EXPERIMENTS}")
    if "seeds" not in kv:
        raise ValueError("sweep spec needs seeds")
    scenario = dict(_DEFAULT_SCENARIOS[exp])
    solver = {"mode": "csv", "block_len": 100}
    for k, v in kv.items():
        if k.startswith("scenario."):
            scenario[k[9:]] = v
        elif k.startswith("solver."):
            name = k[7:]
            if name not in _SOLVER_TYPES:
                raise ValueError(f"unknown solver key {name!r}")
            solver[name] = _SOLVER_TYPES[name](v)
    unknown = sorted(set(scenario) - set(simkit.Scenario.__dataclass_fields__))
    if unknown:
        raise ValueError(f"unknown scenario keys {unknown}")
    typed = simkit.Scenario.from_dict(scenario)  # validates early
    scenario = {k: getattr(typed, k) for k in scenario}
    if "values" in kv:
        raw = [v.strip() for v in str(kv["values"]).split(",") if v.strip()]
        if exp == "block_length":
            values = [int(v) for v in raw]
        elif exp == "pilot_corruption":
            values = [float(v) for v in raw]
        else:
            values = raw
            bad = [v for v in values if v not in CONDITIONS]
            if bad:
                raise ValueError(f"unknown conditions {bad}")
    else:
        values = list(_DEFAULT_VALUES[exp])
    max_steps = kv.get("max_steps", "")
    return SweepSpec(
        experiment=exp,
        seeds=parse_seeds(kv["seeds"]),
        values=values,
        scenario=scenario,
        solver=solver,
        frame_len=int(kv.get("frame_len", 1024)),
        hop=int(kv.get("hop", 200)),
        window=str(kv.get("window", "hamming")),
        thro=float(kv.get("thro", 2.0)),
        sois=[int(s) for s in str(kv.get("sois", "0")).split(",") if s.strip()],
        corruption=float(kv.get("corruption", 0.4)),
        max_steps=int(max_steps) if str(max_steps).strip() else None,
        keep_audio=str(kv.get("keep_audio", "0")).strip().lower() in ("1", "true", "yes"),
    )


def cell_list(spec: SweepSpec) -> list[dict]:
    return [
        {"value": v, "seed": s, "soi": soi}
        for v in spec.values
        for soi in spec.sois
        for s in spec.seeds
    ]


def cell_dir(out_dir: str, cell: dict) -> str:
    return os.path.join(out_dir, "cells", f"{cell['value']}", f"soi{cell['soi']}_seed{cell['seed']}")


def run_cell(spec: SweepSpec, cell: dict, out_dir: str | None = None) -> dict:
    """Run one cell; failures are returned as a row with ``status=error``."""
    row = dict(cell)
    here = cell_dir(out_dir, cell) if out_dir else None
    try:
        sc = simkit.Scenario.from_dict({**spec.scenario, "seed": cell["seed"]})
        solver = ive.SolverConfig(**spec.solver)
        keep = here if spec.keep_audio else None
        if spec.experiment == "block_length":
            res = block_length_cell(sc, cell["value"], solver, spec.frames, spec.thro, cell["soi"], keep)
        elif spec.experiment == "pilot_corruption":
            res = corruption_cell(sc, cell["value"], solver, spec.frames, spec.thro, cell["soi"], keep)
        else:
            res = outcome_cell(
                sc, cell["value"], solver, spec.frames, spec.thro, cell["soi"], spec.corruption, spec.max_steps, keep
            )
        row.update(res)
        row["status"] = "ok"
    except Exception as exc:  # a failed cell must not stop the sweep
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["trace"] = traceback.format_exc(limit=3)
    if here:
        os.makedirs(here, exist_ok=True)
        cfg = {**spec.as_dict(), "value": cell["value"], "seed": cell["seed"], "soi": cell["soi"]}
        write_kv(os.path.join(here, "config.txt"), cfg)
        write_kv(os.path.join(here, "metrics.txt"), {k: v for k, v in row.items() if k != "trace"})
    return row


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(spec: SweepSpec, out_dir: str | None = None, jobs: int = 1) -> list[dict]:
    """Run every cell, in parallel up to ``jobs`` processes; rows keep cell order."""
    cells = cell_list(spec)
    args = [(spec, c, out_dir) for c in cells]
    if jobs <= 1:
        return [run_cell(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell_args, args))


def _median(rows, value, key):
    v = [r[key] for r in rows if r["value"] == value and r["status"] == "ok"]
    return float(np.median(v)) if v else float("nan")


def summarize(spec: SweepSpec, rows: list[dict]) -> dict:
    """Aggregate rows into medians or counts plus the expected-shape check."""
    out = {"experiment": spec.experiment, "cells": len(rows), "failed": sum(r["status"] != "ok" for r in rows)}
    vals = spec.values
    if spec.experiment == "block_length":
        isir = [_median(rows, v, "isir_db") for v in vals]
        att = [_median(rows, v, "attenuation_std") for v in vals]
        for v, a, b in zip(vals, isir, att):
            out[f"median_isir_db[{v}]"] = a
            out[f"median_attenuation_std[{v}]"] = b
        mid = len(vals) // 2
        out["mid_block_maximizes_isir"] = bool(len(vals) >= 3 and isir[mid] >= max(isir[:mid] + isir[mid + 1 :]))
    elif spec.experiment == "pilot_corruption":
        sdr = [_median(rows, v, "sdr_db") for v in vals]
        for v, a in zip(vals, sdr):
            out[f"median_sdr_db[{v}]"] = a
        tail = [a for v, a in zip(vals, sdr) if v >= 0.2]
        out["non_increasing_beyond_0.2"] = bool(all(x >= y for x, y in zip(tail, tail[1:])))
        out["negative_at_full_corruption"] = bool(1.0 in vals and sdr[vals.index(1.0)] < 0)
    else:
        for v in vals:
            cats = [r["category"] for r in rows if r["value"] == v and r["status"] == "ok"]
            for c in assess.CATEGORIES:
                out[f"count[{v}][{c}]"] = cats.count(c)
        need = ("no_pilot", "corrupted_pilot", "corrupted_pilot_deflation")
        if all(c in vals for c in need):
            u = [out[f"count[{c}][unwanted_source]"] for c in need]
            out["unwanted_ordering_holds"] = bool(u[0] > u[1] > u[2])
    return out


ROW_KEYS = {
    "block_length": ["value", "seed", "soi", "status", "isir_db", "isdr_db", "attenuation_std", "iterations", "error"],
    "pilot_corruption": ["value", "seed", "soi", "status", "sdr_db", "sir_db", "isdr_db", "isir_db", "error"],
    "outcome_counts": ["value", "seed", "soi", "status", "isdr_db", "isir_db", "category", "origin", "error"],
}
