"""Command line: ``simulate``, ``extract``, ``evaluate`` and ``sweep``.

Every subcommand accepts ``--config FILE`` with flat ``key=value`` lines whose
keys are the long option names (dashes or underscores); flags given on the
command line override the file.  The effective configuration is written to
``config.txt`` in the output directory, and running the same subcommand with
``--config <that file>`` reproduces the run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Errors are reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import assess, deflation, ive, metrics, pilot, simkit, sweeps
from .configio import read_kv, write_kv
from .model import NumericalError, SourceRoles
from .stft import FrameSpec, analyze, synthesize
from .wavio import read_wav, write_wav

OUT_ENV = "PILOTIVE_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {v!r}")


def _frame_args(p):
    p.add_argument("--frame-len", type=int, default=1024)
    p.add_argument("--hop", type=int, default=200)
    p.add_argument("--window", default="hamming", choices=["hamming", "hann", "rectangular"])
    p.add_argument("--fft-len", type=int, default=None)


def _common(p):
    p.add_argument("--config", default=None, help="key=value file; flags override it")
    p.add_argument("--out", default=None, help=f"output directory (default under ${OUT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pilotive", description="Piloted constant-separating-vector source extraction.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic mixture with stems")
    _common(p)
    p.add_argument("--channels", dest="n_channels", type=int, default=4)
    p.add_argument("--speakers", dest="n_speakers", type=int, default=2)
    p.add_argument("--noise", type=_bool, default=True)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--mixing", default="instantaneous", choices=list(simkit.MIXINGS))
    p.add_argument("--fir-taps", type=int, default=16)
    p.add_argument("--block-seconds", type=float, default=0.25)
    p.add_argument("--soi-motion", type=float, default=1.0)
    p.add_argument("--interferer-motion", type=float, default=0.1)
    p.add_argument("--column-floor", type=float, default=0.4)
    p.add_argument("--sir", dest="sir_db", type=float, default=0.0)
    p.add_argument("--snr", dest="snr_db", type=float, default=10.0)
    p.add_argument("--pause-density", type=float, default=0.3)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("extract", help="extract the SOI from a mixture")
    _common(p)
    p.add_argument("mixture", nargs="?", default=None, help="mixture WAV")
    p.add_argument("--mode", default="csv", choices=list(ive.MODES))
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--block-len-frames", dest="block_len", type=int, default=200)
    p.add_argument("--block-shift", type=int, default=None)
    p.add_argument("--forgetting", type=float, default=0.3)
    p.add_argument("--init", default="ones", help="'ones' or a channel index")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--pilot-strength", type=float, default=100.0)
    p.add_argument("--pilot", default="none", choices=["none", "oracle", "scores"])
    p.add_argument("--stems", default=None, help="scenario directory with stems and manifest")
    p.add_argument("--soi", default="speaker0", help="SOI identifier (stem name or roster id)")
    p.add_argument("--thro", type=float, default=2.0)
    p.add_argument("--scores", default=None, help="frame score table CSV")
    p.add_argument("--theta", default=None, help="speaker_id,theta_min CSV")
    p.add_argument("--utterance-scores", default=None, help="signal_name,speaker_id,score CSV")
    p.add_argument("--deflate", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--max-steps", type=int, default=3)
    p.add_argument("--assess", default="oracle", choices=["oracle", "scores"])
    p.add_argument("--reduction", default="drop_channel", choices=list(deflation.REDUCTIONS))
    p.add_argument("--pcm16", type=_bool, nargs="?", const=True, default=False)
    _frame_args(p)

    p = sub.add_parser("evaluate", help="score an estimate against reference stems")
    _common(p)
    p.add_argument("estimate", nargs="?", default=None, help="estimate WAV")
    p.add_argument("--stems", default=None, help="scenario directory with stems and manifest")
    p.add_argument("--soi", default="speaker0")
    p.add_argument("--mixture", default=None, help="mixture WAV (default: <stems>/mixture.wav)")
    p.add_argument("--filter-len", type=int, default=512)
    p.add_argument("--window-seconds", type=float, default=None)
    p.add_argument("--categorize", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--batch", default=None, help="directory tree of runs to evaluate")
    _frame_args(p)

    p = sub.add_parser("sweep", help="run a seeded experiment grid")
    _common(p)
    p.add_argument("spec", nargs="?", default=None, help="experiment spec file (key=value)")
    p.add_argument("--jobs", type=int, default=1)
    parser.subcommands = dict(sub.choices)
    return parser


def _key(k: str) -> str:
    return k.strip().replace("-", "_")


def parse_args(argv) -> argparse.Namespace:
    """Parse with the precedence defaults < config file < explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    if args.config:
        kv = {_key(k): v for k, v in read_kv(args.config).items()}
        sub = parser.subcommands[args.command]
        known = {a.dest: a for a in sub._actions}
        for a in sub._actions:
            for opt in a.option_strings:
                if opt.startswith("--"):
                    known.setdefault(_key(opt[2:]), a)
        defaults = {}
        for k, v in kv.items():
            if k not in known or k in ("config", "help"):
                continue
            act = known[k]
            k = act.dest
            if v == "" or v == "None":
                defaults[k] = None
                continue
            conv = act.type or str
            try:
                defaults[k] = conv(v)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{args.config}: bad value for {k}: {v!r}") from exc
            if act.choices is not None and defaults[k] not in act.choices:
                raise UsageError(f"{args.config}: {k} must be one of {list(act.choices)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _out_dir(args) -> str:
    out = args.out or os.path.join(os.environ.get(OUT_ENV, "runs"), args.command)
    os.makedirs(out, exist_ok=True)
    return out


def _effective(args) -> dict:
    return {k: ("" if v is None else v) for k, v in sorted(vars(args).items()) if k not in ("command", "config", "out")}


def _frames(args) -> FrameSpec:
    return FrameSpec(args.frame_len, args.hop, args.window, args.fft_len)


def _read(path: str):
    if not path:
        raise FileNotFoundError("missing input path")
    try:
        return read_wav(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"{path}: {exc}") from exc


def load_stems(stems_dir: str):
    """Return ``(names, stems, manifest)`` of a scenario directory."""
    manifest_path = os.path.join(stems_dir, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(manifest_path)
    manifest = read_kv(manifest_path)
    files = [f for f in manifest.get("stems", "").split(",") if f]
    if not files:
        raise ValueError(f"{manifest_path}: no stems listed")
    names, stems = [], []
    for f in files:
        x, _ = _read(os.path.join(stems_dir, f))
        stems.append(x)
        names.append(f[len("stem_") : -len(".wav")] if f.startswith("stem_") else f)
    return names, stems, manifest


def _roles(names, stems, soi: str) -> SourceRoles:
    if soi not in names:
        raise ValueError(f"SOI {soi!r} not among stems {names}")
    i = names.index(soi)
    others = [s for j, s in enumerate(stems) if j != i]
    noise = [s for n, s in zip(names, stems) if n == "noise" and n != soi]
    background = [s for j, (n, s) in enumerate(zip(names, stems)) if j != i and n != "noise"]
    roles = SourceRoles(stems[i], background, noise[0] if noise else None)
    if not others:
        raise ValueError("oracle pilot requires reference stems")
    return roles


def _init(v):
    return int(v) if str(v).lstrip("-").isdigit() else v


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    fields = [f for f in simkit.Scenario.__dataclass_fields__]
    sc = simkit.Scenario(**{f: getattr(args, f) for f in fields})
    mixture = simkit.simulate(sc)
    manifest = simkit.write_scenario(mixture, out)
    write_kv(os.path.join(out, "config.txt"), _effective(args))
    print(f"wrote {out}: realized SIR {manifest['realized_sir_db']} dB, SNR {manifest['realized_snr_db']} dB")
    return EXIT_OK


def cmd_extract(args) -> int:
    out = _out_dir(args)
    if not args.mixture:
        raise UsageError("extract needs a mixture WAV")
    x, fs = _read(args.mixture)
    n = x.shape[0]
    spec = _frames(args)
    X = analyze(x, spec, fs)
    L = X.n_frames
    mask = np.zeros(L, dtype=bool)
    provenance = "zero"
    stems = None
    if args.pilot == "oracle" or (args.deflate and args.assess == "oracle"):
        if not args.stems:
            raise ValueError("oracle pilot requires reference stems (--stems)")
        stems = load_stems(args.stems)
    if args.pilot == "oracle":
        mask = pilot.oracle_mask(_roles(stems[0], stems[1], args.soi), spec, args.thro)
        provenance = "oracle"
    elif args.pilot == "scores":
        if not args.scores:
            raise ValueError("score pilot needs --scores")
        table = pilot.read_score_table(args.scores, args.theta, args.utterance_scores).aligned(L)
        mask = pilot.score_mask(table, args.soi)
        provenance = "score_table"
    track = pilot.build_pilot(X, mask, provenance)
    cfg = ive.SolverConfig(
        mode=args.mode,
        iterations=args.iterations,
        block_len=args.block_len,
        block_shift=args.block_shift,
        forgetting=args.forgetting,
        init=_init(args.init),
        pilot=track if track.mask.any() else None,
        pilot_strength=args.pilot_strength,
        tol=args.tol,
    )
    summary = {"pilot_provenance": track.provenance, "pilot_density": track.density}
    if args.deflate:
        if args.assess == "oracle":
            names, st, _ = stems
            if args.soi not in names:
                raise ValueError(f"SOI {args.soi!r} not among stems {names}")
            backend = assess.AssessmentBackend.oracle(st[names.index(args.soi)][:, 0], fs)
        else:
            if not args.utterance_scores:
                raise ValueError("score assessment needs --utterance-scores")
            table = pilot.ScoreTable([args.soi], utterance_scores=pilot.read_utterance_scores(args.utterance_scores))
            backend = assess.AssessmentBackend.from_table(table)
        dcfg = deflation.DeflationConfig(max_steps=args.max_steps, reduction=args.reduction, solver=cfg, assessment=backend)
        res = deflation.extract_with_deflation(X, args.soi, dcfg, mask, n_samples=n)
        y = res.signal
        with open(os.path.join(out, "audit.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(res.audit_lines())
        summary.update(origin=res.origin, step=res.step, solver_runs=res.solver_runs)
    else:
        res = ive.run(X, cfg)
        y = synthesize(X.with_data(res.image[:, :, None]))[:n, 0]
        summary.update(iterations_run=res.iterations_run, converged=res.converged, final_delta_w=res.delta_w[-1])
    write_wav(os.path.join(out, "estimate.wav"), y, fs, pcm16=args.pcm16)
    write_kv(os.path.join(out, "config.txt"), _effective(args))
    write_kv(os.path.join(out, "result.txt"), summary)
    print(f"wrote {os.path.join(out, 'estimate.wav')}")
    return EXIT_OK


def _evaluate_one(estimate_path, stems_dir, soi, mixture_path, filter_len, window_seconds, spec):
    y, fs = _read(estimate_path)
    names, stems, _ = load_stems(stems_dir)
    if soi not in names:
        raise ValueError(f"SOI {soi!r} not among stems {names}")
    mix, _ = _read(mixture_path or os.path.join(stems_dir, "mixture.wav"))
    i = names.index(soi)
    refs = np.stack([stems[i][:, 0]] + [s[:, 0] for j, s in enumerate(stems) if j != i])
    est = y[:, 0]
    if est.shape[0] != refs.shape[1] or mix.shape[0] != refs.shape[1]:
        raise ValueError(
            f"length mismatch: estimate {est.shape[0]} samples, mixture {mix.shape[0]}, references {refs.shape[1]}"
        )
    att = metrics.attenuation_std(analyze(est, spec, fs).data[:, :, 0], analyze(refs[0], spec, fs).data[:, :, 0])
    window = None if not window_seconds else int(round(window_seconds * fs))
    return metrics.evaluate(est, refs, mix[:, 0], filter_len, window, attenuation=att)


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    spec = _frames(args)
    if args.batch:
        rows = []
        for root, _, files in sorted(os.walk(args.batch)):
            if "estimate.wav" not in files or "manifest.txt" not in files:
                continue
            man = read_kv(os.path.join(root, "manifest.txt"))
            row = {"run": os.path.relpath(root, args.batch), "seed": man.get("seed", "")}
            try:
                rep = _evaluate_one(os.path.join(root, "estimate.wav"), root, args.soi, None, args.filter_len, args.window_seconds, spec)
                row.update(rep.as_dict(), category=assess.categorize(rep.isdr_db), status="ok")
            except (ValueError, FileNotFoundError) as exc:
                row.update(status="error", error=str(exc))
            rows.append(row)
        keys = ["run", "seed", "status", "sir_db", "sdr_db", "isir_db", "isdr_db", "input_sir_db", "input_sdr_db",
                "attenuation_std", "category", "error"]
        _write_csv(os.path.join(out, "batch.csv"), rows, keys)
        write_kv(os.path.join(out, "config.txt"), _effective(args))
        print(f"evaluated {len(rows)} runs into {os.path.join(out, 'batch.csv')}")
        return EXIT_OK
    if not args.estimate or not args.stems:
        raise UsageError("evaluate needs an estimate WAV and --stems")
    rep = _evaluate_one(args.estimate, args.stems, args.soi, args.mixture, args.filter_len, args.window_seconds, spec)
    report = rep.as_dict()
    if args.categorize:
        report["category"] = assess.categorize(rep.isdr_db)
    write_kv(os.path.join(out, "report.txt"), report)
    _write_csv(os.path.join(out, "report.csv"), [report], list(report))
    if rep.intervals:
        _write_csv(
            os.path.join(out, "intervals.csv"),
            [{"start_sample": s, "sir_db": a, "sdr_db": b} for s, a, b in rep.intervals],
            ["start_sample", "sir_db", "sdr_db"],
        )
    write_kv(os.path.join(out, "config.txt"), _effective(args))
    for k, v in report.items():
        print(f"{k}={v}")
    return EXIT_OK


def _write_csv(path, rows, keys):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in keys})


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    if not args.spec:
        raise UsageError("sweep needs an experiment spec file")
    spec = sweeps.parse_sweep(read_kv(args.spec))
    rows = sweeps.run_sweep(spec, out, jobs=max(1, args.jobs))
    _write_csv(os.path.join(out, f"{spec.experiment}.csv"), rows, sweeps.ROW_KEYS[spec.experiment])
    summary = sweeps.summarize(spec, rows)
    write_kv(os.path.join(out, "summary.txt"), summary)
    write_kv(os.path.join(out, "sweep_spec.txt"), spec.as_dict())
    write_kv(os.path.join(out, "config.txt"), _effective(args))
    for k, v in summary.items():
        print(f"{k}={v}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "extract": cmd_extract, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def _fail(code: int, kind: str, reason: str) -> int:
    print(json.dumps({"status": "error", "kind": kind, "reason": reason}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_DATA, "data", f"file not found: {exc.filename or exc}")
    except (ValueError, KeyError, OSError) as exc:
        return _fail(EXIT_DATA, "data", str(exc).strip("'\""))


if __name__ == "__main__":
    sys.exit(main())
