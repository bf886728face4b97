"""Command-line entry point: ``pairseld {simulate,calibrate,detect,eval,tune-thresholds}``.

Exit codes: 0 success, 2 validation or configuration error, 3 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .calibration import InsufficientDataError, analytic_table, collect_observations, fit_calibration
from .config import ConfigError, RunConfig
from .detector import detect as baseline_detect
from .doa import TdoaTensor, estimate_doas
from .dsp import compute_stft, pair_list
from .fileio import FormatError
from .metrics import evaluate
from .sed import ScoreTensor, detect_events, to_segments, tune_thresholds
from .sim import SceneScript, synthesize

log = logging.getLogger("pairseld")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Validation failure reported with exit code 2."""


def _config(args) -> RunConfig:
    overrides = {
        "sigma": args.sigma,
        "gamma": args.gamma,
        "tau_max": args.tau_max,
        "grid_g": args.grid_g,
        "segment_frames": args.segment_frames,
        "geometry": args.geometry,
        "calibration": args.calibration,
        "detector": args.detector,
        "seed": args.seed,
    }
    return RunConfig.load(args.config, overrides)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _load_table(cfg: RunConfig):
    if cfg.calibration is None:
        raise UsageError("a calibration table is required (--calibration)")
    try:
        table = fileio.read_calibration(cfg.calibration)
    except FormatError as exc:
        raise UsageError(f"unreadable calibration: {exc}") from exc
    if table.tau_max != cfg.tau_max:
        log.warning("calibration tau_max %s differs from config tau_max %s", table.tau_max, cfg.tau_max)
    return table


def _thresholds(cfg: RunConfig, path) -> np.ndarray:
    if path is not None:
        eps = fileio.read_thresholds(path)
    elif cfg.thresholds is not None:
        eps = np.asarray(cfg.thresholds, dtype=float)
    else:
        eps = np.full(len(cfg.class_names), 0.5)
    if eps.size != len(cfg.class_names):
        raise UsageError(f"{eps.size} thresholds for {len(cfg.class_names)} classes")
    return eps


def _relative(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _read_manifest(path) -> list[dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    entries = doc["recordings"] if isinstance(doc, dict) else doc
    base = Path(path).parent
    out = []
    for entry in entries:
        out.append({k: _relative(base, v) for k, v in entry.items()})
    return out


def _spectrogram(cfg: RunConfig, wav_path):
    signals, rate = fileio.read_wav(wav_path)
    if rate != int(round(cfg.sample_rate)):
        raise UsageError(f"{wav_path}: sample rate {rate} Hz, config expects {cfg.sample_rate}")
    return compute_stft(signals, cfg.stft())


def cmd_simulate(args) -> int:
    cfg = _config(args)
    geometry = cfg.load_geometry()
    try:
        script = SceneScript.load(args.script, cfg.grid(), seed=cfg.seed)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read script {args.script}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid script {args.script}: {exc}") from exc
    try:
        scene = synthesize(script, geometry, cfg.stft(), cfg.tau_max)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out = fileio.ensure_dir(args.out)
    fileio.write_wav(out / "scene.wav", scene.signals, scene.sample_rate)
    fileio.write_labels(scene.labels, out / "labels.csv")
    fileio.write_tensor(out / "scores", scene.oracle_scores, cfg.tau_max, geometry.num_mics)
    fileio.write_tensor(out / "tdoas", scene.oracle_tdoas, cfg.tau_max, geometry.num_mics)
    cfg_doc = cfg.to_dict() | {"seed": script.seed, "class_names": list(script.class_names)}
    _write_json(out / "run_config.json", cfg_doc)
    print(f"wrote {scene.signals.shape[0]}-channel scene, {len(scene.labels)} events, to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    grid, lattice = cfg.grid(), cfg.lattice()
    if args.analytic:
        table = analytic_table(cfg.load_geometry(), grid, cfg.sample_rate, lattice)
        fileio.write_calibration(table, args.out)
        print(f"wrote analytic calibration table to {args.out}")
        return EXIT_OK
    if args.manifest is None:
        raise UsageError("calibrate needs --manifest or --analytic")

    recordings = []
    for entry in _read_manifest(args.manifest):
        spec = _spectrogram(cfg, entry["audio"])
        records = fileio.read_labels(entry["labels"])
        names = sorted({r.cls for r in records})
        _, ref = fileio.rasterize_labels(records, cfg.stft(), grid, spec.num_frames, names)
        ann = np.full(spec.num_frames, -1)
        single = ref.counts() == 1
        for t, az, el in zip(ref.frame, ref.azimuth, ref.elevation):
            if single[t]:
                ann[t] = grid.index(az, el)
        recordings.append((spec, ann))
    if not recordings:
        raise UsageError("manifest lists no recordings")

    obs = collect_observations(recordings, grid, lattice)
    try:
        table = fit_calibration(obs, grid, cfg.polyfit_order)
    except InsufficientDataError as exc:
        lines = [f"insufficient calibration coverage: {exc}"]
        for (p, el), az in sorted(exc.missing.items()):
            pair = pair_list(obs.num_mics)[p]
            lines.append(f"  pair {pair} elevation {el:g}: missing azimuths {[int(a) for a in az]}")
        raise UsageError("\n".join(lines)) from exc

    fileio.write_calibration(table, args.out)
    print("fit RMS (samples) per pair and elevation")
    print("pair      " + " ".join(f"{e:>6g}" for e in grid.elevations))
    for p, pair in enumerate(table.pair_order):
        print(f"{str(pair):<9} " + " ".join(f"{v:6.3f}" for v in table.fit_rms[p]))
    print(f"wrote measured calibration table to {args.out}")
    return EXIT_OK


def _run_detector(cfg: RunConfig, args):
    if cfg.detector == "baseline":
        if args.audio is None:
            raise UsageError("--detector baseline needs --audio")
        spec = _spectrogram(cfg, args.audio)
        scores, tdoas = baseline_detect(spec, cfg.lattice(), cfg.detector_config())
        return scores, tdoas
    if args.scores is None or args.tdoas is None:
        raise UsageError("--detector tensors needs --scores and --tdoas")
    scores = fileio.read_tensor(args.scores)
    tdoas = fileio.read_tensor(args.tdoas)
    if not isinstance(scores, ScoreTensor) or not isinstance(tdoas, TdoaTensor):
        raise UsageError("--scores must be a 'scores' tensor and --tdoas a 'tdoas' tensor")
    if scores.scores.shape != tdoas.tdoas.shape:
        raise UsageError(f"score tensor {scores.scores.shape} and TDOA tensor {tdoas.tdoas.shape} differ")
    return scores, tdoas


def cmd_detect(args) -> int:
    cfg = _config(args)
    table = _load_table(cfg)
    eps = _thresholds(cfg, args.thresholds)
    scores, tdoas = _run_detector(cfg, args)
    if scores.num_classes != eps.size:
        raise UsageError(f"tensors have {scores.num_classes} classes, thresholds cover {eps.size}")
    if scores.num_pairs != table.num_pairs:
        raise UsageError(f"tensors have {scores.num_pairs} pairs, calibration has {table.num_pairs}")

    timeline = detect_events(scores, eps, cfg.gamma, cfg.segment_frames)
    doas = estimate_doas(tdoas, timeline.frame_activity, table, cfg.sigma)

    out = fileio.ensure_dir(args.out)
    fileio.write_results(doas, out / "results.csv")
    fileio.write_timeline(timeline, out / "timeline.csv")
    if cfg.detector == "baseline":
        fileio.write_tensor(out / "scores", scores, cfg.tau_max, table.num_mics)
        fileio.write_tensor(out / "tdoas", tdoas, cfg.tau_max, table.num_mics)
    _write_json(
        out / "summary.json",
        {
            "version": fileio.FORMAT_VERSION,
            "num_frames": timeline.num_frames,
            "thresholds": eps.tolist(),
            "num_estimates": len(doas),
            "diagnostics": doas.diagnostics,
            "config": cfg.to_dict(),
        },
    )
    print(f"{len(doas)} DOA estimates over {timeline.num_frames} frames written to {out / 'results.csv'}")
    return EXIT_OK


def _num_frames_for_eval(cfg, args, records, est_frames) -> int:
    if args.num_frames is not None:
        return args.num_frames
    summary = Path(args.results).parent / "summary.json"
    if summary.exists():
        return int(json.loads(summary.read_text(encoding="utf-8"))["num_frames"])
    stft = cfg.stft()
    end = max((r.offset for r in records), default=0.0)
    n = int(np.ceil((end * stft.sample_rate - stft.frame_size / 2) / stft.hop_size)) if end else 0
    return max(n, est_frames)


def cmd_eval(args) -> int:
    cfg = _config(args)
    records = fileio.read_labels(args.labels)
    est = fileio.read_results(args.results)
    T = _num_frames_for_eval(cfg, args, records, est.num_frames)
    est = fileio.read_results(args.results, T)
    try:
        ref_timeline, ref_doas = fileio.rasterize_labels(records, cfg.stft(), cfg.grid(), T, cfg.class_names, cfg.segment_frames)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    est_activity = np.zeros((T, len(cfg.class_names)), dtype=np.int8)
    if len(est):
        if est.cls.max() >= len(cfg.class_names):
            raise UsageError(f"results reference class {est.cls.max()} beyond the configured {len(cfg.class_names)}")
        est_activity[est.frame, est.cls] = 1
    timeline_path = Path(args.results).parent / "timeline.csv"
    if timeline_path.exists():
        act = np.loadtxt(timeline_path, delimiter=",", skiprows=1, dtype=int, ndmin=2)
        if act.shape == (T, len(cfg.class_names) + 1):
            est_activity = act[:, 1:].astype(np.int8)
    report = evaluate(
        to_segments(est_activity, cfg.segment_frames),
        ref_timeline.segment_activity,
        est,
        ref_doas,
    )
    print(report.table())
    if args.out:
        _write_json(args.out, {"version": fileio.FORMAT_VERSION, **report.to_dict(), "config": cfg.to_dict()})
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _config(args)
    validation = []
    for entry in _read_manifest(args.manifest):
        if "scores" in entry:
            scores = fileio.read_tensor(entry["scores"])
        else:
            spec = _spectrogram(cfg, entry["audio"])
            scores, _ = baseline_detect(spec, cfg.lattice(), cfg.detector_config())
        records = fileio.read_labels(entry["labels"])
        ref, _ = fileio.rasterize_labels(
            records, cfg.stft(), cfg.grid(), scores.num_frames, cfg.class_names, cfg.segment_frames
        )
        validation.append((scores, ref.segment_activity))
    if not validation:
        raise UsageError("manifest lists no recordings")
    eps = tune_thresholds(validation, args.step, cfg.gamma, cfg.segment_frames)
    fileio.write_thresholds(eps, args.out, {"class_names": cfg.class_names, "config": cfg.to_dict()})
    print("thresholds: " + ", ".join(f"{n}={e:.2f}" for n, e in zip(cfg.class_names, eps)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--geometry", help="JSON array geometry (default: 4.2 cm tetrahedron)")
    common.add_argument("--calibration", help="calibration table JSON")
    common.add_argument("--detector", choices=["baseline", "tensors"], help="score/TDOA source")
    common.add_argument("--seed", type=int, help="override the scene seed")
    common.add_argument("--sigma", type=float, help="Gaussian kernel width in samples")
    common.add_argument("--gamma", type=int, help="minimum event length in frames")
    common.add_argument("--tau-max", type=float, help="largest TDOA in samples")
    common.add_argument("--grid-g", type=int, help="number of TDOA lattice points (odd)")
    common.add_argument("--segment-frames", type=int, help="frames per evaluation segment")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pairseld", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render a scripted scene")
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="build a calibration table")
    p.add_argument("--manifest", help="JSON list of {audio, labels} recordings")
    p.add_argument("--analytic", action="store_true", help="predict TDOAs from the geometry instead")
    p.add_argument("--out", required=True, help="calibration JSON to write")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", parents=[common], help="detect and localize events")
    p.add_argument("--audio", help="multichannel WAV (baseline detector)")
    p.add_argument("--scores", help="score tensor header (tensors detector)")
    p.add_argument("--tdoas", help="TDOA tensor header (tensors detector)")
    p.add_argument("--thresholds", help="thresholds JSON from tune-thresholds")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score results against reference labels")
    p.add_argument("--results", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--num-frames", type=int)
    p.add_argument("--out", help="metrics JSON to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune-thresholds", parents=[common], help="scan class thresholds on validation data")
    p.add_argument("--manifest", required=True, help="JSON list of {audio|scores, labels}")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--out", required=True, help="thresholds JSON to write")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
