"""``kcx`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
Machine-readable output is JSON on stdout (or ``--out``); logs go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import resolve_n_jobs
from .hcm import BoxStore, HarmonicSpaceSpec, calibrate_hcm, default_harmonic_bins, detect_hcm
from .io import AnnotationSet, DataError, load_annotations, load_record, save_annotations, save_record
from .kbp import KBPDetector, coalesce, vote
from .metrics import MatchSpec, evaluate
from .spectral import FEATURE_NAMES, BandDef, record_features
from .synth import SynthSpec, generate
from .thresholds import channel_thresholds, cumulative_histogram
from .tuning import PARAM_NAMES, ParamGrid, grid_search
from .windows import WindowSpec

log = logging.getLogger("kcx")

KBP_DEFAULTS = {
    "p_t_p1": 0.81, "p_t_p2": 0.86, "p_t_p3": 0.98, "p_t_p4": 0.89, "p_t_s": 0.7, "v_t": 2,
    "window_length_s": 1.024, "window_step_s": 0.1024, "cutoff_hz": 10.0, "gap_windows": 4,
    "bands": [[0.0, 3.5], [1.0, 4.5], [2.0, 5.5], [3.0, 6.5]],
}
HCM_DEFAULTS = {
    "p_t": 0.80, "v_t": 0, "harmonic_bins": None, "log_base": 2.0, "linear_floor": None,
    "floor_quantile": 0.10, "window_length_s": 1.024, "window_step_s": 0.1024,
    "gap_windows": 4, "calibration_channels": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config helpers
# --------------------------------------------------------------------------

def _read_json(path) -> object:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: malformed JSON ({exc.msg})") from exc


def _merge_params(defaults: dict, path, overrides: dict) -> dict:
    """defaults < JSON file < command-line flags; unknown keys are rejected."""
    params = dict(defaults)
    if path:
        loaded = _read_json(path)
        if not isinstance(loaded, dict):
            raise UsageError(f"{path}: parameters must be a JSON object")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise UsageError(f"{path}: unknown parameter(s): {', '.join(unknown)}")
        params.update(loaded)
    params.update({k: v for k, v in overrides.items() if v is not None})
    return params


def _window(params: dict, fs: float) -> WindowSpec:
    return WindowSpec.from_seconds(params["window_length_s"], params["window_step_s"], fs)


def _kbp_detector(params: dict, window: WindowSpec, n_jobs) -> KBPDetector:
    return KBPDetector(
        p_t_p1=params["p_t_p1"], p_t_p2=params["p_t_p2"], p_t_p3=params["p_t_p3"],
        p_t_p4=params["p_t_p4"], p_t_s=params["p_t_s"], v_t=int(params["v_t"]),
        window_length=window.length_samples, window_step=window.step_samples,
        bands=tuple(BandDef(*b) for b in params["bands"]), cutoff_hz=params["cutoff_hz"],
        gap_windows=int(params["gap_windows"]), n_jobs=n_jobs,
    )


def _provenance(params: dict, window: WindowSpec | None, **extra) -> dict:
    out = {"tool": "kcx", "version": __version__, "effective_params": params}
    if window is not None:
        out["realized_window"] = window.to_dict()
    out.update(extra)
    return out


def _emit(obj, out):
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_events(path) -> AnnotationSet:
    path = Path(path)
    if path.suffix.lower() == ".json":
        data = _read_json(path)
        try:
            return AnnotationSet([e["t"] for e in data["events"]])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: expected {{'events': [{{'t': ...}}]}}") from exc
    return load_annotations(path)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args):
    spec_dict = _read_json(args.spec) if args.spec else {}
    if not isinstance(spec_dict, dict):
        raise UsageError("synth spec must be a JSON object")
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(spec_dict)
    except TypeError as exc:
        raise UsageError(f"bad synth spec: {exc}") from exc
    corpus = generate(spec)
    prefix = Path(args.out)
    rec_path = save_record(corpus.record, prefix.with_name(prefix.name + ".eegbin"))
    ann_path = save_annotations(corpus.truth, prefix.with_name(prefix.name + ".txt"))
    spec_path = prefix.with_name(prefix.name + ".spec.json")
    spec_path.write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    _emit({
        "record": str(rec_path), "truth": str(ann_path), "spec": str(spec_path),
        "events": len(corpus.truth), "duration_s": corpus.record.duration_s,
        "provenance": _provenance(spec.to_dict(), None),
    }, None)


def cmd_features(args):
    record = load_record(args.record)
    params = _merge_params(KBP_DEFAULTS, args.params, {})
    window = _window(params, record.sampling_rate_hz)
    feats, indexing = record_features(record, window, tuple(BandDef(*b) for b in params["bands"]),
                                      params["cutoff_hz"], args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "window_index", "center_time_s", *FEATURE_NAMES])
    centers = indexing.center_times
    for c, name in enumerate(record.channel_names):
        for i in range(indexing.window_count):
            w.writerow([name, i, repr(float(centers[i])), *(repr(float(v)) for v in feats[c, i])])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def cmd_thresholds(args):
    record = load_record(args.record)
    params = _merge_params(KBP_DEFAULTS, args.params, {})
    window = _window(params, record.sampling_rate_hz)
    det = _kbp_detector(params, window, args.threads).fit(record)
    out = {
        name: dict(zip(FEATURE_NAMES, map(float, det.thresholds_[c])))
        for c, name in enumerate(record.channel_names)
    }
    if args.histogram_out:
        feats, _ = record_features(record, window, det.bands, det.cutoff_hz, args.threads)
        with open(args.histogram_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "feature", "bin_left", "count", "cumulative_fraction"])
            for c, name in enumerate(record.channel_names):
                for f, fname in enumerate(FEATURE_NAMES):
                    for left, n, cum in zip(*cumulative_histogram(feats[c, :, f], args.bins)):
                        w.writerow([name, fname, repr(float(left)), int(n), repr(float(cum))])
    _emit({"thresholds": out, "provenance": _provenance(params, window)}, args.out)


def _hcm_params(args, fs):
    params = _merge_params(HCM_DEFAULTS, args.params, {"p_t": getattr(args, "p_t", None),
                                                        "v_t": getattr(args, "v_t", None)})
    window = _window(params, fs)
    if params["harmonic_bins"] is None:
        params["harmonic_bins"] = list(default_harmonic_bins(window.length_samples, fs))
    return params, window


def cmd_calibrate(args):
    if args.algo != "hcm":
        raise UsageError("only --algo hcm needs calibration; KBP thresholds are self-calibrating")
    record = load_record(args.record)
    truth = load_annotations(args.annotations)
    truth.check_within(record.duration_s)
    params, window = _hcm_params(args, record.sampling_rate_hz)
    spec = HarmonicSpaceSpec(tuple(params["harmonic_bins"]), params["log_base"], params["linear_floor"])
    store = calibrate_hcm(record, truth, spec, window, params["calibration_channels"],
                          params["floor_quantile"], record_id=str(args.record), n_jobs=args.threads)
    out = store.to_dict()
    out["provenance"]["tool"] = {"name": "kcx", "version": __version__}
    out["provenance"]["effective_params"] = params
    _emit(out, args.out)


def cmd_detect(args):
    record = load_record(args.record)
    fs = record.sampling_rate_hz
    if args.algo == "kbp":
        params = _merge_params(KBP_DEFAULTS, args.params, {"v_t": args.v_t})
        window = _window(params, fs)
        det = _kbp_detector(params, window, args.threads).fit_predict(record)
    else:
        if not args.store:
            raise UsageError("--algo hcm requires --store")
        store = BoxStore.load(args.store)
        params, window = _hcm_params(args, fs)
        params["harmonic_bins"] = list(store.spec.harmonic_bins)
        det = detect_hcm(record, store, float(params["p_t"]), window, int(params["v_t"]),
                         int(params["gap_windows"]), args.threads)
    out = det.to_dict()
    out["algo"] = args.algo
    out["params"] = params
    out["realized_window"] = window.to_dict()
    out["provenance"] = _provenance(params, window, record=str(args.record))
    _emit(out, args.out)


def _duration(args) -> float:
    if args.duration is not None:
        return float(args.duration)
    if args.record:
        return load_record(args.record).duration_s
    raise UsageError("eval needs --duration or --record to count true negatives")


def cmd_eval(args):
    truth = _load_events(args.truth)
    dets = _load_events(args.detections)
    spec = MatchSpec(args.tolerance)
    c = evaluate(dets.events, truth.events, _duration(args), spec)
    out = c.to_dict()
    out["tolerance_s"] = spec.tolerance_s
    _emit(out, args.out)


def _load_manifest(path):
    data = _read_json(path)
    entries = data.get("records") if isinstance(data, dict) else data
    if not isinstance(entries, list) or not entries:
        raise DataError(f"{path}: manifest must list (record, annotations) pairs")
    base = Path(path).parent
    dataset = []
    for e in entries:
        if isinstance(e, dict):
            rp, ap = e.get("record"), e.get("annotations")
        elif isinstance(e, (list, tuple)) and len(e) == 2:
            rp, ap = e
        else:
            raise DataError(f"{path}: bad manifest entry {e!r}")
        rec = load_record(base / rp)
        ann = load_annotations(base / ap)
        ann.check_within(rec.duration_s)
        dataset.append((rec, ann))
    return dataset


def cmd_tune(args):
    dataset = _load_manifest(args.dataset)
    fs = dataset[0][0].sampling_rate_hz
    if any(r.sampling_rate_hz != fs for r, _ in dataset):
        raise DataError("all records in a tuning dataset must share one sampling rate")
    grid_dict = _read_json(args.grid) if args.grid else {}
    try:
        grid = ParamGrid.from_dict(grid_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad grid: {exc}") from exc
    params = _merge_params({k: v for k, v in KBP_DEFAULTS.items() if k not in PARAM_NAMES},
                           args.params, {})
    window = _window(params, fs)
    bands = tuple(BandDef(*b) for b in params["bands"])
    res = grid_search(dataset, grid, args.min_tpr, window, bands, params["cutoff_hz"],
                      int(params["gap_windows"]), MatchSpec(args.tolerance), args.threads,
                      keep_trace=args.trace)
    out = res.to_dict()
    out["evaluated_on"] = "tuning"
    if args.holdout:
        held = _load_manifest(args.holdout)
        best = {**params, **res.best_params}
        det = _kbp_detector(best, window, args.threads)
        total = None
        for rec, truth in held:
            c = evaluate(det.fit_predict(rec).times, truth.events, rec.duration_s, MatchSpec(args.tolerance))
            total = c if total is None else total + c
        out["holdout"] = total.to_dict()
        out["evaluated_on"] = "tuning+holdout"
    out["grid"] = grid.to_dict()
    out["provenance"] = _provenance({**params, "tolerance_s": args.tolerance}, window)
    _emit(out, args.out)


def _bench_once(record, det: KBPDetector):
    timings = {}
    t0 = time.perf_counter()
    feats, indexing = record_features(record, det.window_spec, det.bands, det.cutoff_hz, det.n_jobs)
    t1 = time.perf_counter()
    thr = channel_thresholds(feats, det.p_ts)
    t2 = time.perf_counter()
    flags = (feats > thr[:, None, :]).any(axis=2)
    t3 = time.perf_counter()
    marks, counts = vote(flags, det.v_t)
    coalesce(marks, indexing, det.gap_windows, counts)
    t4 = time.perf_counter()
    timings.update(features=t1 - t0, thresholds=t2 - t1, fusion=t3 - t2, vote=t4 - t3,
                   end_to_end=t4 - t0)
    return timings


def cmd_bench(args):
    t0 = time.perf_counter()
    if args.record:
        record = load_record(args.record)
        source = str(args.record)
    else:
        spec = SynthSpec.from_dict({
            "seed": args.seed, "duration_s": args.synth_duration, "channel_count": args.channels,
            "events": {"count": max(0, int(args.synth_duration // 30))},
        })
        record = generate(spec).record
        source = f"synth:{args.synth_duration}s"
    load_s = time.perf_counter() - t0
    params = _merge_params(KBP_DEFAULTS, args.params, {})
    window = _window(params, record.sampling_rate_hz)
    det = _kbp_detector(params, window, resolve_n_jobs(args.threads))
    _bench_once(record, det)  # warm-up (JIT, caches)
    runs = [_bench_once(record, det) for _ in range(args.repetitions)]
    medians = {k: float(np.median([r[k] for r in runs])) for k in runs[0]}
    _emit({
        "record": source, "duration_s": record.duration_s, "channels": record.n_channels,
        "repetitions": args.repetitions, "load_s": load_s,
        "median_s": medians, "end_to_end_median_s": medians["end_to_end"],
        "threads": det.n_jobs, "provenance": _provenance(params, window),
    }, args.out)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $KCX_THREADS or logical cores)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="kcx", description="FFT-based K-complex detection tools")
    p.add_argument("--version", action="version", version=f"kcx {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--spec", help="synth spec JSON")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)
    s.set_defaults(out_required=True)

    s = sub.add_parser("features", parents=[common], help="dump per-window features as CSV")
    s.add_argument("--record", required=True)
    s.add_argument("--params")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("thresholds", parents=[common], help="per-channel KBP thresholds")
    s.add_argument("--record", required=True)
    s.add_argument("--params")
    s.add_argument("--histogram-out")
    s.add_argument("--bins", type=int, default=50)
    s.set_defaults(func=cmd_thresholds)

    s = sub.add_parser("calibrate", parents=[common], help="build an HCM box store")
    s.add_argument("--algo", choices=["hcm"], default="hcm")
    s.add_argument("--record", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--params")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("detect", parents=[common], help="detect K-complexes")
    s.add_argument("--algo", choices=["kbp", "hcm"], required=True)
    s.add_argument("--record", required=True)
    s.add_argument("--params")
    s.add_argument("--store", help="HCM box store JSON")
    s.add_argument("--v-t", type=int, dest="v_t")
    s.add_argument("--p-t", type=float, dest="p_t", help="HCM power-condition quantile")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", parents=[common], help="score detections against truth")
    s.add_argument("--truth", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--tolerance", type=float, default=0.5)
    s.add_argument("--duration", type=float)
    s.add_argument("--record")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("tune", parents=[common], help="brute-force KBP tuning")
    s.add_argument("--dataset", required=True, help="manifest JSON of (record, annotations)")
    s.add_argument("--grid", help="grid JSON (missing keys use the default grid)")
    s.add_argument("--params", help="fixed (non-grid) KBP parameters")
    s.add_argument("--min-tpr", type=float, default=99.0)
    s.add_argument("--tolerance", type=float, default=0.5)
    s.add_argument("--holdout", help="manifest evaluated with the selected parameters")
    s.add_argument("--trace", action="store_true", help="include every grid point")
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("bench", parents=[common], help="time KBP end to end")
    s.add_argument("--record")
    s.add_argument("--params")
    s.add_argument("--repetitions", type=int, default=5)
    s.add_argument("--synth-duration", type=float, default=3600.0)
    s.add_argument("--channels", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "out_required", False) and not args.out:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"kcx {args.command}: error: --out is required\n")
        return 1
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"kcx {args.command}: error: {exc}\n")
        return 1
    except DataError as exc:
        sys.stderr.write(f"kcx {args.command}: data error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"kcx {args.command}: data error: {exc}\n")
        return 2
    except (ValueError, TypeError, KeyError) as exc:
        sys.stderr.write(f"kcx {args.command}: error: {exc}\n")
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
