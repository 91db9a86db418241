"""Command-line interface to the simulator and attack toolkit.

Every subcommand that takes ``--out`` writes a self-describing output
directory: report JSON, delimited tables with stable columns, rendered
figures (PNG), and a ``manifest.json`` recording the resolved parameters
and the SHA-256 of every data artifact.  ``nvbleed rerun manifest.json``
re-executes the stored run and verifies the artifacts are byte-identical.

Exit codes: 0 success, 2 usage, 3 invalid configuration or simulation
state, 4 calibration/handshake/analysis failure, 5 counters disabled,
6 filesystem error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, covert, extract, figures, link, sidechan, topo, workloads
from .exceptions import NVBleedError, ValidationError
from .util import PRNG_NAME, read_json, sha256_file, sha256_json, write_json

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FILE = 6

#: Default calibration targets per platform: measured channel rates in kb/s.
CALIBRATION_TARGETS = {
    "gcp": {"contenlink_kbps": 70.59, "leakycounter_kbps": 1.88},
    "dgx": {"contenlink_kbps": 60.71, "leakycounter_kbps": 1.39},
}

MANIFEST_NAME = "manifest.json"

# Argparse dests that describe the invocation itself rather than the
# experiment; everything else is recorded in the manifest and replayed
# verbatim by ``rerun``.
_NON_PARAM_DESTS = frozenset({"func", "command_path", "config", "out", "manifest"})


# -- small shared helpers ------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _out_dir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _resolve_profile(args) -> topo.PlatformProfile:
    if getattr(args, "profile_file", None):
        return topo.profile_from_file(args.profile_file)
    return topo.get_profile(args.profile)


def _parse_vms(text: str | None):
    return None if not text else _int_list(text)


def _json_safe(value):
    """Round numpy scalars/arrays and tuples down to plain JSON types."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    return value


def _emit(args, out: Path | None, report: dict, artifacts: list[str],
          figure_names: list[str]) -> None:
    """Write the manifest for a completed run, or print the report."""
    report = _json_safe(report)
    if out is None:
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    params = {k: v for k, v in vars(args).items() if k not in _NON_PARAM_DESTS}
    manifest = {
        "command": list(args.command_path),
        "params": _json_safe(params),
        "prng": PRNG_NAME,
        "version": __version__,
        "config_hash": sha256_json(_json_safe(params)),
        "artifacts": {name: sha256_file(out / name) for name in sorted(artifacts)},
        "figures": sorted(figure_names),
    }
    write_json(out / MANIFEST_NAME, manifest)
    for name in sorted(artifacts) + sorted(figure_names):
        print(f"wrote {out / name}")
    print(f"wrote {out / MANIFEST_NAME}")


def _want_figures(args) -> bool:
    return not getattr(args, "no_figures", False)


# -- topo ----------------------------------------------------------------------------


def cmd_topo(args) -> int:
    profile = _resolve_profile(args)
    topology = topo.build_topology(args.preset, profile, _parse_vms(args.vms))
    description = topology.describe()
    out = _out_dir(args)
    if out is None:
        print(json.dumps(_json_safe(description), indent=2, sort_keys=True))
        return EXIT_OK
    topo.topology_to_file(topology, out / "topology.json")
    topo.profile_to_file(profile, out / "profile.json")
    write_json(out / "topology_report.json", _json_safe(description))
    _emit(args, out, description,
          ["topology.json", "profile.json", "topology_report.json"], [])
    return EXIT_OK


# -- calibrate -----------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    profile = _resolve_profile(args)
    targets = CALIBRATION_TARGETS.get(profile.name, CALIBRATION_TARGETS["gcp"])
    target_ct = args.target_contenlink_kbps or targets["contenlink_kbps"]
    target_lc = args.target_leaky_kbps or targets["leakycounter_kbps"]
    fitted, report = link.calibrate_profile(
        profile, target_ct, target_lc, tolerance=args.tolerance,
        seed=args.seed, n_bits=args.bits)
    out = _out_dir(args)
    if out is None:
        print(json.dumps(_json_safe(report), indent=2, sort_keys=True))
        return EXIT_OK
    topo.profile_to_file(fitted, out / f"profile_{fitted.name}_fitted.json")
    write_json(out / "calibration_report.json", _json_safe(report))
    _emit(args, out, report,
          [f"profile_{fitted.name}_fitted.json", "calibration_report.json"], [])
    return EXIT_OK


# -- covert run ----------------------------------------------------------------------


def cmd_covert_run(args) -> int:
    profile = _resolve_profile(args)
    topology = topo.build_topology(args.topology, profile)
    protocols = (covert.PROTOCOLS if args.protocol == "both"
                 else (covert.normalize_protocol(args.protocol),))
    sizes = (list(covert.DEFAULT_SWEEP_SIZES) if args.sweep
             else [args.sender_bytes])
    reports = [covert.evaluate_channel(proto, topology, size,
                                       trials=args.trials, n_bits=args.bits,
                                       seed=args.seed)
               for proto in protocols for size in sizes]
    rows = [r.to_dict() for r in reports]
    report = {"profile": profile.name, "topology": args.topology,
              "n_bits": args.bits, "trials": args.trials, "seed": args.seed,
              "reports": rows}

    out = _out_dir(args)
    if out is None:
        print(json.dumps(_json_safe(report), indent=2, sort_keys=True))
        return EXIT_OK
    artifacts = ["covert_report.json"]
    write_json(out / "covert_report.json", _json_safe(report))
    for proto in protocols:
        name = f"{proto}_sweep.csv"
        _write_csv(out / name, ["sender_bytes", "bandwidth_bps", "error_rate"],
                   [(r["sender_size"], r["bandwidth_bps"], r["error_rate"])
                    for r in rows if r["protocol"] == proto])
        artifacts.append(name)
    figure_names = []
    if _want_figures(args) and any(True for _ in rows):
        figures.save_covert_sweep(rows, out / "covert_sweep.png")
        figure_names.append("covert_sweep.png")
    _emit(args, out, report, artifacts, figure_names)
    return EXIT_OK


# -- fingerprint corpora on disk -----------------------------------------------------
#
# A corpus directory holds the aligned recordings of one collection run:
#   values.npy     float64 (n_traces, n_channels, n_samples)  raw channel series
#   times.npy      int64   (n_traces, n_samples)              sample timestamps
#   baselines.npy  float64 (n_traces, n_channels)             counter state before t0
#   corpus.json    scenario/profile/channels + per-trace label and metadata
#   index.csv      one row per trace (trace, label, class)


def save_corpus(traces, out: Path) -> list[str]:
    if not traces:
        raise ValidationError("no traces to save")
    channels = traces[0].channels
    values = np.stack([
        np.stack([tr.values[ch] for ch in channels]) for tr in traces])
    times = np.stack([tr.times_ns for tr in traces]).astype(np.int64)
    baselines = np.array([[float(tr.baseline.get(ch, 0.0)) for ch in channels]
                          for tr in traces], dtype=np.float64)
    np.save(out / "values.npy", values)
    np.save(out / "times.npy", times)
    np.save(out / "baselines.npy", baselines)
    meta = {
        "scenario": traces[0].scenario,
        "profile": traces[0].profile,
        "channels": list(channels),
        "n_traces": len(traces),
        "n_samples": int(times.shape[1]),
        "traces": [{"label": tr.label, "class_name": tr.class_name,
                    "meta": _json_safe(tr.meta)} for tr in traces],
    }
    write_json(out / "corpus.json", meta)
    _write_csv(out / "index.csv", ["trace", "label", "class"],
               [(i, tr.label, tr.class_name) for i, tr in enumerate(traces)])
    return ["values.npy", "times.npy", "baselines.npy", "corpus.json", "index.csv"]


def load_corpus(path: str | Path) -> list[sidechan.Trace]:
    root = Path(path)
    if not (root / "corpus.json").exists():
        raise ValidationError(f"{root} is not a corpus directory (no corpus.json)")
    meta = read_json(root / "corpus.json")
    values = np.load(root / "values.npy")
    times = np.load(root / "times.npy")
    baselines = np.load(root / "baselines.npy")
    channels = tuple(meta["channels"])
    if values.shape[0] != len(meta["traces"]):
        raise ValidationError("corpus.json and values.npy disagree on trace count")
    traces = []
    for i, rec in enumerate(meta["traces"]):
        traces.append(sidechan.Trace(
            scenario=meta["scenario"], profile=meta["profile"],
            label=int(rec["label"]), class_name=rec["class_name"],
            channels=channels, times_ns=times[i],
            values={ch: values[i, j] for j, ch in enumerate(channels)},
            baseline={ch: float(baselines[i, j]) for j, ch in enumerate(channels)},
            meta=dict(rec.get("meta", {}))))
    return traces


def _write_trace_csv(path: Path, traces) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trace", "time_ns", "channel", "value"])
        for i, tr in enumerate(traces):
            for time_ns, channel, value in tr.rows():
                writer.writerow([i, time_ns, channel, value])


def cmd_fp_collect(args) -> int:
    out = _out_dir(args)
    traces = sidechan.collect_scenario(
        args.scenario, profile=args.profile, gpus=args.gpus,
        traces_per_class=args.traces_per_class, samples=args.samples,
        probes_per_sample=args.probes_per_sample, seed=args.seed,
        classes=args.classes, counters_enabled=not args.no_counters,
        cross_vm_alpha=args.cross_vm_alpha)
    artifacts = save_corpus(traces, out)
    _write_trace_csv(out / "example_trace.csv", traces[:1])
    artifacts.append("example_trace.csv")
    if args.csv:
        _write_trace_csv(out / "traces.csv", traces)
        artifacts.append("traces.csv")
    figure_names = []
    if _want_figures(args):
        figures.save_trace(traces[0], out / "trace_example.png")
        figure_names.append("trace_example.png")
    report = {"scenario": args.scenario, "n_traces": len(traces),
              "n_classes": len({t.label for t in traces}),
              "samples": traces[0].n_samples,
              "channels": list(traces[0].channels)}
    _emit(args, out, report, artifacts, figure_names)
    return EXIT_OK


# -- fingerprint train / eval --------------------------------------------------------


def _corpus_geometry(traces, args) -> tuple[int, int | None]:
    cfg = sidechan.SCENARIO_DEFAULTS.get(traces[0].scenario, {})
    window = args.window if args.window is not None else cfg.get("window", sidechan.DEFAULT_WINDOW)
    stride = args.stride if args.stride is not None else cfg.get("stride")
    return window, stride


def _featurize(traces, window, stride, channels):
    rows, labels = [], []
    owners = []
    for i, tr in enumerate(traces):
        x, _ = sidechan.sliding_features(tr, window, stride=stride, channels=channels)
        rows.append(x)
        labels.extend([tr.label] * x.shape[0])
        owners.extend([i] * x.shape[0])
    return np.vstack(rows), np.asarray(labels), np.asarray(owners)


def cmd_fp_train(args) -> int:
    traces = load_corpus(args.corpus)
    out = _out_dir(args)
    window, stride = _corpus_geometry(traces, args)
    mode = args.mode
    if mode == "timing_plus_counters" and not traces[0].counter_channels:
        mode = "timing_only"
    channels = (sidechan.TIMING_CHANNEL,) if mode == "timing_only" else traces[0].channels
    train, _ = sidechan.split_traces(traces, args.train_frac)
    x, y, _ = _featurize(train, window, args.train_stride or stride, channels)
    x = sidechan.log_compress(x)
    mu, sd = sidechan.standardize_fit(x)
    x = sidechan.standardize_apply(x, mu, sd)
    w = sidechan.fisher_weights(x, y)
    np.save(out / "model_x.npy", x * w)
    np.save(out / "model_y.npy", y.astype(np.int64))
    np.save(out / "model_mu.npy", mu)
    np.save(out / "model_sd.npy", sd)
    np.save(out / "model_w.npy", w)
    model_meta = {
        "scenario": traces[0].scenario, "mode": mode, "window": window,
        "stride": stride, "train_stride": args.train_stride, "k": args.k,
        "train_frac": args.train_frac, "channels": list(channels),
        "classes": {str(tr.label): tr.class_name for tr in traces},
        "n_train_traces": len(train), "n_train_windows": int(x.shape[0]),
    }
    write_json(out / "model.json", model_meta)
    report = {k: model_meta[k] for k in
              ("scenario", "mode", "window", "stride", "n_train_traces",
               "n_train_windows")}
    write_json(out / "train_report.json", _json_safe(report))
    _emit(args, out, report,
          ["model_x.npy", "model_y.npy", "model_mu.npy", "model_sd.npy",
           "model_w.npy", "model.json", "train_report.json"], [])
    return EXIT_OK


def _confusion_rows(conf: dict):
    header = ["true_class"] + list(conf["labels"])
    rows = [[label] + list(row) for label, row in zip(conf["labels"], conf["matrix"])]
    return header, rows


def _eval_with_model(args, traces) -> dict:
    model_dir = Path(args.model)
    meta = read_json(model_dir / "model.json")
    x_ref = np.load(model_dir / "model_x.npy")
    y_ref = np.load(model_dir / "model_y.npy")
    mu = np.load(model_dir / "model_mu.npy")
    sd = np.load(model_dir / "model_sd.npy")
    w = np.load(model_dir / "model_w.npy")
    channels = tuple(meta["channels"])
    _, test = sidechan.split_traces(traces, meta["train_frac"])
    x, y, owner = _featurize(test, meta["window"], meta["stride"], channels)
    x = sidechan.standardize_apply(sidechan.log_compress(x), mu, sd) * w
    model = sidechan.knn_fit(x_ref, y_ref, meta["k"])
    pred = sidechan.knn_predict(model, x)

    import collections
    trace_true, trace_pred = [], []
    for i, tr in enumerate(test):
        votes = collections.Counter(int(p) for p in pred[owner == i])
        best = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        trace_true.append(tr.label)
        trace_pred.append(best)
    scores = sidechan.macro_scores(trace_true, trace_pred)
    window_scores = sidechan.macro_scores([int(v) for v in y], [int(v) for v in pred])
    labels, mat = sidechan.confusion_matrix(
        trace_true, trace_pred, labels=sorted({t.label for t in traces}))
    names = {t.label: t.class_name for t in traces}
    return {
        "mode": meta["mode"], "window": meta["window"], "k": meta["k"],
        "model": str(model_dir), "n_test_traces": len(test),
        "f1": scores["f1"], "precision": scores["precision"],
        "recall": scores["recall"], "window_f1": window_scores["f1"],
        "window_precision": window_scores["precision"],
        "window_recall": window_scores["recall"],
        "confusion": {"labels": [names.get(c, str(c)) for c in labels],
                      "matrix": mat},
    }


def cmd_fp_eval(args) -> int:
    traces = load_corpus(args.corpus)
    out = _out_dir(args)
    artifacts, figure_names = [], []

    if args.windows:
        report = sidechan.cross_vm_window_sweep(
            tuple(args.windows), traces=traces, k=args.k,
            train_frac=args.train_frac, train_stride=args.train_stride)
        if out is not None:
            write_json(out / "eval_report.json", _json_safe(report))
            _write_csv(out / "window_sweep.csv",
                       ["window", "f1", "precision", "recall"],
                       [(r["window"], r["f1"], r["precision"], r["recall"])
                        for r in report["rows"]])
            artifacts += ["eval_report.json", "window_sweep.csv"]
            if _want_figures(args):
                figures.save_window_sweep(report["rows"], out / "window_sweep.png")
                figure_names.append("window_sweep.png")
        _emit(args, out, report, artifacts, figure_names)
        return EXIT_OK

    if args.model:
        window, _ = _corpus_geometry(traces, args)
        report = _eval_with_model(args, traces)
        primary = report
    else:
        window, stride = _corpus_geometry(traces, args)
        report = sidechan.fingerprint_experiment(
            traces[0].scenario, traces=traces, window=window, stride=stride,
            k=args.k, train_frac=args.train_frac,
            counters_enabled=bool(traces[0].counter_channels))
        mode = ("timing_plus_counters" if "timing_plus_counters" in report["modes"]
                else "timing_only")
        primary = report["modes"][mode]

    if out is not None:
        write_json(out / "eval_report.json", _json_safe(report))
        header, rows = _confusion_rows(primary["confusion"])
        _write_csv(out / "confusion.csv", header, rows)
        artifacts += ["eval_report.json", "confusion.csv"]
        if _want_figures(args):
            figures.save_confusion(primary["confusion"]["labels"],
                                   primary["confusion"]["matrix"],
                                   out / "confusion.png")
            figure_names.append("confusion.png")
    _emit(args, out, report, artifacts, figure_names)
    return EXIT_OK


# -- mitigate ------------------------------------------------------------------------


def cmd_mitigate(args) -> int:
    traces = load_corpus(args.corpus) if args.corpus else None
    out = _out_dir(args)
    report = sidechan.mitigation_sweep(
        traces, divisors=tuple(args.divisors), window=args.window, k=args.k,
        seed=args.seed, traces_per_class=args.traces_per_class,
        samples=args.samples, classes=args.classes,
        disabled_samples=args.disabled_samples,
        include_disabled_arm=not args.no_disabled_arm,
        train_frac=args.train_frac)
    if out is None:
        print(json.dumps(_json_safe(report), indent=2, sort_keys=True))
        return EXIT_OK
    write_json(out / "mitigation_report.json", _json_safe(report))
    _write_csv(out / "mitigation.csv", ["rate_hz", "f1"],
               [(r["rate_hz"], r["f1"]) for r in report["rows"]])
    artifacts = ["mitigation_report.json", "mitigation.csv"]
    figure_names = []
    if _want_figures(args):
        disabled = report.get("counters_disabled", {}).get("f1")
        baseline = max(report["rows"], key=lambda r: r["rate_hz"])["f1"]
        figures.save_mitigation_sweep(report["rows"], out / "mitigation.png",
                                      disabled_f1=disabled, baseline_f1=baseline)
        figure_names.append("mitigation.png")
    _emit(args, out, report, artifacts, figure_names)
    return EXIT_OK


# -- extract -------------------------------------------------------------------------


def _load_transfer_csv(path: str | Path) -> list[extract.TransferEvent]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"start_ns", "end_ns", "bytes"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise ValidationError(
                f"transfer CSV needs columns start_ns,end_ns,bytes; "
                f"got {reader.fieldnames}")
        for row in reader:
            events.append(extract.TransferEvent(
                int(row["start_ns"]), int(row["end_ns"]), int(row["bytes"])))
    if not events:
        raise ValidationError(f"no transfer rows in {path}")
    return events


def cmd_extract(args) -> int:
    if bool(args.trace) == bool(args.model):
        raise ValidationError("give exactly one of --model / --trace")
    input_spec = json.loads(args.input_spec) if args.input_spec else None
    truth = None
    if args.model:
        if args.model in workloads.MODEL_PRESETS:
            layers = workloads.MODEL_PRESETS[args.model]["layers"]
            if layers is None:
                raise ValidationError(
                    f"preset {args.model!r} has no layer recipe; choose from "
                    f"{workloads.SIMPLE_MODELS} or pass a recipe string")
            if input_spec is None:
                input_spec = dict(workloads.MODEL_PRESETS[args.model]["input"])
        else:
            layers = args.model   # compact recipe string, e.g. F512-F256-F10
        events = extract.collect_model_trace(
            args.model, args.batch, args.iterations, profile=args.profile,
            seed=args.seed, input_spec=input_spec)
        if args.truth:
            truth = layers
    else:
        events = _load_transfer_csv(args.trace)

    report = extract.extract_architecture(
        events, args.batch, element_bytes=args.element_bytes,
        input_spec=input_spec, truth=truth, gap_factor=args.gap_factor,
        channel_convention=args.channel_convention)
    report["source"] = args.model or str(args.trace)

    out = _out_dir(args)
    if out is None:
        print(json.dumps(_json_safe(report), indent=2, sort_keys=True))
        return EXIT_OK
    write_json(out / "extract_report.json", _json_safe(report))
    _write_csv(out / "transfers.csv", ["start_ns", "end_ns", "bytes"],
               [(e.start_ns, e.end_ns, e.payload_bytes) for e in events])
    artifacts = ["extract_report.json", "transfers.csv"]
    figure_names = []
    if _want_figures(args):
        figures.save_transfer_timeline(events, out / "transfers.png")
        figure_names.append("transfers.png")
    _emit(args, out, report, artifacts, figure_names)
    return EXIT_OK


# -- rerun ---------------------------------------------------------------------------


def cmd_rerun(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = read_json(manifest_path)
    for key in ("command", "params", "artifacts"):
        if key not in manifest:
            raise ValidationError(f"{manifest_path} is not a run manifest (no {key!r})")
    command = tuple(manifest["command"])
    handler = _HANDLERS.get(command)
    if handler is None:
        raise ValidationError(f"manifest names unknown command {list(command)}")
    out = Path(args.out) if args.out else manifest_path.parent / "rerun"
    replay = argparse.Namespace(**manifest["params"])
    replay.command_path = list(command)
    replay.out = str(out)
    code = handler(replay)
    if code != EXIT_OK:
        return code

    new_manifest = read_json(out / MANIFEST_NAME)
    old_art, new_art = manifest["artifacts"], new_manifest["artifacts"]
    mismatches = [name for name in old_art
                  if new_art.get(name) != old_art[name]]
    missing = sorted(set(old_art) - set(new_art))
    extra = sorted(set(new_art) - set(old_art))
    if not mismatches and not missing and not extra:
        print(f"rerun verified: {len(old_art)} artifacts byte-identical")
        return EXIT_OK
    for name in mismatches:
        print(f"MISMATCH {name}: {old_art[name][:12]} != "
              f"{new_art.get(name, 'missing')[:12]}", file=sys.stderr)
    for name in missing:
        print(f"MISSING {name}", file=sys.stderr)
    for name in extra:
        print(f"EXTRA {name}", file=sys.stderr)
    return 1


_HANDLERS = {}


# -- parser --------------------------------------------------------------------------


def _register(subparsers_registry, parser, path: tuple, func) -> None:
    parser.set_defaults(func=func, command_path=list(path))
    subparsers_registry[path] = parser
    _HANDLERS[path] = func


def _add_common(parser, *, out_required=False, with_figures=True) -> None:
    parser.add_argument("--out", required=out_required, default=None,
                        help="output directory (default: print report JSON)")
    parser.add_argument("--config", default=None,
                        help="JSON file of default option values "
                             "(explicit flags take precedence)")
    if with_figures:
        parser.add_argument("--no-figures", action="store_true",
                            help="skip PNG rendering")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="nvbleed",
        description="Deterministic multi-GPU interconnect simulator and "
                    "side/covert-channel attack toolkit.")
    parser.add_argument("--version", action="version", version=f"nvbleed {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    registry: dict = {}

    # topo
    p = sub.add_parser("topo", help="build and describe a link topology")
    p.add_argument("--preset", default="pair", choices=topo.TOPOLOGY_PRESETS)
    p.add_argument("--profile", default="gcp", choices=topo.PROFILE_NAMES)
    p.add_argument("--profile-file", default=None,
                   help="profile JSON overriding --profile")
    p.add_argument("--vms", default=None,
                   help="per-GPU VM ids, e.g. 0,0,1,1")
    _add_common(p, with_figures=False)
    _register(registry, p, ("topo",), cmd_topo)

    # calibrate
    p = sub.add_parser("calibrate", help="fit profile timing costs to "
                                         "measured covert-channel rates")
    p.add_argument("--profile", default="gcp", choices=topo.PROFILE_NAMES)
    p.add_argument("--profile-file", default=None)
    p.add_argument("--target-contenlink-kbps", type=float, default=None)
    p.add_argument("--target-leaky-kbps", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--bits", type=int, default=192,
                   help="message bits per calibration probe run")
    _add_common(p, with_figures=False)
    _register(registry, p, ("calibrate",), cmd_calibrate)

    # covert run
    p_covert = sub.add_parser("covert", help="covert-channel experiments")
    covert_sub = p_covert.add_subparsers(dest="covert_command", required=True)
    p = covert_sub.add_parser("run", help="run covert-channel trials")
    p.add_argument("--profile", default="gcp", choices=topo.PROFILE_NAMES)
    p.add_argument("--profile-file", default=None)
    p.add_argument("--topology", default="pair", choices=topo.TOPOLOGY_PRESETS)
    p.add_argument("--protocol", default="both",
                   choices=("contenlink", "leakycounter", "both"))
    p.add_argument("--sender-bytes", type=int, default=256)
    p.add_argument("--sweep", action="store_true",
                   help=f"sweep sender sizes {covert.DEFAULT_SWEEP_SIZES}")
    p.add_argument("--bits", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    _register(registry, p, ("covert", "run"), cmd_covert_run)

    # fingerprint
    p_fp = sub.add_parser("fingerprint", help="workload fingerprinting")
    fp_sub = p_fp.add_subparsers(dest="fingerprint_command", required=True)

    p = fp_sub.add_parser("collect", help="record a trace corpus")
    p.add_argument("--scenario", required=True, choices=sidechan.SCENARIOS)
    p.add_argument("--profile", default=None, choices=topo.PROFILE_NAMES)
    p.add_argument("--gpus", type=int, default=None)
    p.add_argument("--traces-per-class", type=int, default=50)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--probes-per-sample", type=int, default=None)
    p.add_argument("--classes", type=int, default=None,
                   help="restrict to the first N classes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-counters", action="store_true",
                   help="collect with performance counters disabled")
    p.add_argument("--cross-vm-alpha", type=float, default=None)
    p.add_argument("--csv", action="store_true",
                   help="also dump every sample row to traces.csv")
    _add_common(p, out_required=True)
    _register(registry, p, ("fingerprint", "collect"), cmd_fp_collect)

    p = fp_sub.add_parser("train", help="fit a classifier on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", default="timing_plus_counters", choices=sidechan.MODES)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--train-stride", type=int, default=None)
    p.add_argument("--k", type=int, default=sidechan.DEFAULT_K)
    p.add_argument("--train-frac", type=float, default=sidechan.DEFAULT_TRAIN_FRAC)
    _add_common(p, out_required=True, with_figures=False)
    _register(registry, p, ("fingerprint", "train"), cmd_fp_train)

    p = fp_sub.add_parser("eval", help="score classification on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", default=None,
                   help="model directory from `fingerprint train`")
    p.add_argument("--windows", type=_int_list, default=None,
                   help="comma-separated window sweep, e.g. 100,250,500,1000")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--train-stride", type=int, default=50)
    p.add_argument("--k", type=int, default=sidechan.DEFAULT_K)
    p.add_argument("--train-frac", type=float, default=sidechan.DEFAULT_TRAIN_FRAC)
    _add_common(p)
    _register(registry, p, ("fingerprint", "eval"), cmd_fp_eval)

    # mitigate
    p = sub.add_parser("mitigate", help="counter rate-limit and shutoff study")
    p.add_argument("--corpus", default=None,
                   help="characters50 corpus directory (default: collect)")
    p.add_argument("--divisors", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--window", type=int, default=sidechan.DEFAULT_WINDOW)
    p.add_argument("--traces-per-class", type=int, default=50)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--disabled-samples", type=int, default=None)
    p.add_argument("--no-disabled-arm", action="store_true")
    p.add_argument("--k", type=int, default=sidechan.DEFAULT_K)
    p.add_argument("--train-frac", type=float, default=sidechan.DEFAULT_TRAIN_FRAC)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    _register(registry, p, ("mitigate",), cmd_mitigate)

    # extract
    p = sub.add_parser("extract", help="recover DNN architecture from "
                                       "model-parallel transfer timing")
    p.add_argument("--model", default=None,
                   help=f"victim preset {workloads.SIMPLE_MODELS} or a "
                        f"recipe string like F512-F256-F10")
    p.add_argument("--trace", default=None,
                   help="transfer CSV (start_ns,end_ns,bytes) to analyze "
                        "instead of simulating")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--iterations", type=int, default=12)
    p.add_argument("--profile", default="gcp", choices=topo.PROFILE_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-spec", default=None,
                   help='victim input JSON, e.g. \'{"width":28,"channels":1}\'')
    p.add_argument("--element-bytes", type=int, default=extract.ELEMENT_BYTES)
    p.add_argument("--gap-factor", type=float, default=extract.GAP_FACTOR)
    p.add_argument("--channel-convention", default="map", choices=("map", "input"))
    p.add_argument("--truth", action="store_true",
                   help="score candidates against the simulated model")
    _add_common(p)
    _register(registry, p, ("extract",), cmd_extract)

    # rerun
    p = sub.add_parser("rerun", help="re-execute a manifest and verify "
                                     "artifacts are byte-identical")
    p.add_argument("manifest", help="manifest.json from a previous run")
    p.add_argument("--out", default=None,
                   help="directory for the replay (default: <run>/rerun)")
    p.set_defaults(func=cmd_rerun, command_path=["rerun"])
    registry[("rerun",)] = p

    return parser, registry


def _apply_config(argv, registry) -> None:
    """Seed subparser defaults from --config JSON (CLI flags still win)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    config = read_json(known.config)
    if not isinstance(config, dict):
        raise ValidationError("--config must hold a JSON object of option values")
    for sub in registry.values():
        valid = {a.dest for a in sub._actions}
        overrides = {k: v for k, v in config.items() if k in valid}
        if overrides:
            sub.set_defaults(**overrides)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        _apply_config(argv, registry)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:      # argparse usage errors / --help
        return int(exc.code or 0)
    except NVBleedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FILE


if __name__ == "__main__":
    sys.exit(main())
