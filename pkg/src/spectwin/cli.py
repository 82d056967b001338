"""Command-line front end: synthesis, scenario building, dataset generation, detection, experiments."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import threading
from pathlib import Path

import numpy as np

from . import channel, controlplane, dataset, detector, iqcore, scenario, waveforms
from .errors import SpectwinError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _workers() -> int:
    try:
        return max(int(os.environ.get("SPTW_THREADS", "1")), 1)
    except ValueError:
        return 1


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _radar_params(args) -> waveforms.RadarParams:
    overrides = _load_json(args.config) if getattr(args, "config", None) else {}
    return waveforms.RadarParams(**overrides)


def _cellular_params(args) -> waveforms.CellularParams:
    overrides = _load_json(args.config) if getattr(args, "config", None) else {}
    return waveforms.CellularParams(**overrides)


def cmd_synth_radar(args) -> int:
    params = _radar_params(args)
    buf = waveforms.gen_radar(params, seed=args.seed)
    iqcore.save_iq_file(buf, args.out)
    iqcore.write_manifest(str(args.out) + ".json", buf, "pulsed first-quadrant radar")
    print(f"wrote {len(buf)} samples at {buf.sample_rate_hz/1e6:g} MS/s to {args.out}")
    return EXIT_OK


def cmd_synth_cellular(args) -> int:
    params = _cellular_params(args)
    buf = waveforms.gen_cellular(params, args.symbols, seed=args.seed)
    iqcore.save_iq_file(buf, args.out)
    iqcore.write_manifest(str(args.out) + ".json", buf, "OFDM cellular proxy")
    print(f"wrote {len(buf)} samples ({args.symbols} OFDM symbols) to {args.out}")
    return EXIT_OK


def cmd_make_scenario(args) -> int:
    spec = scenario.default_scenario()
    Path(args.out).write_text(scenario.scenario_to_json(spec) + "\n")
    print(f"wrote scenario with {len(spec.nodes)} nodes to {args.out}")
    if args.heatmap_out:
        ids, grid = scenario.pathloss_heatmap(spec, t_s=0.0)
        scenario.save_heatmap_csv(ids, grid, args.heatmap_out)
        print(f"wrote path-loss heatmap to {args.heatmap_out}")
    if args.taps_out:
        taps_map = scenario.build_scenario_taps(spec, seed=args.seed)
        with open(args.taps_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node_a", "node_b", "t_s", "delay_s", "gain_re", "gain_im"])
            for (link, step), taps in sorted(taps_map.items()):
                for d, g in zip(taps.delays_s, taps.gains):
                    writer.writerow([link[0], link[1], taps.t_s, repr(float(d)),
                                     repr(float(g.real)), repr(float(g.imag))])
        print(f"wrote {len(taps_map)} link-timestep tap sets to {args.taps_out}")
    return EXIT_OK


def cmd_approx_taps(args) -> int:
    delays, gains = scenario.load_taps_csv(args.infile)
    taps = scenario.approx_taps(delays, gains, k=args.k, max_spread_s=args.max_spread,
                                seed=args.seed)
    scenario.save_taps_csv(taps, args.out)
    print(f"approximated {delays.size} raw taps to {taps.delays_s.size} "
          f"(spread {taps.spread_s*1e6:.3f} us)")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    overrides = _load_json(args.config) if args.config else {}
    overrides.setdefault("seed", args.seed)
    if args.records_per_cell is not None:
        overrides["records_per_cell"] = args.records_per_cell
    for key in ("radar", "cellular"):
        if key in overrides:
            cls = waveforms.RadarParams if key == "radar" else waveforms.CellularParams
            overrides[key] = cls(**overrides[key])
    for key in ("snr_grid_db", "sinr_grid_db"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    cfg = dataset.SweepConfig(**overrides)
    manifest = dataset.gen_dataset(cfg, args.out, workers=_workers())
    if args.split:
        manifest = dataset.split_dataset(manifest, seed=cfg.seed)
        dataset.save_manifest(manifest, Path(args.out) / "manifest.json")
    for combo, count in manifest.counts.items():
        print(f"{combo:>10}: {count} records")
    print(f"total {manifest.record_count} records in {args.out}")
    return EXIT_OK


def cmd_emulate(args) -> int:
    manifest = iqcore.read_manifest(str(args.infile) + ".json") if \
        Path(str(args.infile) + ".json").exists() else {"sample_rate_hz": args.sample_rate,
                                                        "center_freq_hz": 0.0}
    buf = iqcore.load_iq_file(args.infile, manifest["sample_rate_hz"],
                              manifest["center_freq_hz"])
    delays, gains = scenario.load_taps_csv(args.taps)
    taps = scenario.approx_taps(delays, gains, seed=args.seed)
    out = channel.emulate_link(buf, [taps], epoch_s=buf.duration_s + 1.0,
                               noise_power=args.noise_power, rx_gain_db=args.rx_gain_db,
                               seed=args.seed)
    iqcore.save_iq_file(out, args.out)
    iqcore.write_manifest(str(args.out) + ".json", out, "emulated link output")
    print(f"emulated {len(out)} samples -> {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    manifest_path = str(args.input) + ".json"
    rate = iqcore.read_manifest(manifest_path)["sample_rate_hz"] if \
        Path(manifest_path).exists() else args.sample_rate
    buf = iqcore.load_iq_file(args.input, rate)

    weights = detector.load_weights(args.weights) if args.weights else None
    if weights is None:
        if args.template:
            full_template = iqcore.load_iq_file(args.template, rate)
        else:
            leak = np.full(iqcore.WINDOW_SIZE, 0.05 + 0.05j)
            full_template = iqcore.IQBuffer(leak.astype(np.complex64), rate)
        # per-window voting correlates window against window, so a long
        # matched-filter template is truncated to one window for the votes
        template = full_template if len(full_template) <= iqcore.WINDOW_SIZE else \
            iqcore.IQBuffer(full_template.samples[: iqcore.WINDOW_SIZE], rate)
        if args.corr_out:
            corr = channel.correlate_template(buf, full_template)
            with open(args.corr_out, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["lag", "correlation"])
                for lag, value in enumerate(corr):
                    writer.writerow([lag, f"{value:.6f}"])
            print(f"wrote correlation curve ({corr.size} lags) to {args.corr_out}")

    pipe = channel.BlockPipe(block_size=args.block_size)
    producer = threading.Thread(target=channel.stream_blocks, args=(buf.samples, pipe))
    producer.start()

    vote = detector.VoteState(batch_size=args.batch)
    pending = np.empty(0, dtype=np.complex64)
    window_bits: list[int] = []
    probs_rows = []
    n_windows = 0
    for block in pipe:
        pending = np.concatenate([pending, block])
        usable = pending.size // iqcore.WINDOW_SIZE
        if usable == 0:
            continue
        windows = pending[: usable * iqcore.WINDOW_SIZE].reshape(usable, iqcore.WINDOW_SIZE)
        pending = pending[usable * iqcore.WINDOW_SIZE :]
        for row in windows:
            w = iqcore.Window1024(row, iqcore.Domain.TIME)
            if weights is None:
                hit, peak = channel.matched_filter_detect(
                    iqcore.IQBuffer(row, rate), template, args.threshold)
                window_bits.append(1 if hit else 0)
                probs_rows.append((n_windows, peak))
            else:
                spec_w = iqcore.to_frequency(w).values
                feats = np.stack([spec_w.real, spec_w.imag], axis=1)[None]
                prob = float(detector.forward(feats, weights)[0])
                window_bits.append(int(prob >= detector.VOTE_THRESHOLD))
                probs_rows.append((n_windows, prob))
            n_windows += 1
            if len(window_bits) == args.batch:
                vote, verdict = detector.vote_step(vote, window_bits)
                window_bits.clear()
                if verdict is not None:
                    print(f"window {verdict.window_index}: radar="
                          f"{verdict.radar_present} vote={verdict.vote_fraction:.2f}")
    producer.join()
    if args.probs_out:
        with open(args.probs_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window", "score"])
            for idx, score in probs_rows:
                writer.writerow([idx, f"{score:.8f}"])
    print(f"processed {n_windows} windows")
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    spec = scenario.scenario_from_json(Path(args.scenario).read_text()) if args.scenario \
        else scenario.default_scenario()
    weights = detector.load_weights(args.weights) if args.weights else None
    result = controlplane.run_experiment(
        spec, {"radar_on_s": args.radar_on, "radar_off_s": args.radar_off},
        weights=weights, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    controlplane.save_events_jsonl(result.events, out_dir / "events.jsonl")
    controlplane.save_kpi_csv(result.kpi, out_dir / "kpi.csv")
    controlplane.save_occupancy_csv(result.occupancy, out_dir / "occupancy.csv")
    for event in result.events.events:
        print(f"{event.t_s:8.2f}  {event.name}")
    if result.detection_delay_s is not None:
        print(f"detection delay: {result.detection_delay_s:.2f} s (budget 60 s)")
    return EXIT_OK


def cmd_bench_latency(args) -> int:
    weights = detector.load_weights(args.weights) if args.weights else \
        detector.random_weights(seed=args.seed)
    sizes = [int(s) for s in args.batch_sizes.split(",")]
    results = detector.bench_latency(weights, sizes, trials=args.trials, seed=args.seed)
    rows = [(size, results[size]["mean_s"], results[size]["std_s"]) for size in sorted(results)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["batch_size", "mean_s", "std_s"])
            writer.writerows(rows)
    for size, mean, std in rows:
        print(f"batch {size:>4}: {mean*1e3:8.2f} ms +/- {std*1e3:.2f}")
    return EXIT_OK


def cmd_export_psd(args) -> int:
    manifest_path = str(args.infile) + ".json"
    rate = iqcore.read_manifest(manifest_path)["sample_rate_hz"] if \
        Path(manifest_path).exists() else args.sample_rate
    buf = iqcore.load_iq_file(args.infile, rate)
    psd = iqcore.psd_estimate(buf, args.nfft)
    freqs = (np.arange(args.nfft) - args.nfft // 2) * rate / args.nfft
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["freq_hz", "psd_db"])
        for f, p in zip(freqs, psd):
            writer.writerow([f"{f:.1f}", f"{p:.3f}"])
    print(f"wrote {args.nfft}-bin PSD to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="spectwin",
                     description="CBRS radar/cellular spectrum-sharing digital twin")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON parameter overrides")
        return p

    p = add("synth-radar", cmd_synth_radar, "generate the radar .iq file")
    p.add_argument("--out", required=True)

    p = add("synth-cellular", cmd_synth_cellular, "generate the OFDM cellular proxy")
    p.add_argument("--out", required=True)
    p.add_argument("--symbols", type=int, default=100)

    p = add("make-scenario", cmd_make_scenario, "write the default scenario JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--heatmap-out")
    p.add_argument("--taps-out")

    p = add("approx-taps", cmd_approx_taps, "constrain a raw tap profile")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=scenario.MAX_EMULATOR_TAPS)
    p.add_argument("--max-spread", type=float, default=scenario.MAX_DELAY_SPREAD_S)

    p = add("gen-dataset", cmd_gen_dataset, "generate the labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--records-per-cell", type=int)
    p.add_argument("--split", action="store_true", help="also assign train/val/test splits")

    p = add("emulate", cmd_emulate, "pass an .iq file through a tap set")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--taps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-power", type=float, default=0.0)
    p.add_argument("--rx-gain-db", type=float, default=0.0)
    p.add_argument("--sample-rate", type=float, default=6e6)

    p = add("detect", cmd_detect, "stream an .iq file through the detector")
    p.add_argument("--weights")
    p.add_argument("--input", required=True)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--template", help=".iq matched-filter template (baseline mode)")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--block-size", type=int, default=channel.STREAM_BLOCK_SIZE)
    p.add_argument("--sample-rate", type=float, default=6e6)
    p.add_argument("--corr-out", help="CSV of the full correlation curve")
    p.add_argument("--probs-out", help="CSV of per-window scores")

    p = add("run-experiment", cmd_run_experiment, "end-to-end vacate/resume experiment")
    p.add_argument("--scenario")
    p.add_argument("--radar-on", type=float, default=5.0)
    p.add_argument("--radar-off", type=float, default=9.0)
    p.add_argument("--weights")
    p.add_argument("--out-dir", required=True)

    p = add("bench-latency", cmd_bench_latency, "inference wall-time vs batch size")
    p.add_argument("--weights")
    p.add_argument("--batch-sizes", default="1,10,100")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--out")

    p = add("export-psd", cmd_export_psd, "Welch PSD CSV export")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nfft", type=int, default=1024)
    p.add_argument("--sample-rate", type=float, default=6e6)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except SpectwinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
