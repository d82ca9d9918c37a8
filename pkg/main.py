"""
Main entry point for the spike camera toolkit

This script provides a command-line interface for generating scenes,
simulating spike streams, calibrating noise parameters and analyzing streams.
"""

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from config import SpikeCamConfig, SimulationMode, DecompositionSplit, NoisePreset
from cache import RunCache
from orchestrator import SpikeCamOrchestrator, COMPARISON_GRAYS
from sensor_core import sample_spatial_maps, preset_params
from scenegen import uniform_scene, two_region_scene, scene_for_sensor
from calibration import CalibrationError, DecompositionPriors
from analysis import (spikes_per_sampling, spike_counts, isi_histogram, isi_statistics,
                      bootstrap_isi_variance, tfp_reconstruct, tfi_reconstruct,
                      write_histogram, write_statistics, write_image)
from stream_io import (StreamFormatError, ParamsError, write_luminance, read_spikes, write_maps,
                       parse_params)
from models import SensorConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def setup_logging():
    """Set up logging configuration"""
    logging.basicConfig(
        level=getattr(logging, SpikeCamConfig.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(SpikeCamConfig.LOG_FILE)
        ]
    )


def _load_config(params: Optional[str]):
    if params is None:
        cfg = SensorConfig()
        return cfg, None
    return parse_params(params)


def cmd_scene(args) -> int:
    """Write a generated luminance container"""
    cfg, _ = _load_config(args.params)
    if args.height or args.width:
        cfg = dataclasses.replace(cfg, height=args.height or cfg.height, width=args.width or cfg.width)

    if args.kind == "uniform":
        seq = uniform_scene(args.gray, args.L_monitor, args.frames, cfg)
    elif args.kind == "two-region":
        seq = two_region_scene(args.low, args.high, args.frames, cfg)
    else:
        contrast = tuple(args.contrast) if args.contrast else None
        seq = scene_for_sensor(args.seed, cfg, (args.vx, args.vy), args.frames,
                               contrast=contrast, wrap=not args.clamp)

    write_luminance(seq, args.out)
    print(f"🎞️ Scene written to: {args.out}")
    print(f"   - Frames: {seq.n_frames} of {seq.shape[0]}x{seq.shape[1]}")
    print(f"   - Flow label: {'yes' if seq.flow is not None else 'no'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    """Simulate a luminance container into a spike stream"""
    cache = None if args.no_cache else RunCache()
    orchestrator = SpikeCamOrchestrator.from_params_file(args.params, workers=args.workers, cache=cache)
    mode = SimulationMode(args.mode)
    total, n_frames, cached = orchestrator.simulate_file(args.lum, args.out, args.seed, mode,
                                                         maps_path=args.maps)

    print(f"⚡ Spike stream saved to: {args.out}{' (cached)' if cached else ''}")
    print(f"   - Mode: {mode.value}, seed {args.seed}")
    print(f"   - Total spikes: {total}")
    if n_frames:
        print(f"   - Mean spikes per frame: {total / n_frames:.3f}")
    return EXIT_OK


def cmd_maps(args) -> int:
    """Draw and store a fixed-pattern noise state"""
    cfg, noise = _load_config(args.params)
    orchestrator = SpikeCamOrchestrator(cfg, noise)
    maps = sample_spatial_maps(orchestrator.cfg, orchestrator.noise, args.seed)
    write_maps(maps, args.out)
    print(f"🗺️ Noise maps saved to: {args.out}")
    return EXIT_OK


def _priors(args) -> DecompositionPriors:
    return DecompositionPriors(alpha_global=args.alpha_global, split=DecompositionSplit(args.split))


def cmd_calibrate(args) -> int:
    """Calibrate noise parameters from a scene manifest"""
    cache = RunCache()
    if args.history:
        runs = cache.calibration_history(args.manifest)
        print(f"📚 {len(runs)} recorded calibrations")
        for run in runs:
            estimates = run["estimates"]
            mu_dark = f"{estimates['mu_dark']:.4e}" if estimates else "null"
            print(f"   - {run['timestamp']}: {run['manifest_path']} -> {run['report_path']} "
                  f"({run['n_scenes']} scenes, mu_dark {mu_dark})")
        return EXIT_OK
    if not args.manifest or not args.out:
        print("⚠️ calibrate needs --manifest and --out (or --history)", file=sys.stderr)
        return EXIT_USAGE

    orchestrator = SpikeCamOrchestrator.from_params_file(args.params, workers=args.workers, cache=cache)
    report = orchestrator.calibrate_manifest(args.manifest, args.out, maps_path=args.maps,
                                             priors=_priors(args))

    print(f"\n🎉 Calibration finished")
    print(f"📝 Report saved to: {args.out}")
    if report.estimates is None:
        print("⚠️ No usable pixel; estimates are null")
    else:
        est = report.estimates
        print(f"\n📊 Estimates:")
        print(f"   - mu_dark: {est.mu_dark:.4e}")
        print(f"   - sigma_dark_S: {est.sigma_dark_S:.4e}")
        print(f"   - sigma_C_S: {est.sigma_C_S:.4e}")
        print(f"   - sigma_V_S: {est.sigma_V_S:.4e}")
    print(f"   - Dead pixels: {len(report.dead_pixels)}")
    for warning in report.warnings:
        print(f"⚠️ {warning}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    """Write statistics and reconstructions of a spike stream"""
    if args.bootstrap and args.seed is None:
        print("⚠️ --bootstrap needs --seed", file=sys.stderr)
        return EXIT_USAGE
    stream = read_spikes(args.input)
    out_dir = Path(args.out)
    os.makedirs(out_dir, exist_ok=True)

    counts = spike_counts(stream)
    print(f"🔍 Stream: {stream.n_frames} frames of {stream.shape[0]}x{stream.shape[1]}, "
          f"{int(counts.sum())} spikes")
    if stream.n_frames:
        print(f"   - Spikes per sampling: {spikes_per_sampling(stream):.4f}")

    if args.counts:
        write_image(counts, out_dir / "counts.csv")
        print(f"📝 Count map saved to: {out_dir / 'counts.csv'}")
    if args.isi:
        hist = isi_histogram(stream)
        stats = isi_statistics(hist)
        stats["n_intervals"] = hist.n_intervals
        stats["pixels_contributing"] = hist.pixels_contributing
        if args.bootstrap:
            variance, low, high = bootstrap_isi_variance(stream, seed=args.seed)
            stats.update({"bootstrap_variance": variance, "bootstrap_low": low, "bootstrap_high": high})
        write_histogram(hist, out_dir / "isi_histogram.csv")
        write_statistics(stats, out_dir / "isi_statistics.txt")
        print(f"📝 ISI histogram saved to: {out_dir / 'isi_histogram.csv'} ({hist.n_intervals} intervals)")
    if args.tfp:
        image = tfp_reconstruct(stream, window=args.tfp, center=args.at)
        write_image(image, out_dir / "tfp.csv")
        print(f"📝 TFP image saved to: {out_dir / 'tfp.csv'}")
    if args.tfi:
        at = args.at if args.at is not None else stream.n_frames // 2
        image = tfi_reconstruct(stream, at)
        write_image(image, out_dir / "tfi.csv")
        print(f"📝 TFI image saved to: {out_dir / 'tfi.csv'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    """Compare the noise models over a grayscale sweep"""
    orchestrator = SpikeCamOrchestrator.from_params_file(args.params, workers=args.workers)
    if args.preset:
        orchestrator.cfg, orchestrator.noise = preset_params(orchestrator.cfg, NoisePreset(args.preset))
    grays = [g / 255 for g in args.grays] if args.grays else list(COMPARISON_GRAYS)
    comparison = orchestrator.compare_models(args.seed, args.frames, grays=grays, L_monitor=args.L_monitor)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(comparison.to_text())

    print(f"📊 Model comparison saved to: {args.out}")
    for name, rates in comparison.spikes_per_sampling.items():
        print(f"   - {name}: {', '.join(f'{r:.2f}' for r in rates)} spikes per sampling")
    return EXIT_OK


def cmd_protocol(args) -> int:
    """Simulate the calibration protocol and calibrate from it"""
    orchestrator = SpikeCamOrchestrator.from_params_file(args.params, workers=args.workers)
    result = orchestrator.run_calibration_protocol(args.seed, args.frames, n_levels=args.levels,
                                                   L_monitor=args.L_monitor)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(result.report.to_text())
    print(f"📝 Protocol report saved to: {args.out}")
    print(f"   - Median slope error: {100 * result.slope_error():.2f}%")
    print(f"   - Median intercept error: {100 * result.intercept_error():.2f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Spike camera simulator and calibration toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    # Scene generation
    scene = commands.add_parser("scene", help="Generate a luminance container")
    scene.add_argument("kind", choices=["uniform", "translate", "two-region"])
    scene.add_argument("--frames", type=int, required=True, help="Number of frames")
    scene.add_argument("--out", required=True, help="Output .sclm file")
    scene.add_argument("--params", help="Parameter file providing the sensor geometry")
    scene.add_argument("--height", type=int, help="Override sensor rows")
    scene.add_argument("--width", type=int, help="Override sensor columns")
    scene.add_argument("--gray", type=float, default=0.0, help="Grayscale level (uniform)")
    scene.add_argument("--L-monitor", dest="L_monitor", type=float, default=SpikeCamConfig.L_MONITOR,
                       help="Monitor luminance at gray 1 (uniform)")
    scene.add_argument("--low", type=float, default=0.25, help="Left-half luminance (two-region)")
    scene.add_argument("--high", type=float, default=1.0, help="Right-half luminance (two-region)")
    scene.add_argument("--seed", type=int, help="Texture seed (translate)")
    scene.add_argument("--vx", type=float, default=0.0, help="Horizontal velocity, px/frame (translate)")
    scene.add_argument("--vy", type=float, default=0.0, help="Vertical velocity, px/frame (translate)")
    scene.add_argument("--contrast", type=float, nargs=2, help="Texture luminance range (translate)")
    scene.add_argument("--clamp", action="store_true", help="Clamp borders instead of wrapping (translate)")
    scene.set_defaults(handler=cmd_scene)

    # Simulation
    sim = commands.add_parser("simulate", help="Simulate a spike stream")
    sim.add_argument("--lum", required=True, help="Input .sclm luminance file")
    sim.add_argument("--params", help="Parameter file (defaults when omitted)")
    sim.add_argument("--seed", type=int, required=True, help="Random seed")
    sim.add_argument("--mode", choices=[m.value for m in SimulationMode], default="noisy")
    sim.add_argument("--maps", help="Reuse a stored .scnm noise-map file")
    sim.add_argument("--workers", type=int, help="Row tiles simulated concurrently")
    sim.add_argument("--no-cache", action="store_true", help="Ignore the run cache")
    sim.add_argument("--out", required=True, help="Output .scsm file")
    sim.set_defaults(handler=cmd_simulate)

    maps = commands.add_parser("maps", help="Draw fixed-pattern noise maps")
    maps.add_argument("--params", help="Parameter file (defaults when omitted)")
    maps.add_argument("--seed", type=int, required=True, help="Random seed")
    maps.add_argument("--out", required=True, help="Output .scnm file")
    maps.set_defaults(handler=cmd_maps)

    # Calibration
    cal = commands.add_parser("calibrate", help="Calibrate noise parameters")
    cal.add_argument("--manifest", help="Scene manifest: gray L_monitor stream [level] per line")
    cal.add_argument("--out", help="Output report file")
    cal.add_argument("--maps", help="Also write the estimated noise maps (.scnm)")
    cal.add_argument("--params", help="Nominal sensor parameters")
    cal.add_argument("--split", choices=[s.value for s in DecompositionSplit], default="capacitance",
                     help="Circuit quantity absorbing threshold deviations")
    cal.add_argument("--alpha-global", dest="alpha_global", type=float,
                     help="Fix the global conversion rate instead of estimating it")
    cal.add_argument("--workers", type=int, help="Threads used for the fits")
    cal.add_argument("--history", action="store_true", help="List recorded calibrations")
    cal.set_defaults(handler=cmd_calibrate)

    proto = commands.add_parser("protocol", help="Simulate the calibration protocol end to end")
    proto.add_argument("--params", help="Parameter file (defaults when omitted)")
    proto.add_argument("--seed", type=int, required=True, help="Random seed")
    proto.add_argument("--frames", type=int, required=True, help="Frames per scene")
    proto.add_argument("--levels", type=int, default=SpikeCamConfig.CALIBRATION_LEVELS)
    proto.add_argument("--L-monitor", dest="L_monitor", type=float, default=SpikeCamConfig.L_MONITOR)
    proto.add_argument("--workers", type=int)
    proto.add_argument("--out", required=True, help="Output report file")
    proto.set_defaults(handler=cmd_protocol)

    # Analysis
    ana = commands.add_parser("analyze", help="Analyze a spike stream")
    ana.add_argument("--in", dest="input", required=True, help="Input .scsm file")
    ana.add_argument("--out", required=True, help="Output directory")
    ana.add_argument("--isi", action="store_true", help="ISI histogram and statistics")
    ana.add_argument("--counts", action="store_true", help="Per-pixel spike counts")
    ana.add_argument("--tfp", type=int, help="TFP reconstruction with this window")
    ana.add_argument("--tfi", action="store_true", help="TFI reconstruction")
    ana.add_argument("--at", type=int, help="Reconstruction frame (defaults to the middle)")
    ana.add_argument("--bootstrap", action="store_true", help="Bootstrap interval of the ISI variance")
    ana.add_argument("--seed", type=int, help="Bootstrap seed")
    ana.set_defaults(handler=cmd_analyze)

    cmp_ = commands.add_parser("compare", help="Compare noise models across grayscales")
    cmp_.add_argument("--params", help="Parameter file (defaults when omitted)")
    cmp_.add_argument("--seed", type=int, required=True, help="Random seed")
    cmp_.add_argument("--frames", type=int, required=True, help="Frames per scene")
    cmp_.add_argument("--grays", type=float, nargs="+", help="Grayscales out of 255")
    cmp_.add_argument("--L-monitor", dest="L_monitor", type=float, default=SpikeCamConfig.L_MONITOR)
    cmp_.add_argument("--preset", choices=[p.value for p in NoisePreset],
                      help="Named noise parameter set applied on top of --params")
    cmp_.add_argument("--workers", type=int)
    cmp_.add_argument("--out", required=True, help="Output statistics file")
    cmp_.set_defaults(handler=cmd_compare)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the spike camera toolkit

    Returns:
        Exit code: 0 success, 2 usage, 3 IO or format, 4 numerical failure
    """
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.command == "scene" and args.kind == "translate" and args.seed is None:
        print("⚠️ scene translate needs --seed", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.handler(args)
    except ParamsError as e:
        logging.error(f"Parameter error: {e}")
        return EXIT_USAGE
    except (StreamFormatError, OSError) as e:
        logging.error(f"I/O error: {e}")
        return EXIT_IO
    except (CalibrationError, FloatingPointError) as e:
        logging.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except ValueError as e:
        logging.error(f"Invalid input: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
