"""Command line entry point: simulate, locate, sweep, compare."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .harness import pipeline as pl
from .harness.config import ConfigError, ScenarioConfig
from .scene import direct_path, enumerate_first_order_paths

log = logging.getLogger("nlosloc")

SIM_COLUMNS = ["trial_id", "target_id", "truth_x", "truth_y", "truth_verdict", "n_paths",
               "min_path_m", "max_path_m"]


def _load(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig.from_dict({})
    if args.seed is not None:
        cfg = cfg.set("seed", args.seed)
    if args.trials is not None:
        cfg = cfg.set("trials", args.trials)
    return cfg


def cmd_simulate(cfg: ScenarioConfig, out: Path) -> None:
    """Ground truth per trial plus the raw trial-0 frames."""
    rows = []
    for i in range(cfg.trials):
        scene = cfg.scene or pl.random_scene(pl.trial_rng(cfg.seed, i), cfg.generator, cfg.grid)
        for t in scene.targets:
            paths = enumerate_first_order_paths(scene, t.id)
            d = [p.d_total for p in paths]
            rows.append([i, t.id, f"{t.position.x:.4f}", f"{t.position.y:.4f}",
                         "NLOS" if direct_path(scene, t.id) is None else "LOS", len(paths),
                         f"{min(d):.4f}" if d else "nan", f"{max(d):.4f}" if d else "nan"])
    with (out / "trials.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIM_COLUMNS)
        w.writerows(rows)
    n_los = sum(r[4] == "LOS" for r in rows)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_trials", "n_targets", "n_los", "n_nlos", "mean_paths"])
        w.writerow([cfg.trials, len(rows), n_los, len(rows) - n_los,
                    f"{sum(r[5] for r in rows) / max(len(rows), 1):.4f}"])
    _, details = pl.run_trial(cfg, 0, cfg.methods[:1])
    det = next(iter(details.values()))
    det.tlc.to_csv(out / "frame_tlc.csv")
    det.rlc.to_csv(out / "frame_rlc.csv")


def cmd_locate(cfg: ScenarioConfig, out: Path, spectrum: bool) -> None:
    records = pl.run_scenario(cfg)
    pl.write_trials_csv(out / "trials.csv", records)
    pl.write_summary_csv(out / "summary.csv", pl.summarize(records))
    pl.write_timing_csv(out / "timing.csv", records)
    if spectrum:
        _, details = pl.run_trial(cfg, 0, cfg.methods[:1])
        pl.tag_spectrum(cfg, next(iter(details.values()))).to_csv(out / "spectrum.csv")


def cmd_sweep(cfg: ScenarioConfig, out: Path) -> None:
    sw = cfg.raw["sweep"]
    if sw is None:
        raise ConfigError("sweep: the config needs a sweep section with axis and values")
    records, rows = pl.sweep(cfg, sw["axis"], sw["values"])
    pl.write_trials_csv(out / "trials.csv", records)
    pl.write_summary_csv(out / "summary.csv", rows)


def cmd_compare(cfg: ScenarioConfig, out: Path) -> None:
    records, rows = pl.compare_report(cfg, cfg.methods)
    pl.write_trials_csv(out / "trials.csv", records)
    pl.write_summary_csv(out / "summary.csv", rows)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlosloc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("simulate", "draw scenes and write ground truth and raw frames"),
                       ("locate", "run the full localization pipeline"),
                       ("sweep", "run the pipeline over the config's sweep axis"),
                       ("compare", "compare two or more methods on common seeds")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", type=Path, help="JSON scenario file (defaults if omitted)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", type=Path, required=True, help="output directory")
        s.add_argument("--trials", type=int, help="override the trial count")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "locate":
            s.add_argument("--spectrum", action="store_true", help="also write spectrum.csv for trial 0")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "locate":
            cmd_locate(cfg, args.out, args.spectrum)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.out)
        else:
            cmd_compare(cfg, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
