"""
Main entry point for the Well Production Capacity estimation project.
Subcommands: preprocess, simulate, fit, report.

    python main.py simulate --kind B --blocks 20 --times 6 --wells 1000 --seed 1
    python main.py preprocess --input outputs/wells.csv --kind B
    python main.py fit --kind B
    python main.py report --aggregate "DN87au+DN87cm"
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

# Add project root to path
BASE_DIR = Path(__file__).resolve().parent
sys.path.append(str(BASE_DIR))

from simulation.engine import SyntheticWellGenerator
from simulation.scenarios import SCENARIOS
from src.config import RunConfig, build_run_config, default_output_dir, read_config_file
from src.data_loader import (
    load_dataset, manifest, read_draws, read_json, read_wells, save_dataset,
    write_draws, write_json,
)
from src.exceptions import DimensionError, WellcapError
from src.models import LAYOUT_VERSION, ParamLayout
from src.preprocessor import WellPreprocessor
from src.report import build_report
from src.sampler import fit

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_USAGE = 2

DATASET_FILE = "dataset.json"
PREPROCESS_REPORT_FILE = "preprocess_report.json"
DRAWS_FILE = "draws.csv"
SUMMARY_FILE = "posterior_summary.csv"
FIT_MANIFEST_FILE = "fit_manifest.json"

# CLI flag -> config file key
_OVERRIDES = {
    "input": "input", "output_dir": "output_dir", "kind": "kind",
    "granularity": "time_granularity", "scale_k": "scale_k",
    "first_period": "first_period", "last_period": "last_period",
    "chains": "chains", "warmup": "warmup", "draws": "draws", "seed": "seed",
    "target_accept": "target_accept", "max_tree_depth": "max_tree_depth", "cores": "cores",
    "aggregate": "aggregate", "aggregation_weights": "aggregation_weights", "bins": "histogram_bins",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values first, then every flag that was given."""
    values: Dict[str, str] = read_config_file(Path(args.config)) if getattr(args, "config", None) else {}
    for flag, key in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = str(value)
    if getattr(args, "clamp_negative", False):
        values["clamp_negative"] = "true"
    if getattr(args, "no_strict", False):
        values["strict"] = "false"
    config = build_run_config(values)
    if getattr(args, "progress", False):
        config.sampler = replace(config.sampler, progress=True)
    return config


def cmd_preprocess(config: RunConfig) -> int:
    if config.input_path is None:
        raise ValueError("preprocess needs --input (or input= in the config file)")
    print(f"📥 Loading wells from: {config.input_path}...")
    df = read_wells(config.input_path)

    print(f"🧹 Preparing dataset for model kind {config.kind.value}...")
    preprocessor = WellPreprocessor(config.kind, config.policy)
    dataset = preprocessor.run(df)
    quality = preprocessor.get_quality_report()

    print("📊 Data Quality Report:")
    for k, v in quality.items():
        print(f"   - {k}: {v}")

    out = config.output_dir
    dataset_path = out / DATASET_FILE
    report_path = out / PREPROCESS_REPORT_FILE
    save_dataset(dataset, dataset_path)
    write_json(quality, report_path)
    write_json(manifest("preprocess", config.to_dict(), [config.input_path],
                        [dataset_path, report_path]), out / "preprocess_manifest.json")
    print(f"✅ {dataset.n_wells} wells in {dataset.n_blocks} blocks x {dataset.n_times} periods "
          f"-> {dataset_path}")
    return EXIT_OK


def cmd_simulate(kind: Optional[str], n_blocks: int, n_times: int, n_wells: int, seed: int,
                 output_dir: Path, scenario: Optional[str] = None,
                 sigma_y: Optional[float] = None) -> int:
    if scenario is not None:
        if scenario not in SCENARIOS:
            raise ValueError(f"Unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
        definition = SCENARIOS[scenario]
        generator = definition.generator(seed)
        truth_params = dict(definition.truth_params)
    else:
        generator = SyntheticWellGenerator(kind or "B", n_blocks, n_times, n_wells, seed=seed)
        truth_params = {}
    if sigma_y is not None:
        truth_params["sigma_y"] = sigma_y

    print(f"🎲 Simulating {generator.n_wells} wells (kind {generator.kind.value}, "
          f"{generator.n_blocks} blocks, {generator.n_times} periods, seed {generator.seed})...")
    result = generator.generate(truth_params or None)
    written = result.write(output_dir)
    write_json(manifest("simulate", {
        "kind": generator.kind.value, "n_blocks": generator.n_blocks, "n_times": generator.n_times,
        "n_wells": generator.n_wells, "seed": generator.seed, "scenario": scenario,
        "truth_params": truth_params,
    }, [], written, seed=generator.seed), Path(output_dir) / "simulate_manifest.json")
    print(f"✅ Wells written to {written[0]}, truth to {written[1]}")
    return EXIT_OK


def cmd_fit(config: RunConfig) -> int:
    out = config.output_dir
    dataset_path = out / DATASET_FILE
    dataset = load_dataset(dataset_path)
    if dataset.kind is not config.kind:
        raise DimensionError(f"{dataset_path} was prepared for kind {dataset.kind.value}, "
                             f"not {config.kind.value}")

    s = config.sampler
    print(f"🧠 Fitting kind {config.kind.value}: {s.chains} chains x ({s.warmup} warm-up + {s.draws} draws)...")
    result = fit(config.kind, dataset, config.priors, config.sampler)

    draws_path = out / DRAWS_FILE
    summary_path = out / SUMMARY_FILE
    write_draws(result.draws, draws_path)
    result.summary.to_csv(summary_path, na_rep="NA", float_format="%.6g")
    diagnostics = result.diagnostics()
    write_json(manifest("fit", config.to_dict(), [dataset_path], [draws_path, summary_path],
                        seed=s.seed, kind=config.kind.value, layout_version=LAYOUT_VERSION,
                        diagnostics=diagnostics,
                        wall_time_seconds=result.draws.wall_time.tolist()),
               out / FIT_MANIFEST_FILE)

    print(f"   - Max R-hat: {diagnostics['max_rhat']}")
    print(f"   - Min bulk ESS: {diagnostics['min_ess_bulk']}")
    print(f"   - Divergences: {diagnostics['divergences']}")
    if not result.converged:
        for issue in result.problems():
            print(f"⚠️ {issue}")
        if config.strict:
            print("❌ Convergence checks failed (use --no-strict to accept the draws anyway)")
            return EXIT_DIAGNOSTICS
        print("⚠️ Continuing despite failed convergence checks (--no-strict)")
    print(f"✅ Draws written to {draws_path}")
    return EXIT_OK


def cmd_report(config: RunConfig) -> int:
    out = config.output_dir
    dataset_path = out / DATASET_FILE
    draws_path = out / DRAWS_FILE
    dataset = load_dataset(dataset_path)
    if dataset.kind is not config.kind:
        raise DimensionError(f"{dataset_path} was prepared for kind {dataset.kind.value}, "
                             f"not {config.kind.value}")
    draws = read_draws(draws_path)

    expected = ParamLayout(dataset.kind, dataset.n_blocks, dataset.n_times).names()
    if draws.param_names != expected:
        raise DimensionError(f"{draws_path} does not match the kind {dataset.kind.value} layout "
                             f"({len(draws.param_names)} columns, expected {len(expected)})")

    fit_manifest_path = out / FIT_MANIFEST_FILE
    diagnostics = read_json(fit_manifest_path).get("diagnostics") if fit_manifest_path.exists() else None

    print(f"📈 Building report for kind {dataset.kind.value}...")
    bundle = build_report(draws, dataset, config)
    if diagnostics is not None:
        bundle.summary["diagnostics"] = diagnostics
    written = bundle.write(out)
    inputs = [p for p in (dataset_path, draws_path, fit_manifest_path) if p.exists()]
    write_json(manifest("report", config.to_dict(), inputs, written), out / "report_manifest.json")

    print(f"   - RMSD: {bundle.summary['rmsd']:.2f} bbl")
    low, high = bundle.summary["discrepancy_interval_90"]
    print(f"   - 90% discrepancy interval: [{low:.2f}, {high:.2f}] bbl")
    print(f"✅ Report written to {out}")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--output-dir", dest="output_dir", help="working/output directory")
    parser.add_argument("--kind", help="model kind: A, B or C")
    parser.add_argument("--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Small-area estimation of well production capacity")
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="filter, impute, standardize and index wells")
    _add_common(pre)
    pre.add_argument("--input", help="wells CSV")
    pre.add_argument("--granularity", choices=["year", "year_month"])
    pre.add_argument("--scale-k", dest="scale_k", type=int, choices=[1, 2])
    pre.add_argument("--first-period", dest="first_period")
    pre.add_argument("--last-period", dest="last_period")

    sim = sub.add_parser("simulate", help="generate synthetic wells from known parameters")
    sim.add_argument("--kind", default="B")
    sim.add_argument("--blocks", type=int, default=20)
    sim.add_argument("--times", type=int, default=6)
    sim.add_argument("--wells", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--scenario", choices=sorted(SCENARIOS))
    sim.add_argument("--sigma-y", dest="sigma_y", type=float)
    sim.add_argument("--output-dir", dest="output_dir")
    sim.add_argument("--verbose", action="store_true")

    fit_parser = sub.add_parser("fit", help="sample the posterior with NUTS")
    _add_common(fit_parser)
    fit_parser.add_argument("--chains", type=int)
    fit_parser.add_argument("--warmup", type=int)
    fit_parser.add_argument("--draws", type=int)
    fit_parser.add_argument("--seed", type=int)
    fit_parser.add_argument("--target-accept", dest="target_accept", type=float)
    fit_parser.add_argument("--max-tree-depth", dest="max_tree_depth", type=int)
    fit_parser.add_argument("--cores", type=int)
    fit_parser.add_argument("--no-strict", dest="no_strict", action="store_true",
                            help="exit 0 even when R-hat or divergence checks fail")
    fit_parser.add_argument("--progress", action="store_true", help="per-chain progress bars")

    rep = sub.add_parser("report", help="estimate tables, fit metrics and aggregates")
    _add_common(rep)
    rep.add_argument("--clamp-negative", dest="clamp_negative", action="store_true")
    rep.add_argument("--aggregate", help="block groups, e.g. 'DN87au+DN87cm;DN87cq+DN87cw'")
    rep.add_argument("--aggregation-weights", dest="aggregation_weights", choices=["equal", "counts"])
    rep.add_argument("--bins", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "simulate":
            output_dir = Path(args.output_dir) if args.output_dir else default_output_dir()
            return cmd_simulate(args.kind, args.blocks, args.times, args.wells, args.seed,
                                output_dir, args.scenario, args.sigma_y)
        config = resolve_config(args)
        handlers = {"preprocess": cmd_preprocess, "fit": cmd_fit, "report": cmd_report}
        return handlers[args.command](config)
    except (FileNotFoundError, WellcapError, OSError, ValueError, KeyError) as e:
        print(f"❌ {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
