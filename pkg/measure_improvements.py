import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

# Add project root to path
BASE_DIR = Path(__file__).resolve().parent
sys.path.append(str(BASE_DIR))

from simulation.scenarios import SCENARIOS
from src.config import SamplerConfig
from src.preprocessor import WellPreprocessor
from src.report import estimate_table, observed_table, posterior_mean_predictions
from src.sampler import fit


def cell_mse(table, truth) -> float:
    mask = table.counts > 0
    return float(np.mean((table.values[mask] - truth.values[mask]) ** 2))


def main(argv=None):
    parser = argparse.ArgumentParser(description="Model-based vs raw cell averages across seeds")
    parser.add_argument("--scenario", default="sparse_cells", choices=sorted(SCENARIOS))
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--warmup", type=int, default=300)
    parser.add_argument("--draws", type=int, default=500)
    parser.add_argument("--out", default="analysis_improvements.csv")
    args = parser.parse_args(argv)

    scenario = SCENARIOS[args.scenario]
    print(f"🔎 Measuring partial pooling on '{scenario.name}' over {args.seeds} seeds...")

    results = []
    for seed in tqdm(range(scenario.seed, scenario.seed + args.seeds)):
        sim = scenario.generate(seed)
        preprocessor = WellPreprocessor(scenario.kind)
        dataset = preprocessor.run(sim.wells)

        sampler = SamplerConfig(chains=3, warmup=args.warmup, draws=args.draws, seed=seed)
        result = fit(scenario.kind, dataset, sampler_config=sampler)
        predictions = posterior_mean_predictions(result.draws, scenario.kind, dataset)

        truth = estimate_table(sim.expected_oil, dataset)
        model_mse = cell_mse(estimate_table(predictions, dataset), truth)
        raw_mse = cell_mse(observed_table(dataset), truth)

        results.append({
            "seed": seed,
            "model_mse": model_mse,
            "raw_mse": raw_mse,
            "pct_improvement": (raw_mse - model_mse) / raw_mse * 100 if raw_mse > 0 else 0,
            "single_well_cells": int((dataset.cell_counts == 1).sum()),
            "max_rhat": result.max_rhat,
            "divergences": result.divergences,
        })

    results_df = pd.DataFrame(results)
    print("\n🏆 MODEL-BASED vs RAW CELL AVERAGES (MSE against the true cell means):")
    print(results_df.to_string(index=False))
    wins = int((results_df["model_mse"] < results_df["raw_mse"]).sum())
    print(f"\n📊 Model-based estimates win on {wins} / {len(results_df)} seeds "
          f"(mean improvement {results_df['pct_improvement'].mean():.1f}%)")

    results_df.to_csv(args.out, index=False)
    print(f"\n📂 Full results saved to {args.out}")


if __name__ == "__main__":
    main()
