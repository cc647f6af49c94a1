"""
Experiment 1: Scenario One, Settings 1-5
Every component is shared by both views and the outcome loads on components 1-2.
BIP (no group information) vs BIPnet (10 signal groups + 1 noise group per view).

Settings:
  1  100 network variables load on all 4 components
  2  only the first 30 network variables are signals
  3  Setting 1 with up to 5 variables per group switched off
  4  Setting 2 with up to 5 variables switched off in the first 3 groups
  5  disjoint 25-variable supports per component
"""

import argparse
import logging
from pathlib import Path

import pandas as pd

from bipnet.create_datasets import ScenarioSpec
from bipnet.model_core import Hyperparameters
from bipnet.simulation_study import check_targets, mean_se_table, print_targets, run_replicates

RANDOM_STATE = 42
SETTINGS = (1, 2, 3, 4, 5)
N_REPLICATES = 5
N_TRAIN, N_TEST, P = 200, 200, 500
RESULTS_DIR = Path(__file__).parent / "results"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--replicates", type=int, default=N_REPLICATES)
    parser.add_argument("--n_iter", type=int, default=5000)
    parser.add_argument("--settings", type=int, nargs="+", default=list(SETTINGS))
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    hp = Hyperparameters(n_iter=args.n_iter, burn_in=args.n_iter // 2)
    frames = []
    for setting in args.settings:
        print("\n" + "=" * 70)
        print(f"SCENARIO ONE - SETTING {setting}")
        print("=" * 70)
        for use_groups in (False, True):
            def make_spec(rep, setting=setting):
                return ScenarioSpec(scenario=1, setting=setting, n=N_TRAIN, p1=P, p2=P,
                                    n_test=N_TEST, seed=RANDOM_STATE + rep)
            label = "BIPnet" if use_groups else "BIP"
            df = run_replicates(make_spec, hp, args.replicates, use_groups=use_groups, label=label)
            df["setting"] = setting
            frames.append(df)

    results = pd.concat(frames, ignore_index=True)
    RESULTS_DIR.mkdir(exist_ok=True)
    results.to_csv(RESULTS_DIR / "scenario_one_replicates.csv", index=False)

    table = mean_se_table(results, by=["setting", "model"])
    cols = ["setting", "model", "X1_fnr", "X1_fpr", "X1_f_measure", "X2_fnr", "X2_fpr", "X2_f_measure",
            "X1_group_auc", "X2_group_auc", "mse"]
    print("\n" + "=" * 70)
    print("SUMMARY - mean (se) over replicates")
    print("=" * 70)
    print(table[[c for c in cols if c in table.columns]].to_string(index=False))
    table.to_csv(RESULTS_DIR / "scenario_one_summary.csv", index=False)

    targets = check_targets(results)
    print_targets(targets)
    targets.to_csv(RESULTS_DIR / "scenario_one_targets.csv", index=False)


if __name__ == "__main__":
    main()
