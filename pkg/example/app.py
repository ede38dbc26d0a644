"""Demo of training and comparing bag classifiers with the `mismm` library.

This demo performs the following actions:

- Simulates a training set and an independent test set from one scenario,
  keeping the latent instance labels of the test set
- Standardizes both with statistics of the training set
- Trains each requested method at a median-heuristic kernel width
- Scores the test bags and prints each method's AUROC
- For the distributional methods, checks how often the top scoring instance of a
  correctly detected positive bag is truly positive
"""

import argparse
import sys

import numpy as np

import mismm
from mismm.data import apply_scaler, fit_scaler
from mismm.evaluate import bag_auroc, sigma_grid
from mismm.methods import kernel_inputs
from mismm.simgen import SCENARIOS, ScenarioConfig, generate


def witness_rate(model, ds, instance_labels):
    """The fraction of detected positive bags whose top instance is positive"""
    scores = model.decision_function(ds.instances)
    hits = []
    for bag in ds.bags:
        members = list(bag.instance_indices)
        if bag.label != 1 or np.max(scores[members]) < 0:
            continue
        top = members[int(np.argmax(scores[members]))]
        hits.append(instance_labels[top] == 1)
    return float(np.mean(hits)) if hits else float("nan")


def parse_args():
    parser = argparse.ArgumentParser()
    parser.add_argument(
        "--scenario",
        help="the simulation scenario",
        choices=SCENARIOS,
        default="mean_diff",
    )
    parser.add_argument(
        "--bags",
        help="the number of training bags",
        type=int,
        default=50,
    )
    parser.add_argument(
        "--methods",
        help="comma separated method identifiers",
        type=lambda s: [mismm.MethodSpec.parse(m) for m in s.split(",")],
        default="mismm-heuristic,si-smm,mi-svm:univ1",
    )
    parser.add_argument("--C", help="the base penalty", type=float, default=1.0)
    parser.add_argument("--seed", help="the random seed", type=int, default=0)
    return parser.parse_args()


def main(args: argparse.Namespace):
    train_cfg = ScenarioConfig(args.scenario, args.bags, 3, 50, seed=args.seed)
    test_cfg = ScenarioConfig(args.scenario, 200, 3, 50, seed=args.seed + 1)
    train = generate(train_cfg).dataset
    labeled_test = generate(test_cfg)
    print(
        f"Simulated {train.n_bags} training bags "
        f"({len(train.positive_bags)} positive) of {args.scenario}"
    )

    scaler = fit_scaler(train)
    train = apply_scaler(train, scaler)
    test = apply_scaler(labeled_test.dataset, scaler)
    options = mismm.FitOptions(seed=args.seed, n_restarts=3)
    for method in args.methods:
        sigma = sigma_grid(kernel_inputs(method, train), (1.0,))[0]
        model = mismm.fit_method(method, train, args.C, sigma, options)
        line = (
            f"{str(method):<24} sigma {sigma:.3f}, "
            f"test AUROC {bag_auroc(model, test):.3f}"
        )
        if not isinstance(model, mismm.SummaryModel):
            rate = witness_rate(model, test, labeled_test.instance_labels)
            line += f", positive top instances {rate:.0%}"
        print(line)


if __name__ == "__main__":
    try:
        main(parse_args())
    except mismm.MismmException as e:
        print(f"The demo failed: {e}")
        sys.exit(1)
