#!/usr/bin/env python3
"""Fusion-method comparison: run the full three-branch model under each of
the five fusion variants and report per-category accuracy."""

import argparse

from roll.evaluate import CATEGORY_ORDER, EvalConfig, evaluate, load_corpus

METHODS = ["average", "maximum", "self_att", "qa_att", "fc"]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", required=True)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    corpus = load_corpus(args.data_root)
    header = ["method"] + [c[:5] for c in CATEGORY_ORDER] + ["all"]
    print("  ".join(f"{h:<10}" if i == 0 else f"{h:>7}" for i, h in enumerate(header)))
    for method in METHODS:
        config = EvalConfig(fusion_method=method, jobs=args.jobs, seed=args.seed)
        report = evaluate(corpus, config)
        cells = [
            f"{report.categories[c]['accuracy']:.3f}" if c in report.categories else "-"
            for c in CATEGORY_ORDER
        ]
        print("  ".join([f"{method:<10}"] + [f"{v:>7}" for v in cells]
                        + [f"{report.overall:>7.3f}"]))


if __name__ == "__main__":
    main()
