#!/usr/bin/env python3
"""Branch-subset ablation grid: accuracy per question category for every
combination of the read / observe / recall branches."""

import argparse

from roll.evaluate import CATEGORY_ORDER, EvalConfig, evaluate, load_corpus

SUBSETS = [
    ("read",),
    ("observe",),
    ("recall",),
    ("read", "observe"),
    ("observe", "recall"),
    ("read", "recall"),
    ("read", "observe", "recall"),
]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", required=True)
    parser.add_argument("--fusion", default="fc")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    corpus = load_corpus(args.data_root)
    header = ["branches"] + [c[:5] for c in CATEGORY_ORDER] + ["all"]
    print("  ".join(f"{h:<22}" if i == 0 else f"{h:>7}" for i, h in enumerate(header)))
    for subset in SUBSETS:
        config = EvalConfig(branches=subset, fusion_method=args.fusion, jobs=args.jobs)
        report = evaluate(corpus, config)
        cells = [
            f"{report.categories[c]['accuracy']:.3f}" if c in report.categories else "-"
            for c in CATEGORY_ORDER
        ]
        name = "-".join(subset)
        print("  ".join([f"{name:<22}"] + [f"{v:>7}" for v in cells]
                        + [f"{report.overall:>7.3f}"]))


if __name__ == "__main__":
    main()
