#!/usr/bin/env python3
"""Generate a synthetic corpus for experiments and CLI exploration."""

import argparse

from roll.synth import build_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="corpus directory to create")
    parser.add_argument("--scenes", type=int, default=100)
    parser.add_argument("--episodes", type=int, default=5)
    parser.add_argument("--candidates", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--strip-keywords", action="store_true",
        help="omit answer keywords from every context (chance-level corpus)",
    )
    args = parser.parse_args()
    paths = build_corpus(
        args.out,
        n_scenes=args.scenes,
        n_candidates=args.candidates,
        n_episodes=args.episodes,
        keywords=not args.strip_keywords,
        seed=args.seed,
    )
    print(f"wrote corpus under {paths.root}")


if __name__ == "__main__":
    main()
