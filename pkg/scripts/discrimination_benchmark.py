#!/usr/bin/env python3
"""Rank a true theoretical spectrum against random decoys with three scores.

Trains shared parameters on a separate simulated set, then reports top-1
accuracy for the likelihood score, the similarity index and Xcorr, plus a
calibration table of the likelihood posteriors.
"""

import argparse
import sys

import numpy as np

from psmlik.baselines import similarity_index, xcorr
from psmlik.evaluation import calibration_bins
from psmlik.scoring import posteriors, score
from psmlik.simulator import default_params, sample_observed, synthetic_corpus
from psmlik.training import FitOptions, TrainingPair, fit


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--charge", type=int, default=2, choices=(1, 2))
    ap.add_argument("--n-spectra", type=int, default=500)
    ap.add_argument("--decoys", type=int, default=9)
    ap.add_argument("--n-train", type=int, default=50)
    ap.add_argument("--seed", type=int, default=500)
    args = ap.parse_args(argv)

    theta_true, mu = default_params(args.charge)
    rng = np.random.default_rng([args.seed, 1])
    train = [TrainingPair(sample_observed(T, theta_true, mu, rng=rng).observed, T)
             for T in synthetic_corpus(args.n_train, args.charge, seed=args.seed, prefix="TRN")]
    state = fit(train, FitOptions(seed=3))
    print(f"trained on {len(train)} pairs: beta {state.theta0.beta:.3f}, sigma {state.theta0.sigma:.4f}, "
          f"{state.iterations} iterations")

    targets = synthetic_corpus(args.n_spectra, args.charge, seed=args.seed + 1, prefix="TGT")
    decoys = synthetic_corpus(args.n_spectra * args.decoys, args.charge, seed=args.seed + 2, prefix="DEC")
    rng = np.random.default_rng([args.seed + 1, 1])
    hits = {"likelihood": 0, "similarity": 0, "xcorr": 0}
    pooled = []
    for s, T in enumerate(targets):
        O = sample_observed(T, theta_true, mu, rng=rng).observed
        cands = [T] + decoys[s * args.decoys:(s + 1) * args.decoys]
        post = posteriors([score(O, c, state.theta0) for c in cands])
        hits["likelihood"] += post.entries[0][0] == T.id
        pooled += [(p, cid == T.id) for cid, p in post]
        hits["similarity"] += int(np.argmax([similarity_index(O, c) for c in cands])) == 0
        hits["xcorr"] += int(np.argmax([xcorr(O, c) for c in cands])) == 0

    for name, h in hits.items():
        print(f"{name:10s} top-1 accuracy {h / args.n_spectra:.3f}")
    print("bin\tmean_assigned\tempirical\tcount")
    for r in calibration_bins(pooled):
        if r.count:
            print(f"[{r.lo:.1f},{r.hi:.1f})\t{r.mean_assigned:.3f}\t{r.empirical:.3f}\t{r.count}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
