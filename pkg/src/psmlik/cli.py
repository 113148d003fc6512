"""Command-line frontend: preprocess, train, score, simulate, evaluate, naive."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import baselines, evaluation
from .model import EnumerationOverflow, GlobalParams
from .parallel import THREADS_ENV, default_threads, map_ordered
from .preprocess import DEFAULT_TOL, preprocess
from .scoring import ChargeMismatchError, posteriors, score
from .simulator import default_params, run_recovery_experiment, sample_observed, synthetic_corpus
from .spectra_io import (
    SpectrumFormatError,
    atomic_write,
    format_observed,
    format_theoretical,
    generate_naive_theoretical,
    parse_observed,
    parse_theoretical,
)
from .training import FitOptions, TrainingError, TrainingPair, fit

log = logging.getLogger("psmlik")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _read(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p.read_text()


def _manifest_rows(path):
    base = Path(path).parent
    rows = []
    for lineno, line in enumerate(_read(path).splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        rows.append((lineno, [f.strip() for f in fields], base))
    return rows


def _resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


# --------------------------------------------------------------------- preprocess


def cmd_preprocess(args) -> int:
    text = _read(args.inp)
    if "BEGIN IONS" in text.upper():
        spectra = parse_observed(text)
        cleaned = map_ordered(_preprocess_one, [(s, args.tol) for s in spectra], args.threads)
        atomic_write(args.out, format_observed(cleaned))
    else:
        atomic_write(args.out, format_theoretical(preprocess(parse_theoretical(text), args.tol)))
    return EXIT_OK


def _preprocess_one(job):
    s, tol = job
    return preprocess(s, tol)


# --------------------------------------------------------------------- train


def load_pairs(manifest) -> list[TrainingPair]:
    """Manifest rows: observed MGF path, theoretical TSV path, optional TITLE."""
    cache: dict[Path, list] = {}
    pairs = []
    for lineno, fields, base in _manifest_rows(manifest):
        if len(fields) < 2:
            raise UsageError(f"{manifest}:{lineno}: expected observed<TAB>theoretical[<TAB>title]")
        opath = _resolve(base, fields[0])
        if opath not in cache:
            cache[opath] = parse_observed(_read(opath))
        spectra = cache[opath]
        if len(fields) > 2 and fields[2]:
            hits = [s for s in spectra if s.id == fields[2]]
            if len(hits) != 1:
                raise ValueError(f"{manifest}:{lineno}: {len(hits)} spectra titled {fields[2]!r} in {opath}")
            obs = hits[0]
        elif len(spectra) == 1:
            obs = spectra[0]
        else:
            raise ValueError(f"{manifest}:{lineno}: {opath} holds {len(spectra)} spectra; give a title")
        theo = parse_theoretical(_read(_resolve(base, fields[1])))
        pairs.append(TrainingPair(obs, theo))
    return pairs


def cmd_train(args) -> int:
    pairs = load_pairs(args.pairs)
    charges = sorted({p.observed.charge for p in pairs})
    if charges != [args.charge]:
        raise ValueError(f"manifest holds charge state(s) {charges}; expected only {args.charge}")
    opts = FitOptions(w=args.w, r=args.r, seed=args.seed, max_iter=args.max_iter,
                      rel_tol=args.tol, search=args.search, threads=args.threads)
    state = fit(pairs, opts)
    out = Path(args.out)
    atomic_write(out, state.theta0.to_json())
    mu_path = Path(args.mu_table) if args.mu_table else out.with_suffix(".mu.tsv")
    lines = ["id\tmu\tloglik"]
    lines += [f"{p.observed.id}\t{_num(mu)}\t{_num(ll)}"
              for p, mu, ll in zip(pairs, state.mus, state.pair_loglik)]
    atomic_write(mu_path, "\n".join(lines) + "\n")
    report = {
        "charge": args.charge,
        "n_pairs": len(pairs),
        "iterations": state.iterations,
        "converged": state.converged,
        "seed": state.seed,
        "loglik_trace": state.loglik_trace,
        "notes": sorted(set(state.notes)),
    }
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    atomic_write(report_path, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------- score


def load_candidates(source, spectrum_ids) -> dict[str, list]:
    """Directory: every TSV is a candidate for every spectrum. File: rows of
    ``spectrum_id<TAB>theoretical path``."""
    p = Path(source)
    if p.is_dir():
        cands = [parse_theoretical(f.read_text()) for f in sorted(p.glob("*.tsv"))]
        if not cands:
            raise ValueError(f"no .tsv candidates in {source}")
        return {sid: cands for sid in spectrum_ids}
    out = defaultdict(list)
    cache = {}
    for lineno, fields, base in _manifest_rows(p):
        if len(fields) < 2:
            raise UsageError(f"{source}:{lineno}: expected spectrum_id<TAB>theoretical path")
        path = _resolve(base, fields[1])
        if path not in cache:
            cache[path] = parse_theoretical(_read(path))
        out[fields[0]].append(cache[path])
    return dict(out)


def _score_job(job):
    method, O, cands, theta0, search, binwidth = job
    if method == "likelihood":
        scored = [score(O, T, theta0, search=search) for T in cands]
        post = posteriors(scored).as_dict()
        order = sorted(range(len(scored)), key=lambda i: (-scored[i].log_score, i))
        return [(O.id, scored[i].candidate_id, method, scored[i].log_score, scored[i].mu_hat,
                 scored[i].k, post[scored[i].candidate_id], None, rank, scored[i].n, scored[i].m)
                for rank, i in enumerate(order, start=1)]
    fn = baselines.similarity_index if method == "similarity" else baselines.xcorr
    vals = [fn(O, T, binwidth) if binwidth else fn(O, T) for T in cands]
    gap = evaluation.confidence_gap(vals)
    order = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
    return [(O.id, cands[i].id, method, vals[i], None, None, None, gap if rank == 1 else None,
             rank, len(cands[i]), len(O))
            for rank, i in enumerate(order, start=1)]


SCORE_COLUMNS = ("spectrum_id", "candidate_id", "method", "score", "mu_hat", "k",
                 "posterior", "gap", "rank", "n", "m")


def cmd_score(args) -> int:
    observed = parse_observed(_read(args.observed))
    theta0 = None
    if args.method == "likelihood":
        if not args.params:
            raise UsageError("--params is required for --method likelihood")
        theta0 = GlobalParams.from_json(_read(args.params))
    cands = load_candidates(args.candidates, [s.id for s in observed])
    jobs = []
    for O in observed:
        if O.id not in cands:
            raise ValueError(f"no candidates listed for spectrum {O.id!r}")
        ids = [c.id for c in cands[O.id]]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate candidate ids for spectrum {O.id!r}")
        jobs.append((args.method, O, cands[O.id], theta0, args.search, args.binwidth))
    results = map_ordered(_score_job, jobs, args.threads)
    lines = ["\t".join(SCORE_COLUMNS)]
    for rows in results:
        for row in rows:
            lines.append("\t".join(str(x) if isinstance(x, str) else _num(x) for x in row))
    atomic_write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------- simulate


def _load_theoretical_set(source) -> list[tuple]:
    """(spectrum, absolute path) for a directory of TSVs or a one-path-per-row manifest."""
    p = Path(source)
    if p.is_dir():
        files = sorted(p.glob("*.tsv"))
    else:
        files = [_resolve(base, fields[0]) for _, fields, base in _manifest_rows(p)]
    return [(parse_theoretical(_read(f)), f.resolve()) for f in files]


def cmd_simulate(args) -> int:
    out = Path(args.out)
    if args.params:
        theta0 = GlobalParams.from_json(_read(args.params))
        if args.mu is None:
            raise UsageError("--mu is required together with --params")
        mu = args.mu
    else:
        theta0, mu = default_params(args.charge)
        if args.mu is not None:
            mu = args.mu
    if args.theoretical:
        loaded = _load_theoretical_set(args.theoretical)
        corpus = [T for T, _ in loaded]
        paths = [str(f) for _, f in loaded]
    else:
        corpus = synthetic_corpus(args.n_spectra, theta0.charge or args.charge, seed=args.seed)
        paths = [f"theoretical/{T.id}.tsv" for T in corpus]
    if not corpus:
        raise ValueError("empty theoretical corpus")

    if args.recovery:
        report = run_recovery_experiment(corpus, theta0, mu, args.replicates, args.seed,
                                         args.noise_frac)
        atomic_write(out / "recovery.tsv", report.to_tsv())
        return EXIT_OK

    if not args.theoretical:
        for T in corpus:
            atomic_write(out / "theoretical" / f"{T.id}.tsv", format_theoretical(T))
    observed, truth, pairs = [], ["spectrum_id\tsequence\tk\tconfig"], []
    for rep in range(args.replicates):
        rng = np.random.default_rng([args.seed, rep])
        for T, tpath in zip(corpus, paths):
            sid = f"{T.id}_r{rep}"
            sim = sample_observed(T, theta0, mu, math.floor(args.noise_frac * len(T)), rng=rng,
                                  spectrum_id=sid)
            observed.append(sim.observed)
            k = int(np.sum(sim.true_config >= 0))
            truth.append(f"{sid}\t{T.id}\t{k}\t{','.join(map(str, sim.true_config.tolist()))}")
            pairs.append(f"observed.mgf\t{tpath}\t{sid}")
    atomic_write(out / "observed.mgf", format_observed(observed))
    atomic_write(out / "truth.tsv", "\n".join(truth) + "\n")
    atomic_write(out / "pairs.tsv", "\n".join(pairs) + "\n")
    atomic_write(out / "params.json", theta0.to_json())
    return EXIT_OK


# --------------------------------------------------------------------- evaluate


def _read_table(path) -> list[dict]:
    lines = [l for l in _read(path).splitlines() if l.strip()]
    header = lines[0].split("\t")
    return [dict(zip(header, l.split("\t"))) for l in lines[1:]]


def cmd_evaluate(args) -> int:
    rows = _read_table(args.results)
    truth = {}
    for r in _read_table(args.truth):
        truth[r["spectrum_id"]] = r["sequence"]
    by_spec = defaultdict(list)
    for r in rows:
        by_spec[r["spectrum_id"]].append(r)
    missing = sorted(set(by_spec) - set(truth))
    if missing:
        raise ValueError(f"no truth for spectrum {missing[0]!r}")
    out = []
    if args.mode == "fdr":
        records = []
        for sid in sorted(by_spec):
            rs = sorted(by_spec[sid], key=lambda r: int(r["rank"]))
            top = rs[0]
            conf = top["posterior"] if top["method"] == "likelihood" else top["gap"]
            records.append(evaluation.IdentificationRecord(
                sid, [(top["candidate_id"], float(conf))], truth[sid]))
        if args.thresholds:
            ths = [float(x) for x in args.thresholds.split(",")]
        else:
            ths = sorted({r.confidence for r in records})
        out.append("threshold\tundetermined_rate\tfdr\tn_called")
        for c in evaluation.fdr_vs_undetermined(records, ths):
            out.append(f"{_num(c.threshold)}\t{_num(c.undetermined_rate)}\t{_num(c.fdr)}\t{c.n_called}")
    else:
        pairs = []
        for sid in sorted(by_spec):
            for r in by_spec[sid]:
                if r["method"] != "likelihood":
                    raise ValueError("calibration needs likelihood posteriors")
                pairs.append((float(r["posterior"]), evaluation.is_correct(r["candidate_id"], truth[sid])))
        out.append("bin_lo\tbin_hi\tmean_assigned\tempirical_correct\tcount")
        for c in evaluation.calibration_bins(pairs, args.bins):
            out.append(f"{_num(c.lo)}\t{_num(c.hi)}\t{_num(c.mean_assigned)}\t{_num(c.empirical)}\t{c.count}")
    atomic_write(args.out, "\n".join(out) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------- naive


def cmd_naive(args) -> int:
    atomic_write(args.out, format_theoretical(generate_naive_theoretical(args.sequence, args.charge)))
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psmlik", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    threads = dict(type=int, default=None,
                   help=f"worker processes (default: ${THREADS_ENV} or 1)")

    p = sub.add_parser("preprocess", help="cluster, normalize and stabilize spectra")
    p.add_argument("--in", dest="inp", required=True, help="MGF file or theoretical TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="clustering tolerance in Da")
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="estimate shared parameters from known pairs")
    p.add_argument("--pairs", required=True, help="manifest: observed<TAB>theoretical[<TAB>title]")
    p.add_argument("--charge", type=int, required=True)
    p.add_argument("--out", required=True, help="parameter JSON")
    p.add_argument("--mu-table", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6, help="relative convergence tolerance")
    p.add_argument("--w", type=float, default=2.0, help="match window in Da")
    p.add_argument("--r", type=float, default=None, help="noise m/z range length")
    p.add_argument("--search", choices=("ascent", "exact"), default="ascent")
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="rank candidates for observed spectra")
    p.add_argument("--observed", required=True)
    p.add_argument("--candidates", required=True, help="directory of TSVs or spectrum_id<TAB>path manifest")
    p.add_argument("--params", default=None)
    p.add_argument("--method", choices=("likelihood", "similarity", "xcorr"), default="likelihood")
    p.add_argument("--search", choices=("exact", "ascent"), default="exact")
    p.add_argument("--binwidth", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="simulate observed spectra or a recovery experiment")
    p.add_argument("--theoretical", default=None, help="directory of TSVs or manifest; default synthetic")
    p.add_argument("--params", default=None)
    p.add_argument("--charge", type=int, choices=(1, 2), default=2, help="preset when --params is absent")
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--n-spectra", type=int, default=50)
    p.add_argument("--noise-frac", type=float, default=0.9)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--recovery", action="store_true", help="refit each replicate and report estimates")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="FDR curve or calibration table from scored results")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True, help="spectrum_id<TAB>sequence table with header")
    p.add_argument("--mode", choices=("fdr", "calibration"), required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--thresholds", default=None, help="comma-separated confidence thresholds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("naive", help="naive b/y theoretical spectrum for a peptide")
    p.add_argument("--sequence", required=True)
    p.add_argument("--charge", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_naive)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 0) is None:
        args.threads = default_threads()
    try:
        return args.func(args)
    except (FileNotFoundError, UsageError) as exc:
        print(f"psmlik {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpectrumFormatError, TrainingError, EnumerationOverflow, ChargeMismatchError,
            ValueError, KeyError) as exc:
        print(f"psmlik {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
