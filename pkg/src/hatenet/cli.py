"""Command-line front end: ``hatenet {estimate,simulate,spectrum,oracle-check}``.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 failed identity check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .adjustment import ConvergenceError, spectral_covariates, structural_covariates, top_k_spectrum
from .design import RNG_ID, Design, stream
from .estimators import ev_adjusted_indirect, ht_direct, ht_indirect
from .generators import ScenarioConfig, random_hate_instance
from .graph import GraphInputError, read_edge_list
from .montecarlo import ReplicationFailure, run_replications, write_replications_csv, write_summary_csv
from .oracle import identity_checks
from .variance import var_dir_hat, var_ev_hat, var_ind_hat, var_tot_hat, wald_ci

EXIT_INPUT, EXIT_NUMERIC, EXIT_CHECK = 2, 3, 4

logger = logging.getLogger("hatenet")


def _utc() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(output: Path, command: str, seed: int | None, config_text: str, started: str) -> Path:
    path = output.with_name(output.name + ".manifest.json")
    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed": seed,
        "rng": RNG_ID,
        "version": __version__,
        "started": started,
        "finished": _utc(),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_indexed_csv(path: str | Path, ncols: int, kind=float) -> np.ndarray:
    """Rows ``i,v1..vk`` covering units ``0..n-1`` exactly once; a non-numeric first row is a header."""
    values: dict[int, list] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                i = int(row[0])
            except ValueError:
                if lineno == 1:
                    continue
                raise GraphInputError(f"{path}:{lineno}: bad unit index {row[0]!r}") from None
            if len(row) < ncols + 1:
                raise GraphInputError(f"{path}:{lineno}: expected {ncols + 1} fields")
            try:
                vals = [kind(x) for x in row[1 : ncols + 1]]
            except ValueError:
                raise GraphInputError(f"{path}:{lineno}: unparseable value in {row!r}") from None
            if i in values:
                raise GraphInputError(f"{path}:{lineno}: unit {i} listed twice")
            values[i] = vals
    n = len(values)
    missing = sorted(set(range(n)) - set(values))
    if missing or (values and max(values) != n - 1):
        raise GraphInputError(f"{path}: units must cover 0..{n - 1}; missing {missing[:5] or [max(values)]}")
    return np.array([values[i] for i in range(n)])


def _reports(y, z, g, W, d: Design, level: float, doubled: bool) -> list[dict]:
    ev_ind, fit = ev_adjusted_indirect(y, z, g, W, d)
    dir_, ind = float(ht_direct(y, z, d)), float(ht_indirect(y, z, g, d))
    rows = [
        ("DIR", dir_, var_dir_hat(y, z, d)),
        ("IND", ind, var_ind_hat(y, z, g, d)),
        ("TOT", dir_ + ind, var_tot_hat(y, z, g, d)),
        ("EV_IND", ev_ind, var_ev_hat(y, fit.residuals, z, g, d, "EV_IND")),
        ("EV_TOT", dir_ + ev_ind, var_ev_hat(y, fit.residuals, z, g, d, "EV_TOT")),
    ]
    return [wald_ci(p, float(v), level, doubled, name).to_dict() for name, p, v in rows]


def cmd_estimate(args) -> int:
    started = _utc()
    y = read_indexed_csv(args.outcomes, 1)[:, 0]
    z = read_indexed_csv(args.assignment, 1)[:, 0]
    if len(z) != len(y):
        raise GraphInputError(f"outcomes cover {len(y)} units but the assignment covers {len(z)}")
    if not np.all((z == 0) | (z == 1)):
        raise GraphInputError("assignment values must be 0 or 1")
    n = len(y)
    g = read_edge_list(args.network, n=n).graph
    d = Design(args.r1)
    spectrum = None
    if args.strata:
        labels = read_indexed_csv(args.strata, args.strata_columns, int)
        if len(labels) != n:
            raise GraphInputError(f"strata file covers {len(labels)} units, expected {n}")
        if args.strata_columns == 1:
            W = structural_covariates("merged-groups", labels[:, 0])
        else:
            W = structural_covariates("two-way", labels[:, 0], labels[:, 1])
    elif args.K >= 1:
        basis = top_k_spectrum(g, args.K, rng=stream(args.seed, 0))
        W = basis.W
        spectrum = {"lambda": basis.eigenvalues.tolist(), "next_bound": basis.next_eigenvalue_bound, "rank": basis.rank}
    else:
        W = spectral_covariates(g, args.K)
        W = np.empty((n, 0)) if W is None else W
    out = {
        "n": n,
        "edges": g.n_edges,
        "estimates": _reports(y, z, g, W, d, args.level, args.doubled),
        "alternate": _reports(y, z, g, W, d, args.level, not args.doubled),
        "spectrum": spectrum,
    }
    text = json.dumps(out, indent=2) + "\n"
    _emit(args, text, "estimate", started, json.dumps(vars(args), sort_keys=True, default=str))
    return 0


def _emit(args, text: str, command: str, started: str, config_text: str) -> None:
    if args.output:
        out = Path(args.output)
        out.write_text(text)
        write_manifest(out, command, getattr(args, "seed", None), config_text, started)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    started = _utc()
    text = Path(args.config).read_text()
    cfg = ScenarioConfig.from_yaml(text)
    result = run_replications(cfg, args.R, args.seed, threads=args.threads, level=args.level)
    if args.output:
        out = Path(args.output)
        write_summary_csv(result.summaries, out)
        write_manifest(out, "simulate", args.seed, text, started)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(("estimator", "true", "bias", "sd", "rmse", "cp", "length", "R", "failures"))
        for s in result.summaries:
            w.writerow(s.row())
    if args.dump_reps:
        write_replications_csv(result, args.dump_reps)
    return 0


def cmd_spectrum(args) -> int:
    started = _utc()
    g = read_edge_list(args.network, n=args.n).graph
    basis = top_k_spectrum(g, args.K, rng=stream(args.seed, 0))
    payload = {"lambda": basis.eigenvalues.tolist(), "next_bound": basis.next_eigenvalue_bound, "rank": basis.rank}
    _emit(args, json.dumps(payload, indent=2) + "\n", "spectrum", started, f"{args.network}:{args.K}")
    if args.w_csv:
        np.savetxt(args.w_csv, basis.W, delimiter=",", fmt="%.17g")
    return 0


def cmd_oracle_check(args) -> int:
    rng = stream(args.seed, 0)
    g, p = random_hate_instance(args.n, rng, args.edge_prob, args.keep_prob)
    d = Design(args.r1)
    W = None
    if args.K >= 0:
        W = spectral_covariates(g, min(args.K, args.n - 1), rng=rng)
    rows = identity_checks(p, g, d, W, tol=args.tol)
    width = max(len(r.name) for r in rows)
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  lhs={r.lhs:.12g}  rhs={r.rhs:.12g}")
    failed = sum(not r.passed for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return EXIT_CHECK if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for replications")
    common.add_argument("--output", help="output file (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hatenet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="point estimates and intervals for observed data")
    p.add_argument("--network", required=True, help="edge list CSV source,target")
    p.add_argument("--outcomes", required=True, help="CSV i,y")
    p.add_argument("--assignment", required=True, help="CSV i,z")
    p.add_argument("--r1", type=float, default=0.5)
    p.add_argument("--K", type=int, default=0, help="eigenvectors for adjustment (0: intercept only)")
    p.add_argument("--strata", help="CSV i,stratum or i,row_stratum,col_stratum (overrides --K)")
    p.add_argument("--strata-columns", type=int, choices=(1, 2), default=1)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--doubled", action="store_true", help="primary intervals use twice the variance estimate")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo over a scenario config")
    p.add_argument("--config", required=True, help="YAML scenario config")
    p.add_argument("--R", type=int, default=2000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--dump-reps", help="write per-replication estimates to this CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spectrum", parents=[common], help="top eigenvalues of E E^T")
    p.add_argument("--network", required=True)
    p.add_argument("--n", type=int, help="unit count (default: max index + 1)")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--w-csv", help="also write the whitened covariate matrix")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("oracle-check", parents=[common], help="exact identity checks on a random instance")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--r1", type=float, default=0.5)
    p.add_argument("--K", type=int, default=2, help="eigenvectors for the adjusted rows (-1 to skip)")
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--keep-prob", type=float, default=0.6)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GraphInputError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, ReplicationFailure, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
