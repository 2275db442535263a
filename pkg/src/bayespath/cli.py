"""Command-line front end.

Commands: ``simulate``, ``scan-eta``, ``fit``, ``predict`` and ``report``.
Options may also come from a flat ``key = value`` file given with
``--config``; command-line flags take precedence.  Every command writes
``run_meta.json`` with the resolved settings next to its outputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import inference as inf
from . import simgen
from .graph_data import (CONTINUOUS, SURVIVAL, DataFormatError, Dataset, load_dataset,
                         load_membership, load_network, read_expression, write_dataset,
                         write_membership, write_network)
from .likelihood import Hyperparameters
from .mrf_sim import CFTPError, phase_transition_scan
from .sampler import ChainConfig, ChainTrace, run_chain

logger = logging.getLogger("bayespath")

OUT_ENV = "BAYESPATH_OUT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DATA = 5
EXIT_RUNTIME = 6


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument definitions
# ---------------------------------------------------------------------------

_HP_FLAGS = {
    # flag: (field, help)
    "alpha0": ("alpha0", "prior intercept mean"),
    "beta0": ("beta0", "prior coefficient mean"),
    "h0": ("h0", "intercept prior variance scale"),
    "h": ("h", "coefficient prior variance scale"),
    "nu0": ("nu0", "degrees of freedom of the error-variance prior"),
    "sigma0-sq": ("sigma0_sq", "error-variance prior scale"),
    "phi-star": ("phi_star", "prior inclusion probability of a pathway"),
    "mu": ("mu_mrf", "MRF sparsity parameter"),
    "c0": ("c0", "Beta shape 1 of eta / eta_pt"),
    "d0": ("d0", "Beta shape 2 of eta / eta_pt"),
    "eta-pt": ("eta_pt", "phase-transition bound on eta"),
}


def _add_hyperparameters(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameters")
    defaults = Hyperparameters()
    for flag, (name, text) in _HP_FLAGS.items():
        g.add_argument(f"--{flag}", dest=name, type=float, default=getattr(defaults, name),
                       help=f"{text} (default {getattr(defaults, name):g})")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or the current directory)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_inputs(p: argparse.ArgumentParser, response: bool = True) -> None:
    p.add_argument("--membership", required=True, help="pathway<TAB>gene file")
    p.add_argument("--network", required=True, help="gene<TAB>gene edge file")
    p.add_argument("--expression", required=True, help="expression table")
    if response:
        p.add_argument("--response", required=True, help="response table")
        p.add_argument("--outcome", choices=(CONTINUOUS, SURVIVAL), default=None,
                       help="default: survival iff the response file has a delta column")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bayespath", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic study")
    _add_common(p)
    p.add_argument("--pathways", type=int, default=20)
    p.add_argument("--genes", type=int, default=300)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--true-pathways", type=int, default=4)
    p.add_argument("--beta", type=float, default=1.5, help="|beta| of the true genes")
    p.add_argument("--rho", type=float, default=0.7, help="parent-child weight")
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--parent-mean", choices=(simgen.PARENT_SUM, simgen.PARENT_MEAN),
                   default=simgen.PARENT_SUM)
    p.add_argument("--censor-fraction", type=float, default=None,
                   help="emit a survival response with this censored fraction (extension)")

    p = sub.add_parser("scan-eta", help="grid scan for the MRF phase transition")
    _add_common(p)
    p.add_argument("--membership", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--mu", dest="mu_mrf", type=float, default=Hyperparameters().mu_mrf)
    p.add_argument("--grid-max", type=float, default=0.3)
    p.add_argument("--grid-points", type=int, default=31)
    p.add_argument("--sweeps", type=int, default=2000)

    p = sub.add_parser("fit", help="run the MCMC sampler")
    _add_common(p)
    _add_inputs(p)
    _add_hyperparameters(p)
    p.add_argument("--iterations", type=int, default=300_000)
    p.add_argument("--burn-in", type=int, default=50_000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--workers", type=int, default=None, help="processes (default: chains)")
    p.add_argument("--fixed-eta", type=float, default=None, help="hold eta at this value")
    p.add_argument("--eta-step", type=float, default=0.1, help="eta proposal sd / eta_pt")
    p.add_argument("--init-pathways", type=int, default=2)
    p.add_argument("--init-genes", type=int, default=0)
    p.add_argument("--edge-rule", choices=("union", "shared"), default="union")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", action="store_true", help="continue from chain checkpoints")
    p.add_argument("--pathway-threshold", type=float, default=inf.PATHWAY_THRESHOLD)
    p.add_argument("--gene-threshold", type=float, default=inf.GENE_THRESHOLD)

    p = sub.add_parser("predict", help="least-squares prediction from a fitted run")
    _add_common(p)
    _add_inputs(p)
    _add_hyperparameters(p)
    p.add_argument("--fit-dir", required=True, help="output directory of `fit`")
    p.add_argument("--test-expression", required=True)
    p.add_argument("--test-response", default=None, help="optional; enables the MSE")
    p.add_argument("--pathway-threshold", type=float, default=inf.PATHWAY_THRESHOLD)
    p.add_argument("--gene-threshold", type=float, default=inf.GENE_THRESHOLD)

    p = sub.add_parser("report", help="summarise a fitted run")
    _add_common(p)
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--membership", required=True)
    p.add_argument("--truth", default=None, help="truth.csv from `simulate`")
    p.add_argument("--pathway-threshold", type=float, default=inf.PATHWAY_THRESHOLD)
    p.add_argument("--gene-threshold", type=float, default=inf.GENE_THRESHOLD)
    return parser


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def read_config_file(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{no}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    if known.config and command in COMMANDS:
        values = read_config_file(known.config)
        sub = _subparser(parser, command)
        by_dest = {a.dest: a for a in sub._actions}  # noqa: SLF001
        # flag spellings (mu, sigma0-sq, ...) are accepted as keys too
        for a in sub._actions:  # noqa: SLF001
            for opt in a.option_strings:
                if opt.startswith("--"):
                    by_dest.setdefault(opt[2:].replace("-", "_"), a)
        defaults = {}
        for key, text in values.items():
            action = by_dest.get(key)
            if action is None or key in ("config", "help"):
                raise ConfigError(f"{known.config}: unknown key {key!r}")
            try:
                if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                    defaults[key] = text.lower() in ("1", "true", "yes", "on")
                elif action.type is not None:
                    defaults[key] = action.type(text)
                else:
                    defaults[key] = text
            except ValueError:
                raise ConfigError(f"{known.config}: bad value for {key!r}: {text!r}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise ConfigError(f"{known.config}: {key} must be one of {list(action.choices)}")
            action.default = defaults[key]
            action.required = False
    return parser.parse_args(argv)


def _hyperparameters(args) -> Hyperparameters:
    names = {f.name for f in fields(Hyperparameters)}
    try:
        return Hyperparameters(**{k: v for k, v in vars(args).items() if k in names})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out: Path, args, started: float, extra: dict | None = None) -> None:
    meta = dict(
        command=args.command, version=__version__, seed=args.seed,
        config={k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)},
        wall_seconds=round(time.time() - started, 3),
        python=platform.python_version(), numpy=np.__version__,
    )
    if extra:
        meta.update(extra)
    with open(out / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, out: Path) -> dict:
    for name in ("pathways", "genes", "samples", "true_pathways"):
        if getattr(args, name) < 1:
            raise ConfigError(f"--{name.replace('_', '-')} must be positive")
    try:
        cfg, data = simgen.simulate_study(args.pathways, args.genes, args.samples,
                                          args.true_pathways, args.beta, args.rho, args.seed,
                                          args.noise_sd, args.parent_mean)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.censor_fraction is not None:
        data = simgen.to_survival(data, args.censor_fraction,
                                  np.random.default_rng([args.seed, 1]))
    write_membership(out / "membership.tsv", cfg.membership)
    write_network(out / "network.tsv", cfg.network)
    write_dataset(out / "expression.csv", out / "response.csv", data)
    simgen.write_truth(out / "truth.csv", cfg)
    logger.info("wrote a study with %d pathways, %d genes, %d samples to %s",
                args.pathways, args.genes, args.samples, out)
    return {"true_pathways": [cfg.membership.pathway_ids[k] for k in cfg.truth.pathways]}


def cmd_scan_eta(args, out: Path) -> dict:
    membership = load_membership(args.membership)
    network = load_network(args.network, membership)
    if args.grid_points < 2 or args.grid_max <= 0:
        raise ConfigError("need --grid-points >= 2 and --grid-max > 0")
    grid = np.linspace(0.0, args.grid_max, args.grid_points)
    res = phase_transition_scan(network, args.mu_mrf, grid, args.sweeps,
                                np.random.default_rng(args.seed))
    res.to_csv(out / "eta_scan.csv")
    print(f"eta_pt estimate: {res.eta_pt_estimate if res.eta_pt_estimate is not None else 'none'}")
    return {"eta_pt_estimate": res.eta_pt_estimate}


def _chain_job(job: dict) -> str:
    """Worker entry point: run one chain and save its trace."""
    logging.basicConfig(level=job["log_level"])
    membership = load_membership(job["membership"])
    network = load_network(job["network"], membership)
    data = load_dataset(job["expression"], job["response"], membership, job["outcome"])
    rng = np.random.default_rng(np.random.SeedSequence(job["seed"], spawn_key=(job["index"],)))
    trace = run_chain(data, membership, network, Hyperparameters(**job["hp"]),
                      ChainConfig.from_dict(job["config"]), rng,
                      checkpoint_path=job["checkpoint"], resume=job["resume"],
                      trace_path=job["trace_csv"])
    trace.save(job["trace_npz"])
    return job["trace_npz"]


def cmd_fit(args, out: Path) -> dict:
    hp = _hyperparameters(args)
    if args.chains < 1:
        raise ConfigError("--chains must be at least 1")
    try:
        cfg = ChainConfig(iterations=args.iterations, burn_in=args.burn_in, thin=args.thin,
                          seed=args.seed, update_eta=args.fixed_eta is None,
                          eta_init=args.fixed_eta, eta_step=args.eta_step,
                          init_pathways=args.init_pathways, init_genes=args.init_genes,
                          edge_rule=args.edge_rule, checkpoint_every=args.checkpoint_every)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.fixed_eta is not None and not 0 <= args.fixed_eta <= hp.eta_pt:
        raise ConfigError("--fixed-eta must lie in [0, eta_pt]")
    membership = load_membership(args.membership)
    load_network(args.network, membership)
    load_dataset(args.expression, args.response, membership, args.outcome)

    jobs = []
    for i in range(args.chains):
        jobs.append(dict(
            index=i, seed=args.seed, membership=args.membership, network=args.network,
            expression=args.expression, response=args.response, outcome=args.outcome,
            hp=hp.as_dict(), config=cfg.as_dict(), resume=args.resume,
            checkpoint=str(out / f"chain{i}.ckpt.npz") if args.checkpoint_every else None,
            trace_csv=str(out / f"trace_chain{i}.csv"), trace_npz=str(out / f"chain{i}.npz"),
            log_level=logging.getLogger().level,
        ))
    workers = args.workers or args.chains
    if workers > 1 and args.chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_chain_job, jobs))
    else:
        paths = [_chain_job(j) for j in jobs]
    traces = [ChainTrace.load(p) for p in paths]

    summary = inf.summarize(traces, membership)
    inf.write_pathway_marginals(out / "pathway_marginals.csv", membership,
                                summary.pathway_marginals)
    inf.write_gene_conditionals(out / "gene_conditionals.csv", membership,
                                summary.gene_conditionals)
    inf.write_models(out / "models.csv", summary.visited_models)
    extra: dict = {"chain_stats": [t.stats for t in traces]}
    if len(traces) > 1:
        extra["chain_concordance"] = inf.chain_concordance(traces[0], traces[1])
    for k in summary.selected_pathways(args.pathway_threshold):
        print(f"{membership.pathway_ids[k]}\t{summary.pathway_marginals[k]:.4f}")
    return extra


def _read_column(path: Path, key: str, value: str) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row[key]: float(row[value]) for row in csv.DictReader(fh)}


def _selection_from_dir(fit_dir: Path, membership, p_thr: float, g_thr: float):
    pm = _read_column(fit_dir / "pathway_marginals.csv", "pathway_id", "probability")
    gc = _read_column(fit_dir / "gene_conditionals.csv", "gene_id", "probability")
    try:
        marg = np.array([pm[k] for k in membership.pathway_ids])
        cond = np.array([gc[g] for g in membership.gene_ids])
    except KeyError as exc:
        raise DataFormatError(f"{fit_dir}: identifiers do not match the membership: {exc}")
    summary = inf.PosteriorSummary(marg, inf.GeneConditionals(cond, np.zeros(cond.size, bool),
                                                              np.zeros(cond.size, int), ()), [])
    return summary, inf.selection_from_summary(summary, membership, p_thr, g_thr)


def cmd_predict(args, out: Path) -> dict:
    hp = _hyperparameters(args)
    membership = load_membership(args.membership)
    train = load_dataset(args.expression, args.response, membership, args.outcome)
    _, selection = _selection_from_dir(Path(args.fit_dir), membership,
                                       args.pathway_threshold, args.gene_threshold)
    if args.test_response:
        test = load_dataset(args.test_expression, args.test_response, membership,
                            train.outcome_kind, center_with=train.column_means)
    else:
        ids, X = read_expression(args.test_expression, membership)
        test = Dataset.from_raw(X, np.zeros(len(ids)), sample_ids=ids,
                                gene_ids=membership.gene_ids, center_with=train.column_means)
    y_hat = inf.predict(train, test, membership, selection, hp)
    inf.write_predictions(out / "predictions.csv", test.sample_ids, y_hat)
    extra = {"n_pathways": int(selection[0].sum()), "n_genes": int(selection[1].sum())}
    if args.test_response:
        mse = inf.prediction_mse(y_hat, test.response, test.censoring)
        extra["mse"] = mse
        print(f"MSE: {mse:.6g}")
    return extra


def cmd_report(args, out: Path) -> dict:
    membership = load_membership(args.membership)
    summary, (theta, gamma) = _selection_from_dir(Path(args.fit_dir), membership,
                                                  args.pathway_threshold, args.gene_threshold)
    sel_p = [membership.pathway_ids[k] for k in np.flatnonzero(theta)]
    sel_g = [membership.gene_ids[j] for j in np.flatnonzero(gamma)]
    report: dict = {"selected_pathways": sel_p, "selected_genes": sel_g}
    if args.truth:
        truth = simgen.read_truth(args.truth, membership)
        tp = set(truth.pathways)
        tg = set(truth.all_genes.tolist())
        pm = summary.pathway_marginals
        false = [k for k in range(membership.n_pathways) if k not in tp]
        report.update(
            true_pathways=[membership.pathway_ids[k] for k in sorted(tp)],
            pathway_gap=float(min(pm[list(tp)]) - (max(pm[false]) if false else 0.0)),
            true_positive_genes=int(sum(g in tg for g in np.flatnonzero(gamma))),
            false_positive_genes=int(sum(g not in tg for g in np.flatnonzero(gamma))),
            n_true_genes=len(tg),
        )
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(json.dumps(report, indent=2))
    return {}


COMMANDS = {"simulate": cmd_simulate, "scan-eta": cmd_scan_eta, "fit": cmd_fit,
            "predict": cmd_predict, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    started = time.time()
    try:
        args = parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"bayespath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"bayespath: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = _out_dir(args)
        extra = COMMANDS[args.command](args, out)
        _write_meta(out, args, started, extra)
    except ConfigError as exc:
        print(f"bayespath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"bayespath: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"bayespath: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CFTPError as exc:
        print(f"bayespath: sampler error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
