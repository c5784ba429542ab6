"""
Command-line entry point.

Subcommands::

    sample        Rao-Teh chains for a hidden jump process
    ctbn-sample   random-scan Gibbs chains for a CTBN
    oracle        grid posterior marginals
    diagnose      drift, Geweke, TV-curve or ESS report
    validate      check the ergodicity assumptions of a model

Exit status is 0 on success, 2 for configuration errors and 1 when the model
or evidence is rejected at run time.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import tempfile

import numpy as np

from jumpchain import __version__
from jumpchain.core import ModelError, evaluate, jump_count, require_valid, validate_model
from jumpchain.diagnostics import (
    alternating_trajectory,
    drift_estimate,
    ess,
    geweke_joint_test,
    tv_curve,
)
from jumpchain.io import read_ctbn, read_evidence, read_model, read_observed

__all__ = ["main", "build_parser", "ConfigError"]

STOCHASTIC = {"sample", "ctbn-sample", "diagnose"}


class ConfigError(Exception):
    """Invalid command-line configuration; the message names the flag."""


def _probes(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("probes must be comma-separated numbers") from None


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="jumpchain", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def chain_flags(q):
        q.add_argument("--sweeps", type=int, default=1000)
        q.add_argument("--burnin", type=int, default=0)
        q.add_argument("--thin", type=int, default=1)
        q.add_argument("--chains", type=int, default=1)
        q.add_argument("--seed", type=_seed)
        q.add_argument("--probes", type=_probes)
        q.add_argument("--eta", type=float)
        q.add_argument("--snapshot-every", type=int)
        q.add_argument("--out", required=True)

    q = sub.add_parser("sample", help="Rao-Teh posterior sampling")
    q.add_argument("--model", required=True)
    q.add_argument("--evidence")
    chain_flags(q)

    q = sub.add_parser("ctbn-sample", help="CTBN Gibbs sampling")
    q.add_argument("--model", required=True)
    q.add_argument("--observed")
    chain_flags(q)

    q = sub.add_parser("oracle", help="grid posterior marginals")
    q.add_argument("--model", required=True)
    q.add_argument("--evidence")
    q.add_argument("--grid-step", type=float)
    q.add_argument("--probes", type=_probes)
    q.add_argument("--out", required=True)

    q = sub.add_parser("diagnose", help="sampler diagnostics")
    q.add_argument("--suite", choices=["drift", "geweke", "tv", "ess"], required=True)
    q.add_argument("--model", required=True)
    q.add_argument("--evidence")
    q.add_argument("--reps", type=int, default=1000)
    q.add_argument("--seed", type=_seed)
    q.add_argument("--out", required=True)

    q = sub.add_parser("validate", help="check ergodicity assumptions")
    q.add_argument("--model", required=True)
    q.add_argument("--ctbn", action="store_true", help="model file describes a CTBN")
    q.add_argument("--observed")
    q.add_argument("--eta", type=float)
    q.add_argument("--out")
    return p


def _check(args):
    if args.command in STOCHASTIC and args.seed is None:
        raise ConfigError("--seed is required for stochastic subcommands")
    for flag in ("model", "evidence", "observed"):
        path = getattr(args, flag, None)
        if path is not None and not os.path.isfile(path):
            raise ConfigError(f"--{flag}: no such file {path!r}")
    if args.command in ("sample", "ctbn-sample"):
        if args.sweeps < 1:
            raise ConfigError("--sweeps must be positive")
        if not 0 <= args.burnin < args.sweeps:
            raise ConfigError("--burnin must lie in [0, sweeps)")
        if args.thin < 1:
            raise ConfigError("--thin must be positive")
        if args.chains < 1:
            raise ConfigError("--chains must be positive")
        if args.snapshot_every is not None and args.snapshot_every < 1:
            raise ConfigError("--snapshot-every must be positive")
    if getattr(args, "eta", None) is not None and not 0 < args.eta < 1:
        raise ConfigError("--eta must lie in (0, 1)")
    if args.command == "diagnose" and args.reps < 100:
        raise ConfigError("--reps must be at least 100")
    if args.command == "oracle" and args.grid_step is not None and args.grid_step <= 0:
        raise ConfigError("--grid-step must be positive")
    if args.command in ("sample", "ctbn-sample"):
        out = args.out
        if os.path.exists(out) and (not os.path.isdir(out) or os.listdir(out)):
            raise ConfigError(f"--out: {out!r} exists and is not an empty directory")


def _file_digest(path):
    if path is None:
        return None
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _manifest(args, argv):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "out"}
    inputs = {k: _file_digest(getattr(args, k, None)) for k in ("model", "evidence", "observed")
              if getattr(args, k, None) is not None}
    blob = json.dumps({"config": config, "inputs": inputs}, sort_keys=True).encode()
    return {
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": config,
        "input_sha256": inputs,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "numpy": np.__version__,
    }


class _AtomicDir:
    """Write into a sibling temp directory and move it into place on success."""

    def __init__(self, target):
        self.target = os.path.abspath(target)

    def __enter__(self):
        parent = os.path.dirname(self.target)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".jumpchain-", dir=parent)
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if os.path.isdir(self.target):
            os.rmdir(self.target)
        os.rename(self.tmp, self.target)
        return False


def _atomic_file(path, text):
    path = os.path.abspath(path)
    parent = os.path.dirname(path)
    os.makedirs(parent, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".jumpchain-", dir=parent)
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fmt(x):
    return repr(float(x))


def _write_trace(path, traces, probe_names, rows_of):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "chain", "kept", *rows_of.header, *probe_names])
        for c, tr in enumerate(traces):
            kept = np.zeros(len(tr), dtype=bool)
            kept[tr.kept()] = True
            for m in range(len(tr)):
                w.writerow([m, c, int(kept[m]), *rows_of(tr, m)])


def _ess_or_none(x):
    x = np.asarray(x, dtype=float)
    return ess(x) if len(x) >= 4 else None


def _cmd_sample(args, argv):
    from jumpchain.raoteh import run_chains

    model, eta_file = read_model(args.model)
    evid = read_evidence(args.evidence, model.n_states)[0] if args.evidence else None
    eta = args.eta if args.eta is not None else eta_file
    traces = run_chains(model, evid, args.sweeps, args.seed, chains=args.chains, eta=eta,
                        burnin=args.burnin, thin=args.thin, probes=args.probes,
                        snapshot_every=args.snapshot_every)
    labels = model.states.labels
    probes = traces[0].probes

    def rows(tr, m):
        return [tr.jump_counts[m], _fmt(tr.log_density[m])] + [labels[s] for s in tr.probe_states[m]]
    rows.header = ["jump_count", "logdens"]

    pooled = sum(tr.probe_marginals(model.n_states) * len(tr.kept()) for tr in traces)
    pooled = pooled / max(sum(len(tr.kept()) for tr in traces), 1)
    summary = {
        "states": list(labels),
        "probes": probes.tolist(),
        "probe_marginals": pooled.tolist(),
        "chains": [{
            "kept": int(len(tr.kept())),
            "mean_jump_count": float(np.mean(np.asarray(tr.jump_counts)[tr.kept()])),
            "ess_jump_count": _ess_or_none(np.asarray(tr.jump_counts)[tr.kept()]),
            "ess_logdens": _ess_or_none(np.asarray(tr.log_density)[tr.kept()]),
        } for tr in traces],
    }
    with _AtomicDir(args.out) as d:
        _write_trace(os.path.join(d, "trace.csv"), traces, [f"x@{_fmt(t)}" for t in probes], rows)
        if args.snapshot_every:
            with open(os.path.join(d, "snapshots.jsonl"), "w", encoding="utf-8") as fh:
                for c, tr in enumerate(traces):
                    for m, x in tr.snapshots:
                        fh.write(json.dumps({"chain": c, "sweep": m,
                                             "jump_times": x.jump_times.tolist(),
                                             "states": [labels[s] for s in x.states]}) + "\n")
        _atomic_file(os.path.join(d, "summary.json"), _dump(summary))
        _atomic_file(os.path.join(d, "manifest.json"), _dump(_manifest(args, argv)))
    return 0


def _cmd_ctbn_sample(args, argv):
    from jumpchain.ctbn import run_ctbn_chains

    model = read_ctbn(args.model)
    observed = read_observed(args.observed, model) if args.observed else {}
    probes = args.probes
    if probes is None:
        probes = [model.tmin, 0.5 * (model.tmin + model.tmax), model.tmax]
    traces = run_ctbn_chains(model, args.sweeps, args.seed, chains=args.chains, observed=observed,
                             eta=args.eta, burnin=args.burnin, thin=args.thin, probes=probes)
    free = traces[0].nodes
    names = [f"{model.names[w]}@{_fmt(t)}" for w in free for t in probes]

    def rows(tr, m):
        states = [model.labels[w][s] for w, ps in zip(free, tr.probe_states[m]) for s in ps]
        return [sum(tr.jump_counts[m]), *tr.jump_counts[m], _fmt(tr.log_density[m]), *states]
    rows.header = ["jump_count", *[f"jump_count_{model.names[w]}" for w in free], "logdens"]

    summary = {"nodes": [model.names[w] for w in free], "probes": list(map(float, probes)),
               "probe_marginals": {}, "chains": []}
    for w in free:
        n_kept = sum(len(tr.kept()) for tr in traces)
        pooled = sum(tr.probe_marginals(model, w) * len(tr.kept()) for tr in traces) / max(n_kept, 1)
        summary["probe_marginals"][model.names[w]] = {
            "states": list(model.labels[w]), "marginals": pooled.tolist()}
    for tr in traces:
        tot = np.asarray(tr.jump_counts).sum(axis=1)[tr.kept()]
        summary["chains"].append({"kept": int(len(tr.kept())), "mean_jump_count": float(tot.mean()),
                                  "ess_jump_count": _ess_or_none(tot),
                                  "ess_logdens": _ess_or_none(np.asarray(tr.log_density)[tr.kept()])})
    with _AtomicDir(args.out) as d:
        _write_trace(os.path.join(d, "trace.csv"), traces, names, rows)
        _atomic_file(os.path.join(d, "summary.json"), _dump(summary))
        _atomic_file(os.path.join(d, "manifest.json"), _dump(_manifest(args, argv)))
    return 0


def _cmd_oracle(args, argv):
    from jumpchain.oracle import grid_posterior
    from jumpchain.raoteh import default_probes

    model, _ = read_model(args.model)
    evid = read_evidence(args.evidence, model.n_states)[0] if args.evidence else None
    step = args.grid_step if args.grid_step is not None else 1e-3 * model.duration
    gp = grid_posterior(model, evid, step)
    probes = args.probes if args.probes is not None else default_probes(model, evid)
    marg = gp.at(probes)
    lines = ["t," + ",".join(f"p_{s}" for s in model.states.labels)]
    lines += [_fmt(t) + "," + ",".join(_fmt(v) for v in row) for t, row in zip(probes, marg)]
    _atomic_file(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_diagnose(args, argv):
    from jumpchain.core import DiscreteEmission, Evidence, compact
    from jumpchain.oracle import grid_posterior
    from jumpchain.raoteh import default_probes, rao_teh_step, run_chain
    from jumpchain.thinning import sample_prior_path

    model, eta = read_model(args.model)
    require_valid(model, eta)
    evid, emission = (read_evidence(args.evidence, model.n_states) if args.evidence
                      else (Evidence.empty(model.n_states), None))
    rng = np.random.default_rng(args.seed)
    report = {"suite": args.suite, "reps": args.reps, "seed": args.seed}
    if args.suite == "drift":
        seeds = [(alternating_trajectory(model.tmin, model.tmax, j), j) for j in (20, 60, 120)]
        rep = drift_estimate(lambda x, r: rao_teh_step(model, evid, x, r), seeds, args.reps, rng)
        report.update(rep.to_dict())
        report["jumps_excluding_start"] = (rep.means - 1).tolist()
    elif args.suite == "geweke":
        if emission is None:
            raise ConfigError("--evidence: the geweke suite needs an emission-based evidence file")
        ot = evid.obs_times
        t_mid = 0.5 * (model.tmin + model.tmax)
        res = geweke_joint_test(
            lambda r: compact(sample_prior_path(model, r)),
            lambda x, r: emission.evidence(ot, emission.sample(x, ot, r)),
            lambda x, y, r: rao_teh_step(model, y, x, r),
            {"jump_count": jump_count,
             "occupation_0": lambda x: x.occupation(model.n_states)[0],
             "probe_state": lambda x: int(evaluate(x, t_mid))},
            args.reps, rng)
        report["statistics"] = {k: vars(v) for k, v in res.items()}
    else:
        probes = default_probes(model, evid)
        tr = run_chain(model, evid, "prior", args.reps, rng, probes=probes)
        if args.suite == "tv":
            exact = grid_posterior(model, evid, 1e-3 * model.duration).at(probes)
            checks = sorted({int(v) for v in np.geomspace(10, args.reps, 12)})
            report["checkpoints"] = checks
            report["tv"] = tv_curve(tr.probe_array(), exact, model.n_states, checks).tolist()
        else:
            report["ess_jump_count"] = ess(tr.jump_counts)
            report["ess_logdens"] = ess(tr.log_density)
            report["n"] = len(tr)
    report["manifest"] = _manifest(args, argv)
    _atomic_file(args.out, _dump(report))
    return 0


def _cmd_validate(args, argv):
    if args.ctbn:
        from jumpchain.ctbn import ctbn_validate

        model = read_ctbn(args.model)
        observed = read_observed(args.observed, model) if args.observed else {}
        rep = ctbn_validate(model, args.eta, observed=list(observed))
        out = rep.to_dict()
    else:
        model, eta = read_model(args.model)
        rep = validate_model(model, args.eta if args.eta is not None else eta)
        out = rep.to_dict()
    text = _dump(out)
    if args.out:
        _atomic_file(args.out, text)
    else:
        sys.stdout.write(text)
    return 0 if rep.passed else 1


COMMANDS = {
    "sample": _cmd_sample,
    "ctbn-sample": _cmd_ctbn_sample,
    "oracle": _cmd_oracle,
    "diagnose": _cmd_diagnose,
    "validate": _cmd_validate,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _check(args)
        return COMMANDS[args.command](args, argv)
    except ConfigError as e:
        print(f"jumpchain: error: {e}", file=sys.stderr)
        return 2
    except (ModelError, ValueError, json.JSONDecodeError) as e:
        print(f"jumpchain: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
