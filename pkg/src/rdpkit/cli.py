"""``rdp-kit`` command line: simulate, estimate, bench, gradcheck, train.

Every command accepts ``--config FILE`` with ``key = value`` lines (keys are
flag names, ``-`` or ``_``); flags given on the command line win. CSV output
starts with the schema comment line and uses 12 significant digits; a JSON
document with the same rows plus run metadata is written next to it.
Exit codes: 0 success, 2 configuration error, 3 size guard, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, value_of
from .chain import ChainPotentials, gumbel_backward_sample, randomized_entropy, randomized_forward
from .exceptions import ConfigError, NumericalError, RDPError
from .harness import PROFILES, build_proposal, evaluate, exact_quantity, simulate_chain, simulate_tree
from .hypertree import INSIDE_BLOCKS, HypertreePotentials, randomized_inside
from .numerics import Rng, gumbel_noise
from .proposals import PROPOSALS
from .selection import IndexSelection, SpanSelection, select_chain, select_spans
from .train import fit_marginal_likelihood, fit_toy_autoencoder, make_long_tail_data

SCHEMA = "# rdp-kit schema v1"
K_FRACTIONS = (0.01, 0.10, 0.20)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.12g" % v
    return str(v)


def write_csv(path, header, rows) -> str:
    """Write (or return, for ``path=None``) the versioned CSV text."""
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    return text


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def write_json(path, doc: dict) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(args, command, header, rows, metadata):
    text = write_csv(args.output, header, rows)
    if args.output is None:
        sys.stdout.write(text)
    json_path = args.json or (str(Path(args.output).with_suffix(".json")) if args.output else None)
    if json_path:
        doc = {
            "schema": SCHEMA.lstrip("# "),
            "command": command,
            "config": {k: v for k, v in vars(args).items() if k not in ("func", "config")},
            "columns": list(header),
            "rows": [dict(zip(header, r)) for r in rows],
            "metadata": metadata,
        }
        write_json(json_path, doc)


def _profile(name: str) -> str:
    return name.replace("-", "_")


def _instance(args, profile=None, seed=None):
    profile = _profile(profile or args.profile)
    seed = args.seed if seed is None else seed
    if args.model == "chain":
        return simulate_chain(args.n, args.t, profile, seed)
    return simulate_tree(args.n, args.t, profile, seed)


def _check_k(args):
    if args.k1 < 0 or args.k2 < 0:
        raise ConfigError("K1 and K2 must be non-negative")
    if args.k1 + args.k2 > args.n:
        raise ConfigError(f"K exceeds N: K1 + K2 = {args.k1 + args.k2} > N = {args.n}")
    if args.k1 + args.k2 == 0:
        raise ConfigError("K1 + K2 must be positive")


def _check_common(args):
    if args.n < 1 or args.t < 1:
        raise ConfigError("N and T must be >= 1")
    if getattr(args, "runs", 1) < 1:
        raise ConfigError("runs must be >= 1")
    if args.model == "tree" and getattr(args, "quantity", "logz") != "logz":
        raise ConfigError("hypertrees support quantity 'logz' only")


def _tape_nodes(pot, q, k1, k2, seed, quantity="logz", blocks="full_cross"):
    """Op-node scalar counts for one randomized and one exact evaluation."""
    counts = {}
    for label, full in (("randomized", False), ("exact", True)):
        tape = Tape(record=False)
        rng = Rng(seed, (99,))
        if isinstance(pot, HypertreePotentials):
            sel = SpanSelection.full(pot.T, pot.N) if full else select_spans(q, k1, k2, rng)
            randomized_inside(pot.on_tape(tape), sel, blocks=blocks)
        else:
            sel = IndexSelection.full(pot.T, pot.N) if full else select_chain(q, k1, k2, rng)
            tp = pot.on_tape(tape)
            log_z, alphas = randomized_forward(tp, sel)
            if quantity == "entropy":
                randomized_entropy(tp, sel, alphas, log_z)
        counts[label] = tape.n_scalars
    return counts


def cmd_simulate(args) -> int:
    _check_common(args)
    pot = _instance(args)
    arrays = (
        {"init": pot.init, "pairwise": pot.pairwise, "emissions": pot.emissions, "state_prior": pot.state_prior}
        if isinstance(pot, ChainPotentials)
        else {"spans": pot.spans, "label_prior": pot.label_prior}
    )
    meta = dict(pot.meta, model=args.model, N=args.n, T=args.t)
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "wb") as fh:
            np.savez(fh, **arrays)
        write_json(args.json or out.with_suffix(".json"), meta)
    sys.stdout.write(json.dumps(_jsonable(meta), sort_keys=True) + "\n")
    return 0


def cmd_estimate(args) -> int:
    _check_common(args)
    _check_k(args)
    pot = _instance(args)
    report = evaluate(
        pot,
        args.quantity,
        k1=args.k1,
        k2=args.k2,
        proposal=args.proposal,
        runs=args.runs,
        seed=args.seed,
        jobs=args.jobs,
        mix=args.mix,
        blocks=args.blocks,
    )
    rows = [(r, float(v), report.exact, float(v) - report.exact) for r, v in enumerate(report.replicates)]
    q = build_proposal(pot, args.proposal, args.mix)
    meta = {
        "summary": {"bias": report.bias, "variance": report.variance, "mse": report.mse, "exact": report.exact},
        "temperature": pot.meta.get("temperature"),
        "wall_clock_s": report.config["wall_clock_s"],
        "tape_scalars": _tape_nodes(pot, q, args.k1, args.k2, args.seed, args.quantity, args.blocks),
    }
    _emit(args, "estimate", ("run", "estimate", "exact", "error"), rows, meta)
    return 0


def bench_rows(args):
    """One row per (profile, method, K level) plus one exact row per profile."""
    profiles = [_profile(p) for p in args.profiles.split(",")]
    rows, temps, nodes = [], {}, {}
    start = time.perf_counter()
    for prof in profiles:
        pot = _instance(args, prof)
        temps[prof] = pot.meta["temperature"]
        exact = exact_quantity(pot, args.quantity)
        rows.append((prof, "exact", 1.0, args.n, 0, exact, 0.0, 0.0, 0.0))
        for frac in K_FRACTIONS:
            k = max(1, int(round(frac * args.n)))
            for method, k1, k2 in (("topk", k, 0), ("rdp", k - 1, 1)):
                rep = evaluate(
                    pot,
                    args.quantity,
                    k1=k1,
                    k2=k2,
                    proposal=args.proposal,
                    runs=1 if k2 == 0 else args.runs,
                    seed=args.seed,
                    jobs=args.jobs,
                    mix=args.mix,
                    blocks=args.blocks,
                    exact=exact,
                )
                rows.append((prof, method, frac, k1, k2, rep.replicates.mean(), rep.bias, rep.variance, rep.mse))
        k = max(1, int(round(K_FRACTIONS[-1] * args.n)))
        q = build_proposal(pot, args.proposal, args.mix)
        nodes[prof] = _tape_nodes(pot, q, k - 1, 1, args.seed, args.quantity, args.blocks)
    return rows, {"temperatures": temps, "tape_scalars": nodes, "wall_clock_s": time.perf_counter() - start}


def cmd_bench(args) -> int:
    _check_common(args)
    rows, meta = bench_rows(args)
    header = ("profile", "method", "k_fraction", "k1", "k2", "mean_estimate", "bias", "variance", "mse")
    _emit(args, "bench", header, rows, meta)
    return 0


def gradcheck_error(args) -> float:
    """Max relative tape-vs-finite-difference error for the chosen quantity at a fixed selection."""
    pot = _instance(args).numpy()
    rng = Rng(args.seed, (7,))
    q = build_proposal(pot, args.proposal, args.mix)
    if isinstance(pot, HypertreePotentials):
        sel = select_spans(q, args.k1, args.k2, rng)
        point = np.where(np.isfinite(pot.spans), pot.spans, 0.0)
        mask = np.triu(np.ones((pot.T, pot.T)))[:, :, None] > 0

        def f(x):
            spans = ad.add(ad.mul(x, mask.astype(float)), np.where(mask, 0.0, -np.inf))
            return randomized_inside(HypertreePotentials(spans), sel)[0]

        return ad.gradcheck(f, point, eps=args.eps)
    sel = select_chain(q, args.k1, args.k2, rng)
    noise = gumbel_noise(rng.child(1), (pot.T, pot.N))
    weights = Rng(args.seed, (8,)).generator.standard_normal(pot.N)
    n_init = pot.N

    def f(x):
        init = ad.take(x, np.arange(n_init))
        pair = ad.reshape(ad.take(x, np.arange(n_init, x.size)), value_of(pot.pairwise).shape)
        cp = ChainPotentials(init, pair)
        log_z, alphas = randomized_forward(cp, sel)
        if args.quantity == "logz":
            return log_z
        if args.quantity == "entropy":
            return randomized_entropy(cp, sel, alphas, log_z)
        soft = gumbel_backward_sample(cp, sel, alphas, log_z, noise, args.temperature).soft
        total = 0.0
        for t, s in enumerate(soft):
            total = ad.add(total, ad.sum(ad.mul(s, weights[sel.active(t)[0]])))
        return total

    point = np.concatenate([pot.init.ravel(), pot.pairwise.ravel()])
    return ad.gradcheck(f, point, eps=args.eps)


def cmd_gradcheck(args) -> int:
    _check_common(args)
    if args.quantity not in ("logz", "entropy", "soft"):
        raise ConfigError("gradcheck quantity must be logz, entropy or soft")
    if args.model == "tree" and args.quantity != "logz":
        raise ConfigError("hypertrees support quantity 'logz' only")
    _check_k(args)
    err = gradcheck_error(args)
    sys.stdout.write(f"max relative error {err:.3e}\n")
    return 0 if err < 1e-4 else NumericalError.exit_code


def cmd_train(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    symbols, teacher = make_long_tail_data(
        args.n, args.symbols, args.dim, args.t, args.sequences, args.seed, norm_cap=args.norm_cap
    )
    k = max(1, int(round(args.k_fraction * args.n)))
    meta = {"arms": {}, "wall_clock_s": {}}
    for arm in arms:
        start = time.perf_counter()
        if args.demo == "likelihood":
            k1, k2 = {"exact": (0, 0), "rdp": (k - 1, 1), "topk": (k, 0)}.get(arm, (None, None))
            if k1 is None:
                raise ConfigError(f"unknown arm {arm!r}; choose from exact, rdp, topk")
            cfg = dict(estimator=arm, k1=k1, k2=k2, steps=args.steps, learning_rate=args.lr, seed=args.seed)
            fit = fit_marginal_likelihood(symbols, args.n, teacher.context_features, cfg)
            write_csv(out / f"loss_{arm}.csv", ("step", "exact_nll"), list(enumerate(fit.nll.tolist())))
            meta["arms"][arm] = {"final_nll": fit.nll[-1], "tape_scalars": fit.tape_nodes}
        elif args.demo == "autoencoder":
            k1, k2 = {"topk": (2 * k, 0), "rdp": (k, k)}.get(arm, (None, None))
            if k1 is None:
                raise ConfigError(f"unknown arm {arm!r}; choose from rdp, topk")
            cfg = dict(
                estimator=arm,
                k1=k1,
                k2=k2,
                steps=args.steps,
                learning_rate=args.lr,
                seed=args.seed,
                temperature=args.temperature,
                straight_through=args.straight_through,
                entropy_weight=args.entropy_weight,
            )
            fit = fit_toy_autoencoder(symbols, args.n, teacher.context_features, cfg)
            write_csv(out / f"elbo_{arm}.csv", ("step", "elbo"), list(enumerate(fit.elbo.tolist())))
            write_csv(out / f"posterior_{arm}.csv", ("state", "count"), list(enumerate(fit.histogram.astype(int).tolist())))
            meta["arms"][arm] = {"final_elbo": fit.elbo[-1], "never_used": fit.never_used, "tail_mass": fit.tail_mass}
        else:
            raise ConfigError(f"unknown demo {args.demo!r}")
        meta["wall_clock_s"][arm] = time.perf_counter() - start
    write_json(out / "train.json", {"schema": SCHEMA.lstrip("# "), "config": {k: v for k, v in vars(args).items() if k not in ("func", "config")}, "metadata": meta})
    sys.stdout.write(json.dumps(_jsonable(meta["arms"]), sort_keys=True) + "\n")
    return 0


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _model_args(p, n=500, t=20):
    p.add_argument("--model", choices=("chain", "tree"), default="chain")
    p.add_argument("--n", type=int, default=n, help="number of states N")
    p.add_argument("--t", type=int, default=t, help="chain length / number of leaves T")
    p.add_argument("--profile", choices=[x.replace("_", "-") for x in PROFILES] + list(PROFILES), default="long-tail")
    p.add_argument("--seed", type=int, default=0)


def _estimator_args(p):
    p.add_argument("--quantity", default="logz")
    p.add_argument("--k1", type=int, default=99)
    p.add_argument("--k2", type=int, default=1)
    p.add_argument("--proposal", choices=PROPOSALS, default="local-global")
    p.add_argument("--mix", type=float, default=0.5)
    p.add_argument("--blocks", choices=INSIDE_BLOCKS, default="full_cross")


def _output_args(p):
    p.add_argument("--output", default=None, help="CSV path (stdout when omitted)")
    p.add_argument("--json", default=None, help="JSON path (default: CSV path with .json suffix)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdp-kit", description="Randomized dynamic programming toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated instance (.npz) and its metadata")
    _model_args(p)
    _output_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="replicated randomized estimates against the exact value")
    _model_args(p)
    _estimator_args(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    _output_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="top-K vs randomized sweep over K levels and profiles")
    _model_args(p, t=10)
    _estimator_args(p)
    p.add_argument("--profiles", default=",".join(x.replace("_", "-") for x in PROFILES))
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    _output_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="tape gradients vs central finite differences")
    _model_args(p, n=5, t=4)
    _estimator_args(p)
    p.set_defaults(k1=2, k2=1)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="training demos (loss curves and posterior histograms)")
    p.add_argument("--demo", choices=("likelihood", "autoencoder"), default="likelihood")
    p.add_argument("--arms", default="rdp,topk")
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--t", type=int, default=8)
    p.add_argument("--symbols", type=int, default=30)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--sequences", type=int, default=40)
    p.add_argument("--k-fraction", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--straight-through", type=_bool, default=False)
    p.add_argument("--entropy-weight", type=float, default=1.0, help="weight of the entropy term (autoencoder)")
    p.add_argument("--norm-cap", type=float, default=2.0, help="cap on teacher embedding norms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default="train_out")
    p.set_defaults(func=cmd_train)

    for action in sub.choices.values():
        action.add_argument("--config", default=None, help="key = value file; flags override it")
    parser.commands = dict(sub.choices)
    return parser


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        subparser = parser.commands[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else list(argv))
        return args.func(args)
    except RDPError as exc:
        sys.stderr.write(f"rdp-kit: error: {exc}\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
