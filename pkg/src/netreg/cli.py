"""Command-line experiment harness.

Every subcommand reads an optional INI config (``--config``), validates all of
it before computing anything, and writes deterministic CSV files into
``--out``. Wall-clock time goes to ``run_meta.json`` so that the CSV files are
byte-identical across reruns with the same config and seed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import configparser
import contextlib
import json
import os
import sys
import time
from fractions import Fraction

import numpy as np

from netreg import (
    __version__,
    experiments,
    filters,
    geometry,
    linops,
    nets,
    plots,
    serialize,
    training,
    unrolled,
    variational,
)
from netreg.errors import ConfigError, NetregError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# --------------------------------------------------------------------------
# config


def _float(text):
    try:
        return float(text)
    except ValueError:
        return float(Fraction(text.strip()))


def _floats(text):
    return [_float(t) for t in text.replace(",", " ").split()]


def _ints(text):
    return [int(t) for t in text.replace(",", " ").split()]


def _strs(text):
    return [t for t in text.replace(",", " ").split()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else _float(text)


SCHEMA = {
    "run": {"seed": (int, 0)},
    "problem": {
        "kind": (str, "deconvolution"),
        "n": (int, 32),
        "m": (int, 16),
        "width": (_float, 1.5),
        "fraction": (_float, 0.5),
        "seed": (int, 0),
    },
    "signals": {
        "kind": (str, "piecewise_constant"),
        "count": (int, 20),
        "seed": (int, 1),
        "train_count": (int, 1000),
        "train_seed": (int, 2),
    },
    "noise": {"deltas": (_floats, [1e-1, 1e-2, 1e-3, 1e-4])},
    "rule": {"mode": (str, None), "c": (_float, 1.0), "gamma": (_float, 2.0 / 3.0)},
    "filter": {"kinds": (_strs, list(filters.FILTER_KINDS)), "kind": (str, "tikhonov")},
    "train": {
        "learning_rate": (_float, 0.01),
        "momentum": (_float, 0.9),
        "weight_decay": (_float, 1e-6),
        "epochs": (int, 1000),
        "batch": (int, 0),
        "hidden": (_ints, [64]),
    },
    "nett": {
        "latent": (int, 8),
        "beta": (_float, 1.0),
        "p": (_float, 1.5),
        "weight": (_float, 0.1),
        "epsilon": (_float, 1e-6),
        "scale": (_float, 0.8),
        "reg_seed": (int, 0),
        "alpha": (_float, 1e-2),
        "delta": (_float, 1e-2),
        "similarity": (str, "squared_norm"),
        "constraint": (str, "none"),
        "tol": (_float, 1e-10),
        "max_iter": (int, 20000),
        "starts": (int, 8),
    },
    "unrolled": {
        "kind": (str, "indie"),
        "blocks": (int, 10),
        "alpha": (_float, 1.0),
        "C": (_opt_float, None),
        "tol": (_float, 1e-10),
        "denoiser_scale": (_float, 0.5),
        "delta": (_float, 1e-2),
        "shared": (_bool, True),
        "hidden": (_ints, []),
    },
    "synthesis": {
        "decoder": (str, "dct"),
        "latent": (int, 0),
        "alpha": (_float, 1e-2),
        "p": (_float, 1.0),
        "weight": (_float, 1.0),
        "delta": (_float, 1e-2),
        "tol": (_float, 1e-10),
        "max_iter": (int, 20000),
    },
}


class Config(dict):
    """Parsed config: ``cfg[section][key]``; ``text`` is the canonical form that gets hashed."""

    text = ""


def load_config(path=None, seed=None):
    """Parse and type-check an INI file against :data:`SCHEMA`; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    cfg = Config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        cfg[section] = {}
        for key, (conv, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    cfg[section][key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc
            else:
                cfg[section][key] = default
    if seed is not None:
        cfg["run"]["seed"] = int(seed)
    cfg.text = "\n".join(
        f"{s}.{k}={cfg[s][k]!r}" for s in sorted(cfg) for k in sorted(cfg[s])
    )
    return cfg


@contextlib.contextmanager
def validating():
    """Turn value errors raised while building objects into :class:`ConfigError`."""
    try:
        yield
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _problem(cfg):
    p = cfg["problem"]
    spec = experiments.ProblemSpec(p["kind"], p["n"], p["m"], p["width"], p["fraction"], p["seed"])
    return spec, experiments.build_operator(spec)


def _phantoms(cfg, n, train=False):
    s = cfg["signals"]
    count, seed = (s["train_count"], s["train_seed"]) if train else (s["count"], s["seed"])
    return experiments.generate_phantoms(s["kind"], count, n, seed)


def _deltas(cfg):
    d = cfg["noise"]["deltas"]
    if not d or any(v <= 0 for v in d):
        raise ConfigError("noise deltas must be a non-empty list of positive numbers")
    return d


def _alpha_rule(cfg, default_mode):
    r = cfg["rule"]
    mode = r["mode"] or default_mode
    if mode == "apriori":
        rule = filters.ParameterRule(r["c"], r["gamma"])
        return mode, lambda delta: filters.apriori_choice(rule, delta)
    if mode == "linear":
        if not r["c"] > 0:
            raise ConfigError("rule c must be positive")
        return mode, lambda delta: r["c"] * delta
    raise ConfigError(f"unknown rule mode {mode!r}; expected apriori or linear")


def _train_config(cfg, seed):
    t = cfg["train"]
    return training.TrainConfig(
        learning_rate=t["learning_rate"],
        momentum=t["momentum"],
        weight_decay=t["weight_decay"],
        epochs=t["epochs"],
        batch=t["batch"] or None,
        seed=seed,
    )


def _regularizer(cfg, n):
    c = cfg["nett"]
    return experiments.fixture_regularizer(
        n, c["latent"], seed=c["reg_seed"], beta=c["beta"], p=c["p"],
        weight=c["weight"], epsilon=c["epsilon"], scale=c["scale"],
    )


def _solver_config(section, x0=None):
    return variational.SolverConfig(tol=section["tol"], max_iter=section["max_iter"], x0=x0)


# --------------------------------------------------------------------------
# output


class Output:
    def __init__(self, directory, cfg, command, plots_enabled):
        self.dir = directory
        self.cfg = cfg
        self.command = command
        self.plots = plots_enabled
        self.files = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name):
        return os.path.join(self.dir, name)

    def csv(self, name, columns, rows):
        serialize.write_csv(self.path(name), columns, rows, self.cfg.text)
        self.files.append(name)

    def meta(self, wall_time):
        meta = {
            "command": self.command,
            "version": __version__,
            "config_hash": serialize.config_hash(self.cfg.text),
            "seed": self.cfg["run"]["seed"],
            "wall_time_s": wall_time,
            "files": self.files,
        }
        with open(self.path("run_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# subcommands


def cmd_adjoint_check(cfg, out, args):
    with validating():
        _, op = _problem(cfg)
    f = linops.svd(op)
    M = linops.materialize(op)
    recon = float(np.max(np.abs(f.matrix() - M)))
    rows = [
        ("adjoint_mismatch", linops.adjoint_mismatch(op, seed=cfg["run"]["seed"])),
        ("operator_norm", linops.operator_norm(op)),
        ("s_max", f.s_max),
        ("s_min_nonzero", float(f.s[-1])),
        ("rank", f.rank),
        ("svd_reconstruction_error", recon),
    ]
    out.csv("adjoint_check.csv", ("check", "value"), rows)


def cmd_filter_study(cfg, out, args):
    with validating():
        _, op = _problem(cfg)
        phantoms = _phantoms(cfg, op.in_dim)
        deltas = _deltas(cfg)
        _, alpha_of = _alpha_rule(cfg, "apriori")
        kinds = cfg["filter"]["kinds"]
        for k in kinds:
            filters.FilterSpec(k)
    rows = experiments.filter_study(op, phantoms, kinds, alpha_of, deltas, seed=cfg["run"]["seed"])
    out.csv(
        "filter_study.csv",
        ("kind", "delta", "alpha", "mean_error", "max_error"),
        [(r.kind, r.delta, r.alpha, r.mean_error, r.max_error) for r in rows],
    )
    if out.plots:
        series = {k: ([r.delta for r in rows if r.kind == k], [r.mean_error for r in rows if r.kind == k]) for k in kinds}
        plots.loglog_svg(out.path("filter_study.svg"), series, title="filter study", ylabel="mean error")


def _nullspace_model(cfg, op, f, seed, model_path=None):
    if model_path:
        base = serialize.load_net(model_path)
        return nets.NullSpaceNet(base, geometry.SvdKernelProjection(f)), []
    with validating():
        tc = _train_config(cfg, seed)
        hidden = cfg["train"]["hidden"]
        train_ph = _phantoms(cfg, op.in_dim, train=True)
    return experiments.train_nullspace(op, f, train_ph, hidden, tc, seed=seed)


def _trace_rows(trace):
    return [row.astuple() for row in trace]


def cmd_train_nullspace(cfg, out, args):
    with validating():
        _, op = _problem(cfg)
    f = linops.svd(op)
    net, trace = _nullspace_model(cfg, op, f, cfg["run"]["seed"])
    serialize.save_net(out.path("nullspace_net.bin"), net.base)
    out.files.append("nullspace_net.bin")
    out.csv("train_trace.csv", training.TRACE_COLUMNS, _trace_rows(trace))
    if out.plots:
        plots.line_svg(out.path("train_trace.svg"), [r.risk for r in trace], title="training risk", xlabel="epoch")


def cmd_nullspace_study(cfg, out, args):
    with validating():
        _, op = _problem(cfg)
        phantoms = _phantoms(cfg, op.in_dim)
        deltas = _deltas(cfg)
        _, alpha_of = _alpha_rule(cfg, "apriori")
        kind = cfg["filter"]["kind"]
        filters.FilterSpec(kind)
    f = linops.svd(op)
    model, trace = _nullspace_model(cfg, op, f, cfg["run"]["seed"], args.model)
    rows = experiments.nullspace_study(op, f, model, phantoms, kind, alpha_of, deltas, seed=cfg["run"]["seed"])
    out.csv(
        "nullspace_study.csv",
        ("delta", "alpha", "filter_error", "nullspace_error"),
        [(r.delta, r.alpha, r.filter_error, r.nullspace_error) for r in rows],
    )
    if out.plots:
        ds = [r.delta for r in rows]
        plots.loglog_svg(
            out.path("nullspace_study.svg"),
            {kind: (ds, [r.filter_error for r in rows]), "null-space": (ds, [r.nullspace_error for r in rows])},
            title="filter vs null-space network", ylabel="mean error",
        )


def cmd_nett_solve(cfg, out, args):
    c = cfg["nett"]
    with validating():
        _, op = _problem(cfg)
        reg = _regularizer(cfg, op.in_dim)
        x_true = _phantoms(cfg, op.in_dim)[0]
        sim = variational.SimilarityMeasure(c["similarity"])
        constraint = None if c["constraint"] == "none" else c["constraint"]
        if sim.kind == "kl":
            x_true = np.abs(x_true)
        y = experiments.add_noise(op.apply(x_true), c["delta"], cfg["run"]["seed"])
        if sim.kind == "kl":
            y = np.maximum(y, 0.0)
        problem = variational.TikhonovProblem(op, y, c["alpha"], reg, sim, constraint)
        x0 = np.zeros(op.in_dim) if sim.kind != "kl" else np.full(op.in_dim, 0.5)
        solver = _solver_config(c, x0=x0)
    rep = variational.nett_solve(problem, solver)
    rows = [(0, rep.objective[0], "")] + [(k + 1, rep.objective[k + 1], rep.steps[k]) for k in range(len(rep.steps))]
    out.csv("nett_trace.csv", ("iteration", "objective", "step"), rows)
    out.csv(
        "nett_solution.csv",
        ("index", "x_true", "x"),
        [(i, a, b) for i, (a, b) in enumerate(zip(x_true, rep.x))],
    )
    out.csv("nett_summary.csv", ("key", "value"), [
        ("termination", rep.termination),
        ("iterations", rep.iterations),
        ("objective", rep.objective[-1]),
        ("error", float(np.linalg.norm(rep.x - x_true))),
    ])
    if out.plots:
        plots.line_svg(out.path("nett_trace.svg"), rep.objective, title="NETT objective")


def cmd_rate_study(cfg, out, args):
    c = cfg["nett"]
    with validating():
        _, op = _problem(cfg)
        reg = _regularizer(cfg, op.in_dim)
        x_true = _phantoms(cfg, op.in_dim)[0]
        deltas = _deltas(cfg)
        _, alpha_of = _alpha_rule(cfg, "linear")
        solver = _solver_config(c)
    x_dag, rows = experiments.rate_study(
        op, reg, x_true, deltas, alpha_of, seed=cfg["run"]["seed"], config=solver, oracle_starts=c["starts"]
    )
    out.csv(
        "rate_study.csv",
        ("delta", "alpha", "error", "bregman", "objective", "iterations"),
        [(r.delta, r.alpha, r.error, r.bregman, r.objective, r.iterations) for r in rows],
    )
    slope = experiments.loglog_slope([r.delta for r in rows], [r.bregman for r in rows]) if len(rows) > 1 else float("nan")
    out.csv("rate_summary.csv", ("key", "value"), [("bregman_slope", slope), ("oracle_R", reg.value(x_dag))])
    print(f"log-log slope of Bregman distance vs delta: {slope:.4f}")
    if out.plots:
        ds = [r.delta for r in rows]
        plots.loglog_svg(
            out.path("rate_study.svg"),
            {"bregman": (ds, [r.bregman for r in rows]), "error": (ds, [r.error for r in rows])},
            title="NETT convergence", ylabel="distance to x+", note=f"slope {slope:.3f}",
        )


def contraction_denoiser(n, scale, seed):
    """Affine ``N(x) = W x + b`` with ``|W| = scale``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 8]))
    W = rng.standard_normal((n, n))
    W *= scale / linops.svd(linops.DenseOperator(W)).s_max
    return nets.linear_net(W, 0.1 * rng.standard_normal(n))


def varnet_fixture(op, alpha, seed):
    """One cycle: a finite-difference and a seeded 3-tap kernel with log-cosh potentials."""
    n = op.in_dim
    rng = np.random.default_rng(np.random.SeedSequence([seed, 9]))
    kb = [linops.CircularConvolution([1.0, -1.0], n), linops.CircularConvolution(rng.standard_normal(3) / 3.0, n)]
    phi = (unrolled.Potential(0.1, 0.1), unrolled.Potential(0.1, 0.1))
    data = (linops.CircularConvolution([1.0], op.out_dim),)
    psi = (unrolled.Potential(1.0, 1.0, "quadratic"),)
    lip = alpha * linops.operator_norm(op) ** 2 + sum(
        p.a / p.b * linops.operator_norm(k) ** 2 for k, p in zip(kb, phi)
    )
    cycle = unrolled.VarNetCycle(tuple(kb), phi, data, psi)
    return unrolled.VarNetParams((cycle,), steps=(1.0 / lip,), alpha=alpha)


def cmd_unrolled_run(cfg, out, args):
    u = cfg["unrolled"]
    seed = cfg["run"]["seed"]
    with validating():
        spec, op = _problem(cfg)
        kind = u["kind"]
        if kind not in unrolled.UNROLLED_KINDS:
            raise ConfigError(f"unknown unrolled kind {kind!r}")
        x_true = _phantoms(cfg, op.in_dim)[0]
        y = experiments.add_noise(op.apply(x_true), u["delta"], seed)
        if args.model:
            denoiser = serialize.load_net(args.model)
        else:
            denoiser = contraction_denoiser(op.in_dim, u["denoiser_scale"], seed)
        extra = {}
        if kind == "cascade":
            extra["cascade"] = experiments.build_cascade(spec, u["alpha"])
        if kind == "varnet":
            extra["varnet"] = varnet_fixture(op, u["alpha"], seed)
        config = unrolled.UnrolledConfig(
            n_blocks=u["blocks"], alpha=u["alpha"], C=u["C"], denoiser=denoiser, tol=u["tol"], **extra
        )
        if kind == "indie":
            unrolled.majorization_constant(op, u["C"])
    rep = unrolled.run_unrolled(kind, config, op, y)
    rows = [(n, v, float(np.linalg.norm(x_true - rep.x)) if n == len(rep.objective) - 1 else "") for n, v in enumerate(rep.objective)]
    out.csv("unrolled_trace.csv", ("block", "objective", "final_error"), rows)
    if "cg_residuals" in rep.info:
        out.csv("cg_residuals.csv", ("block", "residual"), list(enumerate(rep.info["cg_residuals"], start=1)))
    if out.plots and rep.objective:
        plots.line_svg(out.path("unrolled_trace.svg"), rep.objective, title=f"{kind} objective", xlabel="block + 1")


def cmd_unrolled_train(cfg, out, args):
    u = cfg["unrolled"]
    seed = cfg["run"]["seed"]
    with validating():
        _, op = _problem(cfg)
        xs = _phantoms(cfg, op.in_dim, train=True)
        ys = np.stack([experiments.add_noise(op.apply(x), u["delta"], seed + i) for i, x in enumerate(xs)])
        dims = [op.in_dim] + u["hidden"] + [op.in_dim]
        acts = ["leaky_relu"] * len(u["hidden"]) + ["identity"]
        if u["shared"]:
            kw = {"denoiser": experiments.zero_output_net(dims, acts, seed=seed)}
        else:
            kw = {"denoisers": tuple(experiments.zero_output_net(dims, acts, seed=seed + b) for b in range(u["blocks"]))}
        config = unrolled.UnrolledConfig(n_blocks=u["blocks"], alpha=u["alpha"], C=u["C"], **kw)
        unrolled.majorization_constant(op, u["C"])
        tc = _train_config(cfg, seed)
    model, trace = unrolled.train_unrolled_indie(config, op, training.Dataset(xs, ys), tc)
    for k, d in enumerate(model.denoisers):
        name = f"indie_denoiser_{k}.bin"
        serialize.save_net(out.path(name), d)
        out.files.append(name)
    out.csv("unrolled_train_trace.csv", training.TRACE_COLUMNS, _trace_rows(trace))
    if out.plots:
        plots.line_svg(out.path("unrolled_train_trace.svg"), [r.risk for r in trace], title="INDIE training risk", xlabel="epoch")


def cmd_synthesis_solve(cfg, out, args):
    s = cfg["synthesis"]
    seed = cfg["run"]["seed"]
    with validating():
        _, op = _problem(cfg)
        n = op.in_dim
        if s["decoder"] == "dct":
            decoder = nets.linear_net(unrolled.dct_matrix(n).T)
        elif s["decoder"] == "random":
            latent = s["latent"] or n
            rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
            decoder = nets.linear_net(rng.standard_normal((n, latent)) / np.sqrt(latent))
        else:
            raise ConfigError(f"unknown decoder {s['decoder']!r}; expected dct or random")
        x_true = _phantoms(cfg, n)[0]
        y = experiments.add_noise(op.apply(x_true), s["delta"], seed)
        if not 1 <= s["p"] <= 2 or s["weight"] <= 0 or s["alpha"] < 0:
            raise ConfigError("need p in [1, 2], positive weight and non-negative alpha")
        solver = _solver_config(s)
    res = variational.synthesis_solve(op, decoder, y, s["alpha"], s["weight"], s["p"], solver)
    rep = res.report
    rows = [(0, rep.objective[0], "")] + [(k + 1, rep.objective[k + 1], rep.steps[k]) for k in range(len(rep.steps))]
    out.csv("synthesis_trace.csv", ("iteration", "objective", "step"), rows)
    out.csv("synthesis_codes.csv", ("index", "code"), list(enumerate(res.codes)))
    out.csv("synthesis_solution.csv", ("index", "x_true", "x"), [(i, a, b) for i, (a, b) in enumerate(zip(x_true, res.x))])
    if out.plots:
        plots.line_svg(out.path("synthesis_trace.svg"), rep.objective, title="synthesis objective")


COMMANDS = {
    "adjoint-check": (cmd_adjoint_check, "adjoint, norm and SVD checks of the configured operator"),
    "filter-study": (cmd_filter_study, "error of filter reconstructions across noise levels"),
    "train-nullspace": (cmd_train_nullspace, "train a null-space network on exact-data pairs"),
    "nullspace-study": (cmd_nullspace_study, "filter versus filter plus null-space network"),
    "nett-solve": (cmd_nett_solve, "solve one NETT problem"),
    "rate-study": (cmd_rate_study, "NETT Bregman distance against noise level"),
    "unrolled-run": (cmd_unrolled_run, "run an unrolled scheme with a fixed denoiser"),
    "unrolled-train": (cmd_unrolled_train, "train INDIE end to end"),
    "synthesis-solve": (cmd_synthesis_solve, "synthesis-form sparse reconstruction"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="netreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"netreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="run seed (noise, initialization)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--plots", action="store_true", help="also write SVG plots")
        if name in ("nullspace-study", "unrolled-run"):
            p.add_argument("--model", help="load a saved network instead of the default")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.seed)
        out = Output(args.out, cfg, args.command, args.plots)
        start = time.perf_counter()
        func(cfg, out, args)
        out.meta(time.perf_counter() - start)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, NetregError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
