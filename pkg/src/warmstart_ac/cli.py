"""Command-line front end.

Every subcommand resolves its parameters as built-in defaults, then the JSON
file given by ``--config``, then explicit flags. The resolved set is written
to ``manifest.json`` next to the outputs; passing that manifest back through
``--config`` reproduces the run.

Failures print a single line ``error: <kind>: <detail>`` to stderr and exit
non-zero (2 for invalid input, 1 for runtime failures).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .env import Dataset, fmt_real, gen_user_models
from .evaluation import (
    ExperimentConfig,
    default_jobs,
    derive_seed,
    elrar,
    run_experiment,
)
from .learner import LearnerConfig, PriorStudy, batch_learn, gen_prior_study, run_online

log = logging.getLogger("warmstart_ac")


class UsageError(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError("usage", message.replace("\n", " "))


# Per-subcommand parameters: flag -> (dest, type, default)
USER_PARAMS = {
    "--sigma-b": ("sigma_b", float, 0.005),
    "--sigma-s": ("sigma_s", float, 1.0),
    "--sigma-r": ("sigma_r", float, 1.0),
    "--p": ("p", int, 3),
}
LEARN_PARAMS = {
    "--gamma": ("gamma", float, 0.0),
    "--zeta-c": ("zeta_c", float, 1e-5),
    "--zeta-a": ("zeta_a", float, 1e-5),
    "--alt-tol": ("alt_tol", float, 1e-4),
    "--alt-max-iters": ("alt_max_iters", int, 50),
}
COMMANDS = {
    "gen-prior": {
        "--users": ("users", int, 40),
        "--T": ("T", int, 42),
        **USER_PARAMS,
        **LEARN_PARAMS,
    },
    "learn-batch": {
        "--data": ("data", str, None),
        **LEARN_PARAMS,
    },
    "run-online": {
        "--mode": ("mode", str, "rws"),
        "--t0": ("t0", int, None),
        "--T": ("T", int, 30),
        "--prior": ("prior", str, None),
        **USER_PARAMS,
        **LEARN_PARAMS,
    },
    "evaluate": {
        "--theta": ("theta", str, None),
        "--users": ("users", int, 50),
        "--H": ("H", int, 5000),
        "--L": ("L", int, 4000),
        **USER_PARAMS,
    },
    "experiment": {
        "--gammas": ("gammas", str, None),
        "--n-users": ("n_new_users", int, None),
        "--T": ("T", int, None),
    },
}
COMMON = {
    "--seed": ("seed", int, 0),
    "--out": ("out", str, None),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="warmstart-ac", description="Warm-started online actor-critic for mHealth simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, params in COMMANDS.items():
        p = sub.add_parser(name)
        for flag, (dest, typ, _) in {**params, **COMMON}.items():
            p.add_argument(flag, dest=dest, type=typ, default=None)
        p.add_argument("--config", default=None, help="JSON file of parameter values (keys as in manifest.json)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
        p.add_argument("--dry-run", action="store_true", help="print the resolved manifest and exit")
    return parser


def _load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise UsageError("config", f"{path}:{exc.lineno}:{exc.colno}: {exc.msg} near {line.strip()!r}") from None
    if not isinstance(doc, dict):
        raise UsageError("config", f"{path}: top level must be a JSON object")
    # accept a manifest written by a previous run
    return doc.get("config", doc)


def resolve(args) -> dict:
    """Defaults, then --config, then explicit flags."""
    params = {**COMMANDS[args.command], **COMMON}
    dests = {dest: flag for flag, (dest, _, _) in params.items()}
    if args.command == "experiment":
        resolved = ExperimentConfig().to_dict()
        if args.config:
            file_cfg = _load_json(args.config)
            try:
                ExperimentConfig.from_dict({k: v for k, v in file_cfg.items() if k != "out"})
            except KeyError as exc:
                raise UsageError("config", f"{args.config}: {exc.args[0]}") from None
            resolved.update(file_cfg)
    else:
        resolved = {dest: default for (dest, _, default) in params.values()}
        if args.config:
            for key, value in _load_json(args.config).items():
                if key not in resolved:
                    raise UsageError("config", f"{args.config}: unknown config key {key!r}")
                resolved[key] = value
    for dest in dests:
        value = getattr(args, dest, None)
        if value is not None:
            resolved[dest] = value
    if args.command == "experiment" and isinstance(resolved.get("gammas"), str):
        try:
            resolved["gammas"] = [float(g) for g in resolved["gammas"].split(",")]
        except ValueError:
            raise UsageError("invalid-flag", f"--gammas: expected comma-separated numbers, got {resolved['gammas']!r}")
    return resolved


def _flag(command, dest) -> str:
    for flag, (d, _, _) in {**COMMANDS[command], **COMMON}.items():
        if d == dest:
            return flag
    return dest


def _require(cond, command, dest, detail):
    if not cond:
        raise UsageError("invalid-flag", f"{_flag(command, dest)}: {detail}")


def _validate_learning(r, command):
    _require(0.0 <= r["gamma"] < 1.0, command, "gamma", f"must satisfy 0 <= gamma < 1, got {r['gamma']}")
    _require(r["zeta_c"] > 0, command, "zeta_c", "must be positive")
    _require(r["zeta_a"] > 0, command, "zeta_a", "must be positive")
    _require(r["alt_tol"] > 0, command, "alt_tol", "must be positive")
    _require(r["alt_max_iters"] >= 1, command, "alt_max_iters", "must be >= 1")


def _validate_user(r, command):
    _require(r["sigma_b"] >= 0, command, "sigma_b", "must be >= 0")
    _require(r["sigma_s"] >= 0, command, "sigma_s", "must be >= 0")
    _require(r["sigma_r"] >= 0, command, "sigma_r", "must be >= 0")
    _require(r["p"] >= 3, command, "p", "must be >= 3")


def manifest(command: str, resolved: dict) -> dict:
    return {
        "tool": "warmstart_ac",
        "version": __version__,
        "command": command,
        "seed": resolved.get("seed"),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": resolved,
    }


def _out_dir(resolved, default) -> Path:
    out = Path(resolved.get("out") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_gen_prior(r) -> None:
    _require(r["users"] >= 1, "gen-prior", "users", f"must be >= 1, got {r['users']}")
    _require(r["T"] >= 2, "gen-prior", "T", f"must be >= 2, got {r['T']}")
    _validate_user(r, "gen-prior")
    _validate_learning(r, "gen-prior")
    prior = gen_prior_study(
        n_users=r["users"], T_bar=r["T"], sigma_b=r["sigma_b"], p=r["p"], gamma=r["gamma"],
        zeta_c=r["zeta_c"], zeta_a=r["zeta_a"], seed=r["seed"], sigma_s=r["sigma_s"],
        sigma_r=r["sigma_r"], alt_tol=r["alt_tol"], alt_max_iters=r["alt_max_iters"],
    )
    out = _out_dir(r, "prior")
    prior.save(out)
    print(f"wrote {len(prior.data)} tuples to {out / 'prior.csv'}; theta_bar = {np.array2string(prior.theta_bar, precision=4)}")


def cmd_learn_batch(r) -> None:
    _require(r["data"] is not None, "learn-batch", "data", "a dataset CSV is required")
    _validate_learning(r, "learn-batch")
    D = Dataset.from_csv(r["data"], kind="prior")
    _require(len(D) >= 2, "learn-batch", "data", f"needs at least 2 tuples, got {len(D)}")
    res = batch_learn(D, r["gamma"], r["zeta_c"], r["zeta_a"], r["alt_tol"], r["alt_max_iters"])
    out = _out_dir(r, "batch")
    _write_json(out / "batch.json", {
        "w": res.w.tolist(), "theta": res.theta.tolist(),
        "converged": bool(res.converged), "iterations": res.iterations,
    })
    print(f"theta = {np.array2string(res.theta, precision=4)} (converged={res.converged}, iterations={res.iterations})")


def cmd_run_online(r) -> None:
    mode = str(r["mode"]).upper()
    _require(mode in ("RWS", "NWS"), "run-online", "mode", f"must be rws or nws, got {r['mode']!r}")
    t0 = r["t0"] if r["t0"] is not None else (1 if mode == "NWS" else 10)
    _require(r["T"] >= 1, "run-online", "T", "must be >= 1")
    _require(1 <= t0 <= r["T"], "run-online", "t0", f"must satisfy 1 <= t0 <= T, got {t0}")
    _validate_user(r, "run-online")
    _validate_learning(r, "run-online")
    prior = None
    if mode == "NWS":
        _require(r["prior"] is not None, "run-online", "prior", "nws mode requires a prior study directory")
        prior = PriorStudy.load(r["prior"])
    cfg = LearnerConfig(
        gamma=r["gamma"], zeta_c=r["zeta_c"], zeta_a=r["zeta_a"], T=r["T"], T0=t0, mode=mode,
        alt_max_iters=r["alt_max_iters"], alt_tol=r["alt_tol"], seed=r["seed"],
    )
    model = gen_user_models(1, r["sigma_b"], r["p"], derive_seed(r["seed"], 0), r["sigma_s"], r["sigma_r"])[0]
    res = run_online(model, prior, cfg, np.random.default_rng(derive_seed(r["seed"], 1)))
    out = _out_dir(r, "online")
    q, d = r["p"] + 1, 2 * r["p"] + 2
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["t", "n_tuples", "updated", "action", "reward", "converged", "alt_iterations"]
            + [f"theta{j}" for j in range(q)] + [f"w{j}" for j in range(d)]
        )
        for row in res.trace:
            w = row.w if row.w is not None else [float("nan")] * d
            writer.writerow(
                [row.t, row.n_tuples, int(row.updated), row.action, fmt_real(row.reward),
                 "" if row.converged is None else int(row.converged), row.alt_iterations]
                + [fmt_real(v) for v in row.theta] + [fmt_real(v) for v in w]
            )
    res.data.to_csv(out / "online.csv")
    _write_json(out / "theta.json", {"theta": res.theta.tolist(), "model": model.to_dict()})
    n_updates = sum(row.updated for row in res.trace)
    print(f"{n_updates} update events; final theta = {np.array2string(res.theta, precision=4)}")


def cmd_evaluate(r) -> None:
    _require(r["theta"] is not None, "evaluate", "theta", "a theta.json or prior directory is required")
    _require(r["users"] >= 1, "evaluate", "users", "must be >= 1")
    _require(0 < r["L"] < r["H"], "evaluate", "L", f"must satisfy 0 < L < H, got L={r['L']}, H={r['H']}")
    _validate_user(r, "evaluate")
    src = Path(r["theta"])
    doc = json.loads((src / "prior.json" if src.is_dir() else src).read_text())
    theta = np.asarray(doc.get("theta", doc.get("theta_bar")), dtype=float)
    _require(theta.shape == (r["p"] + 1,), "evaluate", "theta", f"expected {r['p'] + 1} entries")
    models = gen_user_models(r["users"], r["sigma_b"], r["p"], derive_seed(r["seed"], 0), r["sigma_s"], r["sigma_r"])
    mean, std, values = elrar([theta] * len(models), models, r["H"], r["L"], derive_seed(r["seed"], 1), return_values=True)
    if r.get("out"):
        out = _out_dir(r, "evaluate")
        _write_json(out / "elrar.json", {"mean": mean, "std": std, "per_user": values})
    print(f"ElrAR = {mean:.2f} ± {std:.2f} over {len(models)} users")


def cmd_experiment(r, jobs) -> None:
    try:
        cfg = ExperimentConfig.from_dict({k: v for k, v in r.items() if k != "out"})
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError("config", str(exc.args[0] if exc.args else exc)) from None
    table = run_experiment(cfg, jobs=jobs)
    out = _out_dir(r, "results")
    (out / "results.csv").write_text(table.to_csv())
    (out / "results.json").write_text(table.to_json())
    print(table.format_text())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        resolved = resolve(args)
        jobs = args.jobs if args.jobs is not None else default_jobs()
        if jobs < 1:
            raise UsageError("invalid-flag", "--jobs: must be >= 1")
        man = manifest(args.command, resolved)
        if args.dry_run:
            print(json.dumps(man, indent=2, sort_keys=True))
            return 0
        if args.command == "experiment":
            cmd_experiment(resolved, jobs)
        else:
            {
                "gen-prior": cmd_gen_prior,
                "learn-batch": cmd_learn_batch,
                "run-online": cmd_run_online,
                "evaluate": cmd_evaluate,
            }[args.command](resolved)
        default_out = {"gen-prior": "prior", "learn-batch": "batch", "run-online": "online", "experiment": "results"}
        if args.command in default_out or resolved.get("out"):
            out = _out_dir(resolved, default_out.get(args.command, "."))
            _write_json(out / "manifest.json", man)
        return 0
    except UsageError as exc:
        print(f"error: {exc.kind}: {exc.detail}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: runtime: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
