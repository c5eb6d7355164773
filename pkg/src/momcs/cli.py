"""Command line entry point: ``momcs {gen,synth,recover,bench,theory}``."""

import argparse
import configparser
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import (
    PLAN_FIELDS,
    RECOVERY_FIELDS,
    THEORY_DEFAULTS,
    ConfigError,
    plan_from_ini,
    read_ini,
    recovery_config_from,
    theory_settings,
)
from .experiments import emit_trace, run_plan
from .generator import load_weights, random_generator, save_weights
from .recovery import recover
from .sensing import NoiseSpec, load_problem, parse_ensemble, save_problem, synthesize, write_array
from .theory_lab import (
    LemmaCheckConfig,
    calibrate_batch_size,
    calibrate_gamma,
    check_batch_srec,
    check_multiplier_bound,
    check_objective_bound,
)


def run_theory_suite(config_path=None, out=None, overrides=None, log=print):
    """Run every lemma check for every configured (A, noise) ensemble pair.

    With ``calibrate = true`` the batch size is the smallest grid value at
    which the multiplier bound holds, and ``gamma`` the largest grid value at
    which the batch S-REC holds, both on calibration seeds disjoint from the
    evaluation seed.  Returns ``(rows, ok)``; rows are also written as JSON
    lines to ``out`` when given.
    """
    cp = read_ini(config_path) if config_path else configparser.ConfigParser()
    s = theory_settings(cp, overrides)
    rows, ok = [], True
    for ensemble, noise in s["ensembles"]:
        base = LemmaCheckConfig(
            trials=s["trials"],
            M=s["M"],
            b=s["b"],
            n=s["n"],
            k=s["k"],
            hidden=s["hidden"],
            ensemble=ensemble,
            noise=noise,
            sigma=s["sigma"],
            direction_samples=s["direction_samples"],
            gamma=s["gamma"],
            batch_fraction=s["batch_fraction"],
            target_rate=s["target_rate"],
            seed=s["seed"],
        )
        net = base.generator()
        reports = [
            check_objective_bound(
                dataclasses.replace(base, M=s["objective_M"], b=s["objective_b"], trials=s["objective_trials"]),
                net,
            )
        ]
        if s["calibrate"]:
            cal = dataclasses.replace(base, trials=s["calibration_trials"], seed=s["seed"] + 1)
            b, b_rows = calibrate_batch_size(cal, s["b_grid"], "multiplier", net)
            gamma, g_rows = calibrate_gamma(dataclasses.replace(cal, b=b), s["gamma_grid"], "generator", net)
            rows.append(
                {
                    "check": "calibration",
                    "ensemble": ensemble.tag(),
                    "noise": noise.tag(),
                    "b": b,
                    "gamma": gamma,
                    "b_sweep": b_rows,
                    "gamma_sweep": g_rows,
                    "seed": cal.seed,
                }
            )
            base = dataclasses.replace(base, b=b, gamma=gamma)
        reports += [
            check_batch_srec(base, "generator", net),
            check_batch_srec(base, "subspace", net),
            check_multiplier_bound(base, net),
        ]
        for rep in reports:
            row = rep.to_row()
            row["ok"] = rep.ok
            rows.append(row)
            ok &= rep.ok
            log(f"{row['check']:<26} {row['ensemble']:>16} b={row['b']:<3} pass_rate={row['pass_rate']:.3f} {'ok' if rep.ok else 'FAIL'}")
    if out:
        with open(out, "w") as fh:
            fh.write(f"# momcs {__version__} master_seed={s['seed']}\n")
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return rows, ok


def _flag(key):
    return "--" + key.replace("_", "-")


def _add_overrides(parser, keys, dest_prefix):
    for key in keys:
        parser.add_argument(_flag(key), dest=f"{dest_prefix}{key}", default=None, metavar="VALUE")


def _collect(args, prefix):
    return {
        k[len(prefix):]: v for k, v in vars(args).items() if k.startswith(prefix) and v is not None
    }


def build_parser():
    p = argparse.ArgumentParser(prog="momcs", description=__doc__)
    p.add_argument("--version", action="version", version=f"momcs {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="create and save a random generator")
    g.add_argument("--dims", default="5,50,100")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--final-relu", action="store_true")
    g.add_argument("--out", required=True, help="weight file path")

    s = sub.add_parser("synth", help="synthesize and save a sensing problem")
    s.add_argument("--generator", required=True, help="weight file")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--ensemble", default="gaussian")
    s.add_argument("--noise", default="gaussian")
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--epsilon", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("recover", help="recover the latent of one saved problem")
    r.add_argument("--problem", required=True, help="directory written by synth")
    r.add_argument("--generator", required=True, help="weight file")
    r.add_argument("--config", help="INI file with a [recover] section")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", required=True, help="output directory")
    _add_overrides(r, [k for k in RECOVERY_FIELDS if k != "seed"], "rc_")

    b = sub.add_parser("bench", help="run an experiment plan")
    b.add_argument("--config", help="INI file with [plan] and [algorithm:*] sections")
    b.add_argument("--seed", type=int, default=None, help="master seed")
    b.add_argument("--out", default=None, help="output directory")
    b.add_argument("--threads", type=int, default=1)
    _add_overrides(b, [k for k in PLAN_FIELDS if k not in ("master_seed", "out")], "plan_")
    _add_overrides(b, [k for k in RECOVERY_FIELDS if k not in ("seed", "algorithm", "M")], "rc_")

    t = sub.add_parser("theory", help="run the lemma check suite")
    t.add_argument("--config", help="INI file with a [theory] section")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None, help="JSON-lines report path")
    _add_overrides(t, [k for k in THEORY_DEFAULTS if k != "seed"], "th_")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"momcs {args.command}: error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args):
    if args.command == "gen":
        dims = [int(d) for d in args.dims.replace(",", " ").split()]
        net = random_generator(dims, args.seed, args.scale, args.final_relu)
        save_weights(net, args.out)
        print(f"wrote {args.out} dims={net.layer_dims}")
        return 0

    if args.command == "synth":
        net = load_weights(args.generator)
        z_star = np.random.default_rng([args.seed, 7]).standard_normal(net.latent_dim)
        noise = NoiseSpec(parse_ensemble(args.noise), args.sigma)
        prob = synthesize(net, z_star, args.m, parse_ensemble(args.ensemble), noise, args.epsilon, seed=args.seed)
        save_problem(prob, args.out)
        print(f"wrote {args.out} m={prob.m} n={prob.n} corrupted={len(prob.corrupted_rows)}")
        return 0

    if args.command == "recover":
        net = load_weights(args.generator)
        prob = load_problem(args.problem)
        items = {}
        if args.config:
            cp = read_ini(args.config)
            if cp.has_section("recover"):
                items = dict(cp["recover"])
        over = _collect(args, "rc_")
        if args.seed is not None:
            over["seed"] = str(args.seed)
        cfg = recovery_config_from("recover", items, over)
        rep = recover(prob, net, cfg)
        os.makedirs(args.out, exist_ok=True)
        emit_trace(rep, os.path.join(args.out, "trace.csv"), cfg.seed)
        write_array(os.path.join(args.out, "reconstruction.bin"), rep.reconstruction)
        write_array(os.path.join(args.out, "z_hat.bin"), rep.z_hat)
        summary = {
            "algorithm": cfg.algorithm,
            "recon_error_per_pixel": rep.recon_error_per_pixel,
            "final_objective": rep.final_objective,
            "restart_index_chosen": rep.restart_index_chosen,
            "wall_time": rep.wall_time,
            "seed": cfg.seed,
            "version": __version__,
        }
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
        print(json.dumps(summary))
        return 0

    if args.command == "bench":
        cp = read_ini(args.config) if args.config else configparser.ConfigParser()
        plan_over = _collect(args, "plan_")
        if args.seed is not None:
            plan_over["master_seed"] = str(args.seed)
        if args.out is not None:
            plan_over["out"] = args.out
        plan = plan_from_ini(cp, plan_over, _collect(args, "rc_"))
        t0 = time.perf_counter()
        result = run_plan(plan, workers=args.threads)
        for row in result.summary:
            print(
                f"m={row['m']:<5} {row['algorithm']:<16} mean={row['mean']:.3e} "
                f"ci=[{row['ci_low']:.3e}, {row['ci_high']:.3e}] diverged={row['diverged']}"
            )
        print(f"{len(result.rows)} runs in {time.perf_counter() - t0:.1f}s")
        return 0

    if args.command == "theory":
        over = _collect(args, "th_")
        if args.seed is not None:
            over["seed"] = str(args.seed)
        _, ok = run_theory_suite(args.config, args.out, over)
        return 0 if ok else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
