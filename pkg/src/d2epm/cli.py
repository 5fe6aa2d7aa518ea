"""Command-line front end: ``d2epm {simulate,train,predict,eval,geweke}``.

Every command writes a JSON run manifest (argv, resolved configuration,
seed, content hashes of inputs and per-phase wall-clock times).
"""
import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .config import config_help, load_config, resolve
from .data import (
    aggregate,
    load_events,
    load_graph,
    load_state,
    read_mask,
    read_predictions,
    save_graph,
    save_state,
    split,
    write_mask,
    write_predictions,
    write_trace,
)
from .evaluation import auroc, predict_heldout
from .geweke import GEWEKE_HYPER, MUTANTS, geweke_test
from .gibbs import GibbsConfig, run_gibbs
from .graph import HeldOutMask
from .model import Hyperparams, simulate
from .sampling import RngStream
from .sgmcmc import SgmcmcConfig, run_sgmcmc
from .trace import Summaries

__all__ = ["main", "build_parser", "RunManifest"]

logger = logging.getLogger("d2epm")

ALGORITHMS = {"gibbs": None, "em-sgrld": "expanded-mean", "rm-sgrld": "reduced-mean"}


def file_hash(path):
    """Git blob hash of a file's contents."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class RunManifest:
    def __init__(self, argv, command):
        self.data = {"version": __version__, "command": command, "argv": list(argv),
                     "config": {}, "seed": None, "inputs": {}, "timings": {}}

    def add_input(self, path):
        self.data["inputs"][str(path)] = file_hash(path)

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.data["timings"][name] = round(time.perf_counter() - t0, 6)

    def write(self, path):
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _hyper(cfg):
    return Hyperparams(K=cfg["K"], g=cfg["g"], c0=cfg["c0"], alpha=cfg["alpha"],
                       a0=cfg["a0"], b0=cfg["b0"])


def _floats(text):
    return [float(x) for x in text.split(",")] if text else None


# -- commands -----------------------------------------------------------------

def cmd_simulate(args, manifest):
    cfg = resolve(load_config(args.config) if args.config else None,
                  {"K": args.K, "seed": args.seed})
    lam = _floats(args.lam)
    if lam is not None and len(lam) != cfg["K"]:
        raise ValueError(f"--lam needs {cfg['K']} values")
    manifest.data["config"] = dict(cfg, N=args.N, T=args.T, lam=lam, eta=args.eta)
    manifest.data["seed"] = cfg["seed"]
    with manifest.phase("simulate"):
        state, graph = simulate(_hyper(cfg), args.N, args.T, RngStream(cfg["seed"]),
                                lam=None if lam is None else np.array(lam), eta=args.eta)
    os.makedirs(args.out_dir, exist_ok=True)
    with manifest.phase("write"):
        save_graph(graph, os.path.join(args.out_dir, "graph.txt"))
        save_state(state, os.path.join(args.out_dir, "truth.state"))
    print(f"simulated N={graph.N} T={graph.T} edges={graph.n_edges}")
    return os.path.join(args.out_dir, "manifest.json")


def _load_input(args, window, manifest):
    manifest.add_input(args.input)
    if args.format == "graph":
        return load_graph(args.input)
    return aggregate(load_events(args.input), window)


def cmd_train(args, manifest):
    file_cfg = load_config(args.config) if args.config else None
    if args.config:
        manifest.add_input(args.config)
    cfg = resolve(file_cfg, {"iterations": args.iterations, "seed": args.seed, "window": args.window,
                             "heldout": args.heldout, "repeats": args.repeats, "K": args.K,
                             "burn_in": args.burn_in})
    if args.iterations is not None and args.burn_in is None and cfg["burn_in"] >= cfg["iterations"]:
        cfg["burn_in"] = int(cfg["iterations"] * 2 // 3)
    manifest.data["config"] = dict(cfg, algorithm=args.algorithm)
    manifest.data["seed"] = cfg["seed"]
    hyper = _hyper(cfg)
    with manifest.phase("load"):
        graph = _load_input(args, cfg["window"], manifest)
    scores = []
    for r in range(cfg["repeats"]):
        out = args.out_dir if cfg["repeats"] == 1 else os.path.join(args.out_dir, f"repeat_{r}")
        os.makedirs(out, exist_ok=True)
        rng = RngStream(cfg["seed"], r)
        with manifest.phase(f"split_{r}"):
            if cfg["heldout"] > 0:
                train, mask = split(graph, cfg["heldout"], rng.substream(1000 + r), seed=cfg["seed"])
            else:
                train, mask = graph, HeldOutMask.empty(graph.N)
        with manifest.phase(f"train_{r}"):
            if args.algorithm == "gibbs":
                conf = GibbsConfig(cfg["iterations"], cfg["burn_in"], cfg["collect_every"], cfg["seed"])
                summ, trace = run_gibbs(train, mask, hyper, conf, rng=rng, eval_every=cfg["eval_every"])
            else:
                conf = SgmcmcConfig(ALGORITHMS[args.algorithm], cfg["iterations"], cfg["burn_in"],
                                    cfg["collect_every"], cfg["minibatch_fraction"], cfg["step_a"],
                                    cfg["step_b"], cfg["step_c"], cfg["mk_ema_decay"], cfg["seed"],
                                    cfg["inject_noise"])
                summ, trace = run_sgmcmc(train, mask, hyper, conf, rng=rng, eval_every=cfg["eval_every"])
        with manifest.phase(f"write_{r}"):
            extra = {}
            if summ.n_samples:
                extra.update(phi_mean=summ.phi_mean, lam_mean=summ.lam_mean, p_mean=summ.p_mean,
                             eta_mean=np.array([summ.eta_mean]))
            if summ.heldout_prob is not None:
                extra.update(heldout_entries=summ.heldout_entries, heldout_prob=summ.heldout_prob)
            save_state(summ.state, os.path.join(out, "state.bin"), extra=extra)
            write_trace(trace, os.path.join(out, "trace.csv"))
            write_mask(mask, os.path.join(out, "mask.csv"))
            if len(mask):
                entries = predict_heldout(summ, mask)
                write_predictions(entries, os.path.join(out, "predictions.csv"))
                try:
                    scores.append(auroc(entries))
                except ValueError:
                    logger.warning("held-out set has a single class; AUROC undefined")
    if scores:
        manifest.data["auroc"] = scores
        for r, s in enumerate(scores):
            print(f"repeat {r}: auroc {s:.4f}")
        print(f"mean auroc {np.mean(scores):.4f}")
    return os.path.join(args.out_dir, "manifest.json")


def _summaries_from_file(path):
    state, extra = load_state(path, with_extra=True)
    return Summaries(state=state, heldout_entries=extra.get("heldout_entries"),
                     heldout_prob=extra.get("heldout_prob"))


def cmd_predict(args, manifest):
    manifest.add_input(args.state)
    manifest.add_input(args.mask)
    with manifest.phase("predict"):
        summ = _summaries_from_file(args.state)
        mask = read_mask(args.mask)
        entries = predict_heldout(summ, mask)
    write_predictions(entries, args.out)
    return args.out + ".manifest.json"


def cmd_eval(args, manifest):
    manifest.add_input(args.predictions)
    with manifest.phase("eval"):
        score = auroc(read_predictions(args.predictions))
    manifest.data["auroc"] = score
    print(f"{score:.4f}")
    return args.predictions + ".eval.manifest.json"


def cmd_geweke(args, manifest):
    manifest.data["config"] = {"N": args.N, "T": args.T, "iterations": args.iterations,
                               "mutation": args.mutation, "hyper": vars(GEWEKE_HYPER)}
    manifest.data["seed"] = args.seed
    with manifest.phase("geweke"):
        res = geweke_test(GEWEKE_HYPER, (args.N, args.T), args.iterations, RngStream(args.seed),
                          kernel=MUTANTS[args.mutation]())
    for name, z in res.as_dict().items():
        print(f"{name:<16s} z = {z:+.3f}")
    print(f"max |z| = {res.max_abs_z:.3f}")
    manifest.data["z"] = res.as_dict()
    return os.path.join(args.out_dir, "geweke.manifest.json")


# -- parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="d2epm", description="Dirichlet dynamic edge partition model",
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="config file keys (key = value):\n" + config_help())
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--manifest", help="where to write the run manifest (default: next to outputs)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic graph and its ground-truth state")
    s.add_argument("--N", type=int, default=50)
    s.add_argument("--T", type=int, default=10)
    s.add_argument("--K", type=int)
    s.add_argument("--lam", help="comma-separated fixed community weights (length K)")
    s.add_argument("--eta", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="fit the model and score held-out cells")
    t.add_argument("--input", required=True, help="edge list ('src dst time') or graph file")
    t.add_argument("--format", choices=("events", "graph"), default="events",
                   help="'graph' reads a file written by simulate")
    t.add_argument("--algorithm", choices=tuple(ALGORITHMS), default="gibbs")
    t.add_argument("--config")
    t.add_argument("--iterations", type=int)
    t.add_argument("--burn-in", type=int)
    t.add_argument("--K", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--window", type=float)
    t.add_argument("--heldout", type=float)
    t.add_argument("--repeats", type=int)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="score the cells of a mask from a saved state")
    r.add_argument("--state", required=True)
    r.add_argument("--mask", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="print the AUROC of a prediction CSV")
    e.add_argument("predictions")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("geweke", help="joint-distribution test of the Gibbs sampler")
    g.add_argument("--iterations", type=int, default=50_000)
    g.add_argument("--N", type=int, default=4)
    g.add_argument("--T", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mutation", choices=tuple(MUTANTS), default="none")
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_geweke)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = RunManifest(argv, args.command)
    try:
        default_path = args.func(args, manifest)
        manifest.write(args.manifest or default_path)
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"d2epm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
