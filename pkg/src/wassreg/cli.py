"""Command-line entry point.

Subcommands read one INI config (``--config``) and apply flag overrides on
top; flags win.  Exit codes: 0 success, 2 configuration error, 3 data
format error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .checkpoint import config_hash, load_checkpoint
from .config import FLAG_KEYS, load_config, seed_everything
from .errors import ConfigError, DataFormatError, DivergenceError, InvalidArgumentError
from .evaluation import evaluate_robust, evaluate_translation_flips
from .experiments import (
    attack_from_config,
    graph_from_config,
    load_datasets,
    run_training,
    run_verify_expansion,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--metric", choices=("euclid", "wass"))
    common.add_argument("--strength", type=float)
    common.add_argument("--radius", type=int)
    common.add_argument("--attack", choices=("fgsm", "ifgsm"))
    common.add_argument("--epsilon", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--steps", type=int)
    common.add_argument("--checkpoint", metavar="PATH",
                        help="evaluate this model instead of training one first")

    p = argparse.ArgumentParser(prog="wassreg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model, write metrics.csv and model.wtkr")
    sub.add_parser("attack-eval", parents=[common], help="natural and robust test error")
    sub.add_parser("translate-eval", parents=[common], help="label flips under translation")
    sub.add_parser("verify-expansion", parents=[common],
                   help="Monte Carlo check of the noise expansion")
    sub.add_parser("graph-info", parents=[common], help="describe the pixel graph")
    return p


def _config(args):
    overrides = {FLAG_KEYS[k]: getattr(args, k) for k in FLAG_KEYS}
    if args.checkpoint:
        overrides["run.checkpoint"] = args.checkpoint
    cfg = seed_everything(load_config(args.config, overrides))
    if args.strength is not None and cfg["train"]["objective"] == "plain":
        # asking for a strength implies the matching penalty objective
        cfg["train"]["objective"] = (
            "euclid_penalty" if cfg["regularizer"]["metric"] == "euclidean" else "wass_penalty"
        )
    return cfg


def _model(cfg):
    path = cfg["run"]["checkpoint"]
    if path:
        params, _ = load_checkpoint(path, expected_hash=None)
        return params
    params, _ = run_training(cfg)
    return params


def _write_rows(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def cmd_train(cfg, out):
    _, rows = run_training(cfg, out)
    last = rows[-1] if rows else None
    if last is not None:
        print(f"epoch {last.epoch}: loss {last.train_loss:.6f} "
              f"natural {last.natural_test_error_pct:.2f}% "
              f"robust {last.robust_test_error_pct:.2f}%")
    print(f"wrote {out / 'metrics.csv'} and {out / 'model.wtkr'}")


def cmd_attack_eval(cfg, out):
    _, test = load_datasets(cfg)
    atk = attack_from_config(cfg)
    params = _model(cfg)
    res = evaluate_robust(params, test, atk, graph=graph_from_config(cfg, test.shape))
    row = {"attack": atk.kind, "epsilon": repr(atk.epsilon), "alpha": repr(atk.alpha),
           "steps": atk.steps, **{k: repr(v) for k, v in res.items()}}
    path = _write_rows(out / "attack_eval.csv", [row])
    print(f"natural {res['natural_test_error_pct']:.2f}%  robust {res['robust_test_error_pct']:.2f}%")
    print(f"wrote {path}")


def cmd_translate_eval(cfg, out):
    _, test = load_datasets(cfg)
    t = cfg["translate"]
    params = _model(cfg)
    flips = evaluate_translation_flips(params, test, t["direction"], int(t["max_shift"]),
                                       int(t["sample_count"]), int(t["seed"]))
    row = {"direction": t["direction"], "max_shift": t["max_shift"], "mean_flips": repr(flips)}
    path = _write_rows(out / "translate_eval.csv", [row])
    print(f"mean flips {flips:.4f}")
    print(f"wrote {path}")


def cmd_verify_expansion(cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    path = out / "expansion.csv"
    for r in run_verify_expansion(cfg, path):
        print(f"eta {r.eta:g}: empirical {r.empirical_delta:.6g} predicted "
              f"{r.predicted_delta:.6g} ratio {r.ratio:.4f} (stderr {r.stderr:.2g})")
    print(f"wrote {path}")


def cmd_graph_info(cfg, out):
    d = cfg["data"]
    g = graph_from_config(cfg, (int(d["height"]), int(d["width"])))
    info = {
        "height": g.height,
        "width": g.width,
        "radius": g.radius,
        "nodes": g.n,
        "edges": g.n_edges,
        "relations": [list(map(int, o)) for o in g.neighbor_relations],
        "relation_weights": [float(w) for w in g.relation_weights],
        "config_hash": config_hash(cfg),
    }
    print(json.dumps(info, indent=2))


COMMANDS = {
    "train": cmd_train,
    "attack-eval": cmd_attack_eval,
    "translate-eval": cmd_translate_eval,
    "verify-expansion": cmd_verify_expansion,
    "graph-info": cmd_graph_info,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, Path(cfg["run"]["out"]))
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc} {exc.snapshot}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
