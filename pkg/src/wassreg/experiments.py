"""Experiment orchestration: training runs, the directional comparison, expansion reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .checkpoint import config_hash
from .data import ingest_csv, ingest_idx, load_digits_dataset
from .errors import ConfigError, DivergenceError
from .evaluation import METRICS_COLUMNS, evaluate_robust, evaluate_translation_flips
from .graph import build_grid_graph
from .model import init_params
from .noise import NoiseConfig
from .regularizer import RegularizerConfig, verify_expansion_mc
from .trainer import TrainConfig, train

EXPANSION_COLUMNS = ("eta", "empirical_delta", "predicted_delta", "ratio", "stderr")

OBJECTIVE_FOR_METRIC = {"euclidean": "euclid_penalty", "wasserstein": "wass_penalty"}


# config -> library objects


def load_datasets(cfg):
    d = cfg["data"]
    src = d["source"]
    if src == "digits":
        return load_digits_dataset(seed=int(d["split_seed"]))
    if src == "idx":
        return (ingest_idx(d["train_images"], d["train_labels"], "train"),
                ingest_idx(d["test_images"], d["test_labels"], "test"))
    if src == "csv":
        h, w = int(d["height"]), int(d["width"])
        return (ingest_csv(d["train_csv"], h, w, "train"),
                ingest_csv(d["test_csv"], h, w, "test"))
    raise ConfigError(f"unknown data.source {src!r}")


def graph_from_config(cfg, shape):
    g = cfg["graph"]
    return build_grid_graph(shape[-2], shape[-1], int(g["radius"]), g["weight_rule"])


def attack_from_config(cfg):
    a = cfg["attack"]
    try:
        return AttackConfig(a["kind"], float(a["epsilon"]), float(a["alpha"]), int(a["steps"]),
                            a["norm_domain"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid attack settings: {exc}") from None


def train_config(cfg):
    t, r = cfg["train"], cfg["regularizer"]
    try:
        reg = RegularizerConfig(r["metric"], float(r["strength"]), r["loss"], r["penalty_target"],
                                bool(r["include_laplacian"]), r["laplacian_variant"])
        return TrainConfig(
            batch_size=int(t["batch_size"]),
            epochs=int(t["epochs"]),
            lr=float(t["lr"]),
            lr_decay={int(k): float(v) for k, v in dict(t["lr_decay"]).items()},
            momentum=float(t["momentum"]),
            weight_decay=float(t["weight_decay"]),
            objective=t["objective"],
            regularizer=reg,
            noise_eta=float(t["noise_eta"]),
            floor=float(cfg["graph"]["floor"]),
            seed=int(t["seed"]),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"invalid training settings: {exc}") from None


def model_sizes(cfg, n_in, n_classes):
    hidden = [int(h) for h in cfg["model"]["hidden"]]
    n_out = n_classes if cfg["model"]["head"] == "softmax" else 1
    return [n_in, *hidden, n_out]


def write_metrics_csv(path, rows, include_wall_time=True):
    cols = [c for c in METRICS_COLUMNS if include_wall_time or c != "wall_time"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            d = row.as_dict()
            w.writerow({k: "" if d[k] is None else repr(d[k]) for k in cols})
    return Path(path)


def run_training(cfg, out_dir=None):
    """Train per ``cfg``; optionally write ``metrics.csv`` and ``model.wtkr``."""
    from .checkpoint import save_checkpoint

    train_set, test_set = load_datasets(cfg)
    graph = graph_from_config(cfg, train_set.shape)
    tcfg = train_config(cfg)
    sizes = model_sizes(cfg, int(np.prod(train_set.shape)), train_set.n_classes)
    params = init_params(sizes, cfg["model"]["head"], seed=int(cfg["model"]["init_seed"]))
    params, rows = train(params, train_set, tcfg, graph=graph, test=test_set,
                         attack=attack_from_config(cfg))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", rows)
        meta = {"config_hash": config_hash(cfg), "epoch": tcfg.epochs, "seed": tcfg.seed}
        save_checkpoint(out / "model.wtkr", params, meta)
    return params, rows


# expansion check


def run_verify_expansion(cfg, out_path=None):
    """Monte Carlo check of the second-order expansion over an eta grid.

    Writes a CSV with columns ``eta, empirical_delta, predicted_delta,
    ratio, stderr`` when ``out_path`` is given and returns the reports.
    """
    e = cfg["expansion"]
    h, w = int(e["height"]), int(e["width"])
    n = h * w
    graph = build_grid_graph(h, w, int(cfg["graph"]["radius"]), cfg["graph"]["weight_rule"])
    seed = int(e["seed"])
    rng = np.random.default_rng(seed)
    if e["model"] == "linear":
        sizes, head = [n, 1], "identity"
    elif e["model"] == "mlp":
        sizes, head = [n, *[int(k) for k in e["hidden"]], 1], "identity"
    else:
        raise ConfigError(f"unknown expansion.model {e['model']!r}")
    if e["loss"] == "cross_entropy":
        head = "sigmoid"
    params = init_params(sizes, head, seed=seed)
    x = rng.uniform(0.2, 1.0, n)
    y = 1.0 if e["loss"] == "cross_entropy" else float(rng.normal())
    reports = []
    for i, eta in enumerate(e["etas"]):
        ncfg = NoiseConfig(float(eta), seed=seed + i, floor=float(cfg["graph"]["floor"]))
        reports.append(verify_expansion_mc(params, (x, y), ncfg, int(e["draws"]),
                                           loss_kind=e["loss"], graph=graph))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=EXPANSION_COLUMNS, lineterminator="\n")
            wr.writeheader()
            for r in reports:
                wr.writerow({k: repr(float(v)) for k, v in r.as_row().items()})
    return reports


# directional desk-scale comparison


@dataclass(frozen=True)
class DirectionalSetup:
    hidden: tuple = (64, 64)
    epochs: int = 60
    lr: float = 0.1
    batch_size: int = 128
    euclid_grid: tuple = (0.03, 0.1, 0.3, 1.0)
    wass_grid: tuple = (1e-3, 3e-3, 1e-2)
    radius_grid: tuple = (1, 2)
    validation_fraction: float = 0.25
    natural_slack_pct: float = 1.5
    seeds: tuple = (0, 1, 2)
    search_seeds: tuple = (10, 11)
    split_seed: int = 0
    epsilon: float = 8 / 255
    max_shift: int = 4


@dataclass
class RunResult:
    method: str
    strength: float
    radius: int
    seed: int
    natural: float
    robust: float
    flips: float = float("nan")
    diverged: bool = False


@dataclass
class DirectionalReport:
    setup: DirectionalSetup
    selected: dict = field(default_factory=dict)
    search: list = field(default_factory=list)
    runs: list = field(default_factory=list)

    def by_method(self, method):
        return [r for r in self.runs if r.method == method]

    def mean(self, method, key):
        return float(np.mean([getattr(r, key) for r in self.by_method(method)]))


def _fit_eval(setup, train_set, test_set, method, strength, radius, seed, flips=False):
    graph = build_grid_graph(train_set.shape[-2], train_set.shape[-1], radius)
    decay = {setup.epochs // 2: 0.1, 3 * setup.epochs // 4: 0.1}
    objective = "plain" if method == "plain" else OBJECTIVE_FOR_METRIC[method]
    tcfg = TrainConfig(batch_size=setup.batch_size, epochs=setup.epochs, lr=setup.lr,
                       lr_decay=decay, objective=objective,
                       regularizer=RegularizerConfig(strength=strength), seed=seed)
    sizes = [int(np.prod(train_set.shape)), *setup.hidden, train_set.n_classes]
    params = init_params(sizes, "softmax", seed=seed)
    try:
        params, _ = train(params, train_set, tcfg, graph=graph)
    except DivergenceError:
        return RunResult(method, strength, radius, seed, 100.0, 100.0, diverged=True)
    ev = evaluate_robust(params, test_set, AttackConfig("fgsm", setup.epsilon))
    res = RunResult(method, strength, radius, seed, ev["natural_test_error_pct"],
                    ev["robust_test_error_pct"])
    if flips:
        res.flips = evaluate_translation_flips(params, test_set, "horizontal", setup.max_shift,
                                               seed=seed)
    return res


def _select(candidates, baseline_natural, slack):
    ok = [c for c in candidates if not c.diverged and c.natural <= baseline_natural + slack]
    pool = ok or [c for c in candidates if not c.diverged]
    return min(pool, key=lambda c: (c.robust, c.natural))


def run_directional(setup=None, datasets=None, log=None):
    """Grid-search each penalty on a validation split, then compare on the test set.

    Strength (and radius for the Wasserstein penalty) is chosen on a
    held-out slice of the training data: lowest FGSM error among settings
    whose natural error stays within ``natural_slack_pct`` of the plain
    model.  The chosen settings are retrained on the full training set for
    each seed and scored on the test set.
    """
    setup = setup or DirectionalSetup()
    train_set, test_set = datasets or load_digits_dataset(seed=setup.split_seed)
    report = DirectionalReport(setup)
    say = log or (lambda *_: None)

    perm = np.random.default_rng(setup.split_seed + 1).permutation(len(train_set))
    k = int(round(len(perm) * setup.validation_fraction))
    fit, val = train_set.subset(perm[k:]), train_set.subset(perm[:k], "validation")

    def searched(method, strength, radius):
        runs = [_fit_eval(setup, fit, val, method, strength, radius, sd)
                for sd in setup.search_seeds]
        res = RunResult(method, strength, radius, -1,
                        float(np.mean([r.natural for r in runs])),
                        float(np.mean([r.robust for r in runs])),
                        diverged=any(r.diverged for r in runs))
        say(f"search {method} strength={strength:g} radius={radius} "
            f"natural={res.natural:.2f} robust={res.robust:.2f}")
        report.search.append(res)
        return res

    base = searched("plain", 0.0, 1)
    grids = {
        "euclidean": [(s, 1) for s in setup.euclid_grid],
        "wasserstein": [(s, r) for r in setup.radius_grid for s in setup.wass_grid],
    }
    for method, grid in grids.items():
        cands = [searched(method, s, r) for s, r in grid]
        best = _select(cands, base.natural, setup.natural_slack_pct)
        report.selected[method] = (best.strength, best.radius)

    report.selected["plain"] = (0.0, 1)
    for seed in setup.seeds:
        for method in ("plain", "euclidean", "wasserstein"):
            s, r = report.selected[method]
            res = _fit_eval(setup, train_set, test_set, method, s, r, seed, flips=True)
            say(f"test {method} seed={seed} natural={res.natural:.2f} "
                f"robust={res.robust:.2f} flips={res.flips:.3f}")
            report.runs.append(res)
    return report


def write_directional_csv(path, report):
    cols = ("method", "strength", "radius", "seed", "natural", "robust", "flips", "diverged")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.runs:
            w.writerow([getattr(r, c) for c in cols])
    return Path(path)
