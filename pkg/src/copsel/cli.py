"""Command-line driver: generate | train | eval | verify | export | ablate.

Exit codes: 0 success / tolerance met, 1 usage error, 2 tolerance
violated, 3 runtime failure. Every command writes a config snapshot so a
run can be reproduced bit-identically from it. CSV column orders are
documented in docs/formats.md.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import evaluation, networks, samplers, synthetic
from .copula import CorrelationModel, export_sigma
from .idx import parse_idx
from .networks import TrainingConfig
from .synthetic import Dataset, SyntheticSpec
from .tensor import Tensor, no_grad

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TOLERANCE = 2
EXIT_RUNTIME = 3

LAMBDA_GRID = (0.1, 0.5, 1.0, 1.5)


class UsageError(Exception):
    pass


# -- presets ---------------------------------------------------------------

def _synthetic_preset(family: str, d: int, correlated: bool, lam: float,
                      rank_mode: str = "full", p: int = 0,
                      epochs: int = 1000) -> dict:
    return {
        "training": {
            "mode": "binary", "t": 3.0, "lam": lam, "h_c": 100, "h_p": 200,
            "learning_rate": 1e-4, "batch_size": 1000, "epochs": epochs,
            "weight_decay": 1e-3, "rank_mode": rank_mode, "p": p, "seed": 0,
            "score_head": "linear",
        },
        "dataset": {
            "kind": "synthetic",
            "spec": {"family": family, "d": d, "correlated": correlated,
                     "n_train": 10_000, "n_test": 10_000, "seed": 0},
        },
    }


def _builtin_presets() -> dict:
    presets = {}
    lam_11d = {"syn1": 0.5, "syn2": 0.5, "syn3": 0.5,
               "syn4": 0.5, "syn5": 0.5, "syn6": 0.5}
    for fam in synthetic.FAMILIES:
        presets[f"{fam}-11d"] = _synthetic_preset(fam, 11, False, lam_11d[fam])
        presets[f"{fam}-100d"] = _synthetic_preset(
            fam, 100, False, lam_11d[fam], rank_mode="low", p=10)
        presets[f"{fam}-100d-corr"] = _synthetic_preset(
            fam, 100, True, lam_11d[fam], rank_mode="low", p=10)
    presets["mnist-topk"] = {
        "training": {
            "mode": "topk", "t": 1.0, "k": 40, "tau": 1.0, "h_c": 16,
            "h_p": 16, "learning_rate": 1e-3, "batch_size": 1000,
            "epochs": 100, "weight_decay": 1e-3, "rank_mode": "full",
            "seed": 0,
        },
        "dataset": {"kind": "idx"},
    }
    return presets


PRESETS = _builtin_presets()


@dataclass
class RunArtifacts:
    config_snapshot: Path
    epoch_log: Path
    metrics_csv: Path
    metrics_json: Path
    checkpoint: Path
    manifest: Path
    sigma_export: Path
    mask_export: Path | None = None

    def paths(self):
        out = [self.config_snapshot, self.epoch_log, self.metrics_csv,
               self.metrics_json, self.checkpoint, self.manifest,
               self.sigma_export]
        if self.mask_export is not None:
            out.append(self.mask_export)
        return out


# -- config plumbing --------------------------------------------------------

def load_experiment_config(args) -> dict:
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; "
                             f"choose from {sorted(PRESETS)}")
        config = json.loads(json.dumps(PRESETS[args.preset]))
    elif args.config:
        with open(args.config) as fh:
            config = json.load(fh)
    else:
        raise UsageError("one of --preset or --config is required")

    tc = config.setdefault("training", {})
    seed = _resolve_seed(args)
    if seed is not None:
        tc["seed"] = seed
        config.get("dataset", {}).get("spec", {}).update(seed=seed)
    if getattr(args, "nola", False):
        tc["nola"] = True
    if getattr(args, "rank", None):
        tc["rank_mode"] = args.rank
    for key in ("epochs", "lam", "t", "k"):
        value = getattr(args, key, None)
        if value is not None:
            tc[key] = value
    ds = config.get("dataset", {})
    if ds.get("kind") == "idx":
        for key in ("images", "labels", "test_images", "test_labels"):
            value = getattr(args, key.replace("-", "_"), None)
            if value:
                ds[key] = value
    if getattr(args, "dataset", None):
        config["dataset"] = {"kind": "csv", "train": args.dataset,
                             "test": getattr(args, "test_dataset", None)
                             or args.dataset}
    return config


def _resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("COPSEL_SEED")
    return int(env) if env else None


def resolve_datasets(config: dict) -> tuple[Dataset, Dataset | None]:
    ds = config.get("dataset", {})
    kind = ds.get("kind")
    if kind == "synthetic":
        spec = SyntheticSpec(**ds["spec"])
        return synthetic.generate(spec)
    if kind == "csv":
        train = synthetic.load_csv(ds["train"])
        test = synthetic.load_csv(ds["test"]) if ds.get("test") else None
        return train, test
    if kind == "idx":
        for key in ("images", "labels"):
            if key not in ds:
                raise UsageError(f"idx dataset needs --{key}")
        train = parse_idx(ds["images"], ds["labels"])
        test = None
        if ds.get("test_images") and ds.get("test_labels"):
            test = parse_idx(ds["test_images"], ds["test_labels"])
        return train, test
    raise UsageError(f"unknown or missing dataset kind {kind!r}")


def write_config_snapshot(config: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = SyntheticSpec(family=args.family, d=args.d,
                         correlated=args.correlated,
                         n_train=args.n_train, n_test=args.n_test,
                         seed=_resolve_seed(args) or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = synthetic.generate(spec)
    tag = f"{spec.family}_{spec.d}d" + ("_corr" if spec.correlated else "")
    synthetic.save_csv(train, out / f"{tag}_train.csv")
    synthetic.save_csv(test, out / f"{tag}_test.csv")
    synthetic.save_sidecar(spec, out / f"{tag}_spec.json")
    print(f"wrote {tag}_train.csv, {tag}_test.csv, {tag}_spec.json in {out}")
    return EXIT_OK


def run_training(config: dict, out_dir: Path,
                 export_masks: bool = False, quiet: bool = False) -> tuple:
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = TrainingConfig(**config["training"])
    train_ds, test_ds = resolve_datasets(config)

    lam_grid = config.get("lambda_grid")
    if lam_grid:
        tc, picked = select_lambda(tc, train_ds, lam_grid)
        config["training"]["lam"] = picked

    def progress(entry):
        if not quiet and (entry["epoch"] % 50 == 0 or "accuracy" in entry):
            bits = " ".join(f"{k}={v:.4f}" for k, v in entry.items()
                            if k != "epoch" and isinstance(v, float))
            print(f"epoch {entry['epoch']:5d} {bits}", flush=True)

    model = networks.train(tc, train_ds, test_data=test_ds,
                           progress=progress)
    artifacts = write_run_artifacts(model, config, out_dir, train_ds,
                                    test_ds, export_masks=export_masks)
    return model, artifacts


def write_run_artifacts(model, config, out_dir: Path, train_ds, test_ds,
                        export_masks: bool = False) -> RunArtifacts:
    snapshot = out_dir / "config.json"
    write_config_snapshot(config, snapshot)

    epoch_log = out_dir / "epochs.csv"
    fields = ["epoch", "loss", "accuracy", "tpr", "fdr", "mean_selected"]
    with open(epoch_log, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for entry in model.history:
            writer.writerow({k: entry.get(k, "") for k in fields})

    eval_ds = test_ds if test_ds is not None else train_ds
    metrics = networks.evaluate(model, eval_ds)
    metrics_json = out_dir / "metrics.json"
    with open(metrics_json, "w") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    metrics_csv = out_dir / "metrics.csv"
    keys = ["accuracy", "mean_selected", "tpr", "fdr"]
    with open(metrics_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        writer.writerow([metrics.get(k, "") for k in keys])

    checkpoint = out_dir / "checkpoint.npz"
    manifest = out_dir / "manifest.json"
    networks.save_checkpoint(model, checkpoint, manifest)

    sigma_path = out_dir / "sigma.csv"
    _export_mean_sigma(model, eval_ds, sigma_path, out_dir / "r.csv")

    mask_path = None
    if export_masks:
        mask_path = out_dir / "masks.csv"
        _export_masks(model, eval_ds, mask_path)
    return RunArtifacts(config_snapshot=snapshot, epoch_log=epoch_log,
                        metrics_csv=metrics_csv, metrics_json=metrics_json,
                        checkpoint=checkpoint, manifest=manifest,
                        sigma_export=sigma_path, mask_export=mask_path)


def _export_mean_sigma(model, data: Dataset, sigma_path, r_path,
                       max_samples: int = 1000) -> None:
    """Average per-sample factor model over a reference batch and export."""
    x = data.x[:max_samples]
    with no_grad():
        _, corr = model.choice.forward(Tensor(x), tau=model.config.tau)
        L_mean = corr.L.data.mean(axis=0)
        sigma = None
        if corr.sigma is not None:
            sigma = Tensor(np.array(corr.sigma.data.mean()))
    mean_model = CorrelationModel(L=Tensor(L_mean), sigma=sigma,
                                  tau=model.config.tau,
                                  rank_mode=corr.rank_mode, mode=corr.mode)
    export_sigma(mean_model, sigma_path, r_path)


def _export_masks(model, data: Dataset, path) -> None:
    mask = networks.infer_mask(model.choice, data.x, model.config)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z_{i + 1}" for i in range(data.d)])
        for row in mask.hard:
            writer.writerow([int(v) for v in row])


def _export_alpha_rank(model, data: Dataset, path, top_m: int) -> None:
    with no_grad():
        alpha, _ = model.choice.forward(Tensor(data.x), tau=model.config.tau)
    order = np.argsort(-alpha.data, axis=1, kind="stable")[:, :top_m]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"rank_{i + 1}" for i in range(order.shape[1])])
        for row in order:
            writer.writerow([int(i) + 1 for i in row])


def select_lambda(tc: TrainingConfig, train_ds: Dataset, grid) -> tuple:
    """Pick lambda from a grid by accuracy on a 90/10 validation split."""
    rng = np.random.default_rng(tc.seed)
    order = rng.permutation(train_ds.n)
    cut = int(0.9 * train_ds.n)
    sub = Dataset(x=train_ds.x[order[:cut]], y=train_ds.y[order[:cut]],
                  relevant=None, n_classes=train_ds.n_classes)
    val = Dataset(x=train_ds.x[order[cut:]], y=train_ds.y[order[cut:]],
                  relevant=None, n_classes=train_ds.n_classes)
    best_lam, best_acc = None, -1.0
    for lam in grid:
        cand = TrainingConfig(**{**asdict(tc), "lam": float(lam)})
        model = networks.train(cand, sub)
        acc = networks.evaluate(model, val)["accuracy"]
        if acc > best_acc:
            best_lam, best_acc = float(lam), acc
    return TrainingConfig(**{**asdict(tc), "lam": best_lam}), best_lam


def cmd_train(args) -> int:
    config = load_experiment_config(args)
    if args.lam_grid:
        config["lambda_grid"] = [float(v) for v in args.lam_grid.split(",")]
    _, artifacts = run_training(config, Path(args.out),
                                export_masks=args.export_masks)
    missing = [p for p in artifacts.paths() if not p.exists()]
    if missing:
        raise RuntimeError(f"missing artifacts: {missing}")
    print(f"artifacts in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    model = networks.load_checkpoint(ckpt / "checkpoint.npz",
                                     ckpt / "manifest.json")
    if args.dataset:
        data = synthetic.load_csv(args.dataset)
    else:
        with open(ckpt / "config.json") as fh:
            config = json.load(fh)
        _, data = resolve_datasets(config)
        if data is None:
            raise UsageError("snapshot has no test dataset; pass --dataset")
    if data.d != model.choice.d:
        raise UsageError(f"dataset dimension {data.d} does not match "
                         f"checkpoint dimension {model.choice.d}")
    metrics = networks.evaluate(model, data)
    out = Path(args.out) if args.out else ckpt
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.json", "w") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    with open(out / "eval.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = sorted(metrics)
        writer.writerow(keys)
        writer.writerow([metrics[k] for k in keys])
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    rng = np.random.default_rng(_resolve_seed(args) or 0)
    alpha = np.array([float(v) for v in args.alpha.split(",")])
    out_dir = Path(args.out) if args.out else None
    if args.theorem == "1":
        report = evaluation.verify_theorem1(alpha, args.k, args.t,
                                            args.n_draws, rng)
        ok = report.tv_distance <= args.tolerance
        payload = report.as_dict()
    elif args.theorem == "2":
        report = evaluation.verify_theorem2(alpha, args.k, args.t, args.tau,
                                            args.n_draws, rng)
        ok = report.match_rate >= args.match_rate
        payload = report.as_dict()
    else:  # copula
        d = args.d
        # target R via an explicit factor: rho on the first pair
        L = np.zeros((d, 2))
        L[0, 0] = L[1, 0] = np.sqrt(args.rho)
        sigma = Tensor(np.array(np.sqrt(1.0 - args.rho)))
        model = CorrelationModel(L=Tensor(L), sigma=sigma, mode="binary")
        result = evaluation.copula_marginal_check(model, args.n_draws, rng)
        emp = result["empirical_correlation"][0, 1]
        target = result["target_correlation"][0, 1]
        ok = (min(result["ks_pvalues"]) >= 0.01
              and abs(emp - target) <= 0.02)
        payload = {"ks_pvalues": result["ks_pvalues"],
                   "empirical_r12": float(emp), "target_r12": float(target),
                   "n_draws": args.n_draws}
    payload["pass"] = bool(ok)
    text = json.dumps(payload, indent=2)
    print(text)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"verify_{args.theorem}.json", "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_export(args) -> int:
    ckpt = Path(args.checkpoint)
    model = networks.load_checkpoint(ckpt / "checkpoint.npz",
                                     ckpt / "manifest.json")
    data = synthetic.load_csv(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "sigma":
        _export_mean_sigma(model, data, out / "sigma.csv", out / "r.csv")
    elif args.what == "masks":
        _export_masks(model, data, out / "masks.csv")
    else:  # alpha-rank
        _export_alpha_rank(model, data, out / "alpha_rank.csv", args.top_m)
    print(f"export written to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_experiment_config(args)
    out = Path(args.out)
    results = {}
    for name, nola in (("full", False), ("nola", True)):
        variant = json.loads(json.dumps(config))
        variant["training"]["nola"] = nola
        model, _ = run_training(variant, out / name)
        _, test_ds = resolve_datasets(variant)
        results[name] = networks.evaluate(model, test_ds)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "accuracy", "mean_selected", "tpr", "fdr"])
        for name, metrics in results.items():
            writer.writerow([name] + [metrics.get(k, "") for k in
                                      ("accuracy", "mean_selected",
                                       "tpr", "fdr")])
    print(json.dumps(results, indent=2))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="copsel",
                     description="Copula-based instance-wise feature "
                                 "selection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--family", required=True)
    gen.add_argument("--d", type=int, default=11)
    gen.add_argument("--correlated", action="store_true")
    gen.add_argument("--n-train", type=int, default=10_000)
    gen.add_argument("--n-test", type=int, default=10_000)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    def add_train_flags(p):
        p.add_argument("--preset")
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True)
        p.add_argument("--nola", action="store_true")
        p.add_argument("--rank", choices=("low", "full"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--lam", type=float)
        p.add_argument("--t", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--dataset", help="train CSV path override")
        p.add_argument("--test-dataset")
        p.add_argument("--images")
        p.add_argument("--labels")
        p.add_argument("--test-images")
        p.add_argument("--test-labels")

    tr = sub.add_parser("train", help="train a selection model")
    add_train_flags(tr)
    tr.add_argument("--lam-grid", help="comma list, e.g. 0.1,0.5,1.0,1.5")
    tr.add_argument("--export-masks", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    ver = sub.add_parser("verify", help="Monte-Carlo theorem/copula checks")
    ver.add_argument("--theorem", choices=("1", "2", "copula"), required=True)
    ver.add_argument("--alpha", default="1,2,3,4")
    ver.add_argument("--k", type=int, default=2)
    ver.add_argument("--t", type=float, default=0.01)
    ver.add_argument("--tau", type=float, default=1e4)
    ver.add_argument("--n-draws", type=int, default=100_000)
    ver.add_argument("--tolerance", type=float, default=0.02)
    ver.add_argument("--match-rate", type=float, default=0.999)
    ver.add_argument("--rho", type=float, default=0.8)
    ver.add_argument("--d", type=int, default=5)
    ver.add_argument("--seed", type=int)
    ver.add_argument("--out")
    ver.set_defaults(func=cmd_verify)

    ex = sub.add_parser("export", help="export sigma/masks/alpha rankings")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--what", choices=("sigma", "masks", "alpha-rank"),
                    required=True)
    ex.add_argument("--dataset", required=True)
    ex.add_argument("--top-m", type=int, default=120)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export)

    ab = sub.add_parser("ablate", help="train full vs --nola variants")
    add_train_flags(ab)
    ab.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
