"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric failure or a failed internal check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import FAMILIES, AttackConfig, attack_dataset, check_result
from .dataio import (
    Dataset,
    NormStats,
    SynthConfig,
    apply_normalize,
    denormalize_array,
    fit_normalize,
    load_dataset,
    save_dataset,
    split,
    synth_gen,
)
from .errors import ConstraintError, DimensionError, FormatError, NumericError
from .evaluation import TABLE_BUDGETS, robustness_sweep, roc, tpr_at_fpr, transferability, write_roc_csv
from .ensemble import posterior_predict
from .network import Architecture
from .riskgap import adversarial_risk, batched_risk_bound, risk_bound
from .svgd import TrainConfig, load_checkpoint, save_checkpoint, train
from .toyps import (
    lemma1_check,
    load_program,
    save_program,
    toy_corpus,
    toy_dataset,
)

log = logging.getLogger("bayesadv")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _byte(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= 255:
        raise argparse.ArgumentTypeError("byte value must be in [0, 255]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be a non-negative number")
    return v


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _sidecar(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.name + suffix)


def _write_resolved(args, out_path, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    cfg["command"] = args.command
    cfg["version"] = __version__
    if extra:
        cfg.update(extra)
    _write_json(cfg, _sidecar(out_path, ".config.json"))


def _attack_cfg(args, family=None, epsilon=None, **kw) -> AttackConfig:
    try:
        return AttackConfig(
            family=family or args.attack,
            epsilon_max=args.epsilon if epsilon is None else epsilon,
            alpha=args.alpha,
            steps=args.steps,
            **kw,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_model_and_data(args, keep_raw=False):
    e = load_checkpoint(args.model)
    d = load_dataset(args.data)
    if d.feature_dim != e.architecture.input_dim:
        raise DimensionError(f"data has {d.feature_dim} features, model expects {e.architecture.input_dim}")
    nd = apply_normalize(d, e.norm_stats)
    return (e, nd, d) if keep_raw else (e, nd)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args) -> int:
    try:
        cfg = SynthConfig(args.samples, args.features, args.separation, args.sparsity, args.seed)
        if args.split:
            split(Dataset(np.zeros((0, 1)), np.zeros(0)), tuple(args.split))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    d = synth_gen(cfg)
    save_dataset(d, args.out, args.format)
    written = [str(args.out)]
    if args.split:
        out = Path(args.out)
        for part in split(d, tuple(args.split), args.seed):
            kind = part.name.rsplit("-", 1)[-1]
            p = out.with_name(f"{out.stem}.{kind}{out.suffix}")
            save_dataset(part, p, args.format)
            written.append(str(p))
    _write_resolved(args, args.out, {"written": written})
    print(json.dumps({"written": written, "n_samples": len(d), "n_features": d.feature_dim}))
    return EXIT_OK


def cmd_train(args) -> int:
    tr = load_dataset(args.train)
    if args.no_normalize:
        stats = NormStats.identity(tr.feature_dim)
        tr = apply_normalize(tr, stats)
    else:
        tr, stats = fit_normalize(tr)
    va = apply_normalize(load_dataset(args.val), stats) if args.val else None
    hidden = args.arch if args.arch is not None else [512, 512, 128]
    try:
        arch = Architecture((tr.feature_dim, *hidden, 1), args.activation, not args.no_layer_norm)
        adv = _attack_cfg(args) if args.adv else None
        cfg = TrainConfig(
            n_particles=args.particles,
            gamma=args.gamma,
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch_size,
            adv=adv,
            seed=args.seed,
            optimizer=args.optimizer,
            weight_decay=args.weight_decay,
            arch=arch,
            init=args.init,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    e = train(tr, va, cfg, stats)
    save_checkpoint(e, args.out)
    metrics = {"train_loss": e.train_meta["train_loss"], "val_loss": e.train_meta["val_loss"]}
    if va is not None and 0 < va.labels.sum() < len(va):
        metrics["val_auc"] = roc(posterior_predict(e, va.features), va.labels).auc
    _write_json(metrics, _sidecar(args.out, ".metrics.json"))
    _write_resolved(args, args.out, {"train_config": cfg.to_dict()})
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_eval(args) -> int:
    e, d = _load_model_and_data(args)
    scores = posterior_predict(e, d.features)
    report: dict = {"n_samples": len(d)}
    if 0 < d.labels.sum() < len(d):
        c = roc(scores, d.labels)
        if not (np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)):
            raise NumericError("ROC curve is not monotone")
        report["auc"] = c.auc
        report["tpr_at_fpr"] = {str(f): tpr_at_fpr(c, f) for f in args.fpr}
        if args.roc:
            write_roc_csv(c, args.roc)
    elif args.roc:
        raise ConfigError("ROC needs both classes in the data")
    tables = []
    if args.budgets:
        if args.transfer:
            tables = [t.to_dict() for t in transferability(e, d, args.budgets, args.steps, args.tag)]
        else:
            tables = [robustness_sweep(e, d, args.budgets, args.attack, args.steps, args.tag).to_dict()]
    report["tables"] = tables
    if args.table:
        _write_json(tables, args.table)
    out = args.out or _sidecar(args.model, ".eval.json")
    _write_json(report, out)
    _write_resolved(args, out)
    print(json.dumps(report))
    return EXIT_OK


def cmd_attack(args) -> int:
    e, d, d_raw = _load_model_and_data(args, keep_raw=True)
    cfg = _attack_cfg(args, target_malware_only=args.malware_only)
    d_adv, res = attack_dataset(e, d, cfg)
    ok = check_result(d.features, res, cfg)
    # untouched entries keep their original raw values
    moved = d_adv.features != d.features
    x_raw = np.where(moved, denormalize_array(d_adv.features, e.norm_stats), d_raw.features)
    raw = Dataset(x_raw, d_adv.labels, d.name + "-adv")
    save_dataset(raw, args.out)
    report = {
        "n_rows": len(d),
        "attack": cfg.to_dict(),
        "success_rate": float(np.mean(res.success_mask)) if len(d) else 0.0,
        "max_linf": float(res.linf_used.max(initial=0.0)),
        "constraint_violations": int(np.sum(~ok)),
    }
    _write_json(report, _sidecar(args.out, ".report.json"))
    _write_resolved(args, args.out)
    print(json.dumps(report))
    return EXIT_OK if ok.all() else EXIT_NUMERIC


def cmd_riskgap(args) -> int:
    e, d = _load_model_and_data(args)
    runs = []
    for eps in args.epsilon:
        cfg = _attack_cfg(args, epsilon=eps)
        _, d_adv = adversarial_risk(e, d, cfg)
        whole = risk_bound(e, d, d_adv)
        per_batch = batched_risk_bound(e, d, d_adv, args.batch_size) if args.batch_size else []
        runs.append({
            "epsilon": eps,
            **whole.to_dict(),
            "batches": len(per_batch),
            "batches_holding": int(sum(r.holds for r in per_batch)),
            "batch_reports": [r.to_dict() for r in per_batch],
        })
    holds = all(r["holds"] and r["batches_holding"] == r["batches"] for r in runs)
    report = {"holds": holds, "runs": runs}
    _write_json(report, args.out)
    _write_resolved(args, args.out)
    print(json.dumps({"holds": holds, "runs": [{k: r[k] for k in ("epsilon", "R", "R_adv", "tau", "gap", "holds")} for r in runs]}))
    return EXIT_OK if holds else EXIT_NUMERIC


def _toy_programs(args):
    if args.program_dir:
        files = sorted(Path(args.program_dir).glob("*.tprg"))
        labels_file = Path(args.program_dir) / "labels.csv"
        labels = {}
        if labels_file.exists():
            for line in labels_file.read_text(encoding="utf-8").splitlines()[1:]:
                name, lab = line.rsplit(",", 1)
                labels[name] = int(lab)
        progs = [load_program(f) for f in files]
        ys = np.array([labels.get(f.name, 1) for f in files], dtype=np.int64)
        return progs, ys
    return toy_corpus(args.programs, args.seed)


def cmd_gen_toy(args) -> int:
    progs, labels = toy_corpus(args.programs, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["file,label"]
    for i, (z, y) in enumerate(zip(progs, labels)):
        name = f"prog{i:05d}.tprg"
        save_program(z, out / name)
        lines.append(f"{name},{int(y)}")
    (out / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_dataset(toy_dataset(progs, labels), out / "features.bin")
    _write_resolved(args, out / "features.bin")
    print(json.dumps({"programs": len(progs), "dir": str(out)}))
    return EXIT_OK


def cmd_lemma1(args) -> int:
    progs, labels = _toy_programs(args)
    if args.model:
        e = load_checkpoint(args.model)
    else:
        # no model given: fit a small clean ensemble on a separate toy corpus
        tr_p, tr_y = toy_corpus(args.train_programs, args.seed + 1)
        cfg = TrainConfig(
            n_particles=args.particles,
            gamma=1.0,
            learning_rate=1e-3,
            epochs=args.epochs,
            batch_size=64,
            seed=args.seed,
            arch=Architecture((259, 64, 32, 1)),
        )
        e = train(toy_dataset(tr_p, tr_y), None, cfg)
    mal = [z for z, y in zip(progs, labels) if y == 1]
    if args.upsilon in ("analytic", "observed"):
        ups = args.upsilon
    else:
        try:
            ups = float(args.upsilon)
        except ValueError:
            raise ConfigError("--upsilon must be 'analytic', 'observed' or a number") from None
    rep = lemma1_check(e, mal, args.attack, ups, pad_bytes=args.pad_bytes, byte_val=args.byte, greedy_step=args.greedy_step)
    report = rep.to_dict()
    out = args.out or "lemma1.json"
    _write_json(report, out)
    _write_resolved(args, out)
    print(json.dumps(report))
    checked = isinstance(ups, str)
    return EXIT_NUMERIC if checked and rep.violations else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_attack_args(p, default_family="eot_pgd", epsilon_list=False):
    p.add_argument("--attack", choices=FAMILIES, default=default_family)
    if epsilon_list:
        p.add_argument("--epsilon", type=_floats, default=[0.0, 0.05, 0.1, 0.3])
    else:
        p.add_argument("--epsilon", type=_nonneg_float, default=0.1)
    p.add_argument("--alpha", type=float, default=None, help="step size (default 2.5*epsilon/steps)")
    p.add_argument("--steps", type=_positive_int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesadv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file of option defaults for the subcommand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic feature dataset")
    p.add_argument("--samples", type=_positive_int, default=10_000)
    p.add_argument("--features", type=_positive_int, default=64)
    p.add_argument("--separation", type=_nonneg_float, default=1.0)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "bin"), default=None)
    p.add_argument("--split", type=_floats, default=None, help="e.g. 0.8,0.1,0.1; writes <stem>.train/.val/.test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train an SVGD particle ensemble")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--particles", type=_positive_int, default=5)
    p.add_argument("--gamma", type=_nonneg_float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--batch-size", type=_positive_int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", type=_ints, default=None, help="hidden widths, e.g. 512,512,128")
    p.add_argument("--activation", choices=("elu", "relu"), default="elu")
    p.add_argument("--no-layer-norm", action="store_true")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--weight-decay", type=_nonneg_float, default=0.0)
    p.add_argument("--init", choices=("independent", "jitter"), default="independent")
    p.add_argument("--no-normalize", action="store_true", help="data already lies in [0,1]")
    p.add_argument("--adv", action="store_true", help="train on per-batch adversarial examples")
    _add_attack_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ROC/AUC and robustness tables")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--roc", help="write the ROC curve as CSV")
    p.add_argument("--fpr", type=_floats, default=[0.001, 0.01, 0.1])
    p.add_argument("--budgets", type=_floats, default=None, help=f"e.g. {','.join(map(str, TABLE_BUDGETS))}")
    p.add_argument("--attack", choices=("pgd", "eot_pgd", "fgsm"), default="eot_pgd")
    p.add_argument("--steps", type=_positive_int, default=10)
    p.add_argument("--transfer", action="store_true", help="sweep both PGD and FGSM")
    p.add_argument("--table", help="write robustness tables as JSON")
    p.add_argument("--tag", default="", help="model name recorded in tables")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="write an adversarial copy of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--malware-only", action="store_true")
    _add_attack_args(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("riskgap", help="clean/adversarial risk and the gap bound")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=1000)
    _add_attack_args(p, epsilon_list=True)
    p.set_defaults(func=cmd_riskgap)

    p = sub.add_parser("gen-toy", help="write a toy program corpus")
    p.add_argument("--programs", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("lemma1", help="problem-space padding vs feature-space radius check")
    p.add_argument("--model")
    p.add_argument("--program-dir")
    p.add_argument("--programs", type=_positive_int, default=400)
    p.add_argument("--train-programs", type=_positive_int, default=600)
    p.add_argument("--particles", type=_positive_int, default=3)
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attack", choices=("pad", "greedy"), default="pad")
    p.add_argument("--pad-bytes", type=int, default=1000)
    p.add_argument("--byte", type=_byte, default=0xA9)
    p.add_argument("--greedy-step", type=_positive_int, default=250)
    p.add_argument("--upsilon", default="analytic")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lemma1)
    return parser


def _parse(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            defaults = json.loads(Path(known.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        args = parser.parse_args(argv)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _parse(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DimensionError, ConstraintError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
