"""Command-line entry points.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import artifacts
from .config import ExperimentConfig
from .data import gen_concentric_circles, load_csv, m_per_class_sampler, save_csv
from .errors import ConfigError, ContractError, DegenerateInputError, NumericAbort
from .losses import Variant
from .metrics import evaluate, pairwise_distance_stats
from .model import embed, train

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3

STEP_COLUMNS = ["step", "epoch", "lr", "loss_total", "l_context", "l_contrast", "l_reg", "R@1"]


def _stamp(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed}


def _prepare(cfg: ExperimentConfig) -> Path:
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(out / "config.json", {**cfg.to_dict(), **_stamp(cfg)})
    return out


def _datasets(cfg: ExperimentConfig):
    train_ds = gen_concentric_circles(cfg.num_circles, cfg.points_per_circle, cfg.train_noise, cfg.seed)
    eval_ds = gen_concentric_circles(cfg.num_circles, cfg.points_per_circle, 0.0, cfg.eval_seed)
    return train_ds, eval_ds


def _write_datasets(cfg, out, train_ds, eval_ds):
    save_csv(train_ds, out / "train_data.csv", _stamp(cfg))
    save_csv(eval_ds, out / "eval_data.csv", _stamp(cfg))


def _histogram_rows(embeddings):
    stats = pairwise_distance_stats(embeddings)
    return [
        {"bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)}
        for lo, hi, c in zip(stats.edges[:-1], stats.edges[1:], stats.counts)
    ]


def _write_eval_outputs(out: Path, prefix: str, metrics: dict, embeddings, stamp: dict) -> None:
    artifacts.write_json(out / f"{prefix}.json", {"metrics": metrics, **stamp})
    rows = [{"metric": k, "value": v} for k, v in metrics.items()]
    artifacts.write_csv(out / f"{prefix}.csv", rows, ["metric", "value"], stamp)
    artifacts.write_csv(out / "distance_hist.csv", _histogram_rows(embeddings), ["bin_lo", "bin_hi", "count"], stamp)


def _write_train_outputs(cfg, out, report, eval_ds) -> dict:
    stamp = _stamp(cfg)
    r1_by_step = {}
    # R@1 is filled on the last step of each epoch and left blank elsewhere
    for e in report.epochs:
        r1_by_step[(e["epoch"] + 1) * cfg.batches_per_epoch - 1] = e["R@1"]
    rows = [{**s, "R@1": r1_by_step.get(s["step"], "")} for s in report.steps]
    artifacts.write_csv(out / "metrics.csv", rows, STEP_COLUMNS, stamp)
    if report.epochs:
        cols = list(report.epochs[0])
        artifacts.write_csv(out / "epochs.csv", report.epochs, cols, stamp)
    artifacts.save_checkpoint(
        out / "checkpoint", report.params, stamp, {"eval_ks": list(cfg.eval_ks), "aborted": report.aborted}
    )
    E = embed(report.params, eval_ds.points)
    metrics = evaluate(E, eval_ds.labels, cfg.eval_ks)
    _write_eval_outputs(out, "final_metrics", metrics, E, stamp)
    if cfg.widths[-1] == 2:
        title = f"{cfg.variant} lam={cfg.lam} gamma={cfg.gamma} noise={cfg.train_noise} R@1={metrics['R@1']:.3f}"
        artifacts.scatter_svg(out / "embeddings.svg", E, eval_ds.labels, stamp, title=title)
    return metrics


def cmd_train(cfg: ExperimentConfig) -> int:
    out = _prepare(cfg)
    train_ds, eval_ds = _datasets(cfg)
    _write_datasets(cfg, out, train_ds, eval_ds)
    plan = m_per_class_sampler(train_ds, cfg.labels_per_batch, cfg.k, cfg.epochs, cfg.seed, cfg.batches_per_epoch)
    try:
        report = train(train_ds, plan, cfg.loss_config(), cfg.train_config(), eval_ds)
    except NumericAbort as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            _write_train_outputs(cfg, out, report, eval_ds)
        print(f"numeric abort: {exc}; last good checkpoint in {out / 'checkpoint'}", file=sys.stderr)
        return EXIT_NUMERIC
    metrics = _write_train_outputs(cfg, out, report, eval_ds)
    print(f"{out}: " + " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return EXIT_OK


def cmd_eval(checkpoint: Path, data: Path, out_dir: Path | None) -> int:
    params, manifest = artifacts.load_checkpoint(checkpoint)
    ds = load_csv(data)
    out = Path(out_dir) if out_dir else Path(checkpoint).parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    stamp = {"config_hash": manifest.get("config_hash", ""), "seed": manifest.get("seed", "")}
    E = embed(params, ds.points)
    metrics = evaluate(E, ds.labels, tuple(manifest.get("eval_ks", (1, 2, 4, 8))))
    _write_eval_outputs(out, "metrics", metrics, E, stamp)
    print(f"{out}: " + " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return EXIT_OK


def cmd_oracle_check(cfg: ExperimentConfig, corrupt_denominator: bool = False) -> int:
    from .verify import oracle_check

    out = _prepare(cfg)
    report = oracle_check(cfg, corrupt_denominator=corrupt_denominator)
    artifacts.write_json(out / "oracle_report.json", {**report, **_stamp(cfg)})
    status = "PASS" if report["passed"] else "FAIL"
    print(f"oracle equivalence: {report['batches']} batches, max |dW| = {report['max_abs_deviation']:.3e} "
          f"(tol {report['tolerance']:.0e}) in {report['seconds']:.1f}s")
    print(f"affine relation: {report['affine_batches']} batches, max deviation = "
          f"{report['affine_max_abs_deviation']:.3e}")
    if not report["passed"]:
        w = report["worst"]
        print(f"worst mismatch: batch {w.get('batch')} (n={w.get('n')}, epsilon={w.get('epsilon')}) "
              f"at W[{w.get('i')}, {w.get('j')}]")
    print(status)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    from .verify import gradcheck_suite

    out = _prepare(cfg)
    rows, sign_rows, ctx = gradcheck_suite(cfg)
    stamp = _stamp(cfg)
    artifacts.write_json(
        out / "gradcheck_report.json",
        {"checks": [vars(r) for r in rows], "sign_table_context": ctx, **stamp},
    )
    artifacts.write_csv(
        out / "sign_table.csv",
        [{**vars(r), "ok": r.ok} for r in sign_rows],
        ["row", "col", "in_partner_neighborhood", "predicted_sign", "predicted_magnitude", "measured", "ok"],
        stamp,
    )
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.value:.6g} (tol {r.tol:.6g}) {r.detail}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_VERIFY


def cmd_gen_data(cfg: ExperimentConfig) -> int:
    out = _prepare(cfg)
    train_ds, eval_ds = _datasets(cfg)
    _write_datasets(cfg, out, train_ds, eval_ds)
    print(f"wrote {out / 'train_data.csv'} and {out / 'eval_data.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_overrides(p):
        p.add_argument(
            "config", help="flat JSON config ('default' for the shipped default_toy.json); missing keys are filled "
            "from the default"
        )
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", help="override the output directory")
        p.add_argument("--variant", choices=[v.value for v in Variant], help="override the loss variant")
        return p

    with_overrides(sub.add_parser("train", help="train the toy MLP and write metrics, checkpoint and plot"))
    oc = with_overrides(sub.add_parser("oracle-check", help="compare the vectorized forward with the set oracle"))
    oc.add_argument("--corrupt-denominator", action="store_true", help=argparse.SUPPRESS)
    with_overrides(sub.add_parser("gradcheck", help="finite-difference, STE and sign-table checks"))
    with_overrides(sub.add_parser("gen-data", help="write the train and eval circle datasets"))
    ev = sub.add_parser("eval", help="recompute metrics from a checkpoint")
    ev.add_argument("checkpoint", type=Path)
    ev.add_argument("data", type=Path, help="x,y,label CSV")
    ev.add_argument("--out-dir", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.data, args.out_dir)
        base = ExperimentConfig.default() if args.config == "default" else ExperimentConfig.load(args.config)
        cfg = base.with_overrides(
            seed=args.seed, out_dir=args.out_dir, variant=args.variant
        )
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "oracle-check":
            return cmd_oracle_check(cfg, args.corrupt_denominator)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        return cmd_gen_data(cfg)
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DegenerateInputError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
