"""crossview-eval command line interface.

Exit codes: 0 success, 1 configuration error, 2 run completed with partial
failures recorded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cas import evaluate_cas, load_head, read_pred_labels, report_from_confusion, confusion_matrix, save_head, train_head
from .dataset import SeverityLabel, load_manifest, save_manifest, stratified_split, synth_toy_corpus
from .errors import ConfigError, CrossviewEvalError
from .featfile import layered_features, pooled_vector, read_feature_file, read_feature_matrix
from .fidstats import FeatureSet, fid
from .genkernel import (
    Conditioning,
    LatentState,
    NoiseSchedule,
    RoutingWeights,
    forward_diffuse,
    moe_aggregate,
    reverse_loop,
    route_weights,
)
from .judge import JudgeClient, JudgeConfig, JudgeRequest, aggregate_verdicts
from .kernels import BACKEND
from .pixelmetrics import format_psnr, lpips, psnr, ssim
from .report import RunConfig, RunRecord, emit_confusion_figures, emit_tables, run_all


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossview-eval", description=__doc__)
    parser.add_argument("--version", action="version", version=f"crossview-eval {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="manifest utilities")
    dataset_sub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_split = dataset_sub.add_parser("split", help="seeded stratified test/train split")
    p_split.add_argument("--manifest", required=True, type=Path)
    p_split.add_argument("--per-class", required=True, type=int)
    p_split.add_argument("--seed", required=True, type=int)
    p_split.add_argument("--out", required=True, type=Path)
    p_toy = dataset_sub.add_parser("synth-toy", help="generate a deterministic toy corpus")
    p_toy.add_argument("--n", required=True, type=int, help="pairs per severity class")
    p_toy.add_argument("--size", required=True, type=int, help="image edge length in pixels")
    p_toy.add_argument("--seed", required=True, type=int)
    p_toy.add_argument("--out", required=True, type=Path)

    p_gen = sub.add_parser("genkernel", help="generative kernel utilities")
    gen_sub = p_gen.add_subparsers(dest="gen_command", required=True)
    p_demo = gen_sub.add_parser("demo", help="diffusion round-trip and MoE smoke test")
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--steps", type=int, default=50)

    p_tier1 = sub.add_parser("tier1", help="per-pair SSIM/PSNR/LPIPS rows for one method")
    p_tier1.add_argument("--manifest", required=True, type=Path)
    p_tier1.add_argument("--features-dir", required=True, type=Path)
    p_tier1.add_argument("--method", required=True)
    p_tier1.add_argument("--out", required=True, type=Path)

    p_fid = sub.add_parser("fid", help="FID between two feature sets")
    p_fid.add_argument("--real-features", required=True, type=Path,
                       help=".cvf feature-set file or a directory of per-image .cvf files")
    p_fid.add_argument("--gen-features", required=True, type=Path)

    p_cas = sub.add_parser("cas", help="classification accuracy score")
    cas_sub = p_cas.add_subparsers(dest="cas_command", required=True)
    p_train = cas_sub.add_parser("train", help="train the severity head on real-image features")
    p_train.add_argument("--features", required=True, type=Path, help=".cvf feature-set file (layer names = pair ids)")
    p_train.add_argument("--labels", required=True, type=Path, help="CSV with header pair_id,label")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--epochs", type=int, default=10)
    p_train.add_argument("--batch", type=int, default=32)
    p_train.add_argument("--lr", type=float, default=1e-4)
    p_train.add_argument("--out", required=True, type=Path)
    p_eval = cas_sub.add_parser("eval", help="score generated-image features or an external prediction CSV")
    p_eval.add_argument("--head", type=Path)
    p_eval.add_argument("--features", type=Path)
    p_eval.add_argument("--pred-labels", type=Path, help="CSV pair_id,method,predicted_label")
    p_eval.add_argument("--labels", required=True, type=Path, help="CSV with header pair_id,label")
    p_eval.add_argument("--out", type=Path)

    p_judge = sub.add_parser("judge", help="VLM-as-a-judge over one method")
    p_judge.add_argument("--manifest", required=True, type=Path)
    p_judge.add_argument("--method", required=True)
    p_judge.add_argument("--provider", help="provider URL (default: CVE_API_URL)")
    p_judge.add_argument("--model", default="gemini-2.5-flash")
    p_judge.add_argument("--cache", required=True, type=Path)
    p_judge.add_argument("--stub", action="store_true", help="deterministic offline judge")
    p_judge.add_argument("--rubric-version", default="v1")
    p_judge.add_argument("--out", type=Path, help="write per-pair verdicts JSON here")

    p_run = sub.add_parser("run", help="run all enabled tiers from a config file")
    p_run.add_argument("--config", required=True, type=Path)

    p_report = sub.add_parser("report", help="emit tables and figures from a run record")
    p_report.add_argument("--record", required=True, type=Path)
    p_report.add_argument("--out", required=True, type=Path)

    return parser


def _read_labels_csv(path: Path) -> dict[str, SeverityLabel]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"pair_id", "label"}.issubset(reader.fieldnames):
            raise ConfigError(f"{path}: labels CSV needs header pair_id,label")
        return {row["pair_id"]: SeverityLabel.from_name(row["label"]) for row in reader}


def _named_feature_matrix(path: Path) -> tuple[list[str], np.ndarray]:
    layers = [la for la in read_feature_file(path) if la.data.ndim == 1]
    if not layers:
        raise ConfigError(f"{path}: no 1-D feature layers")
    names = [la.name for la in layers]
    return names, np.stack([np.asarray(la.data, dtype=np.float64) for la in layers])


def _feature_set_from_arg(path: Path) -> FeatureSet:
    if path.is_dir():
        files = sorted(path.glob("*.cvf"))
        if not files:
            raise ConfigError(f"{path}: no .cvf files")
        rows = [pooled_vector(read_feature_file(f)) for f in files]
        return FeatureSet(np.stack(rows))
    return FeatureSet(read_feature_matrix(path))


def _cmd_dataset(args) -> int:
    if args.dataset_command == "split":
        manifest = load_manifest(args.manifest)
        test, train = stratified_split(manifest, args.per_class, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        save_manifest(test, args.out / "test_manifest.json")
        save_manifest(train, args.out / "train_manifest.json")
        print(f"test: {len(test)} pairs, train: {len(train)} pairs -> {args.out}")
        return 0
    manifest = synth_toy_corpus(args.n, args.size, args.seed, args.out)
    print(f"wrote {len(manifest)} pairs ({args.n} per class) to {args.out}")
    return 0


def _cmd_genkernel_demo(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    sched = NoiseSchedule.linear_beta(steps=args.steps)
    z0 = LatentState(z=rng.standard_normal((2, 8, 8)), t=0)
    eps = rng.standard_normal(z0.z.shape)
    z_t = forward_diffuse(z0, sched.steps, eps, sched)

    class Oracle:
        def predict(self, z, t, cond):
            return eps

    cond = Conditioning(control=rng.standard_normal(16))
    recovered = reverse_loop(z_t, Oracle(), cond, sched)
    err = float(np.max(np.abs(recovered.z - z0.z)))
    print(f"kernels: {BACKEND}")
    print(f"schedule: T={sched.steps}, alpha_bar_T={sched.alpha_bar[-1]:.6f}")
    print(f"round-trip max-abs error: {err:.3e}")
    w = route_weights(rng.standard_normal(16), rng.standard_normal((3, 16)) * 0.1, np.zeros(3))
    print(f"routing weights: {np.array2string(w.w, precision=4)} (sum {w.w.sum():.12f})")
    experts = [rng.standard_normal((2, 2)) for _ in range(3)]
    agg = moe_aggregate(experts, w)
    print(f"MoE aggregate of 3 experts:\n{np.array2string(agg, precision=4)}")
    return 0


def _cmd_tier1(args) -> int:
    from .dataset import load_image

    manifest = load_manifest(args.manifest)
    if args.method not in manifest.methods:
        raise ConfigError(f"method {args.method!r} not in manifest methods {list(manifest.methods)}")
    failures = 0
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "method", "ssim", "psnr_db", "lpips"])
        for pair in manifest.pairs:
            try:
                street = load_image(pair.street_path)
                generated = load_image(pair.generated[args.method])
                street_layers = read_feature_file(args.features_dir / f"{pair.id}.street.cvf")
                gen_layers = read_feature_file(args.features_dir / f"{pair.id}.{args.method}.cvf")
                writer.writerow([
                    pair.id,
                    args.method,
                    f"{ssim(street, generated):.6f}",
                    format_psnr(psnr(street, generated)),
                    f"{lpips(layered_features(gen_layers), layered_features(street_layers)):.6f}",
                ])
            except Exception as exc:
                failures += 1
                print(f"pair {pair.id}: {exc}", file=sys.stderr)
    print(f"wrote {args.out} ({len(manifest) - failures}/{len(manifest)} pairs)")
    return 2 if failures else 0


def _cmd_fid(args) -> int:
    value = fid(_feature_set_from_arg(args.real_features), _feature_set_from_arg(args.gen_features))
    print(f"FID: {value:.2f}")
    return 0


def _cmd_cas(args) -> int:
    if args.cas_command == "train":
        names, rows = _named_feature_matrix(args.features)
        label_map = _read_labels_csv(args.labels)
        missing = [n for n in names if n not in label_map]
        if missing:
            raise ConfigError(f"no labels for feature rows: {missing[:5]}")
        labels = [label_map[n] for n in names]
        head = train_head(FeatureSet(rows), labels, epochs=args.epochs, batch=args.batch,
                          lr=args.lr, seed=args.seed)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_head(head, args.out)
        print(f"trained head on {len(names)} samples (d={head.d}) -> {args.out}")
        return 0

    label_map = _read_labels_csv(args.labels)
    if args.pred_labels is not None:
        table = read_pred_labels(args.pred_labels)
        results = {}
        for method, preds in sorted(table.items()):
            y_true, y_pred = [], []
            for pair_id, pred in preds.items():
                if pair_id not in label_map:
                    raise ConfigError(f"prediction for unknown pair {pair_id!r}")
                y_true.append(label_map[pair_id])
                y_pred.append(pred)
            report = report_from_confusion(confusion_matrix(y_true, y_pred))
            results[method] = _report_dict(report)
            print(f"{method}: acc {report.accuracy:.2f}, macro-F1 {report.macro_f1:.2f}")
        return _write_json(args.out, results)

    if args.head is None or args.features is None:
        raise ConfigError("cas eval needs either --pred-labels or both --head and --features")
    head = load_head(args.head)
    names, rows = _named_feature_matrix(args.features)
    missing = [n for n in names if n not in label_map]
    if missing:
        raise ConfigError(f"no labels for feature rows: {missing[:5]}")
    labels = [label_map[n] for n in names]
    report = evaluate_cas(head, FeatureSet(rows), labels)
    print(f"acc {report.accuracy:.2f}, macro-F1 {report.macro_f1:.2f}, "
          f"recall {tuple(round(r, 2) for r in report.per_class_recall)}")
    return _write_json(args.out, _report_dict(report))


def _report_dict(report) -> dict:
    return {
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "per_class_recall": list(report.per_class_recall),
        "per_class_f1": list(report.per_class_f1),
        "confusion": report.matrix.counts.tolist(),
    }


def _write_json(path: Path | None, payload) -> int:
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")
    return 0


def _cmd_judge(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.method not in manifest.methods:
        raise ConfigError(f"method {args.method!r} not in manifest methods {list(manifest.methods)}")
    config = JudgeConfig(
        mode="stub" if args.stub else "live",
        provider_url=args.provider,
        model=args.model,
        cache_dir=args.cache,
        rubric_version=args.rubric_version,
    )
    client = JudgeClient(config)
    requests_ = [
        JudgeRequest(
            pair_id=pair.id,
            method=args.method,
            generated_image=pair.generated[args.method].read_bytes(),
            reference_image=pair.street_path.read_bytes(),
            rubric_version=args.rubric_version,
        )
        for pair in manifest.pairs
        if args.method in pair.generated
    ]
    verdicts = client.judge_pairs(requests_)
    means = aggregate_verdicts({args.method: verdicts})[args.method]
    print(f"{args.method}: Struct. {means[0]:.2f}, Damage {means[1]:.2f}, Realism {means[2]:.2f} "
          f"({len(verdicts)} pairs)")
    rows = [
        {"pair_id": req.pair_id, "structural": v.structural, "damage": v.damage,
         "realism": v.realism, "source": v.source.value}
        for req, v in zip(requests_, verdicts)
    ]
    return _write_json(args.out, {"method": args.method, "verdicts": rows,
                                  "means": {"structural": means[0], "damage": means[1], "realism": means[2]}})


def _cmd_run(args) -> int:
    config = RunConfig.from_file(args.config)
    record = run_all(config)
    out_dir = Path(config.out_dir)
    record.save(out_dir / "record.json")
    emit_tables(record, out_dir)
    if record.cas:
        emit_confusion_figures(record, out_dir)
    print(f"record and tables written to {out_dir}")
    if record.errors:
        print(f"{len(record.errors)} partial failures recorded", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args) -> int:
    record = RunRecord.load(args.record)
    written = emit_tables(record, args.out)
    if record.cas:
        written += emit_confusion_figures(record, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "dataset":
            return _cmd_dataset(args)
        if args.command == "genkernel":
            return _cmd_genkernel_demo(args)
        if args.command == "tier1":
            return _cmd_tier1(args)
        if args.command == "fid":
            return _cmd_fid(args)
        if args.command == "cas":
            return _cmd_cas(args)
        if args.command == "judge":
            return _cmd_judge(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CrossviewEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
