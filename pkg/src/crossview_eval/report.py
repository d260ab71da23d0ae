"""Run orchestration and artifact emission.

run_all drives the enabled tiers over a manifest in canonical pair order
and writes a JSON run record atomically; emit_tables / emit_confusion_
figures turn a record into the CSV/Markdown tables and SVG heatmaps with
the published column headers. Per-pair failures never abort a run: they
are collected into the record's error list (CLI exit code 2).

Feature files are looked up in the configured features directory as
`{pair_id}.street.cvf` for the real street view and `{pair_id}.{method}.cvf`
for each generated image.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cas import evaluate_cas, read_pred_labels, report_from_confusion, confusion_matrix, train_head, CasReport
from .dataset import Manifest, load_image, load_manifest
from .errors import ConfigError, CrossviewEvalError
from .featfile import layered_features, pooled_vector, read_feature_file
from .fidstats import FeatureSet, fid
from .judge import JudgeClient, JudgeConfig, JudgeRequest, aggregate_verdicts
from .pixelmetrics import lpips, psnr, ssim

SCHEMA_VERSION = "1"
GROUND_TRUTH_KEY = "ground_truth"

TABLE1_HEADER = ["Method", "SSIM", "PSNR", "LPIPS", "FID"]
TABLE2_HEADER = ["Method", "Acc.", "F1", "Mild", "Mod.", "Sev."]
TABLE3_HEADER = ["Method", "Struct.", "Damage", "Realism"]


@dataclass
class RunConfig:
    manifest: Path
    out_dir: Path
    methods: list[str] | None = None
    features_dir: Path | None = None
    tier1: bool = True
    cas: bool = True
    judge: bool = True
    cas_train_manifest: Path | None = None
    cas_pred_labels: Path | None = None
    cas_seed: int = 0
    cas_epochs: int = 10
    cas_batch: int = 32
    cas_lr: float = 1e-4
    judge_config: JudgeConfig = field(default_factory=JudgeConfig)

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        if "manifest" not in raw or "out_dir" not in raw:
            raise ConfigError("config needs 'manifest' and 'out_dir'")

        def to_path(value) -> Path:
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        tiers = raw.get("tiers", {})
        cas_cfg = raw.get("cas", {})
        judge_cfg = dict(raw.get("judge", {}))
        if "cache_dir" in judge_cfg and judge_cfg["cache_dir"] is not None:
            judge_cfg["cache_dir"] = to_path(judge_cfg["cache_dir"])
        config = cls(
            manifest=to_path(raw["manifest"]),
            out_dir=to_path(raw["out_dir"]),
            methods=raw.get("methods"),
            features_dir=to_path(raw["features_dir"]) if raw.get("features_dir") else None,
            tier1=bool(tiers.get("tier1", True)),
            cas=bool(tiers.get("cas", True)),
            judge=bool(tiers.get("judge", True)),
            cas_train_manifest=to_path(cas_cfg["train_manifest"]) if cas_cfg.get("train_manifest") else None,
            cas_pred_labels=to_path(cas_cfg["pred_labels"]) if cas_cfg.get("pred_labels") else None,
            cas_seed=int(cas_cfg.get("seed", 0)),
            cas_epochs=int(cas_cfg.get("epochs", 10)),
            cas_batch=int(cas_cfg.get("batch", 32)),
            cas_lr=float(cas_cfg.get("lr", 1e-4)),
            judge_config=JudgeConfig(**judge_cfg),
        )
        config.validate()
        return config

    def validate(self) -> None:
        if not (self.tier1 or self.cas or self.judge):
            raise ConfigError("at least one tier must be enabled")
        if not Path(self.manifest).is_file():
            raise ConfigError(f"manifest not found: {self.manifest}")
        if (self.tier1 or (self.cas and self.cas_pred_labels is None)) and self.features_dir is None:
            raise ConfigError("features_dir is required for tier1 and for CAS training")
        if self.features_dir is not None and not Path(self.features_dir).is_dir():
            raise ConfigError(f"features directory not found: {self.features_dir}")
        for name, p in (("cas_train_manifest", self.cas_train_manifest), ("cas_pred_labels", self.cas_pred_labels)):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} not found: {p}")

    def snapshot(self) -> dict:
        return {
            "manifest": str(self.manifest),
            "out_dir": str(self.out_dir),
            "methods": self.methods,
            "features_dir": str(self.features_dir) if self.features_dir else None,
            "tiers": {"tier1": self.tier1, "cas": self.cas, "judge": self.judge},
            "cas": {
                "train_manifest": str(self.cas_train_manifest) if self.cas_train_manifest else None,
                "pred_labels": str(self.cas_pred_labels) if self.cas_pred_labels else None,
                "seed": self.cas_seed,
                "epochs": self.cas_epochs,
                "batch": self.cas_batch,
                "lr": self.cas_lr,
            },
            "judge": {
                "mode": self.judge_config.mode,
                "model": self.judge_config.model,
                "rubric_version": self.judge_config.rubric_version,
                "cache_dir": str(self.judge_config.cache_dir) if self.judge_config.cache_dir else None,
                "max_inflight": self.judge_config.max_inflight,
            },
        }


@dataclass
class RunRecord:
    """JSON-shaped run result; every field is plain data so equality is structural."""

    schema_version: str
    tool_version: str
    created_at: str
    config: dict
    rubric_version: str | None
    timings: dict
    tier1: dict | None
    cas: dict | None
    judge: dict | None
    errors: list

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "created_at": self.created_at,
            "config": self.config,
            "rubric_version": self.rubric_version,
            "timings": self.timings,
            "tier1": self.tier1,
            "cas": self.cas,
            "judge": self.judge,
            "errors": self.errors,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunRecord":
        return cls(**{k: raw[k] for k in (
            "schema_version", "tool_version", "created_at", "config", "rubric_version",
            "timings", "tier1", "cas", "judge", "errors",
        )})

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: Path | str) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _encode_float(value: float):
    """Reports carry the infinite PSNR sentinel as the string "inf"."""
    return "inf" if isinstance(value, float) and math.isinf(value) else value


def _feature_path(features_dir: Path, pair_id: str, kind: str) -> Path:
    return Path(features_dir) / f"{pair_id}.{kind}.cvf"


def _default_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_all(config: RunConfig, *, timer=time.perf_counter, timestamp=_default_timestamp) -> RunRecord:
    """Execute the enabled tiers and return the record (not yet written)."""
    config.validate()
    try:
        manifest = load_manifest(config.manifest)
    except CrossviewEvalError as exc:
        raise ConfigError(f"cannot load manifest: {exc}") from exc
    methods = list(config.methods) if config.methods else list(manifest.methods)
    for method in methods:
        if method not in manifest.methods:
            raise ConfigError(f"method {method!r} not in manifest methods {list(manifest.methods)}")

    errors: list[dict] = []
    timings: dict[str, float] = {}
    t_start = timer()

    tier1_result = None
    if config.tier1:
        t0 = timer()
        tier1_result = _run_tier1(manifest, methods, config.features_dir, errors)
        timings["tier1"] = timer() - t0

    cas_result = None
    if config.cas:
        t0 = timer()
        cas_result = _run_cas(manifest, methods, config, errors)
        timings["cas"] = timer() - t0

    judge_result = None
    rubric_version = None
    if config.judge:
        t0 = timer()
        judge_cfg = config.judge_config
        if judge_cfg.cache_dir is None:
            judge_cfg = replace(judge_cfg, cache_dir=Path(config.out_dir) / "judge_cache")
        judge_result = _run_judge(manifest, methods, judge_cfg, errors)
        rubric_version = judge_cfg.rubric_version
        timings["judge"] = timer() - t0

    timings["total"] = timer() - t_start
    snapshot = config.snapshot()
    snapshot["methods_resolved"] = methods
    record = RunRecord(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        created_at=timestamp(),
        config=snapshot,
        rubric_version=rubric_version,
        timings=timings,
        tier1=tier1_result,
        cas=cas_result,
        judge=judge_result,
        errors=errors,
    )
    return record


def _run_tier1(manifest: Manifest, methods: list[str], features_dir: Path, errors: list) -> dict:
    rows = []
    summary = {}
    street_cache: dict[str, object] = {}
    for method in methods:
        real_pool: list[np.ndarray] = []
        gen_pool: list[np.ndarray] = []
        method_rows = []
        for pair in manifest.pairs:
            try:
                if method not in pair.generated:
                    raise CrossviewEvalError(f"no generated image for method {method!r}")
                if pair.id not in street_cache:
                    street_cache[pair.id] = load_image(pair.street_path)
                street = street_cache[pair.id]
                generated = load_image(pair.generated[method])
                street_layers = read_feature_file(_feature_path(features_dir, pair.id, "street"))
                gen_layers = read_feature_file(_feature_path(features_dir, pair.id, method))
                row = {
                    "pair_id": pair.id,
                    "method": method,
                    "ssim": ssim(street, generated),
                    "psnr_db": _encode_float(psnr(street, generated)),
                    "lpips": lpips(layered_features(gen_layers), layered_features(street_layers)),
                }
                real_pool.append(pooled_vector(street_layers))
                gen_pool.append(pooled_vector(gen_layers))
                method_rows.append(row)
            except Exception as exc:
                errors.append({"tier": "tier1", "method": method, "pair_id": pair.id, "message": str(exc)})
        rows.extend(method_rows)
        entry = {"evaluated": len(method_rows), "failed": len(manifest.pairs) - len(method_rows)}
        if method_rows:
            entry["ssim"] = float(np.mean([r["ssim"] for r in method_rows]))
            psnrs = [math.inf if r["psnr_db"] == "inf" else r["psnr_db"] for r in method_rows]
            entry["psnr"] = _encode_float(float(np.mean(psnrs)))
            entry["lpips"] = float(np.mean([r["lpips"] for r in method_rows]))
            try:
                entry["fid"] = fid(FeatureSet(np.stack(real_pool)), FeatureSet(np.stack(gen_pool)))
            except Exception as exc:
                errors.append({"tier": "tier1", "method": method, "pair_id": None, "message": f"fid: {exc}"})
        else:
            errors.append({"tier": "tier1", "method": method, "pair_id": None, "message": "no pairs evaluated"})
        summary[method] = entry
    return {"rows": rows, "summary": summary}


def _pool_features(manifest: Manifest, features_dir: Path, kind: str, errors: list, tier: str):
    """Pooled vectors + labels for one image kind, skipping broken pairs."""
    vectors, labels, ids = [], [], []
    for pair in manifest.pairs:
        try:
            layers = read_feature_file(_feature_path(features_dir, pair.id, kind))
            vectors.append(pooled_vector(layers))
            labels.append(pair.label)
            ids.append(pair.id)
        except Exception as exc:
            errors.append({"tier": tier, "method": kind, "pair_id": pair.id, "message": str(exc)})
    return vectors, labels, ids


def _cas_report_dict(report: CasReport, evaluated: int) -> dict:
    return {
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "per_class_recall": list(report.per_class_recall),
        "per_class_f1": list(report.per_class_f1),
        "confusion": report.matrix.counts.tolist(),
        "evaluated": evaluated,
    }


def _run_cas(manifest: Manifest, methods: list[str], config: RunConfig, errors: list) -> dict:
    out: dict[str, dict] = {}
    if config.cas_pred_labels is not None:
        table = read_pred_labels(config.cas_pred_labels)
        label_by_id = {pair.id: pair.label for pair in manifest.pairs}
        for method in list(methods) + [GROUND_TRUTH_KEY]:
            preds = table.get(method)
            if not preds:
                if method != GROUND_TRUTH_KEY:
                    errors.append({"tier": "cas", "method": method, "pair_id": None,
                                   "message": "no predicted labels for method"})
                continue
            y_true, y_pred = [], []
            for pair in manifest.pairs:
                if pair.id in preds:
                    y_true.append(label_by_id[pair.id])
                    y_pred.append(preds[pair.id])
                else:
                    errors.append({"tier": "cas", "method": method, "pair_id": pair.id,
                                   "message": "no predicted label for pair"})
            if y_true:
                report = report_from_confusion(confusion_matrix(y_true, y_pred))
                out[method] = _cas_report_dict(report, evaluated=len(y_true))
        return out

    train_manifest = manifest
    if config.cas_train_manifest is not None:
        train_manifest = load_manifest(config.cas_train_manifest)
    train_vecs, train_labels, _ = _pool_features(train_manifest, config.features_dir, "street", errors, "cas")
    if len(train_vecs) < 2:
        errors.append({"tier": "cas", "method": None, "pair_id": None, "message": "not enough training features"})
        return out
    try:
        head = train_head(
            FeatureSet(np.stack(train_vecs)), train_labels,
            epochs=config.cas_epochs, batch=config.cas_batch, lr=config.cas_lr, seed=config.cas_seed,
        )
    except Exception as exc:
        errors.append({"tier": "cas", "method": None, "pair_id": None, "message": f"training failed: {exc}"})
        return out

    eval_sets = [(GROUND_TRUTH_KEY, "street")] + [(m, m) for m in methods]
    for key, kind in eval_sets:
        vecs, labels, _ = _pool_features(manifest, config.features_dir, kind, errors, "cas")
        if len(vecs) < 2:
            errors.append({"tier": "cas", "method": key, "pair_id": None,
                           "message": "needs at least 2 evaluable feature rows"})
            continue
        try:
            report = evaluate_cas(head, FeatureSet(np.stack(vecs)), labels)
            out[key] = _cas_report_dict(report, evaluated=len(vecs))
        except Exception as exc:
            errors.append({"tier": "cas", "method": key, "pair_id": None, "message": str(exc)})
    return out


def _run_judge(manifest: Manifest, methods: list[str], judge_cfg: JudgeConfig, errors: list) -> dict:
    client = JudgeClient(judge_cfg)
    verdict_rows = []
    by_method: dict[str, list] = {}

    def attempt(req: JudgeRequest):
        try:
            return client.judge_pair(req)
        except Exception as exc:  # isolated per pair
            return exc

    for method in methods:
        requests_ = []
        for pair in manifest.pairs:
            try:
                if method not in pair.generated:
                    raise CrossviewEvalError(f"no generated image for method {method!r}")
                requests_.append(
                    JudgeRequest(
                        pair_id=pair.id,
                        method=method,
                        generated_image=pair.generated[method].read_bytes(),
                        reference_image=pair.street_path.read_bytes(),
                        rubric_version=judge_cfg.rubric_version,
                    )
                )
            except Exception as exc:
                errors.append({"tier": "judge", "method": method, "pair_id": pair.id, "message": str(exc)})
        verdicts = []
        with ThreadPoolExecutor(max_workers=judge_cfg.max_inflight) as pool:
            outcomes = list(pool.map(attempt, requests_))
        for req, outcome in zip(requests_, outcomes):
            if isinstance(outcome, Exception):
                errors.append({"tier": "judge", "method": method, "pair_id": req.pair_id,
                               "message": str(outcome)})
            else:
                verdicts.append((req.pair_id, outcome))
        if not verdicts:
            errors.append({"tier": "judge", "method": method, "pair_id": None, "message": "no verdicts"})
            continue
        by_method[method] = [v for _, v in verdicts]
        for pair_id, v in verdicts:
            verdict_rows.append(
                {"pair_id": pair_id, "method": method, "structural": v.structural,
                 "damage": v.damage, "realism": v.realism, "source": v.source.value}
            )
    summary = {}
    if by_method:
        for method, (s, d, r) in aggregate_verdicts(by_method).items():
            summary[method] = {"structural": s, "damage": d, "realism": r,
                               "evaluated": len(by_method[method])}
    return {"verdicts": verdict_rows, "summary": summary}


# -- table / figure emission ---------------------------------------------


def _fmt(value, decimals: int) -> str:
    if value == "inf":
        return "inf"
    return f"{value:.{decimals}f}"


def _method_display(key: str) -> str:
    return "Ground Truth" if key == GROUND_TRUTH_KEY else key


def _write_csv_md(out_dir: Path, stem: str, header: list[str], rows: list[list[str]], footnote: str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    lines = [",".join(header)] + [",".join(row) for row in rows]
    csv_path.write_text("\n".join(lines) + "\n")
    md_path = out_dir / f"{stem}.md"
    md_lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ] + ["| " + " | ".join(row) + " |" for row in rows]
    if footnote:
        md_lines += ["", footnote]
    md_path.write_text("\n".join(md_lines) + "\n")
    return [csv_path, md_path]


def _method_order(record: RunRecord, present) -> list[str]:
    """Stable row order: the run's resolved method list, then any leftovers."""
    resolved = record.config.get("methods_resolved") or []
    ordered = [m for m in resolved if m in present]
    ordered += [m for m in present if m not in ordered]
    return ordered


def emit_tables(record: RunRecord, out_dir: Path | str) -> list[Path]:
    """Write table1/2/3 CSV+Markdown for every tier present in the record."""
    out_dir = Path(out_dir)
    written: list[Path] = []
    if record.tier1:
        rows = []
        evaluated = []
        for method in _method_order(record, record.tier1["summary"]):
            s = record.tier1["summary"][method]
            if "ssim" not in s:
                continue
            rows.append([
                _method_display(method), _fmt(s["ssim"], 3), _fmt(s["psnr"], 3),
                _fmt(s["lpips"], 3), _fmt(s["fid"], 2) if "fid" in s else "",
            ])
            evaluated.append(f"{method}: {s['evaluated']}/{s['evaluated'] + s['failed']}")
        written += _write_csv_md(out_dir, "table1", TABLE1_HEADER, rows,
                                 "Pairs evaluated: " + "; ".join(evaluated) + ".")
    if record.cas:
        rows = []
        ordered = [GROUND_TRUTH_KEY] if GROUND_TRUTH_KEY in record.cas else []
        ordered += [m for m in _method_order(record, record.cas) if m != GROUND_TRUTH_KEY]
        for method in ordered:
            r = record.cas[method]
            rows.append([
                _method_display(method), _fmt(r["accuracy"], 2), _fmt(r["macro_f1"], 2),
                *[_fmt(v, 2) for v in r["per_class_recall"]],
            ])
        written += _write_csv_md(
            out_dir, "table2", TABLE2_HEADER, rows,
            "Per-class columns are recall; per-class F1 is kept in the run record.")
    if record.judge:
        rows = []
        for method in _method_order(record, record.judge["summary"]):
            s = record.judge["summary"][method]
            rows.append([
                _method_display(method), _fmt(s["structural"], 2),
                _fmt(s["damage"], 2), _fmt(s["realism"], 2),
            ])
        written += _write_csv_md(out_dir, "table3", TABLE3_HEADER, rows,
                                 f"Rubric {record.rubric_version}; one judge call per pair per method.")
    if not written:
        raise ConfigError("record contains no tier tables to emit")
    return written


_SEVERITY_NAMES = ["Mild", "Moderate", "Severe"]


def emit_confusion_figures(record: RunRecord, out_dir: Path | str) -> list[Path]:
    """Per-method 3x3 confusion CSV plus a row-normalized SVG heatmap."""
    if not record.cas:
        raise ConfigError("record has no CAS tier data")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for method, r in record.cas.items():
        counts = np.asarray(r["confusion"], dtype=np.int64)
        csv_path = out_dir / f"confusion_{method}.csv"
        lines = ["true\\pred," + ",".join(_SEVERITY_NAMES)]
        for i, name in enumerate(_SEVERITY_NAMES):
            lines.append(name + "," + ",".join(str(int(v)) for v in counts[i]))
        csv_path.write_text("\n".join(lines) + "\n")
        svg_path = out_dir / f"confusion_{method}.svg"
        svg_path.write_text(_confusion_svg(counts, _method_display(method)))
        written += [csv_path, svg_path]
    return written


def _confusion_svg(counts: np.ndarray, title: str) -> str:
    cell = 70
    margin_left, margin_top = 110, 70
    width = margin_left + 3 * cell + 30
    height = margin_top + 3 * cell + 60
    sums = counts.sum(axis=1, keepdims=True).astype(np.float64)
    shares = np.zeros(counts.shape, dtype=np.float64)
    np.divide(counts, sums, out=shares, where=sums > 0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{title}</text>',
        f'<text x="{margin_left + 1.5 * cell:.0f}" y="44" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">predicted</text>',
    ]
    for j, name in enumerate(_SEVERITY_NAMES):
        parts.append(
            f'<text x="{margin_left + (j + 0.5) * cell:.0f}" y="{margin_top - 8}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12">{name}</text>'
        )
    for i, name in enumerate(_SEVERITY_NAMES):
        parts.append(
            f'<text x="{margin_left - 10}" y="{margin_top + (i + 0.5) * cell + 4:.0f}" '
            f'text-anchor="end" font-family="sans-serif" font-size="12">{name}</text>'
        )
    for i in range(3):
        for j in range(3):
            share = float(shares[i, j])
            # white -> steel blue ramp
            red = round(255 - share * (255 - 31))
            green = round(255 - share * (255 - 119))
            blue = round(255 - share * (255 - 180))
            text_color = "#ffffff" if share > 0.6 else "#000000"
            x = margin_left + j * cell
            y = margin_top + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="rgb({red},{green},{blue})" stroke="#555555"/>'
            )
            parts.append(
                f'<text x="{x + cell / 2:.0f}" y="{y + cell / 2 - 4:.0f}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="14" fill="{text_color}">{share:.2f}</text>'
            )
            parts.append(
                f'<text x="{x + cell / 2:.0f}" y="{y + cell / 2 + 14:.0f}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="10" fill="{text_color}">n={int(counts[i, j])}</text>'
            )
    parts.append(
        f'<text x="{margin_left + 1.5 * cell:.0f}" y="{margin_top + 3 * cell + 30}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="11">rows: true severity '
        f'(row-normalized shading)</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
