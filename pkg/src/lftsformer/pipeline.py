"""End-to-end run: ingest, decompose, features, train, evaluate.

Every stage result is cached under ``<cache>/<stage>-<key>`` where the key
hashes the config fields the stage reads plus its upstream key, so a cached
result is only reused for the exact inputs that produced it. Artifacts in the
output directory are re-emitted from stage results on every run and carry no
timings, which keeps them a pure function of the lockfile and seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import svg
from . import tensor as T
from .config import PRICE_COLUMNS, THREADS_ENV, PipelineConfig, _merge, build_config
from .ingest import (FeatureFrame, StandardizationStats, build_frame, load_csv, log_diff,
                     split_point, standardize, synthetic_bars, unstandardize, windows)
from .ingest.bars import BarSeries
from .micfe import MicEstimator, group_imfs, reconstruct_features, select_k, write_json
from .model import Informer
from .train import (AdaptiveLossState, TrainReport, metrics, persistence_forecast, predict, raw_from_beta,
                    train_loop)
from .vmd import vmd_decompose

log = logging.getLogger(__name__)

STAGES = ("ingest", "decompose", "features", "train", "evaluate")
TARGET = "target"
MARKER = "stage.json"

VARIANTS = {
    "full": {},
    "no_gc": {"optimizer": {"gc_enabled": False}},
    "mse": {"train": {"loss": "mse"}},
    "plain_mse": {"optimizer": {"gc_enabled": False}, "train": {"loss": "mse"}},
    "single_branch": {"model": {"stacked": False}},
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunArtifacts:
    out: Path
    files: dict[str, Path] = field(default_factory=dict)
    metrics: dict | None = None
    cache_hits: dict[str, bool] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)


def _key(*parts) -> str:
    blob = json.dumps([__version__, *parts], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _datasets(cfg: PipelineConfig, frame: FeatureFrame, inputs: list[str]):
    """Standardize on training rows, window each side of the split, carve validation off the tail."""
    cut = split_point(len(frame), cfg.split_ratio)
    stats = StandardizationStats.fit(frame, slice(0, cut), inputs)
    std = standardize(frame.select(inputs), stats)
    mc = cfg.model
    train_all = windows(std, mc, TARGET, inputs, 0, cut)
    test = windows(std, mc, TARGET, inputs, cut, len(frame))
    n_val = max(1, int(round(len(train_all) * cfg.val_ratio)))
    if n_val >= len(train_all):
        raise ValueError(f"validation share {cfg.val_ratio} leaves no training windows")
    idx = np.arange(len(train_all))
    return train_all.subset(idx[:-n_val]), train_all.subset(idx[-n_val:]), test, stats


class Pipeline:
    """One run directory; ``reuse`` names the stages allowed to load from cache."""

    def __init__(self, cfg: PipelineConfig, reuse=(), cache_dir=None):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.cache = Path(cache_dir) if cache_dir is not None else self.out / "cache"
        self.reuse = set(reuse)
        self.art = RunArtifacts(self.out)
        self.keys: dict[str, str] = {}

    # stage bookkeeping

    def _mark(self, stage: str, status: str, error: str | None = None) -> None:
        doc = {"stage": stage, "status": status, "completed": [s for s in STAGES if s in self.art.timings]}
        if error:
            doc["error"] = error
        (self.out / MARKER).write_text(json.dumps(doc, indent=2) + "\n")

    def _stage_dir(self, stage: str) -> Path:
        return self.cache / f"{stage}-{self.keys[stage]}"

    def _cached(self, stage: str) -> Path | None:
        d = self._stage_dir(stage)
        if stage in self.reuse and (d / "done").exists():
            return d
        return None

    def _fresh(self, stage: str) -> Path:
        """Private scratch directory; ``_commit`` moves it into place."""
        self.cache.mkdir(parents=True, exist_ok=True)
        return Path(tempfile.mkdtemp(prefix=f".{stage}-", dir=self.cache))

    def _commit(self, stage: str, tmp: Path) -> None:
        # same key means same bytes, so a finished entry from a concurrent run is kept as is
        (tmp / "done").touch()
        d = self._stage_dir(stage)
        if d.exists() and not (d / "done").exists():
            shutil.rmtree(d, ignore_errors=True)
        try:
            os.rename(tmp, d)
        except OSError:
            if not (d / "done").exists():
                raise
            shutil.rmtree(tmp, ignore_errors=True)

    def _emit(self, name: str, path: Path) -> None:
        self.art.files[name] = path

    # stages

    def ingest(self):
        cfg = self.cfg
        src = {"data": cfg.data, "digest": _file_digest(cfg.data)} if cfg.data else {"synthetic": cfg.synthetic}
        self.keys["ingest"] = _key("ingest", src)
        hit = self._cached("ingest")
        if hit is not None:
            z = np.load(hit / "frame.npz")
            names = json.loads((hit / "names.json").read_text())
            frame = FeatureFrame(z["index"], {n: z["values"][:, j].copy() for j, n in enumerate(names)})
            prices = {c: z[f"price_{c}"] for c in PRICE_COLUMNS}
        else:
            if cfg.data:
                bars = BarSeries.from_bars(load_csv(cfg.data))
            else:
                bars = synthetic_bars(cfg.synthetic.n, cfg.synthetic.seed)
            full = build_frame(bars)
            full.add(TARGET, log_diff(full.columns["close"]))
            r0 = max(full.first_fully_valid(), 1)
            frame = full.rows(r0, len(full))
            # one extra leading row so price log-differences start at the first kept row
            prices = {c: full.columns[c][r0 - 1:] for c in PRICE_COLUMNS}
            d = self._fresh("ingest")
            np.savez(d / "frame.npz", index=frame.index, values=frame.matrix(),
                     **{f"price_{c}": v for c, v in prices.items()})
            (d / "names.json").write_text(json.dumps(frame.names))
            self._commit("ingest", d)
        self.art.cache_hits["ingest"] = hit is not None
        frame.to_csv(self.out / "features.csv")
        self._emit("features.csv", self.out / "features.csv")
        return frame, prices

    def decompose(self, prices):
        cfg = self.cfg
        self.keys["decompose"] = _key("decompose", self.keys["ingest"], cfg.vmd, cfg.mic.bins)
        hit = self._cached("decompose")
        if hit is not None:
            z = np.load(hit / "imfs.npz")
            imfs = {n: z[n] for n in json.loads((hit / "names.json").read_text())}
            info = json.loads((hit / "k.json").read_text())
        else:
            imfs, info = {}, {}
            est = MicEstimator(bins=cfg.mic.bins)
            for col in PRICE_COLUMNS:
                sig = np.log(prices[col][1:] / prices[col][:-1])
                if cfg.vmd.k_candidates is not None:
                    rep = select_k(sig, cfg.vmd.k_candidates, cfg.vmd.params(1), est)
                    if rep.chosen_K is None:
                        raise ValueError(f"no usable K for column {col}: {rep.to_dict()}")
                    K, info[col] = rep.chosen_K, rep.to_dict()
                else:
                    K = int(cfg.vmd.k_map[col])
                    info[col] = {"chosen_K": K}
                res = vmd_decompose(sig, cfg.vmd.params(K))
                info[col].update(iterations=res.iterations_used, converged=res.converged,
                                 center_freqs=[float(w) for w in res.center_freqs])
                if not res.converged:
                    log.warning("VMD on %s stopped at max_iter=%d", col, cfg.vmd.max_iter)
                for k, mode in enumerate(res.modes, 1):
                    imfs[f"{col}_imf{k:02d}"] = mode
            d = self._fresh("decompose")
            np.savez(d / "imfs.npz", **imfs)
            (d / "names.json").write_text(json.dumps(list(imfs)))
            write_json(d / "k.json", info)
            self._commit("decompose", d)
        self.art.cache_hits["decompose"] = hit is not None
        return imfs, info

    def features(self, frame, imfs):
        cfg = self.cfg
        self.keys["features"] = _key("features", self.keys["decompose"], cfg.fe, cfg.mic, cfg.split_ratio)
        indicators = {n: frame.columns[n] for n in frame.names if n not in PRICE_COLUMNS and n != TARGET}
        cut = split_point(len(frame), cfg.split_ratio)
        hit = self._cached("features")
        if hit is not None:
            z = np.load(hit / "features.npz")
            fe_values = json.loads((hit / "fe.json").read_text())
            grouping = group_imfs(imfs, cfg.fe, fe_values)
            rcfs, rmap = reconstruct_features(grouping, indicators, MicEstimator(bins=cfg.mic.bins),
                                              cfg.mic.threshold, slice(0, cut), scores=z["heatmap"])
        else:
            grouping = group_imfs(imfs, cfg.fe)
            rcfs, rmap = reconstruct_features(grouping, indicators, MicEstimator(bins=cfg.mic.bins),
                                              cfg.mic.threshold, slice(0, cut))
            d = self._fresh("features")
            np.savez(d / "features.npz", heatmap=rmap.heatmap)
            write_json(d / "fe.json", grouping.fe_values)
            self._commit("features", d)
        self.art.cache_hits["features"] = hit is not None
        return grouping, rcfs, rmap

    def _emit_features(self, frame, imfs, k_info, grouping, rmap) -> None:
        out = self.out
        FeatureFrame(frame.index.copy(), dict(imfs)).to_csv(out / "imfs.csv")
        _write_csv(out / "fe_values.csv", ["imf", "fuzzy_entropy", "group"],
                   [[n, repr(v), g] for g, members in grouping.groups.items()
                    for n, v in ((m, grouping.fe_values[m]) for m in members)])
        rmap.write_heatmap_csv(out / "heatmap.csv")
        (out / "heatmap.svg").write_text(svg.heatmap(
            rmap.heatmap, [f"NF{g}" for g in rmap.row_ids], rmap.col_names,
            f"MIC between new features and indicators (threshold {rmap.threshold})"))
        write_json(out / "vmd_k.json", k_info)
        write_json(out / "grouping.json", grouping.to_dict())
        write_json(out / "reconstruction.json", rmap.to_dict())
        for name in ("imfs.csv", "fe_values.csv", "heatmap.csv", "heatmap.svg", "grouping.json",
                     "reconstruction.json", "vmd_k.json"):
            self._emit(name, out / name)

    def train(self, datasets, model_cfg):
        cfg = self.cfg
        self.keys["train"] = _key("train", self.keys["features"], model_cfg.to_dict(), cfg.optimizer, cfg.train,
                                  cfg.val_ratio)
        train_ds, val_ds, _, _ = datasets
        model = Informer(model_cfg)
        hit = self._cached("train")
        if hit is not None:
            model.load_state_dict(T.load_checkpoint(hit / "model.ckpt"))
            report = TrainReport(**json.loads((hit / "report.json").read_text()))
        else:
            loss_state = None
            if cfg.train.loss == "adaptive":
                loss_state = AdaptiveLossState(T.Parameter(np.array(raw_from_beta(cfg.train.beta_init)),
                                                           name="beta_raw"),
                                               c=cfg.train.c, penalty=cfg.train.beta_penalty)
            report = train_loop(model, train_ds, val_ds, cfg.optimizer, cfg.train, loss_state)
            if report.stop_reason == "diverged" and report.best_epoch == 0:
                raise FloatingPointError("training diverged before the first validation")
            report.wall_time = 0.0   # timings live in timings.json, not in reproducible artifacts
            d = self._fresh("train")
            T.save_checkpoint(d / "model.ckpt", model.state_dict(), {"config": model_cfg.to_dict()})
            report.write(d / "report.json")
            self._commit("train", d)
        self.art.cache_hits["train"] = hit is not None
        out = self.out
        T.save_checkpoint(out / "model.ckpt", model.state_dict(), {"config": model_cfg.to_dict()})
        report.write(out / "report.json")
        report.write_csv(out / "loss_curve.csv")
        model.write_summary(out / "model_summary.json")
        (out / "loss_curve.svg").write_text(svg.line_chart(
            {"train loss": report.train_loss, "validation MSE": report.val_loss}, "Training and validation loss",
            x_label="epoch", y_label="loss"))
        for name in ("model.ckpt", "model.ckpt.json", "report.json", "loss_curve.csv", "model_summary.json",
                     "loss_curve.svg"):
            self._emit(name, out / name)
        return model, report

    def evaluate(self, model, datasets, frame, report):
        """Test forecasts in log-return units against per-step persistence."""
        cfg = self.cfg
        self.keys["evaluate"] = _key("evaluate", self.keys["train"], cfg.split_ratio)
        _, _, test, stats = datasets
        pred = unstandardize(predict(model, test, 128), stats, TARGET)
        q = frame.columns[TARGET]
        L, H = cfg.model.seq_len, cfg.model.pred_len
        true = q[test.starts[:, None] + L + np.arange(H)]
        base = persistence_forecast(q, test.starts, L, H)
        m_model, m_base = metrics(true, pred), metrics(true, base)
        doc = {
            "model": m_model.to_dict(),
            "persistence": m_base.to_dict(),
            "mse_ratio_to_persistence": m_model.mse / m_base.mse,
            "test_windows": int(len(test)),
            "pred_len": H,
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val_loss(),
            "stop_reason": report.stop_reason,
            "final_beta": report.beta[report.best_epoch - 1] if report.best_epoch else None,
        }
        out = self.out
        write_json(out / "metrics.json", doc)
        rows = []
        for i, s in enumerate(test.starts):
            for h in range(H):
                t = int(s) + L + h
                rows.append([int(s), h + 1, int(frame.index[t]), repr(float(true[i, h])), repr(float(pred[i, h])),
                             repr(float(base[i, h]))])
        _write_csv(out / "predictions.csv", ["window_start", "step", "time", "actual", "forecast", "persistence"],
                   rows)
        xs = svg.time_axis(len(test))
        (out / "predictions.svg").write_text(svg.line_chart(
            {"actual": true[:, 0], "forecast": pred[:, 0], "persistence": base[:, 0]},
            "One-step-ahead test forecasts (log return)", x=xs, x_label="time unit", y_label="log return"))
        for name in ("metrics.json", "predictions.csv", "predictions.svg"):
            self._emit(name, out / name)
        self.art.metrics = doc
        return doc

    def run(self, until: str = "evaluate") -> RunArtifacts:
        if until not in STAGES:
            raise ValueError(f"unknown stage {until!r}; expected one of {STAGES}")
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg.write_lock(self.out / "config.lock.json")
        self._emit("config.lock.json", self.out / "config.lock.json")
        stop = STAGES.index(until)
        threads = int(os.environ.get(THREADS_ENV, "1"))
        state = {}
        with threadpool_limits(limits=max(1, threads)):
            for stage in STAGES[:stop + 1]:
                self._mark(stage, "running")
                t0 = time.perf_counter()
                try:
                    self._step(stage, state)
                except Exception as exc:
                    self._mark(stage, "failed", "".join(traceback.format_exception_only(type(exc), exc)).strip())
                    raise StageError(stage, exc) from exc
                self.art.timings[stage] = time.perf_counter() - t0
                log.info("stage %s done in %.1fs", stage, self.art.timings[stage])
        self._mark(until, "done")
        write_json(self.out / "timings.json", self.art.timings)
        return self.art

    def _step(self, stage: str, s: dict) -> None:
        if stage == "ingest":
            s["frame"], s["prices"] = self.ingest()
        elif stage == "decompose":
            s["imfs"], s["k_info"] = self.decompose(s["prices"])
        elif stage == "features":
            s["grouping"], s["rcfs"], s["rmap"] = self.features(s["frame"], s["imfs"])
            self._emit_features(s["frame"], s["imfs"], s["k_info"], s["grouping"], s["rmap"])
        elif stage == "train":
            frame = s["frame"]
            for g, v in s["rcfs"].items():
                frame.add(f"rcf{g}", v)
            inputs = [TARGET] + [f"rcf{g}" for g in s["rcfs"]]
            n_in = len(inputs)
            s["model_cfg"] = self.cfg.model.with_(enc_in=n_in, dec_in=n_in)
            s["datasets"] = _datasets(self.cfg.replace(model=s["model_cfg"]), frame, inputs)
            s["model"], s["report"] = self.train(s["datasets"], s["model_cfg"])
        else:
            self.evaluate(s["model"], s["datasets"], s["frame"], s["report"])


def run_pipeline(cfg: PipelineConfig, until: str = "evaluate", resume: bool = False,
                 cache_dir=None) -> RunArtifacts:
    """Run stages up to ``until``; with ``resume`` every stage whose inputs are unchanged loads from cache."""
    return Pipeline(cfg, STAGES if resume else (), cache_dir).run(until)


# ablation

def _variant_job(doc: dict, name: str, overrides: dict, cache_dir: str) -> dict:
    try:
        cfg = build_config(_merge(doc, overrides), out=str(Path(doc["out"]) / "variants" / name))
        art = Pipeline(cfg, reuse=("ingest", "decompose", "features"), cache_dir=cache_dir).run()
        return {"variant": name, "ok": True, "metrics": art.metrics}
    except Exception as exc:   # isolate: one failing variant must not sink the grid
        log.error("variant %s failed: %s", name, exc)
        return {"variant": name, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def ablation(cfg: PipelineConfig, variants=None, workers: int | None = None, resume: bool = False,
             cache_dir=None) -> dict:
    """Train every variant on shared features; write a table and a blended-score heatmap.

    ``variants`` is a list of names from ``VARIANTS`` or a mapping of name to
    config overrides. ``cache_dir`` lets several ablations share upstream stages.
    """
    if variants is None:
        variants = list(VARIANTS)
    if not isinstance(variants, dict):
        unknown = [v for v in variants if v not in VARIANTS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}; known: {sorted(VARIANTS)}")
        variants = {v: VARIANTS[v] for v in variants}
    if not variants:
        raise ValueError("ablation needs at least one variant")
    out = Path(cfg.out)
    cache = Path(cache_dir) if cache_dir is not None else out / "cache"
    # shared upstream stages run once in this process
    Pipeline(cfg, STAGES if resume else (), cache).run("features")
    doc = cfg.to_dict()
    workers = workers or min(len(variants), os.cpu_count() or 1)
    jobs = [(doc, n, o, str(cache)) for n, o in variants.items()]
    if workers == 1:
        results = [_variant_job(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_variant_job, *zip(*jobs)))
    table = _ablation_table(results)
    write_json(out / "ablation.json", {"variants": {n: o for n, o in variants.items()}, "results": results,
                                       "table": table})
    _write_csv(out / "ablation.csv", list(table[0]) if table else ["variant"],
               [[r[k] for k in r] for r in table])
    (out / "ablation.svg").write_text(_ablation_svg(table))
    return {"results": results, "table": table}


def _ablation_table(results: list[dict]) -> list[dict]:
    rows = []
    for r in results:
        m = r["metrics"]["model"] if r["ok"] else {}
        rows.append({
            "variant": r["variant"],
            "status": "ok" if r["ok"] else "failed",
            "mae": m.get("mae", math.nan),
            "mse": m.get("mse", math.nan),
            "rmse": m.get("rmse", math.nan),
            "r2": m.get("r2") if m.get("r2") is not None else math.nan,
            "best_val_loss": r["metrics"]["best_val_loss"] if r["ok"] else math.nan,
        })
    blend = svg.blend_scores([r["mse"] for r in rows], [r["rmse"] for r in rows], [r["r2"] for r in rows])
    for r, b in zip(rows, blend):
        r["blend"] = float(b) if r["status"] == "ok" else math.nan
    return rows


def _ablation_svg(table: list[dict]) -> str:
    def norm(key, invert):
        v = np.array([r[key] for r in table], dtype=np.float64)
        ok = np.isfinite(v)
        out = np.full_like(v, np.nan)
        if ok.any():
            lo, hi = v[ok].min(), v[ok].max()
            out[ok] = 0.5 if hi == lo else (v[ok] - lo) / (hi - lo)
        return 1 - out if invert else out

    cols = np.column_stack([norm("mse", True), norm("rmse", True), norm("r2", False),
                            np.array([r["blend"] for r in table], dtype=np.float64)])
    labels = [r["variant"] + ("" if r["status"] == "ok" else " (failed)") for r in table]
    return svg.heatmap(cols, labels, ["1-MSE'", "1-RMSE'", "R2'", "blend"],
                       "Ablation: darker is jointly better", cell=48, annotate=True)
