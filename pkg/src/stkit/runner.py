"""Experiment runner: one entry point per harness command.

``cmd_run`` executes a (task, model, dataset) triple end to end and persists
a run directory; ``cmd_tune`` wraps it in a hyper-parameter search. Runs are
deterministic in (config, seed): rerunning writes byte-identical metrics.
Wall-clock time is recorded in run.json only, never in metrics.json.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .baselines import HAModel, PersistenceModel, VARModel, ha_fit, var_fit
from .config import Config
from .dataset import (
    AtomicDataset,
    RawConversionSpec,
    convert_raw_csv,
    dataset_stats,
    load_dataset,
    save_dataset,
    validate_dataset,
)
from .evaluate import (
    evaluate_forecast,
    jsonify_metrics,
    match_metrics,
    ranking_metrics,
)
from .exceptions import (
    BadConfigFile,
    DatasetNotFound,
    EmptyTable,
    IncompatibleModelTask,
)
from .mapmatch import MatchParams, build_road_network, viterbi_match
from .pipeline import (
    Sample,
    SplitSpec,
    TrajWindowSpec,
    WindowSpec,
    cut_trajectory,
    filter_trajectories,
    fit_scaler,
    make_batches,
    split_per_user,
    split_windows,
)
from .search import grid_candidates, parse_space, random_candidates, run_search
from .synthetic import TRUTH_ROUTES_FILE
from .tensorize import (
    build_time_axis,
    build_trajectories,
    dyna_to_graph_tensor,
    grid_to_tensor,
    od_to_tensor,
)

__all__ = [
    "TASKS",
    "MODEL_TASKS",
    "RunRecord",
    "resolve_dataset_dir",
    "cmd_run",
    "cmd_tune",
    "cmd_validate",
    "cmd_convert",
    "cmd_stats",
]

TASKS = ("traffic_state_pred", "map_matching", "eval_ranking")

MODEL_TASKS = {
    "HA": "traffic_state_pred",
    "VAR": "traffic_state_pred",
    "Persistence": "traffic_state_pred",
    "HMM": "map_matching",
    "HMMM": "map_matching",  # common alias for the same matcher
    "Popularity": "eval_ranking",
}


@dataclass
class RunRecord:
    """Everything one run produced."""

    run_id: str
    task: str
    model: str
    dataset: str
    seed: int
    config: dict
    metrics: dict
    output_dir: str
    wall_time_s: float


def resolve_dataset_dir(dataset: str) -> Path:
    """Resolve a dataset argument: literal directory, else under STKIT_DATA_DIR."""
    if not dataset:
        raise DatasetNotFound("no dataset given")
    p = Path(dataset)
    if p.is_dir():
        return p
    base = os.environ.get("STKIT_DATA_DIR")
    if base:
        candidate = Path(base) / dataset
        if candidate.is_dir():
            return candidate
    raise DatasetNotFound(
        f"dataset {dataset!r} is not a directory and was not found under "
        f"STKIT_DATA_DIR ({base or 'unset'})"
    )


def _run_id(task: str, model: str, dataset: str, seed: int, config: Mapping) -> str:
    # output_dir and config_file do not affect results, so they are not
    # part of the identity.
    payload = {
        k: v
        for k, v in sorted(config.items())
        if k not in ("output_dir", "config_file")
    }
    digest = hashlib.sha256(
        json.dumps([task, model, dataset, seed, payload], sort_keys=True).encode()
    ).hexdigest()[:10]
    return f"{task}_{model}_{Path(dataset).name}_s{seed}_{digest}"


def _infer_interval(times) -> int:
    stamps = sorted({int(t.timestamp()) for t in times})
    if len(stamps) < 2:
        raise EmptyTable("cannot infer a sampling interval from fewer than two stamps")
    return min(b - a for a, b in zip(stamps, stamps[1:]))


def _check_model_task(model: str, task: str):
    if task not in TASKS:
        raise BadConfigFile(f"unknown task {task!r}; pick from {TASKS}")
    if model not in MODEL_TASKS:
        raise BadConfigFile(
            f"unknown model {model!r}; pick from {tuple(MODEL_TASKS)}"
        )
    if MODEL_TASKS[model] != task:
        raise IncompatibleModelTask(
            f"model {model} serves task {MODEL_TASKS[model]}, not {task}"
        )


def _forecast_arrays(model, samples: list[Sample], batch_size: int):
    """Predict a sample list in batches; returns (pred, truth, mask) stacked."""
    preds, ys, masks = [], [], []
    for batch in make_batches(samples, batch_size):
        preds.append(model.predict(batch))
        ys.append(batch["y"])
        masks.append(batch["y_mask"])
    return np.concatenate(preds), np.concatenate(ys), np.concatenate(masks)


def _default_horizons(t_out: int) -> list[int]:
    chosen = [h for h in (3, 6, 12) if h <= t_out]
    return chosen or [t_out]


def _run_traffic_state(cfg: Config, ds: AtomicDataset) -> tuple[dict, dict]:
    state_rows = [d for d in ds.dyna if d.dyna_type == "state"]
    if state_rows:
        layout = "graph"
        records = state_rows
    elif ds.grid:
        layout = "grid"
        records = ds.grid
    elif ds.od:
        layout = "od"
        records = ds.od
    else:
        raise EmptyTable("dataset has no state, grid, or od table to forecast")

    features = ds.manifest.features or tuple(records[0].properties.keys())
    interval = ds.manifest.interval_seconds or _infer_interval(
        [r.time for r in records]
    )
    axis = build_time_axis(records, interval)
    if layout == "graph":
        tensor, mask = dyna_to_graph_tensor(records, ds.geo_order(), axis, features)
    elif layout == "grid":
        shape = (ds.manifest.grid_rows, ds.manifest.grid_cols)
        tensor, mask = grid_to_tensor(records, shape, axis, features)
    else:
        tensor, mask = od_to_tensor(records, ds.geo_order(), axis, features)

    wspec = WindowSpec(int(cfg["input_window"]), int(cfg["output_window"]))
    sspec = SplitSpec(
        float(cfg["train_ratio"]), float(cfg["val_ratio"]), float(cfg["test_ratio"])
    )
    _, n_train = _train_slots(tensor.values.shape[0], sspec)

    scaler = fit_scaler(
        cfg["scaler"], tensor.values[:n_train], mask.values[:n_train]
    )
    values = np.where(mask.values, scaler.apply(tensor.values), 0.0)
    splits = split_windows(values, mask.values, wspec, sspec, axis=axis)

    model_name = cfg["model"]
    if model_name == "HA":
        period = cfg["ha_period"] or max(1, 86400 // interval)
        model: HAModel | VARModel | PersistenceModel = ha_fit(
            values[:n_train], mask.values[:n_train], int(period), start_slot=0
        )
    elif model_name == "VAR":
        model = var_fit(
            values[:n_train],
            mask.values[:n_train],
            int(cfg["var_order"]),
            ridge=float(cfg["var_ridge"]),
            max_dim=int(cfg["var_max_dim"]),
        )
    else:
        model = PersistenceModel()

    mape_floor = cfg["mape_floor"]
    if mape_floor is None:
        mape_floor = 5.0 if layout == "grid" else 0.0
    horizons = cfg["horizons"] or _default_horizons(wspec.t_out)

    metrics: dict = {"layout": layout, "n_samples": {}}
    extras: dict = {}
    batch_size = int(cfg["batch_size"])
    for split in ("val", "test"):
        pred, truth, m = _forecast_arrays(model, splits[split], batch_size)
        pred = scaler.inverse(pred)
        truth = scaler.inverse(truth)
        report = evaluate_forecast(
            np.moveaxis(pred, 1, 0),
            np.moveaxis(truth, 1, 0),
            np.moveaxis(m, 1, 0),
            horizons=[int(h) for h in horizons],
            mape_floor=float(mape_floor),
        )
        metrics[split] = report.to_json()
        metrics["n_samples"][split] = len(splits[split])
        if split == "test":
            extras["predictions"] = (pred, truth, m)
    metrics["n_samples"]["train"] = len(splits["train"])
    return metrics, extras


def _train_slots(T: int, sspec: SplitSpec) -> tuple[int, int]:
    n_val = int(T * sspec.val)
    n_test = int(T * sspec.test)
    return 0, T - n_val - n_test


def _write_predictions(path: Path, pred: np.ndarray, truth: np.ndarray, mask) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample", "horizon", "cell", "y_true", "y_pred", "mask"])
    B, t_out = pred.shape[0], pred.shape[1]
    flat_p = pred.reshape(B, t_out, -1)
    flat_t = truth.reshape(B, t_out, -1)
    flat_m = np.asarray(mask).reshape(B, t_out, -1)
    for b in range(B):
        for h in range(t_out):
            for c in range(flat_p.shape[2]):
                writer.writerow(
                    [
                        b,
                        h + 1,
                        c,
                        repr(float(flat_t[b, h, c])),
                        repr(float(flat_p[b, h, c])),
                        int(flat_m[b, h, c]),
                    ]
                )
    path.write_bytes(gzip.compress(buf.getvalue().encode("utf-8"), mtime=0))


def _run_map_matching(
    cfg: Config, ds: AtomicDataset, ds_dir: Path
) -> tuple[dict, dict]:
    network = build_road_network(
        ds.geo, ds.rel, index_cell_m=float(cfg["match_radius"])
    )
    params = MatchParams(
        sigma_m=float(cfg["match_sigma"]),
        beta_m=float(cfg["match_beta"]),
        radius_m=float(cfg["match_radius"]),
        max_candidates=int(cfg["match_max_candidates"]),
    )
    traj_rows = [d for d in ds.dyna if d.dyna_type == "trajectory"]
    if not traj_rows:
        raise EmptyTable("dataset has no trajectory rows to match")
    trajectories = build_trajectories(traj_rows)

    truth = None
    truth_path = ds_dir / TRUTH_ROUTES_FILE
    if truth_path.is_file():
        truth = json.loads(truth_path.read_text("utf-8"))

    lengths = network.segment_lengths()
    per_traj: dict = {}
    matched_rows = []
    pooled = {"d_true": 0.0, "d_subtracted": 0.0, "d_added": 0.0, "d_correct": 0.0}
    pooled_counts = {"n_correct": 0, "n_true": 0}
    n_points = 0
    n_matched = 0
    n_breaks = 0
    for traj in trajectories:
        result = viterbi_match(network, traj, params)
        n_points += len(traj.points)
        n_matched += sum(1 for m in result.matched if m is not None)
        n_breaks += len(result.breaks)
        for p, m in zip(traj.points, result.matched):
            matched_rows.append(
                {
                    "entity_id": traj.user_id,
                    "time": p.time,
                    "location": m.segment_id if m else None,
                    "properties": dict(p.properties),
                }
            )
        entry: dict = {
            "n_points": len(traj.points),
            "n_breaks": len(result.breaks),
            "route": result.route(),
        }
        if truth is not None and traj.user_id in truth:
            scores = match_metrics(truth[traj.user_id], result.route(), lengths)
            entry["metrics"] = scores
            for key in pooled:
                pooled[key] += scores[key]
            for key in pooled_counts:
                pooled_counts[key] += scores[key]
        per_traj[traj.user_id] = entry

    metrics: dict = {
        "n_trajectories": len(trajectories),
        "n_points": n_points,
        "n_matched_points": n_matched,
        "n_breaks": n_breaks,
        "per_trajectory": per_traj,
    }
    if truth is not None and pooled["d_true"] > 0:
        metrics["aggregate"] = {
            "rmf": (pooled["d_subtracted"] + pooled["d_added"]) / pooled["d_true"],
            "an": pooled_counts["n_correct"] / max(pooled_counts["n_true"], 1),
            "al": pooled["d_correct"] / pooled["d_true"],
            **pooled,
        }
    return metrics, {"matched_rows": matched_rows, "dataset": ds}


def _run_ranking(cfg: Config, ds: AtomicDataset) -> tuple[dict, dict]:
    traj_rows = [d for d in ds.dyna if d.dyna_type == "trajectory"]
    if not traj_rows:
        raise EmptyTable("dataset has no trajectory rows to rank over")
    if all(r.location is None for r in traj_rows):
        raise EmptyTable("ranking needs trajectory rows with location ids")
    trajectories = build_trajectories(traj_rows)
    cut = TrajWindowSpec(cfg["traj_window_mode"], int(cfg["traj_window_size"]))
    pieces = [p for t in trajectories for p in cut_trajectory(t, cut)]
    pieces = filter_trajectories(
        pieces,
        min_points=int(cfg["min_checkins"]),
        min_trajs_per_user=int(cfg["min_trajs_per_user"]),
        min_visits_per_location=int(cfg["min_visits_per_location"]),
    )
    if not pieces:
        raise EmptyTable("filtering removed every trajectory")
    splits = split_per_user(
        pieces,
        SplitSpec(
            float(cfg["ranking_train_ratio"]),
            float(cfg["ranking_val_ratio"]),
            float(cfg["ranking_test_ratio"]),
        ),
    )
    counts: dict[str, int] = {}
    for t in splits["train"]:
        for p in t.points:
            if p.location is not None:
                counts[p.location] = counts.get(p.location, 0) + 1
    if not counts:
        raise EmptyTable("no training visits to rank locations by")
    ranked = [
        loc for loc, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
    k = int(cfg["ranking_k"])

    def cases_of(trajs):
        cases = []
        for t in trajs:
            for p in t.points:
                if p.location is not None:
                    cases.append((p.location, ranked))
        return cases

    metrics: dict = {
        "n_locations_ranked": len(ranked),
        "n_trajectories": {name: len(ts) for name, ts in splits.items()},
    }
    for name in ("val", "test"):
        cases = cases_of(splits[name])
        if not cases:
            raise EmptyTable(f"no {name} cases after the per-user split")
        metrics[name] = ranking_metrics(cases, k)
    return metrics, {}


def cmd_run(cfg: Config) -> RunRecord:
    """Execute one run and persist run.json, metrics.json, and outputs."""
    for key in ("task", "model", "dataset"):
        if not cfg.get(key):
            raise BadConfigFile(f"run needs {key!r} (flag --{key})")
    task, model, dataset = cfg["task"], cfg["model"], cfg["dataset"]
    _check_model_task(model, task)
    seed = int(cfg["seed"])
    ds_dir = resolve_dataset_dir(dataset)
    ds = load_dataset(ds_dir)

    started = time.perf_counter()
    if task == "traffic_state_pred":
        metrics, extras = _run_traffic_state(cfg, ds)
    elif task == "map_matching":
        metrics, extras = _run_map_matching(cfg, ds, ds_dir)
    else:
        metrics, extras = _run_ranking(cfg, ds)
    wall = time.perf_counter() - started

    run_id = _run_id(task, model, dataset, seed, cfg.as_dict())
    out_dir = Path(cfg["output_dir"]) / run_id
    out_dir.mkdir(parents=True, exist_ok=True)

    metrics = jsonify_metrics(metrics)
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    record = RunRecord(
        run_id=run_id,
        task=task,
        model=model,
        dataset=Path(dataset).name,
        seed=seed,
        config=cfg.as_dict(),
        metrics=metrics,
        output_dir=str(out_dir),
        wall_time_s=wall,
    )
    (out_dir / "run.json").write_text(
        json.dumps(
            {
                "run_id": run_id,
                "task": task,
                "model": model,
                "dataset": record.dataset,
                "seed": seed,
                "config": {k: v for k, v in sorted(cfg.as_dict().items())},
                "provenance": {k: v for k, v in sorted(cfg.provenance.items())},
                "wall_time_s": wall,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        "utf-8",
    )
    if "predictions" in extras:
        _write_predictions(out_dir / "predictions.csv.gz", *extras["predictions"])
    if "matched_rows" in extras:
        _write_matched_table(out_dir, extras["dataset"], extras["matched_rows"])
    return record


def _write_matched_table(out_dir: Path, ds: AtomicDataset, rows: list[dict]) -> None:
    from .atomic import DynaRecord, write_table

    records = []
    for n, row in enumerate(rows):
        records.append(
            DynaRecord(
                f"m{n}",
                "trajectory",
                row["time"],
                row["entity_id"],
                row["location"],
                row["properties"],
            )
        )
    (out_dir / f"{ds.manifest.name}_matched.dyna").write_bytes(
        write_table("dyna", records)
    )


def _objective_from(metrics: Mapping, task: str, dotted: str | None) -> float:
    """Pull the tuning objective (smaller is better) out of a metrics dict."""
    if dotted is None:
        if task == "traffic_state_pred":
            dotted = "val.aggregate.mae"
        elif task == "map_matching":
            dotted = "aggregate.rmf"
        else:
            return -float(_dig(metrics, "val.recall_at_k"))
    return float(_dig(metrics, dotted))


def _dig(payload: Mapping, dotted: str):
    node = payload
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            raise BadConfigFile(f"objective path {dotted!r} not found in metrics")
        node = node[part]
    if node is None:
        return math.nan
    return node


def cmd_tune(cfg: Config):
    """Hyper-parameter search around cmd_run; persists one run per trial."""
    if not cfg.get("space_file"):
        raise BadConfigFile("tune needs a search space (flag --space_file)")
    space_path = Path(cfg["space_file"])
    if not space_path.is_file():
        raise BadConfigFile(f"space file {space_path} does not exist")
    try:
        payload = json.loads(space_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise BadConfigFile(f"space file {space_path}: {exc}") from None
    if not isinstance(payload, dict):
        raise BadConfigFile(f"space file {space_path} must hold a JSON object")
    try:
        space = parse_space(payload)
    except ValueError as exc:
        raise BadConfigFile(str(exc)) from None

    alg = str(cfg["search_alg"])
    if alg == "GridSearch":
        candidates = grid_candidates(space)
    elif alg == "RandomSearch":
        candidates = random_candidates(space, int(cfg["n_trials"]), int(cfg["seed"]))
    else:
        raise BadConfigFile(
            f"unknown search_alg {alg!r}; pick GridSearch or RandomSearch"
        )

    tune_root = Path(cfg["output_dir"]) / (
        "tune_" + _run_id(cfg["task"], cfg["model"], cfg["dataset"], int(cfg["seed"]), cfg.as_dict())
    )

    def run_trial(params: Mapping):
        values = dict(cfg.values)
        values.update(params)
        values["output_dir"] = str(tune_root / f"trial_{run_trial.counter:03d}")
        provenance = dict(cfg.provenance)
        for key in params:
            provenance[key] = "search"
        run_trial.counter += 1
        record = cmd_run(Config(values=values, provenance=provenance))
        objective = _objective_from(record.metrics, cfg["task"], cfg.get("objective"))
        return record, objective

    run_trial.counter = 0
    result = run_search(candidates, run_trial)
    best = result.best
    tune_root.mkdir(parents=True, exist_ok=True)
    (tune_root / "search.json").write_text(
        json.dumps(
            {
                "algorithm": alg,
                "n_trials": len(result.trials),
                "best_trial": best.index,
                "best_params": best.params,
                "best_objective": best.objective,
                "trials": [
                    {
                        "index": t.index,
                        "params": t.params,
                        "objective": t.objective,
                        "run_id": t.record.run_id,
                        "output_dir": t.record.output_dir,
                    }
                    for t in result.trials
                ],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        "utf-8",
    )
    return result


def cmd_validate(cfg: Config):
    """Validate a dataset directory; returns the report."""
    ds_dir = resolve_dataset_dir(cfg.get("dataset"))
    ds = load_dataset(ds_dir, validate=False)
    return validate_dataset(ds)


def cmd_convert(cfg: Config) -> Path:
    """Convert a raw flat CSV (at --dataset) using the config's mapping.

    The config file must hold a ``conversion`` object understood by
    RawConversionSpec; the result is written under output_dir.
    """
    raw_path = Path(cfg.get("dataset") or "")
    if not raw_path.is_file():
        raise DatasetNotFound(f"raw csv {raw_path} does not exist")
    mapping = cfg.get("conversion")
    if not isinstance(mapping, Mapping):
        raise BadConfigFile(
            "convert needs a 'conversion' object in the config file"
        )
    try:
        conv = RawConversionSpec.from_json(mapping)
    except KeyError as exc:
        raise BadConfigFile(f"conversion mapping lacks {exc}") from None
    ds = convert_raw_csv(conv, raw_path.read_bytes())
    out = Path(cfg["output_dir"]) / ds.manifest.name
    save_dataset(ds, out)
    return out


def cmd_stats(cfg: Config) -> dict:
    """Row counts and coverage for a dataset directory."""
    ds_dir = resolve_dataset_dir(cfg.get("dataset"))
    ds = load_dataset(ds_dir, validate=False)
    return dataset_stats(ds)
