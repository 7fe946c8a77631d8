"""Batch front end: dataset -> measure -> algorithm -> evaluation over a parameter grid.

Usage::

    kahc --dataset wine --measure ik --algo ahc-single --seed 0 --out runs/wine-ik

Writes ``grid.csv`` (one row per grid cell) and ``summary.json`` (best cell by
dendrogram purity and best cell by F1) to the output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ahc import LINKAGES, Dendrogram, build_dendrogram, extract_k
from .dataio import DatasetError, LabeledDataset, load_csv, load_named, minmax_normalize
from .evaluation import EvaluationReport, dendrogram_purity, entanglements, f1_flat
from .kernels import Measure, similarity_matrix
from .variants import gdl_cluster, hdbscan_flat, hdbscan_tree, pha_cluster

MEASURES = ("dist", "gk", "agk", "ik")
ALGORITHMS = tuple(f"ahc-{k}" for k in LINKAGES) + ("hdbscan", "pha", "gdl")

MEASURE_KEYS = {"dist": (), "gk": ("m",), "agk": ("agk_k",), "ik": ("psi", "t")}
ALGO_KEYS = {"hdbscan": ("c", "l"), "pha": ("s", "kappa"), "gdl": ("gdl_k", "kappa")}
ALGO_KEYS.update({f"ahc-{k}": ("kappa",) for k in LINKAGES})

PHA_SCALES = (5, 10, 15, 20, 25, 30)
GDL_NEIGHBOURS = (5, 10, 15, 20, 25, 30, 70, 100)
IK_T = 200

GRID_FIELDS = ("cell", "measure", "algo", "params", "seed", "dendrogram_purity",
               "entanglement_count", "entanglement_avg_level", "f1", "precision", "recall",
               "warning", "error")


class UnsupportedOperation(NotImplementedError):
    """The requested output does not exist for this algorithm."""


@dataclass(frozen=True)
class ExperimentSpec:
    """One batch run. ``grid`` overrides individual default grid keys."""

    dataset: str
    measure: str
    algorithm: str
    label_col: Optional[int] = None
    grid: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: Optional[str] = None
    exhaustive_grid: bool = False
    strict: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}; choose from {MEASURES}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        allowed = set(MEASURE_KEYS[self.measure]) | set(ALGO_KEYS[self.algorithm])
        if self.measure == "gk":
            allowed.add("sigma")
        unknown = set(self.grid) - allowed
        if unknown:
            raise ValueError(f"grid keys {sorted(unknown)} do not apply to "
                             f"{self.measure}/{self.algorithm}")


@dataclass
class ExperimentResult:
    rows: list
    best_purity: Optional[EvaluationReport]
    best_f1: Optional[EvaluationReport]
    errors: int

    @property
    def cells(self) -> int:
        return len(self.rows)


# --- grids ----------------------------------------------------------------------

def geometric_range(lo: int, hi: int) -> tuple[int, ...]:
    """Powers of two inside ``[lo, hi]`` plus both endpoints."""
    if hi < lo:
        return ()
    vals = {lo, hi}
    p = 1
    while p <= hi:
        if p >= lo:
            vals.add(p)
        p *= 2
    return tuple(sorted(vals))


def default_grid(measure: str, algorithm: str, n: int, kappa: int,
                 exhaustive: bool = False) -> dict:
    """Search ranges per parameter, clipped to what an ``n``-point dataset allows."""
    half = math.ceil(n / 2)
    grid: dict = {}
    if measure == "gk":
        grid["m"] = tuple(range(-5, 6))
    elif measure == "agk":
        grid["agk_k"] = tuple(range(2, min(half, n - 1) + 1))
    elif measure == "ik":
        hi = min(half, n)
        grid["psi"] = tuple(range(2, hi + 1)) if exhaustive else geometric_range(2, hi)
        grid["t"] = (IK_T,)
    target = kappa if kappa >= 1 else 2
    if algorithm.startswith("ahc-"):
        grid["kappa"] = tuple(range(2, min(30, n) + 1))
    elif algorithm == "hdbscan":
        grid["c"] = tuple(range(2, min(100, n - 1) + 1))
        grid["l"] = tuple(range(2, min(100, n) + 1))
    elif algorithm == "pha":
        grid["s"] = PHA_SCALES
        grid["kappa"] = (target,)
    elif algorithm == "gdl":
        grid["gdl_k"] = tuple(k for k in GDL_NEIGHBOURS if k < n)
        grid["kappa"] = (target,)
    return grid


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_grid(text: str) -> dict:
    """Parse ``key=lo..hi`` (inclusive integer range) or ``key=v1/v2/...`` items, comma-separated."""
    out: dict = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in item:
            raise ValueError(f"grid item {item!r} is not key=values")
        key, val = (s.strip() for s in item.split("=", 1))
        if ".." in val:
            lo, hi = val.split("..", 1)
            values = tuple(range(int(lo), int(hi) + 1))
        else:
            values = tuple(_number(v) for v in val.split("/"))
        if not values:
            raise ValueError(f"empty range for {key!r}")
        if len(set(values)) != len(values):
            raise ValueError(f"duplicate values for {key!r}")
        out[key] = values
    return out


def resolve_grid(spec: ExperimentSpec, ds: LabeledDataset) -> tuple[list[dict], list[dict]]:
    """Measure cells and algorithm cells, each a list of parameter dicts in grid order."""
    grid = default_grid(spec.measure, spec.algorithm, ds.n, ds.kappa, spec.exhaustive_grid)
    overrides = dict(spec.grid)
    if "sigma" in overrides:
        grid.pop("m", None)
        grid["sigma"] = overrides.pop("sigma")
    grid.update(overrides)
    mkeys = [k for k in grid if k in MEASURE_KEYS[spec.measure] or k == "sigma"]
    akeys = [k for k in grid if k in ALGO_KEYS[spec.algorithm]]
    mcells = [dict(zip(mkeys, v)) for v in itertools.product(*(grid[k] for k in mkeys))]
    acells = [dict(zip(akeys, v)) for v in itertools.product(*(grid[k] for k in akeys))]
    return mcells, acells


def cell_seed(master: int, params: dict) -> int:
    """Seed for one measure cell, keyed by its parameters so any sub-grid reproduces it."""
    key = zlib.crc32(_fmt_params(params).encode("utf-8"))
    return int(np.random.SeedSequence(master, spawn_key=(key,)).generate_state(1)[0])


def build_measure(name: str, params: dict, seed: int) -> Measure:
    if name == "gk":
        sigma = params["sigma"] if "sigma" in params else 2.0 ** params["m"]
        return Measure("gk", sigma=float(sigma))
    if name == "agk":
        return Measure("agk", k=int(params["agk_k"]))
    if name == "ik":
        return Measure("ik", psi=int(params["psi"]), t=int(params.get("t", IK_T)), seed=seed)
    return Measure("dist")


# --- evaluation of one measure cell ----------------------------------------------

def _fmt_params(params: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in params.items())


def _row(index, tag, algo, params, seed, purity=None, ent=None, f1=None,
         precision=(), recall=(), warning="", error="") -> dict:
    return {
        "cell": index, "measure": tag, "algo": algo, "params": dict(params), "seed": seed,
        "dendrogram_purity": purity,
        "entanglement_count": ent.count if ent else None,
        "entanglement_avg_level": ent.avg_level if ent else None,
        "f1": f1, "precision": [float(v) for v in precision],
        "recall": [float(v) for v in recall],
        "warning": warning or "", "error": error or "",
        "_ent": ent,
    }


def _evaluate_measure_cell(ds: LabeledDataset, measure: str, algorithm: str, mparams: dict,
                           acells: list, seed: int, first: int) -> list[dict]:
    labels = ds.labels
    uses_seed = measure == "ik"
    row_seed = seed if uses_seed else None
    try:
        m = build_measure(measure, mparams, seed)
        tag = m.tag
        M = similarity_matrix(m, ds.points)
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        tag = measure
        return [_row(first + j, tag, algorithm, {**mparams, **a}, row_seed, error=_err(exc))
                for j, a in enumerate(acells)]

    trees: dict = {}

    def tree_for(key, make):
        if key not in trees:
            try:
                T = make()
                trees[key] = (T, dendrogram_purity(T, labels), entanglements(T, labels), None)
            except Exception as exc:  # noqa: BLE001
                trees[key] = (None, None, None, _err(exc))
        return trees[key]

    rows = []
    for j, a in enumerate(acells):
        params = {**mparams, **a}
        idx = first + j
        try:
            T = purity = ent = None
            warning = ""
            if algorithm.startswith("ahc-"):
                T, purity, ent, err = tree_for("ahc", lambda: build_dendrogram(M, algorithm[4:]))
                if err:
                    raise RuntimeError(err)
                flat = extract_k(T, int(a["kappa"]))
            elif algorithm == "hdbscan":
                c = int(a["c"])
                T, purity, ent, err = tree_for(("c", c), lambda: hdbscan_tree(M, c))
                if err:
                    raise RuntimeError(err)
                flat = hdbscan_flat(T, int(a["l"]))
            elif algorithm == "pha":
                s = float(a["s"])
                T, purity, ent, err = tree_for(("s", s), lambda: pha_cluster(M, s, 1)[0])
                if err:
                    raise RuntimeError(err)
                flat = extract_k(T, int(a["kappa"]))
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    flat = gdl_cluster(M, int(a["gdl_k"]), target=int(a["kappa"]))
                warning = flat.warning or ""
            f1, precision, recall = f1_flat(flat, labels)
            rows.append(_row(idx, tag, algorithm, params, row_seed, purity, ent, f1,
                             precision, recall, warning))
        except Exception as exc:  # noqa: BLE001
            rows.append(_row(idx, tag, algorithm, params, row_seed, error=_err(exc)))
    return rows


def _err(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def _job(args):
    return _evaluate_measure_cell(*args)


# --- experiment ---------------------------------------------------------------------

def load_dataset(dataset: str, label_col: Optional[int] = None) -> LabeledDataset:
    """A CSV path (needs ``label_col``) or a named benchmark; always min-max normalised."""
    path = Path(dataset)
    if path.suffix == ".csv" or path.exists():
        if label_col is None:
            raise DatasetError("evaluation needs ground truth: pass --label-col")
        return minmax_normalize(load_csv(path, label_column=label_col))
    return load_named(dataset)


def _report(row: dict) -> EvaluationReport:
    return EvaluationReport(row["dendrogram_purity"], row["_ent"], row["f1"],
                            row["precision"], row["recall"], row["measure"], row["params"])


def _best(rows: list, key: str) -> Optional[dict]:
    best = None
    for r in rows:
        v = r[key]
        if v is None or r["error"]:
            continue
        if best is None or v > best[key]:
            best = r
    return best


def run_experiment(spec: ExperimentSpec, ds: Optional[LabeledDataset] = None) -> ExperimentResult:
    """Evaluate every grid cell; write ``grid.csv`` and ``summary.json`` if ``spec.out_dir`` is set."""
    if ds is None:
        ds = load_dataset(spec.dataset, spec.label_col)
    if ds.labels is None:
        raise DatasetError("evaluation needs ground-truth labels")
    mcells, acells = resolve_grid(spec, ds)
    jobs = [(ds, spec.measure, spec.algorithm, mp, acells, cell_seed(spec.seed, mp), i * len(acells))
            for i, mp in enumerate(mcells)]
    rows: list = []
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            for chunk in pool.map(_job, jobs):
                rows.extend(chunk)
    else:
        for job in jobs:
            rows.extend(_job(job))

    best_p = _best(rows, "dendrogram_purity")
    best_f = _best(rows, "f1")
    errors = sum(1 for r in rows if r["error"])
    result = ExperimentResult(rows, _report(best_p) if best_p else None,
                              _report(best_f) if best_f else None, errors)
    if spec.out_dir:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.csv").write_text(grid_csv(rows), encoding="utf-8")
        summary = {
            "dataset": ds.name, "n": ds.n, "kappa": ds.kappa,
            "measure": spec.measure, "algorithm": spec.algorithm, "seed": spec.seed,
            "cells": len(rows), "errors": errors,
            "best_by_purity": _public(best_p), "best_by_f1": _public(best_f),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return result


def _public(row: Optional[dict]) -> Optional[dict]:
    if row is None:
        return None
    return {k: row[k] for k in GRID_FIELDS}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, dict):
        return _fmt_params(v)
    if isinstance(v, list):
        return ";".join(repr(float(x)) for x in v)
    return str(v)


def grid_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_FIELDS)
    for r in rows:
        w.writerow([_cell(r[k]) for k in GRID_FIELDS])
    return buf.getvalue()


# --- dendrogram export --------------------------------------------------------------

def cell_dendrogram(spec: ExperimentSpec, ds: LabeledDataset, params: dict, seed: int) -> Dendrogram:
    if spec.algorithm == "gdl":
        raise UnsupportedOperation("GDL does not produce a dendrogram")
    M = similarity_matrix(build_measure(spec.measure, params, seed), ds.points)
    if spec.algorithm.startswith("ahc-"):
        return build_dendrogram(M, spec.algorithm[4:])
    if spec.algorithm == "hdbscan":
        return hdbscan_tree(M, int(params["c"]))
    return pha_cluster(M, float(params["s"]), 1)[0]


def height_profile(T: Dendrogram) -> str:
    return "step,height\n" + "".join(f"{s},{h!r}\n" for _, _, h, s in T.merges)


def emit_dendrogram(spec: ExperimentSpec, params: dict, seed: int, out_dir,
                    ds: Optional[LabeledDataset] = None, stem: str = "dendrogram") -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (merge list) and ``<stem>_profile.csv`` (step, height)."""
    if spec.algorithm == "gdl":
        raise UnsupportedOperation("GDL does not produce a dendrogram")
    if ds is None:
        ds = load_dataset(spec.dataset, spec.label_col)
    T = cell_dendrogram(spec, ds, params, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tree_path = out / f"{stem}.txt"
    prof_path = out / f"{stem}_profile.csv"
    tree_path.write_text(T.to_text(), encoding="utf-8")
    prof_path.write_text(height_profile(T), encoding="utf-8")
    return tree_path, prof_path


# --- command line ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kahc", description=__doc__.split("\n\n")[0])
    p.add_argument("--dataset", required=True,
                   help="CSV path or a named dataset (wine, seeds, thyroid, banknote)")
    p.add_argument("--label-col", type=int, default=None,
                   help="label column of a CSV dataset (negative counts from the end)")
    p.add_argument("--measure", required=True, choices=MEASURES)
    p.add_argument("--algo", required=True, choices=ALGORITHMS)
    p.add_argument("--grid", action="append", default=[],
                   help="override grid keys, e.g. 'psi=2..64,kappa=3' or 's=5/10'; repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--exhaustive-grid", action="store_true",
                   help="search every integer psi instead of the geometric subset")
    p.add_argument("--strict", action="store_true", help="exit non-zero if any cell failed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--emit-best", action="store_true",
                   help="also write the dendrogram and height profile of the best-purity cell")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        grid: dict = {}
        for g in args.grid:
            grid.update(parse_grid(g))
        spec = ExperimentSpec(args.dataset, args.measure, args.algo, args.label_col, grid,
                              args.seed, args.out, args.exhaustive_grid, args.strict, args.workers)
        ds = load_dataset(spec.dataset, spec.label_col)
        result = run_experiment(spec, ds)
    except (ValueError, FileNotFoundError) as exc:
        print(f"kahc: error: {exc}", file=sys.stderr)
        return 2
    bp, bf = result.best_purity, result.best_f1
    print(f"{result.cells} cells, {result.errors} errors")
    if bp is not None:
        print(f"best purity {bp.dendrogram_purity:.4f} at {_fmt_params(bp.params)}")
    if bf is not None:
        print(f"best F1     {bf.f1:.4f} at {_fmt_params(bf.params)}")
    if args.emit_best and spec.algorithm != "gdl":
        best = _best(result.rows, "dendrogram_purity")
        if best is not None:
            seed = best["seed"] if best["seed"] is not None else 0
            emit_dendrogram(spec, best["params"], seed, args.out, ds, "best_dendrogram")
    if args.strict and result.errors:
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
