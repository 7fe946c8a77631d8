import json

import numpy as np
import pytest

from kahc.ahc import Dendrogram
from kahc.cli import (ALGORITHMS, MEASURES, ExperimentSpec, UnsupportedOperation, cell_seed,
                      default_grid, emit_dendrogram, geometric_range, grid_csv, main, parse_grid,
                      resolve_grid, run_experiment)
from kahc.dataio import LabeledDataset, four_density_blobs


@pytest.fixture
def blobs_csv(tmp_path):
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal(0, 0.3, (15, 2)), rng.normal(4, 0.3, (15, 2))])
    y = np.repeat(["a", "b"], 15)
    path = tmp_path / "blobs.csv"
    path.write_text("".join(f"{float(p[0])!r},{float(p[1])!r},{c}\n" for p, c in zip(X, y)))
    return path


def spec(path, measure="dist", algo="ahc-single", **kw):
    return ExperimentSpec(str(path), measure, algo, label_col=2, **kw)


# --- grids ------------------------------------------------------------------------

def test_parse_grid():
    assert parse_grid("psi=2..5, s=5/10") == {"psi": (2, 3, 4, 5), "s": (5, 10)}
    assert parse_grid("sigma=0.5/1.5") == {"sigma": (0.5, 1.5)}
    for bad in ("psi", "psi=5..2", "s=5/5"):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_geometric_range():
    assert geometric_range(2, 89) == (2, 4, 8, 16, 32, 64, 89)
    assert geometric_range(2, 2) == (2,)


@pytest.mark.parametrize("measure", MEASURES)
@pytest.mark.parametrize("algo", ALGORITHMS)
def test_default_grids_follow_search_ranges(measure, algo):
    n, kappa = 178, 3
    g = default_grid(measure, algo, n, kappa)
    for values in g.values():
        assert len(set(values)) == len(values)
    if measure == "gk":
        assert g["m"] == tuple(range(-5, 6))
    if measure == "agk":
        assert g["agk_k"] == tuple(range(2, 90))
    if measure == "ik":
        assert g["psi"][0] == 2 and g["psi"][-1] == 89 and g["t"] == (200,)
        assert default_grid(measure, algo, n, kappa, exhaustive=True)["psi"] == tuple(range(2, 90))
    if algo.startswith("ahc-"):
        assert g["kappa"] == tuple(range(2, 31))
    if algo == "hdbscan":
        assert g["c"] == tuple(range(2, 101)) and g["l"] == tuple(range(2, 101))
    if algo == "pha":
        assert g["s"] == (5, 10, 15, 20, 25, 30)
    if algo == "gdl":
        assert g["gdl_k"] == (5, 10, 15, 20, 25, 30, 70, 100)


def test_grid_cells_are_duplicate_free():
    ds = LabeledDataset(np.random.default_rng(0).random((40, 2)), np.repeat([1, 2], 20))
    mcells, acells = resolve_grid(ExperimentSpec("x", "ik", "hdbscan"), ds)
    assert len({tuple(c.items()) for c in mcells}) == len(mcells)
    assert len({tuple(c.items()) for c in acells}) == len(acells) == 38 * 39


def test_spec_rejects_foreign_keys():
    with pytest.raises(ValueError):
        ExperimentSpec("x", "dist", "ahc-single", grid={"psi": (2,)})
    with pytest.raises(ValueError):
        ExperimentSpec("x", "cosine", "ahc-single")
    ExperimentSpec("x", "gk", "pha", grid={"sigma": (0.5,), "s": (5,)})


def test_cell_seeds_are_stable_and_distinct():
    assert cell_seed(3, {"psi": 4, "t": 200}) == cell_seed(3, {"psi": 4, "t": 200})
    assert len({cell_seed(3, {"psi": p, "t": 200}) for p in range(2, 52)}) == 50
    assert cell_seed(3, {"psi": 4}) != cell_seed(4, {"psi": 4})


# --- runs -------------------------------------------------------------------------

def test_run_writes_grid_and_summary(blobs_csv, tmp_path):
    out = tmp_path / "run"
    res = run_experiment(spec(blobs_csv, grid={"kappa": (2, 3)}, out_dir=str(out)))
    assert res.cells == 2 and res.errors == 0
    assert res.best_purity.dendrogram_purity == 1.0 and res.best_f1.f1 == 1.0
    lines = (out / "grid.csv").read_text().splitlines()
    assert lines[0].startswith("cell,measure,algo,params,seed,dendrogram_purity")
    assert len(lines) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["best_by_f1"]["params"] == {"kappa": 2}
    assert summary["cells"] == 2


def test_best_cell_ties_go_to_first_grid_order(blobs_csv):
    res = run_experiment(spec(blobs_csv, "gk", grid={"m": (-1, 0, 1), "kappa": (2,)}))
    # single linkage is invariant to sigma, so all three cells tie
    assert res.best_purity.params == {"m": -1, "kappa": 2}


def test_fixed_seed_rerun_is_byte_identical(blobs_csv, tmp_path):
    s = dict(grid={"psi": (2, 4, 8), "t": (50,), "kappa": (2, 3)}, seed=11)
    run_experiment(spec(blobs_csv, "ik", out_dir=str(tmp_path / "a"), **s))
    run_experiment(spec(blobs_csv, "ik", out_dir=str(tmp_path / "b"), **s))
    assert (tmp_path / "a" / "grid.csv").read_bytes() == (tmp_path / "b" / "grid.csv").read_bytes()
    other = run_experiment(spec(blobs_csv, "ik", **{**s, "seed": 12}))
    assert grid_csv(other.rows) != (tmp_path / "a" / "grid.csv").read_text()


def test_partial_rerun_matches_full_run(blobs_csv):
    full = run_experiment(spec(blobs_csv, "ik", grid={"psi": (2, 4, 8), "t": (30,), "kappa": (2, 3)}))
    part = run_experiment(spec(blobs_csv, "ik", grid={"psi": (8,), "t": (30,), "kappa": (3,)}))
    strip = ("cell", "_ent")
    want = {k: v for k, v in full.rows[5].items() if k not in strip}
    assert {k: v for k, v in part.rows[0].items() if k not in strip} == want


def test_worker_pool_matches_serial(blobs_csv):
    s = dict(grid={"psi": (2, 4), "t": (30,), "kappa": (2, 3)}, seed=5)
    a = run_experiment(spec(blobs_csv, "ik", **s))
    b = run_experiment(spec(blobs_csv, "ik", workers=2, **s))
    assert grid_csv(a.rows) == grid_csv(b.rows)


@pytest.mark.parametrize("algo, grid", [
    ("hdbscan", {"c": (2, 3), "l": (3, 5)}),
    ("pha", {"s": (5, 10)}),
    ("gdl", {"gdl_k": (5, 10)}),
    ("ahc-average", {"kappa": (2,)}),
])
def test_every_algorithm_runs(blobs_csv, algo, grid):
    res = run_experiment(spec(blobs_csv, "agk", algo, grid={"agk_k": (3,), **grid}))
    assert res.errors == 0 and res.best_f1.f1 == 1.0
    if algo == "gdl":
        assert all(r["dendrogram_purity"] is None for r in res.rows)


def test_failed_cells_are_recorded(blobs_csv, tmp_path):
    res = run_experiment(spec(blobs_csv, "agk", grid={"agk_k": (3, 40), "kappa": (2,)}))
    assert res.errors == 1 and res.cells == 2
    bad = [r for r in res.rows if r["error"]][0]
    assert "ValueError" in bad["error"] and bad["params"]["agk_k"] == 40
    args = ["--dataset", str(blobs_csv), "--label-col", "2", "--measure", "agk", "--algo", "ahc-single",
            "--grid", "agk_k=3/40,kappa=2", "--out", str(tmp_path / "o")]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 1


def test_main_argument_errors(blobs_csv, tmp_path, capsys):
    base = ["--measure", "dist", "--algo", "ahc-single", "--out", str(tmp_path / "o")]
    assert main(["--dataset", str(blobs_csv)] + base) == 2
    assert main(["--dataset", "seeds"] + base) in (0, 2)
    assert main(["--dataset", str(blobs_csv), "--label-col", "2", "--grid", "psi=2"] + base) == 2
    assert "error" in capsys.readouterr().err


def test_main_emit_best(blobs_csv, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["--dataset", str(blobs_csv), "--label-col", "2", "--measure", "ik", "--algo",
                 "ahc-single", "--grid", "psi=4,t=20,kappa=2", "--out", str(out), "--emit-best"]) == 0
    assert "best purity" in capsys.readouterr().out
    T = Dendrogram.from_text((out / "best_dendrogram.txt").read_text())
    assert T.n == 30


# --- dendrogram export -------------------------------------------------------------

def test_emit_dendrogram_two_points(tmp_path):
    ds = LabeledDataset(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([1, 2]))
    s = ExperimentSpec("toy", "dist", "ahc-single")
    tree, prof = emit_dendrogram(s, {}, 0, tmp_path, ds)
    assert tree.read_text().splitlines()[1:] == [f"1,1,2,{2 ** 0.5!r}"]
    assert prof.read_text().splitlines() == ["step,height", f"1,{2 ** 0.5!r}"]


def test_emit_dendrogram_rerun_identical(blobs_csv, tmp_path):
    s = spec(blobs_csv, "ik", "hdbscan")
    a = emit_dendrogram(s, {"psi": 4, "t": 50, "c": 3}, 9, tmp_path / "a")
    b = emit_dendrogram(s, {"psi": 4, "t": 50, "c": 3}, 9, tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_emit_dendrogram_gdl_unsupported(blobs_csv, tmp_path):
    with pytest.raises(UnsupportedOperation):
        emit_dendrogram(spec(blobs_csv, "dist", "gdl"), {"gdl_k": 5}, 0, tmp_path)


def profile_cv(path):
    h = np.loadtxt(path, delimiter=",", skiprows=1)[:, 1]
    d = 1.0 - h  # similarity heights as dissimilarities, so the CV does not depend on a kernel's offset
    return d.std() / d.mean()


def test_ik_height_profile_flatter_than_gk(tmp_path):
    ds = four_density_blobs(0, n_dense=150, n_sparse=100)
    ik = ExperimentSpec("four", "ik", "ahc-single")
    gk = ExperimentSpec("four", "gk", "ahc-single")
    _, p = emit_dendrogram(ik, {"psi": 16, "t": 200}, 0, tmp_path, ds, stem="ik")
    ik_cv = profile_cv(p)
    for m in range(-5, 6):
        _, p = emit_dendrogram(gk, {"m": m}, 0, tmp_path, ds, stem=f"gk{m}")
        assert ik_cv < profile_cv(p)
