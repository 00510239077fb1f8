import csv
import json
import math

import numpy as np
import pytest

from fullflow import cli
from fullflow.flowio import read_flo, write_flo, write_image
from fullflow.grid import GridRanges, ManifestError, load_manifest
from fullflow.model import FlowField, Image, SolverConfig
from fullflow.pipeline import PipelineError, estimate_flow
from fullflow.synthetic import texture, translated_pair

FAST = ["--scale", "1", "--radius", "3", "--quiet"]


@pytest.fixture
def pair(tmp_path):
    I1, I2, gt = translated_pair(40, 56, 2, -1, noise=0.01, seed=3)
    write_image(I1, tmp_path / "a.png")
    write_image(I2, tmp_path / "b.ppm")
    write_flo(gt, tmp_path / "gt.flo")
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


# ------------------------------------------------------------ pipeline

def test_static_pair_decodes_to_zero():
    I = Image(texture(48, 64, np.random.default_rng(0)))
    res = estimate_flow(I, I, SolverConfig(radius=8, scale=1))
    f = res.forward.flow
    inner = (slice(6, -6), slice(6, -6))
    ok = (f.u[inner] == 0) & (f.v[inner] == 0)
    assert ok.mean() >= 0.99


def test_shift_recovered_before_interpolation():
    I1, I2, _ = translated_pair(64, 80, 5, -3, noise=0.05, seed=1)
    res = estimate_flow(I1, I2, SolverConfig(radius=8, scale=1))
    f = res.forward.flow
    inner = (slice(6, -6), slice(6, -6))
    assert ((f.u[inner] == 5) & (f.v[inner] == -3)).mean() >= 0.95
    assert math.isfinite(res.forward.lower_bound) and math.isfinite(res.backward.lower_bound)


def test_pipeline_stage_attribution():
    I = Image(np.zeros((4, 4, 3)))
    J = Image(np.zeros((4, 5, 3)))
    with pytest.raises(PipelineError) as ei:
        estimate_flow(I, J, SolverConfig(radius=1, scale=1))
    assert ei.value.stage == "input"
    with pytest.raises(PipelineError) as ei:
        estimate_flow(I, I, SolverConfig(radius=8, scale=1, memory_cap_gb=1e-8))
    assert ei.value.stage == "cost_volume"


# ------------------------------------------------------------ flow command

def test_flow_outputs(pair, capsys):
    out = pair / "out"
    assert run("flow", pair / "a.png", pair / "b.ppm", "--gt", pair / "gt.flo", "--out", out, *FAST) == 0
    for name in ("out.flo", "flow.png", "error.png", "matches.txt", "manifest.json", "metrics.csv"):
        assert (out / name).exists(), name
    err = capsys.readouterr().err
    assert "cost volume:" in err and "messages:" in err

    flow = read_flo(out / "out.flo")
    gt = read_flo(pair / "gt.flo")
    with open(out / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    epe = np.hypot(flow.u - gt.u, flow.v - gt.v)
    assert float(row["epe_all"]) == pytest.approx(epe.mean(), abs=1e-6)
    assert float(row["epe_all"]) < 0.5

    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["radius"] == 3 and man["config"]["tau"] == "inf"
    assert [it for it, _ in man["iterations"]["forward"]] == [1, 2, 3]
    assert man["memory"]["cost_volume_bytes"] == 40 * 56 * 49 * 4
    assert man["memory"]["message_bytes"] == 4 * 40 * 56 * 49 * 4
    assert {"cost_volume", "trws_forward", "trws_backward", "consistency"} <= set(man["timings"])


def test_flow_without_gt_skips_metrics(pair):
    out = pair / "o2"
    assert run("flow", pair / "a.png", pair / "b.ppm", "--out", out, *FAST) == 0
    assert not (out / "metrics.csv").exists() and not (out / "error.png").exists()
    assert (out / "out.flo").exists()


def test_rerun_from_manifest_is_bit_identical(pair):
    out1, out2 = pair / "r1", pair / "r2"
    assert run("flow", pair / "a.png", pair / "b.ppm", "--out", out1, "--penalty", "charbonnier",
               "--tau", "4", "--lambda", "0.5", *FAST) == 0
    cfg = SolverConfig.from_dict(json.loads((out1 / "manifest.json").read_text())["config"])
    args = ["flow", pair / "a.png", pair / "b.ppm", "--out", out2, "--quiet",
            "--lambda", cfg.lam, "--tau", cfg.tau, "--beta", cfg.beta, "--zeta", cfg.zeta,
            "--delta", cfg.delta, "--radius", cfg.radius, "--iterations", cfg.iterations,
            "--penalty", cfg.penalty.kind, "--charbonnier-eps", cfg.penalty.eps,
            "--patch-radius", cfg.patch_radius, "--scale", cfg.scale, "--data-term", cfg.data_term]
    assert run(*args) == 0
    assert (out1 / "out.flo").read_bytes() == (out2 / "out.flo").read_bytes()


def test_thread_counts_give_same_flo(pair):
    outs = []
    for t in (1, 2):
        out = pair / f"t{t}"
        assert run("flow", pair / "a.png", pair / "b.ppm", "--out", out, "--threads", t, *FAST) == 0
        outs.append(read_flo(out / "out.flo"))
    assert np.max(np.abs(outs[0].u - outs[1].u)) <= 1e-6
    assert np.max(np.abs(outs[0].v - outs[1].v)) <= 1e-6


def test_threads_env_default(pair, monkeypatch):
    monkeypatch.setenv("FULLFLOW_THREADS", "2")
    out = pair / "env"
    assert run("flow", pair / "a.png", pair / "b.ppm", "--out", out, *FAST) == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["threads"] == 2
    monkeypatch.setenv("FULLFLOW_THREADS", "many")
    assert run("flow", pair / "a.png", pair / "b.ppm", "--out", out, *FAST) == cli.EXIT_USAGE


# ------------------------------------------------------------ exit codes

@pytest.mark.parametrize("extra", [["--bogus"], ["--tau", "abc"], ["--tau", "-1"], ["--lambda", "-2"],
                                   ["--penalty", "huber"], ["--data-term", "sad"], ["--iterations", "0"]])
def test_usage_errors(pair, extra):
    assert run("flow", pair / "a.png", pair / "b.ppm", "--out", pair / "u", *extra) == cli.EXIT_USAGE


def test_no_command_is_usage_error():
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["--help"]) == cli.EXIT_OK


def test_input_errors(pair, tmp_path):
    assert run("flow", pair / "a.png", pair / "missing.png", "--out", pair / "x") == cli.EXIT_INPUT
    write_image(Image(np.zeros((5, 5, 3))), tmp_path / "small.png")
    assert run("flow", pair / "a.png", tmp_path / "small.png", "--out", pair / "x") == cli.EXIT_INPUT
    write_flo(FlowField.constant(3, 3, 0, 0), tmp_path / "g3.flo")
    assert run("flow", pair / "a.png", pair / "b.ppm", "--gt", tmp_path / "g3.flo", "--out", pair / "x") == cli.EXIT_INPUT
    (tmp_path / "junk.flo").write_bytes(b"nope")
    assert run("flow", pair / "a.png", pair / "b.ppm", "--gt", tmp_path / "junk.flo", "--out", pair / "x") == cli.EXIT_INPUT


def test_memory_cap_exit(pair, capsys):
    code = run("flow", pair / "a.png", pair / "b.ppm", "--out", pair / "m", "--memory-cap-gb", "0.0001")
    assert code == cli.EXIT_MEMORY
    assert "bytes" in capsys.readouterr().err
    assert not (pair / "m").exists()  # refused before anything was allocated or written


def test_internal_error_exit(pair, monkeypatch, capsys):
    def boom(*a, **k):
        raise PipelineError("trws_forward", AssertionError("invariant"))
    monkeypatch.setattr(cli, "estimate_flow", boom)
    assert run("flow", pair / "a.png", pair / "b.ppm", "--out", pair / "i", *FAST) == cli.EXIT_INTERNAL
    assert "trws_forward" in capsys.readouterr().err


# ------------------------------------------------------------ grid

def test_grid_ranges_parsing(tmp_path):
    r = GridRanges()
    assert r.lam == (0.25, 0.5, 1, 2, 4) and r.tau[-1] == math.inf and r.delta == (1, 2, 4)
    assert r.taus(False) == (math.inf,) and r.taus(True) == (2, 5, 10)
    (tmp_path / "r.json").write_text(json.dumps({"lambda": [1], "tau": ["inf", 3]}))
    r = GridRanges.load(tmp_path / "r.json")
    assert r.lam == (1.0,) and r.tau == (math.inf, 3.0) and r.beta == (0.05, 0.1, 0.2)
    with pytest.raises(ValueError):
        GridRanges.from_dict({"gamma": [1]})
    with pytest.raises(ValueError):
        GridRanges.from_dict({"tau": ["inf"]}).taus(True)


def test_manifest_formats(pair, tmp_path):
    (tmp_path / "m.txt").write_text("# pairs\na.png b.ppm gt.flo\n")
    (tmp_path / "m.json").write_text(json.dumps([{"image1": "a.png", "image2": "b.ppm", "gt": "gt.flo",
                                                  "name": "one"}]))
    assert [p.name for p in load_manifest(tmp_path / "m.txt")] == ["pair000"]
    assert [p.name for p in load_manifest(tmp_path / "m.json")] == ["one"]
    (tmp_path / "e.json").write_text("[]")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "e.json")


def test_grid_degenerate_pair_all_zero(tmp_path):
    I = Image(texture(24, 32, np.random.default_rng(5)))
    write_image(I, tmp_path / "s.png")
    write_flo(FlowField.constant(24, 32, 0, 0), tmp_path / "z.flo")
    (tmp_path / "m.txt").write_text("s.png s.png z.flo\n")
    (tmp_path / "r.json").write_text(json.dumps({"lambda": [1], "tau": [5, "inf"], "beta": [0.1],
                                                 "zeta": [1], "delta": [2]}))
    out = tmp_path / "g"
    assert run("grid", tmp_path / "m.txt", "--ranges", tmp_path / "r.json", "--out", out,
               "--scale", "1", "--radius", "2", "--quiet") == 0
    with open(out / "table.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    assert all(float(r["mean_epe"]) == 0.0 for r in rows)
    with open(out / "per_image.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 12


def test_grid_empty_manifest(tmp_path):
    (tmp_path / "m.txt").write_text("\n# nothing\n")
    assert run("grid", tmp_path / "m.txt", "--out", tmp_path / "g") == cli.EXIT_INPUT


# ------------------------------------------------------------ bench

def test_bench_writes_csv(tmp_path, capsys):
    out = tmp_path / "b"
    assert run("bench", "--radii", "2", "4", "--threads-list", "1", "2", "--min-time", "0.001",
               "--out", out) == 0
    for name in ("message_scaling.csv", "exponents.csv", "thread_scaling.csv", "backends.csv"):
        assert (out / name).exists()
    with open(out / "thread_scaling.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["threads"]) for r in rows] == [1, 2]
    assert all(float(r["max_message_diff"]) == 0.0 for r in rows)
    assert "time ~ M^" in capsys.readouterr().out
