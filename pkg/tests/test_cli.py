"""Command-line interface: run, fitmap, compare."""

import json
from pathlib import Path

import numpy as np
import pytest

from tmmcmc import cli
from tmmcmc import transport_map as tm

from conftest import rng_for

MINIMAL_CONFIG = """
[run]
name = tm-banana
problem = banana
steps = 2500
burn_in = 500
adapt_interval = 1000
adapt_start = 1000
seed = 5
replicates = {replicates}

[proposal]
kind = random_walk
sigma = 0.8

[basis]
family = hermite
set_type = total_order
degree = 2
"""


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_run_produces_all_artifacts(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out)]) == 0
    assert (out / "samples_rep0.txt").exists()
    assert (out / "map_rep0.txt").exists()
    assert (out / "diagnostics.json").exists()
    assert (out / "summary.txt").exists()
    assert (out / "trace_rep0.png").exists()
    assert (out / "scatter_rep0.png").exists()
    header = (out / "samples_rep0.txt").read_text().splitlines()[0]
    assert header == "# dim=2 steps=2500 seed=5"


def test_run_replicates_derive_seeds(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=3))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out)]) == 0
    seeds = []
    for i in range(3):
        header = (out / f"samples_rep{i}.txt").read_text().splitlines()[0]
        seeds.append(int(header.split("seed=")[1]))
    assert seeds == [5, 6, 7]
    payload = json.loads((out / "diagnostics.json").read_text())
    assert len(payload["replicates"]) == 3


def test_run_deterministic_reruns(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out1)]) == 0
    assert cli.main(["run", "--config", str(cfg), "--output", str(out2)]) == 0
    assert (out1 / "samples_rep0.txt").read_bytes() == (out2 / "samples_rep0.txt").read_bytes()


def test_run_seed_override(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1))
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out), "--seed", "99"]) == 0
    header = (out / "samples_rep0.txt").read_text().splitlines()[0]
    assert header.endswith("seed=99")


def test_run_rejects_unknown_key(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1) + "\nturbo = yes\n")
    assert cli.main(["run", "--config", str(cfg), "--output", str(tmp_path / "x")]) == 2


def test_run_rejects_unknown_section(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1) + "\n[extras]\nfoo = 1\n")
    assert cli.main(["run", "--config", str(cfg), "--output", str(tmp_path / "x")]) == 2


def test_run_rejects_bad_problem(tmp_path):
    text = MINIMAL_CONFIG.format(replicates=1).replace("problem = banana", "problem = nonsense")
    cfg = write_config(tmp_path, text)
    assert cli.main(["run", "--config", str(cfg), "--output", str(tmp_path / "x")]) == 1


def test_run_missing_config():
    assert cli.main(["run", "--config", "/nonexistent/run.ini"]) == 2


def test_samples_roundtrip_lossless(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1))
    out = tmp_path / "out"
    cli.main(["run", "--config", str(cfg), "--output", str(out)])
    loaded = cli.read_samples(out / "samples_rep0.txt")
    assert loaded.shape == (2500, 2)
    assert loaded.dtype == np.float64
    # 17 significant digits survive a write/read cycle exactly
    rewritten = tmp_path / "again.txt"
    np.savetxt(rewritten, loaded, fmt="%.17g")
    assert np.array_equal(np.loadtxt(rewritten), loaded)


def test_fitmap_reports_near_identity(tmp_path, capsys):
    rng = rng_for(90)
    samples = rng.standard_normal((20000, 2))
    sample_file = tmp_path / "samples.txt"
    np.savetxt(sample_file, samples, fmt="%.17g", header="dim=2 steps=20000 seed=0", comments="# ")
    out_map = tmp_path / "map.txt"
    code = cli.main([
        "fitmap", str(sample_file), "--output", str(out_map),
        "--set-type", "total_order", "--degree", "1",
    ])
    assert code == 0
    printed = capsys.readouterr().out
    assert "component 1" in printed and "Newton iterations" in printed
    fitted = tm.load_map(out_map)
    for comp in fitted.components:
        ident = tm.identity_coefficients(comp.index_set)
        assert np.abs(comp.coefficients - ident).max() < 0.05


def test_fitmap_empty_file(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert cli.main(["fitmap", str(empty), "--output", str(tmp_path / "m.txt")]) == 2


def test_fitmap_deterministic(tmp_path):
    rng = rng_for(91)
    samples = rng.standard_normal((5000, 2))
    sample_file = tmp_path / "samples.txt"
    np.savetxt(sample_file, samples, fmt="%.17g")
    m1, m2 = tmp_path / "m1.txt", tmp_path / "m2.txt"
    assert cli.main(["fitmap", str(sample_file), "--output", str(m1), "--degree", "2"]) == 0
    assert cli.main(["fitmap", str(sample_file), "--output", str(m2), "--degree", "2"]) == 0
    assert m1.read_bytes() == m2.read_bytes()


def test_compare_self_is_unity(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1))
    out = tmp_path / "out"
    cli.main(["run", "--config", str(cfg), "--output", str(out)])
    cmp_dir = tmp_path / "cmp"
    assert cli.main(["compare", str(out), "--output", str(cmp_dir)]) == 0
    payload = json.loads((cmp_dir / "comparison.json").read_text())
    row = payload["methods"][0]
    assert row["rel_ess_per_eval"] == pytest.approx(1.0)
    assert row["rel_ess_per_second"] == pytest.approx(1.0)
    assert (cmp_dir / "comparison.txt").exists()
    assert (cmp_dir / "comparison.png").exists()


def test_compare_ratios_match_stored_reports(tmp_path):
    cfg1 = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=1), "a.ini")
    text2 = MINIMAL_CONFIG.format(replicates=1).replace("tm-banana", "tm-banana-2").replace("seed = 5", "seed = 6")
    cfg2 = write_config(tmp_path, text2, "b.ini")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    cli.main(["run", "--config", str(cfg1), "--output", str(out1)])
    cli.main(["run", "--config", str(cfg2), "--output", str(out2)])
    cmp_dir = tmp_path / "cmp"
    assert cli.main([
        "compare", str(out1), str(out2), "--baseline", "tm-banana", "--output", str(cmp_dir),
    ]) == 0
    payload = json.loads((cmp_dir / "comparison.json").read_text())
    rows = {r["name"]: r for r in payload["methods"]}
    d1 = json.loads((out1 / "diagnostics.json").read_text())["aggregate"]
    d2 = json.loads((out2 / "diagnostics.json").read_text())["aggregate"]
    expect = d2["ess_per_eval"] / d1["ess_per_eval"]
    assert rows["tm-banana-2"]["rel_ess_per_eval"] == pytest.approx(expect, rel=1e-12)


def test_compare_missing_diagnostics(tmp_path):
    empty = tmp_path / "nothing"
    empty.mkdir()
    assert cli.main(["compare", str(empty)]) == 2


def test_rwm_sampler_config(tmp_path):
    text = """
[run]
name = rwm-banana
problem = banana
steps = 2000
burn_in = 400
seed = 2
sampler = rwm
"""
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out)]) == 0
    assert (out / "samples_rep0.txt").exists()
    assert not (out / "map_rep0.txt").exists()


def test_rwm_sampler_rejects_proposal_section(tmp_path):
    text = """
[run]
name = x
problem = banana
steps = 1000
sampler = rwm

[proposal]
kind = random_walk
"""
    cfg = write_config(tmp_path, text)
    assert cli.main(["run", "--config", str(cfg), "--output", str(tmp_path / "x")]) == 2


def test_parallel_replicates_match_serial(tmp_path):
    cfg = write_config(tmp_path, MINIMAL_CONFIG.format(replicates=2))
    out1, out2 = tmp_path / "serial", tmp_path / "parallel"
    assert cli.main(["run", "--config", str(cfg), "--output", str(out1), "--jobs", "1"]) == 0
    assert cli.main(["run", "--config", str(cfg), "--output", str(out2), "--jobs", "2"]) == 0
    for i in range(2):
        a = (out1 / f"samples_rep{i}.txt").read_bytes()
        b = (out2 / f"samples_rep{i}.txt").read_bytes()
        assert a == b
