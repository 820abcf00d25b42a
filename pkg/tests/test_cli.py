import numpy as np
import pytest

from fedsvd.cli import main
from fedsvd.errors import ConfigError
from fedsvd.experiment import (
    ExperimentConfig,
    compare_algorithms,
    config_from_mapping,
    parse_sites,
    read_config_file,
    run_attack_demo,
    run_experiment,
)
from fedsvd.partition import load_matrix
from fedsvd.protocol import predicted_float_cost


def summary(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def test_parse_sites():
    assert parse_sites("3") == (1.0, 1.0, 1.0)
    assert parse_sites("1,2.5") == (1.0, 2.5)
    with pytest.raises(ConfigError):
        parse_sites("x")


def test_config_file_and_override(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# demo\nalgorithm = AI-FULL\nk=3\nsites=1,1\nmax-iter = 50\nstandardize=yes\n")
    cfg = config_from_mapping(read_config_file(path))
    assert (cfg.algorithm, cfg.k, cfg.sites, cfg.max_iterations, cfg.standardize) == ("AI-FULL", 3, (1.0, 1.0), 50, True)
    with pytest.raises(ConfigError):
        config_from_mapping({"colour": "red"})
    with pytest.raises(ConfigError):
        config_from_mapping({"k": "0"})
    with pytest.raises(ConfigError):
        config_from_mapping({"epsilon": "abc"})


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "--m", "40", "--n", "30", "--k", "3", "--sites", "3", "--out", str(out)]) == 0
    s = summary(out / "summary.txt")
    iterations = int(s["iterations"])
    rows = (out / "angles.csv").read_text().splitlines()
    assert rows[0] == "iteration,angle_1,angle_2,angle_3"
    assert len(rows) == iterations + 1
    angles = np.array([[float(x) for x in r.split(",")[1:]] for r in rows[1:]])
    assert np.all((angles >= 0) & (angles <= 90))
    assert int(s["floats"]) == predicted_float_cost("RI-FULL", iterations=iterations, sites=3, k=3, m=40)
    assert int(s["bytes"]) == 4 * int(s["floats"])
    assert s["converged"] == "true"
    h = load_matrix(out / "h.fsvd")
    assert h.shape == (40, 3) and np.all(np.abs(h).max(axis=0) == h.max(axis=0))
    assert load_matrix(out / "g.fsvd").shape == (30, 3)


def test_run_is_deterministic(tmp_path):
    args = ["run", "--m", "30", "--n", "20", "--k", "2", "--algorithm", "RANDOMIZED", "--i-prime", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "angles.csv").read_bytes() == (tmp_path / "b" / "angles.csv").read_bytes()
    strip = lambda p: [ln for ln in p.read_text().splitlines() if not ln.startswith("elapsed_ms=")]
    assert strip(tmp_path / "a" / "summary.txt") == strip(tmp_path / "b" / "summary.txt")


def test_repeats_use_subdirectories(tmp_path):
    assert main(["run", "--m", "12", "--n", "10", "--k", "2", "--repeats", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "repeat_0" / "summary.txt").exists() and (tmp_path / "repeat_1" / "summary.txt").exists()


def test_gap_rich_convergence_and_site_count_invariance():
    cfg = ExperimentConfig(m=100, n=80, k=5, sites=(1.0,) * 5)
    five = run_experiment(cfg)
    ten = run_experiment(ExperimentConfig(m=100, n=80, k=5, sites=(1.0,) * 10))
    assert np.all(five.final_angles <= 0.01)
    assert five.iterations == ten.iterations
    assert np.abs(five.angles - ten.angles).max() < 1e-8


def test_ai_only_exact_on_homogeneous_low_rank(tmp_path):
    from fedsvd.partition import SyntheticSpec, generate_synthetic, save_matrix

    block = generate_synthetic(SyntheticSpec(20, 10, (4.0, 2.0, 1.0), seed=2))
    path = tmp_path / "a.fsvd"
    save_matrix(path, np.hstack([block] * 3))
    report = run_experiment(ExperimentConfig(algorithm="AI-ONLY", input=str(path), k=3, sites=(1.0,) * 3))
    assert report.iterations == 0 and report.angles.shape == (0, 3)
    assert np.all(report.final_angles <= 1e-6)


def test_attack_subcommand(tmp_path, capsys):
    out = tmp_path / "atk"
    assert main(["attack", "--data", "standin", "--m", "10", "--n", "442", "--k", "2", "--out", str(out)]) == 0
    report = summary(out / "attack_report.txt")
    assert float(report["pearson"]) > 0.999999 and report["columns_used"] == "10"
    assert (out / "transcript" / "index.txt").exists() and (out / "k_hat.fsvd").exists()
    code = main(["attack", "--data", "standin", "--m", "30", "--n", "300", "--k", "2", "--algorithm", "RANDOMIZED", "--out", str(out)])
    assert code == 0
    assert "attack failed" in capsys.readouterr().out
    assert summary(out / "attack_report.txt")["status"] == "insufficient_rank"


def test_attack_guard():
    with pytest.raises(ConfigError):
        run_attack_demo(ExperimentConfig(data="standin", m=65, n=100, k=5))


def test_compare(tmp_path):
    rows = compare_algorithms(
        [ExperimentConfig(algorithm=a, m=200, n=150, k=5) for a in ("RI-FULL", "RANDOMIZED")], tmp_path / "c.csv"
    )
    assert rows[1]["floats"] < rows[0]["floats"]
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 3
    assert len(compare_algorithms([ExperimentConfig(m=20, n=15, k=2)])) == 1
    with pytest.raises(ConfigError):
        compare_algorithms([ExperimentConfig(k=2), ExperimentConfig(k=3)])
    assert main(["compare", "--m", "20", "--n", "15", "--k", "2", "--algorithms", "RI-FULL,AI-FULL"]) == 0


def test_gen_and_csv_input(tmp_path):
    path = tmp_path / "x.csv"
    assert main(["gen", "--m", "8", "--n", "6", "--rank", "4", "--format", "csv", "--out", str(path)]) == 0
    assert load_matrix(path, "csv").shape == (8, 6)
    assert main(["run", "--input", str(path), "--format", "csv", "--k", "2", "--sites", "2"]) == 0
    assert main(["run", "--input", str(path), "--format", "csv", "--k", "5"]) == 2  # rank 4 < k
    assert main(["run", "--input", str(path), "--format", "csv", "--k", "2", "--standardize"]) == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--k", "0"],
        ["run", "--input", "/no/such/file"],
        ["run", "--algorithm", "BOGUS"],
        ["run", "--config", "/no/such.cfg"],
        ["run", "--m", "5", "--n", "4", "--k", "6"],
        ["gen"],
        [],
    ],
)
def test_user_errors_exit_1(argv):
    assert main(argv) == 1


def test_bad_file_contents_exit_1(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2\n3\n")
    assert main(["run", "--input", str(path), "--format", "csv", "--k", "1"]) == 1
