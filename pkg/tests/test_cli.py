import csv
import json

import pytest

from socicnn.cli import main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_verify_writes_report_and_passes_check(tmp_path):
    out = tmp_path / "verify"
    code = main([
        "verify", "--trials", "6", "--d0", "6", "--width", "8", "--depth", "2",
        "--quad", "1", "--conic", "1", "--seed", "3", "--out", str(out), "--check",
    ])
    assert code == 0
    doc = json.loads((out / "diagnostics.json").read_text())
    for key in ("passthrough_false", "passthrough_true"):
        metrics = doc[key]["metrics"]
        assert "primal_dual_gap" in metrics and "norm_dual_alignment_violation" in metrics
        assert metrics["primal_dual_gap"]["max"] <= 1e-9
        report = doc[key]["reports"][0]
        assert {"seed", "d0", "width", "depth", "passthrough"} <= set(report)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "verify"
    assert manifest["seed"] == 3
    assert manifest["version"]


def test_train_is_byte_identical_across_reruns(tmp_path):
    args = [
        "train", "--target", "QuadraticIso", "--d", "5", "--variant", "SOC",
        "--seed", "1", "--epochs", "4", "--train-n", "200", "--val-n", "100",
        "--test-n", "100",
    ]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out_a)]) == 0
    assert main(args + ["--out", str(out_b)]) == 0
    assert (out_a / "model.json").read_bytes() == (out_b / "model.json").read_bytes()
    assert (out_a / "history.csv").read_bytes() == (out_b / "history.csv").read_bytes()
    result = json.loads((out_a / "result.json").read_text())
    assert result["variant"] == "SOC" and result["d"] == 5


def test_train_rejects_unknown_target(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--target", "Nope", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "QuadraticIso" in err  # usage error lists the valid names


def test_benchmark_unknown_names_exit_usage(tmp_path, capsys):
    code = main([
        "benchmark", "--targets", "NotReal", "--out", str(tmp_path / "bench"),
    ])
    assert code == 2
    assert "NormEuclid" in capsys.readouterr().err
    code = main([
        "benchmark", "--targets", "NormEuclid", "--variants", "Huh",
        "--out", str(tmp_path / "bench2"),
    ])
    assert code == 2


def test_benchmark_small_run(tmp_path):
    out = tmp_path / "bench"
    code = main([
        "benchmark", "--targets", "NormEuclid", "--d", "5", "--variants", "ReLU,SOC",
        "--seeds", "1", "--train-n", "200", "--val-n", "100", "--test-n", "200",
        "--epochs", "4", "--seed", "0", "--out", str(out), "--check",
    ])
    assert code == 0
    rows = read_csv(out / "results.csv")
    assert [r["model"] for r in rows] == ["ReLU", "SOC"]
    assert set(rows[0]) == {"target", "model", "d", "rel_err_mean", "rel_err_std",
                            "params", "depth"}
    soc = next(r for r in rows if r["model"] == "SOC")
    relu = next(r for r in rows if r["model"] == "ReLU")
    assert int(relu["params"]) >= int(soc["params"])  # budget fairness


def test_decide_small_run(tmp_path):
    out = tmp_path / "decide"
    code = main([
        "decide", "--families", "SimplexSocp", "--d", "5", "--instances", "2",
        "--candidates", "16", "--restarts", "2", "--steps", "60",
        "--oracle-restarts", "4", "--oracle-steps", "300",
        "--surrogate-epochs", "30", "--seed", "0", "--out", str(out), "--check",
    ])
    assert code == 0
    rows = read_csv(out / "decisions.csv")
    assert len(rows) == 2
    assert set(rows[0]) == {"task", "family", "d", "seed", "model", "regret",
                            "decision_error", "surrogate_value", "true_value"}
    for row in rows:
        assert float(row["regret"]) >= -1e-9


def test_theory_run_and_check(tmp_path):
    out = tmp_path / "theory"
    code = main([
        "theory", "--dims", "1,2", "--cells", "2,4,8,16", "--samples", "40000",
        "--out", str(out), "--check",
    ])
    assert code == 0
    rows = read_csv(out / "theory.csv")
    assert set(rows[0]) == {"d", "N", "sup_error", "bound"}
    for row in rows:
        assert float(row["N"]) >= float(row["bound"])


def test_outputs_stay_under_out_dir(tmp_path):
    out = tmp_path / "only"
    main(["theory", "--dims", "1", "--cells", "2,4", "--samples", "5000",
          "--out", str(out)])
    produced = {p.name for p in out.iterdir()}
    assert produced == {"manifest.json", "theory.csv"}
    assert {p.name for p in tmp_path.iterdir()} == {"only"}
