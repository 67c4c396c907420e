"""Command-line interface: CSV shapes, exit codes, seeded reproducibility."""

import csv

import pytest

from ddpkit.cli import CSV_HEADER, main

ARM2 = "system = arm\nn = 2\nhorizon = 150\n"


def write_cfg(tmp_path, text, name="prob.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def strip_timing(rows):
    """Drop the timestamp column and blank out values that are measured
    wall time or derived from it; everything left must reproduce."""
    out = [rows[0][:-1]]
    for row in rows[1:]:
        row = row[:-1]
        if row[5] == "s" or row[3] == "loglog_slope":
            row = row[:4] + [""] + row[5:]
        out.append(row)
    return out


def test_bench_derivs_csv_shape(tmp_path):
    out = str(tmp_path / "bench.csv")
    status = main(["bench-derivs", "--n", "2,3", "--backend",
                   "aba1,modrnea2", "--reps", "1", "--out", out])
    assert status == 0
    rows = read_rows(out)
    assert tuple(rows[0]) == CSV_HEADER
    times = [r for r in rows[1:] if r[3] == "deriv_time"]
    slopes = [r for r in rows[1:] if r[3] == "loglog_slope"]
    assert len(times) == 4
    assert {(r[1], r[2]) for r in times} == {
        ("2", "aba1"), ("2", "modrnea2"), ("3", "aba1"), ("3", "modrnea2")}
    assert all(r[5] == "s" and float(r[4]) > 0 for r in times)
    # n=0 marks the whole-sweep fit rows
    assert [(r[1], r[2]) for r in slopes] == [("0", "aba1"), ("0", "modrnea2")]


def test_bench_derivs_stdout_and_no_slope_for_single_n(capsys):
    status = main(["bench-derivs", "--n", "2", "--backend", "aba1",
                   "--reps", "1"])
    assert status == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 2
    assert "loglog_slope" not in lines[1]


def test_solve_writes_trajectory_and_convergence(tmp_path, capsys):
    cfg = write_cfg(tmp_path, ARM2)
    out = str(tmp_path / "run")
    status = main(["solve", "--config", cfg, "--out", out])
    assert status == 0
    assert "converged" in capsys.readouterr().out

    traj = read_rows(out + "/traj.csv")
    assert traj[0] == ["t", "q1", "q2", "qd1", "qd2", "u1", "u2"]
    assert len(traj) == 1 + 151
    assert [float(v) for v in traj[1][:5]] == [0.0] * 5
    assert float(traj[2][0]) == pytest.approx(0.01)
    assert traj[-1][5] == "" and traj[-1][6] == ""

    conv = read_rows(out + "/convergence.csv")
    assert conv[0][0] == "iteration" and conv[0][6] == "accepted"
    costs = [float(r[1]) for r in conv[1:]]
    assert min(costs) == pytest.approx(247.0941511, rel=1e-6)
    assert all(r[6] in ("0", "1") for r in conv[1:])


def test_solve_nonconvergence_exits_2_but_still_writes(tmp_path):
    cfg = write_cfg(tmp_path, ARM2 + "max_iter = 1\n")
    out = str(tmp_path / "run")
    status = main(["solve", "--config", cfg, "--out", out])
    assert status == 2
    assert read_rows(out + "/traj.csv")
    assert len(read_rows(out + "/convergence.csv")) == 2


def test_solve_outputs_reproduce_bytewise(tmp_path):
    cfg = write_cfg(tmp_path, ARM2)
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["solve", "--config", cfg, "--out", out]) == 0
        outs.append(out)
    for fname in ("traj.csv", "convergence.csv"):
        with open(f"{outs[0]}/{fname}", "rb") as fa, \
                open(f"{outs[1]}/{fname}", "rb") as fb:
            assert fa.read() == fb.read()


def test_sweep_dof_rows_and_reproducibility(tmp_path):
    cfg = write_cfg(tmp_path, ARM2)
    rows_by_run = []
    for name in ("a.csv", "b.csv"):
        out = str(tmp_path / name)
        status = main(["sweep-dof", "--config", cfg, "--n", "2",
                       "--mode", "ddp,ilqr", "--out", out])
        assert status == 0
        rows_by_run.append(read_rows(out))
    rows = rows_by_run[0]
    assert tuple(rows[0]) == CSV_HEADER
    cells = {r[2] for r in rows[1:]}
    assert cells == {"ddp:modrnea2", "ilqr:modrnea2"}
    assert len(rows) == 1 + 8
    conv = {r[2]: r[4] for r in rows[1:] if r[3] == "converged"}
    assert conv == {"ddp:modrnea2": "1", "ilqr:modrnea2": "1"}
    iters = [int(r[4]) for r in rows[1:] if r[3] == "iterations"]
    assert all(k > 0 for k in iters)
    assert strip_timing(rows_by_run[0]) == strip_timing(rows_by_run[1])


def test_trials_csv_reports_convergence_and_reproduces(tmp_path):
    cfg = write_cfg(tmp_path, ARM2 + "init = ou\n")
    rows_by_run = []
    for name in ("a.csv", "b.csv"):
        out = str(tmp_path / name)
        status = main(["trials", "--config", cfg, "--reps", "2",
                       "--out", out])
        assert status == 0
        rows_by_run.append(read_rows(out))
    rows = rows_by_run[0]
    assert tuple(rows[0]) == CSV_HEADER

    per_trial = [r for r in rows[1:] if r[2] in ("ddp:modrnea2",
                                                 "ilqr:rnea1")]
    assert len(per_trial) == 2 * 6
    trial_seeds = {r[6] for r in per_trial}
    assert len(trial_seeds) == 2 and "0" not in trial_seeds
    conv_rows = [r for r in per_trial if r[3] == "converged"]
    assert len(conv_rows) == 4
    assert all(r[5] == "bool" and r[4] in ("0", "1") for r in conv_rows)

    summary = {r[3]: r for r in rows[1:]
               if r[2] == "ddp:modrnea2/ilqr:rnea1"}
    assert set(summary) == {"mean_iter_ratio", "frac_ilqr_more_iters",
                            "frac_matching_cost", "frac_pairs_converged"}
    # summary rows carry the base seed, not a per-trial one
    assert all(r[6] == "0" for r in summary.values())
    assert float(summary["frac_pairs_converged"][4]) == 1.0
    assert float(summary["frac_matching_cost"][4]) == 1.0
    assert float(summary["mean_iter_ratio"][4]) > 0

    assert strip_timing(rows_by_run[0]) == strip_timing(rows_by_run[1])


def test_exit_code_3_for_io_errors(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.ini")]) == 3
    assert main(["bench-derivs", "--n", "2", "--backend", "aba1",
                 "--reps", "1",
                 "--out", str(tmp_path / "no_dir" / "x.csv")]) == 3


def test_exit_code_1_for_bad_requests(tmp_path):
    bad_cfg = write_cfg(tmp_path, "bogus_key = 3\n", name="bad.ini")
    assert main(["solve", "--config", bad_cfg]) == 1
    assert main(["bench-derivs", "--reps", "0", "--n", "2"]) == 1
    # ddp needs curvature; first-order backends are rejected up front
    assert main(["solve", "--mode", "ddp", "--backend", "aba1"]) == 1
    assert main(["sweep-dof", "--n", "0"]) == 1


@pytest.mark.parametrize("argv", [
    [],
    ["nope"],
    ["bench-derivs", "--n", "abc"],
    ["trials", "--backend", "aba1"],
])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    capsys.readouterr()
