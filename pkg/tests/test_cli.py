import os

import numpy as np
import pytest

from nmdtm.cli import main, tol_columns
from nmdtm.io import (
    read_csv,
    read_matrix_market,
    read_trace_csv,
    write_csv,
    write_matrix_market,
    write_trace_csv,
)
from nmdtm.linalg import truncated_svd
from nmdtm.solver import TraceRecord

from conftest import EX1_M, sparse_nonneg
from nmd_reference import three_block


@pytest.fixture
def ex1_file(tmp_path):
    p = tmp_path / "ex1.mtx"
    write_matrix_market(str(p), EX1_M)
    return str(p)


@pytest.fixture
def sparse_file(tmp_path):
    p = tmp_path / "m.csv"
    write_csv(str(p), sparse_nonneg(np.random.default_rng(0), 30, 24))
    return str(p)


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(d):
    return {name: (d / name).read_bytes() for name in sorted(os.listdir(d))}


class TestDecompose:
    def test_example_one(self, ex1_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert run("decompose", "--input", ex1_file, "--rank", 2, "--lambda", 1e-8,
                   "--max-iters", 2000, "--out", out) == 0
        u = read_matrix_market(str(out / "U.mtx"))
        v = read_matrix_market(str(out / "V.mtx"))
        assert u.shape == (5, 2) and v.shape == (2, 5)
        err = np.linalg.norm(EX1_M - np.maximum(0, u @ v)) / np.linalg.norm(EX1_M)
        assert err <= 1e-4
        trace = read_trace_csv(str(out / "trace.csv"))
        assert len(trace["k"]) == 2000
        assert "stop_reason=max_iters" in capsys.readouterr().out

    def test_zero_rank_is_usage_error(self, ex1_file, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("decompose", "--input", ex1_file, "--rank", 0, "--out", tmp_path)
        assert exc.value.code == 2

    def test_missing_rank(self, ex1_file, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("decompose", "--input", ex1_file, "--out", tmp_path)
        assert exc.value.code == 2

    def test_bad_params_are_usage_errors(self, ex1_file, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("decompose", "--input", ex1_file, "--rank", 2, "--alpha", 1.0, "--out", tmp_path)
        assert exc.value.code == 2

    def test_missing_input_exits_one(self, tmp_path, capsys):
        assert run("decompose", "--input", tmp_path / "nope.csv", "--rank", 1,
                   "--out", tmp_path) == 1
        assert "error" in capsys.readouterr().err

    def test_three_block_trace_matches_reference(self, sparse_file, tmp_path):
        out = tmp_path / "out"
        run("decompose", "--input", sparse_file, "--rank", 3, "--alpha", 0, "--beta", 1,
            "--lambda", 0, "--max-iters", 30, "--no-timing", "--out", out)
        trace = read_trace_csv(str(out / "trace.csv"))
        m = read_csv(sparse_file)
        f = truncated_svd(m, 3)
        s = np.sqrt(f.sigma)
        ref = [np.linalg.norm(m - np.maximum(0, x)) / np.linalg.norm(m)
               for _, _, _, x in three_block(m, f.u * s, s[:, None] * f.vt, 0.0, 30)]
        np.testing.assert_allclose(trace["rel_error"], ref, rtol=1e-9)
        assert not trace["seconds"].any()


class TestBetaSweep:
    def test_rows_and_files(self, sparse_file, tmp_path):
        out = tmp_path / "out"
        assert run("beta-sweep", "--input", sparse_file, "--rank", 3, "--betas", "0.9,0.5",
                   "--max-iters", 20, "--out", out) == 0
        lines = (out / "summary.csv").read_text().splitlines()
        assert lines[0] == "beta,rel_error"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["0.9", "0.5"]
        assert (out / "trace_beta_0.9.csv").exists()

    def test_single_beta_equals_decompose(self, sparse_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run("beta-sweep", "--input", sparse_file, "--rank", 3, "--betas", "0.6",
            "--max-iters", 25, "--no-timing", "--out", a)
        run("decompose", "--input", sparse_file, "--rank", 3, "--alpha", 0.6, "--beta", 0.6,
            "--max-iters", 25, "--no-timing", "--out", b)
        assert (a / "trace_beta_0.6.csv").read_bytes() == (b / "trace.csv").read_bytes()

    def test_bad_list(self, sparse_file, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("beta-sweep", "--input", sparse_file, "--rank", 3, "--betas", "0.5,x",
                "--out", tmp_path)
        assert exc.value.code == 2


class TestRankSweep:
    def test_skips_oversized_ranks(self, ex1_file, tmp_path):
        out = tmp_path / "out"
        assert run("rank-sweep", "--input", ex1_file, "--ranks", "1,2,9", "--max-iters", 10,
                   "--no-timing", "--out", out) == 0
        rows = [ln.split(",") for ln in (out / "summary.csv").read_text().splitlines()]
        assert rows[0] == ["rank", "rel_error", "mean_iter_seconds", "status"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "9"]
        assert rows[3][3] == "skipped"
        assert rows[1][3] == "max_iters"
        assert not (out / "trace_rank_9.csv").exists()

    def test_empty_list(self, ex1_file, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("rank-sweep", "--input", ex1_file, "--ranks", "", "--out", tmp_path)
        assert exc.value.code == 2

    def test_threads_do_not_change_output(self, sparse_file, tmp_path, monkeypatch):
        args = ("rank-sweep", "--input", sparse_file, "--ranks", "2,3,4", "--max-iters", 15,
                "--no-timing")
        monkeypatch.setenv("THREADS", "1")
        run(*args, "--out", tmp_path / "a")
        monkeypatch.setenv("THREADS", "3")
        run(*args, "--out", tmp_path / "b")
        assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def write_trace(path, finals):
    recs = [TraceRecord(k + 1, 0.0, e, 2 * e, e) for k, e in enumerate(finals)]
    write_trace_csv(str(path), recs)
    return str(path)


class TestCompare:
    def test_identical_traces(self, tmp_path):
        a = write_trace(tmp_path / "a.csv", [0.5, 0.2])
        b = write_trace(tmp_path / "b.csv", [0.5, 0.2])
        out = tmp_path / "out"
        assert run("compare", "--traces", a, b, "--names", "x", "y", "--out", out) == 0
        tol = read_trace_csv(str(out / "x_tol.csv"))["tol"]
        np.testing.assert_allclose(tol, [0.3, 0.0], atol=1e-15)
        summary = (out / "compare_summary.csv").read_text().splitlines()
        assert [ln.split(",")[2] for ln in summary[1:]] == ["0", "0"]

    def test_finals(self, tmp_path):
        a = write_trace(tmp_path / "fast.csv", [0.3, 0.10])
        b = write_trace(tmp_path / "slow.csv", [0.4, 0.12])
        out = tmp_path / "out"
        run("compare", "--traces", a, b, "--out", out)
        rows = [ln.split(",") for ln in (out / "compare_summary.csv").read_text().splitlines()]
        assert rows[1][0] == "fast" and float(rows[1][2]) == 0.0
        assert float(rows[2][2]) == pytest.approx(0.02, abs=1e-12)

    def test_tol_columns(self):
        assert tol_columns([0.10, 0.12, 0.10]) == pytest.approx([0.0, 0.02, 0.0])

    def test_needs_two(self, tmp_path):
        a = write_trace(tmp_path / "a.csv", [0.5])
        with pytest.raises(SystemExit) as exc:
            run("compare", "--traces", a, "--out", tmp_path)
        assert exc.value.code == 2

    def test_empty_trace_file(self, tmp_path):
        a = write_trace(tmp_path / "a.csv", [])
        b = write_trace(tmp_path / "b.csv", [0.5])
        assert run("compare", "--traces", a, b, "--out", tmp_path / "o") == 1


class TestNmfCompress:
    @pytest.fixture
    def images(self, tmp_path):
        # 36 "images" of 4x4 pixels stored as columns
        rng = np.random.default_rng(3)
        w = rng.uniform(size=(16, 5))
        w[w < 0.5] = 0.0
        p = tmp_path / "imgs.csv"
        write_csv(str(p), w @ rng.uniform(size=(5, 36)))
        return str(p)

    def test_report_and_montages(self, images, tmp_path):
        out = tmp_path / "out"
        assert run("nmf-compress", "--input", images, "--ranks", "2", "--inner-rank", 5,
                   "--nmf-iters", 100, "--max-iters", 50, "--montage", 4, 4, "--grid-cols", 3,
                   "--out", out) == 0
        rows = [ln.split(",") for ln in (out / "report.csv").read_text().splitlines()]
        assert rows[0] == ["method", "rank", "basis_rel_error", "tol_nmf", "seconds"]
        assert [r[0] for r in rows[1:]] == ["nmd_tm", "tsvd"]
        for name in ("basis.pgm", "nmd_tm_r2.pgm", "tsvd_r2.pgm"):
            assert (out / name).read_bytes().startswith(b"P5\n")

    def test_full_rank_tsvd(self, images, tmp_path):
        out = tmp_path / "out"
        run("nmf-compress", "--input", images, "--ranks", "5", "--inner-rank", 5,
            "--nmf-iters", 100, "--methods", "tsvd", "--out", out)
        row = (out / "report.csv").read_text().splitlines()[1].split(",")
        assert float(row[2]) <= 1e-10

    def test_rank_too_large(self, images, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("nmf-compress", "--input", images, "--ranks", "6", "--inner-rank", 5,
                "--nmf-iters", 5, "--out", tmp_path)
        assert exc.value.code == 2


class TestReproducibility:
    def test_byte_identical(self, sparse_file, tmp_path):
        for d in ("a", "b"):
            run("beta-sweep", "--input", sparse_file, "--rank", 3, "--betas", "0.95,0.3",
                "--max-iters", 40, "--no-timing", "--out", tmp_path / d)
        assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")

    def test_outputs_stay_in_out_dir(self, sparse_file, tmp_path):
        before = set(os.listdir(tmp_path))
        run("decompose", "--input", sparse_file, "--rank", 2, "--max-iters", 3,
            "--out", tmp_path / "o")
        assert set(os.listdir(tmp_path)) - before == {"o"}
        assert sorted(os.listdir(tmp_path / "o")) == ["U.mtx", "V.mtx", "trace.csv"]

    def test_plot_script(self, tmp_path):
        assert run("plot-script", "--out", tmp_path) == 0
        compile((tmp_path / "plot_traces.py").read_text(), "plot_traces.py", "exec")

    def test_no_timing_rejects_budget(self, sparse_file, tmp_path):
        with pytest.raises(SystemExit):
            run("decompose", "--input", sparse_file, "--rank", 2, "--no-timing",
                "--time-budget", 1, "--out", tmp_path)
