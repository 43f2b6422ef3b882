import json

import numpy as np
import pytest

from inarout import cli
from inarout import io as iio
from inarout import process as pr


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestCountsCsv:
    def test_single_column(self, tmp_path):
        assert iio.read_counts_csv(write(tmp_path, "a.csv", "3\n5\n2\n")).values.tolist() == [3, 5, 2]

    def test_labels(self, tmp_path):
        s = iio.read_counts_csv(write(tmp_path, "a.csv", "2007-01,18\n2007-02,25\n"))
        assert s.values.tolist() == [18, 25]
        assert s.labels == ("2007-01", "2007-02")

    def test_header(self, tmp_path):
        s = iio.read_counts_csv(write(tmp_path, "a.csv", "month,cases\n2007-01,18\n\n2007-02,25\n"))
        assert s.values.tolist() == [18, 25]

    @pytest.mark.parametrize(
        "text,row",
        [("3.5\n", 1), ("1\n-2\n", 2), ("count\n4\nx\n", 3), ("a,1\nb,\n", 2), ("1,2,3\n", 1), ("a,1\n2\n", 2)],
    )
    def test_errors_name_the_row(self, tmp_path, text, row):
        with pytest.raises(iio.ParseError) as exc:
            iio.read_counts_csv(write(tmp_path, "a.csv", text))
        assert exc.value.row == row
        assert f"row {row}" in str(exc.value)

    def test_empty(self, tmp_path):
        with pytest.raises(iio.ParseError):
            iio.read_counts_csv(write(tmp_path, "a.csv", "count\n"))

    @pytest.mark.parametrize("labels", [None, tuple(f"t{i}" for i in range(50))])
    def test_round_trip(self, tmp_path, labels):
        y = pr.simulate_contaminated(pr.InarModel(0.5, 3.0), [], 50, rng=1)
        y = pr.CountSeries(y.values, labels)
        iio.write_counts_csv(y, tmp_path / "y.csv")
        assert iio.read_counts_csv(tmp_path / "y.csv") == y

    def test_covariates(self, tmp_path):
        X = iio.read_covariates_csv(write(tmp_path, "x.csv", "c,s\n1,0.5\n1,-0.5\n"))
        assert X.tolist() == [[1, 0.5], [1, -0.5]]
        with pytest.raises(iio.ParseError):
            iio.read_covariates_csv(write(tmp_path, "x.csv", "1,0.5\n1\n"))


class TestSeasonal:
    def test_examples(self):
        X = iio.build_seasonal_covariates(168, 12, True)
        assert X.shape == (168, 4)
        assert X[5, 1] == pytest.approx(0.0, abs=1e-15)
        assert X[5, 2] == pytest.approx(-1.0)
        assert X[11, 1] == pytest.approx(0.0, abs=1e-15)
        assert X[11, 2] == pytest.approx(1.0)
        assert X[-1, 3] == 1.0
        assert np.all(X[:, 0] == 1.0)

    def test_without_trend(self):
        assert iio.build_seasonal_covariates(24, 12, False).shape == (24, 3)

    def test_invalid(self):
        with pytest.raises(pr.ConfigurationError):
            iio.build_seasonal_covariates(10, 1)


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def series_csv(tmp_path):
    y = pr.simulate_contaminated(
        pr.InarModel(0.5, 3.0), [pr.Intervention(50, 0.6, 10.0), pr.Intervention(150, 0.9, 10.0)], 200, rng=42
    )
    path = tmp_path / "y.csv"
    iio.write_counts_csv(y, path)
    return path


class TestCli:
    def test_simulate_round_trip(self, tmp_path, capsys):
        out = tmp_path / "sim.csv"
        code, rep = run(["simulate", "--alpha", 0.3, "--lam", 2, "--n", 80, "--seed", 3, "--out", out], capsys)
        assert code == 0
        assert rep["command"] == "simulate" and set(rep) == {"command", "config", "results", "warnings"}
        y = iio.read_counts_csv(out)
        assert y.values.tolist() == rep["results"]["counts"]
        assert y == pr.simulate_contaminated(pr.InarModel(0.3, 2.0), [], 80, rng=3)

    def test_seed_required(self, capsys):
        assert cli.main(["simulate", "--n", "10"]) == 2
        assert cli.main(["study", "--replicates", "5"]) == 2

    def test_known_time(self, series_csv, capsys):
        code, rep = run(["test", "--input", series_csv, "--order", 1, "--method", "f", "--tau", 100, "--delta", 0.8], capsys)
        assert code == 0
        r = rep["results"]
        assert r["mode"] == "known" and r["method"] == "F" and r["tau"] == 100
        assert set(r) >= {"statistic", "p_value", "significant", "kappa_hat", "available"}

    def test_unavailable_cell_exit_1(self, series_csv, capsys):
        code, rep = run(["test", "--input", series_csv, "--method", "score", "--tau", 2, "--delta", 1], capsys)
        assert code == 1
        assert rep["results"]["available"] is False
        assert "statistic" in rep["results"] and rep["results"]["statistic"] is None

    def test_maximum(self, series_csv, capsys):
        code, rep = run(["test", "--input", series_csv, "--critical"], capsys)
        assert code == 0
        assert rep["results"]["critical_value"] == 22.0

    def test_fit(self, series_csv, capsys):
        code, rep = run(["fit", "--input", series_csv, "--method", "score", "--intervention", 150, 0.9], capsys)
        assert code == 0
        assert rep["results"]["converged"] is True
        assert len(rep["results"]["kappas"]) == 1

    def test_bad_csv_exit_2(self, tmp_path, capsys):
        path = write(tmp_path, "bad.csv", "3.5\n")
        assert cli.main(["test", "--input", str(path), "--tau", "2", "--delta", "0"]) == 2
        assert "row 1" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path):
        assert cli.main(["fit", "--input", str(tmp_path / "nope.csv")]) == 2

    def test_f_with_seasonal_refused(self, series_csv, capsys):
        assert cli.main(["detect", "--input", str(series_csv), "--method", "f", "--seasonal", "12",
                         "--critical-values"]) == 2
        assert "score" in capsys.readouterr().err

    def test_bad_flag_exit_2(self, capsys):
        assert cli.main(["test", "--bogus"]) == 2

    def test_config_file_and_flag_precedence(self, tmp_path, series_csv, capsys):
        cfg = write(tmp_path, "c.json", json.dumps({"method": "score", "tau": 100, "delta": 0.8}))
        code, rep = run(["test", "--config", cfg, "--input", series_csv, "--delta", 0.6], capsys)
        assert code == 0
        assert rep["config"]["method"] == "score"
        assert rep["results"]["delta"] == 0.6
        bad = write(tmp_path, "b.json", json.dumps({"nonsense": 1}))
        assert cli.main(["test", "--config", str(bad), "--input", str(series_csv)]) == 2

    def test_detect_table(self, series_csv, capsys):
        code, rep = run(["detect", "--input", series_csv, "--order", 1, "--method", "score", "--bootstrap", 60,
                         "--seed", 42], capsys)
        assert code == 0
        table = rep["results"]["table"]
        assert table[0]["iteration"] == 1
        for row in table:
            assert set(row) == {"iteration", "method", "p_value", "alpha", "lambda", "kappa", "tau", "delta"}
        assert rep["results"]["terminated_reason"] in ("no-detection", "iteration-cap", "nonpositive-effect")

    def test_detect_needs_seed(self, series_csv):
        assert cli.main(["detect", "--input", str(series_csv), "--bootstrap", "10"]) == 2

    def test_study_schema(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        code, _ = run(["study", "--kind", "size", "--preset", "paper-sm2", "--replicates", 20, "--seed", 7,
                       "--methods", "F", "--out", out], capsys)
        assert code == 0
        header = out.read_text().splitlines()[0].split(",")
        assert header[:6] == ["kind", "method", "alpha1", "alpha2", "lambda", "n"]
        assert {"delta_true", "delta_tested", "tau", "level", "rate_pct", "mc_se_pct"} <= set(header)


class TestByteIdentical:
    @pytest.mark.parametrize(
        "argv",
        [
            ["detect", "--method", "score", "--bootstrap", 30, "--seed", 9],
            ["detect", "--method", "f", "--bootstrap", 30, "--seed", 9],
            ["test", "--method", "score"],
        ],
    )
    def test_json(self, tmp_path, series_csv, argv):
        outs = []
        for threads in (1, 2, 4):
            path = tmp_path / f"r{threads}.json"
            assert cli.main([str(a) for a in argv] + ["--input", str(series_csv), "--threads", str(threads),
                                                      "--output", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_study_csv(self, tmp_path):
        outs = []
        for threads in (1, 3):
            path = tmp_path / f"s{threads}.csv"
            assert cli.main(["study", "--kind", "size", "--replicates", "15", "--seed", "3", "--methods", "score",
                             "--threads", str(threads), "--out", str(path), "--output", str(tmp_path / "j.json")]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
