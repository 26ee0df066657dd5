"""File formats and the command-line front end."""

import json

import numpy as np
import pytest

from bnpsubspace.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main, summarize_states
from bnpsubspace.io import (InputError, load_config, prior_from_config, read_csv, read_draws,
                            settings_from_config, write_csv, write_draws)
from bnpsubspace.model import PriorConfig
from bnpsubspace.sampler import ChainSettings, run_chain


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10, 3))
    path = tmp_path / "toy.csv"
    write_csv(path, x)
    return path, x


@pytest.fixture
def labelled_csv(tmp_path):
    """Two well separated classes along the first axis."""
    rng = np.random.default_rng(1)
    x = np.vstack([rng.normal([-3, 0, 0], 0.2, (20, 3)), rng.normal([3, 0, 0], 0.2, (20, 3))])
    y = np.repeat([1, 2], 20)
    path = tmp_path / "lab.csv"
    write_csv(path, x, y)
    return path, x, y


def write_text(path, text):
    path.write_text(text)
    return str(path)


class TestCsv:
    def test_round_trip_is_exact(self, tmp_path, rng):
        x = rng.standard_normal((5, 4)) * 1e-7
        write_csv(tmp_path / "a.csv", x)
        back, y = read_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back, x)
        assert y is None

    def test_headerless(self, tmp_path):
        x, _ = read_csv(write_text(tmp_path / "a.csv", "1,2\n3,4\n"))
        np.testing.assert_array_equal(x, [[1, 2], [3, 4]])

    def test_labels(self, tmp_path):
        x, y = read_csv(write_text(tmp_path / "a.csv", "a,b,y\n1,2,1\n3,4,2\n"), label_column=True)
        np.testing.assert_array_equal(y, [1, 2])
        assert x.shape == (2, 2)

    @pytest.mark.parametrize("text, where", [("1,2\n3,x\n", "row 2, column 2"), ("1,2\n3\n", "row 2"),
                                             ("a,b\n1,2\n3,nan\n", "row 3, column 2")])
    def test_bad_cells(self, tmp_path, text, where):
        with pytest.raises(InputError, match=where):
            read_csv(write_text(tmp_path / "a.csv", text))

    def test_bad_labels(self, tmp_path):
        with pytest.raises(InputError, match="labels"):
            read_csv(write_text(tmp_path / "a.csv", "1,0\n2,1.5\n"), label_column=True)


class TestDraws:
    def test_round_trip(self, tmp_path, rng):
        x = rng.standard_normal((25, 4))
        d = run_chain(x, PriorConfig.default(4, 2, n_classes=2),
                      ChainSettings(iterations=8, burn_in=3, mode="classifier-unknown-k"),
                      y=rng.integers(1, 3, 25))
        write_draws(tmp_path / "d.jsonl", d, 4)
        head, states = read_draws(tmp_path / "d.jsonl")
        assert head["n_draws"] == 5 and head["m"] == 4
        for a, b in zip(d, states):
            np.testing.assert_array_equal(a.basis, b.basis)
            np.testing.assert_array_equal(a.atoms.class_probs, b.atoms.class_probs)
            np.testing.assert_array_equal(a.labels, b.labels)
            assert a.sigma == b.sigma and a.k == b.k
        assert summarize_states(states) == summarize_states(d.draws)

    def test_not_a_draws_file(self, tmp_path):
        with pytest.raises(InputError):
            read_draws(write_text(tmp_path / "x.jsonl", '{"format": "other"}\n'))

    def test_corrupt_record(self, tmp_path):
        text = json.dumps({"format": "bnpsubspace-draws", "m": 2}) + "\n{not json\n"
        with pytest.raises(InputError, match="line 2"):
            read_draws(write_text(tmp_path / "x.jsonl", text))


class TestConfig:
    def test_sections(self, tmp_path):
        path = write_text(tmp_path / "c.ini", """
[prior]
dp_concentration = 2.5
base_variance = 4
sigma_shape = 2
k_prior = 0, 0.5, 0.5
consistency = 6, 7, 1, 2
[chain]
iterations = 50
burn_in = 10
adapt = auto
""")
        cp = load_config(path)
        prior = prior_from_config(cp, 5, 2)
        assert prior.dp_concentration == 2.5
        np.testing.assert_array_equal(prior.base_cov, 4 * np.eye(2))
        assert prior.sigma_gamma == (2.0, 0.1)
        np.testing.assert_array_equal(prior.k_prior, [0.0, 0.5, 0.5])
        s = settings_from_config(cp, mode="density-unknown-k", seed=None)
        assert (s.iterations, s.burn_in, s.seed, s.adapt) == (50, 10, 0, None)

    def test_inline_comments(self, tmp_path):
        cp = load_config(write_text(tmp_path / "c.ini", "[prior]\nbase_variance = 2   ; atoms\n"))
        np.testing.assert_array_equal(prior_from_config(cp, 3, 1).base_cov, [[2.0]])

    def test_bad_value(self, tmp_path):
        cp = load_config(write_text(tmp_path / "c.ini", "[prior]\ntrunc_atoms = many\n"))
        with pytest.raises(InputError, match=r"\[prior\]"):
            prior_from_config(cp, 3, 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_config(tmp_path / "nope.ini")


class TestCli:
    def test_fit_bookkeeping_and_determinism(self, tmp_path, toy_csv):
        path, _ = toy_csv
        argv = ["fit", "--input", str(path), "--fixed-k", "1", "--iterations", "12", "--burn-in", "4",
                "--thin", "2", "--seed", "5"]
        assert main(argv + ["--output", str(tmp_path / "a")]) == EXIT_OK
        assert main(argv + ["--output", str(tmp_path / "b")]) == EXIT_OK
        a = (tmp_path / "a.draws.jsonl").read_bytes()
        assert a == (tmp_path / "b.draws.jsonl").read_bytes()
        assert len(a.decode().splitlines()) == 1 + 4
        summary = json.loads((tmp_path / "a.summary.json").read_text())
        assert {"L1", "L2"} <= set(summary["estimates"])
        assert len(summary["trace"]["loglik"]) == 12

    def test_malformed_input(self, tmp_path, capsys):
        bad = write_text(tmp_path / "bad.csv", "1,2\n3,oops\n")
        code = main(["fit", "--input", bad, "--output", str(tmp_path / "o"), "--fixed-k", "1"])
        assert code == EXIT_INPUT
        assert "row 2, column 2" in capsys.readouterr().err

    def test_numerical_failure(self, tmp_path, capsys):
        x = np.random.default_rng(0).standard_normal((20, 3))
        x[3, 0] = 1e200
        write_csv(tmp_path / "huge.csv", x)
        with np.errstate(all="ignore"):
            code = main(["fit", "--input", str(tmp_path / "huge.csv"), "--output", str(tmp_path / "h"),
                         "--fixed-k", "1", "--iterations", "3", "--burn-in", "1"])
        assert code == EXIT_NUMERIC
        assert "iteration" in capsys.readouterr().err

    def test_estimate(self, tmp_path, toy_csv, capsys):
        path, _ = toy_csv
        main(["fit", "--input", str(path), "--output", str(tmp_path / "a"), "--fixed-k", "1",
              "--iterations", "10", "--burn-in", "5"])
        capsys.readouterr()
        assert main(["estimate", "--draws", str(tmp_path / "a.draws.jsonl")]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["L1"]["k"] in (0, 1, 2, 3)

    def test_classify_and_predict(self, tmp_path, labelled_csv):
        path, x, y = labelled_csv
        assert main(["fit", "--input", str(path), "--output", str(tmp_path / "c"), "--mode", "classify",
                     "--fixed-k", "1", "--iterations", "60", "--burn-in", "30"]) == EXIT_OK
        assert main(["predict", "--draws", str(tmp_path / "c.draws.jsonl"), "--input", str(path),
                     "--has-labels", "--output", str(tmp_path / "pred.csv")]) == EXIT_OK
        lines = (tmp_path / "pred.csv").read_text().splitlines()
        assert lines[0] == "p1,p2,class"
        classes = np.array([int(ln.split(",")[-1]) for ln in lines[1:]])
        np.testing.assert_array_equal(classes, y)

    def test_parallel_chains(self, tmp_path, labelled_csv):
        path, _, _ = labelled_csv
        assert main(["fit", "--input", str(path), "--output", str(tmp_path / "c"), "--mode", "classify",
                     "--fixed-k", "1", "--iterations", "6", "--burn-in", "2", "--chains", "2"]) == EXIT_OK
        a = (tmp_path / "c.chain1.draws.jsonl").read_text()
        b = (tmp_path / "c.chain2.draws.jsonl").read_text()
        assert a != b

    def test_predict_dimension_mismatch_and_empty(self, tmp_path, labelled_csv):
        path, _, _ = labelled_csv
        main(["fit", "--input", str(path), "--output", str(tmp_path / "c"), "--mode", "classify",
              "--fixed-k", "1", "--iterations", "5", "--burn-in", "2"])
        draws = str(tmp_path / "c.draws.jsonl")
        wide = write_text(tmp_path / "w.csv", "1,2,3,4\n")
        assert main(["predict", "--draws", draws, "--input", wide, "--output", str(tmp_path / "p")]) == EXIT_INPUT
        assert not (tmp_path / "p").exists()
        empty = write_text(tmp_path / "e.csv", "x1,x2,x3\n")
        assert main(["predict", "--draws", draws, "--input", empty, "--output", str(tmp_path / "p")]) == EXIT_OK
        assert (tmp_path / "p").read_text() == "p1,p2,class\n"

    def test_predict_from_single_atom_draw(self, tmp_path, labelled_csv):
        path, _, _ = labelled_csv
        cfg = write_text(tmp_path / "c.ini", "[prior]\ntrunc_atoms = 1\n")
        main(["fit", "--input", str(path), "--output", str(tmp_path / "c"), "--mode", "classify",
              "--fixed-k", "1", "--iterations", "2", "--burn-in", "1", "--config", cfg])
        main(["predict", "--draws", str(tmp_path / "c.draws.jsonl"), "--input", str(path),
              "--has-labels", "--output", str(tmp_path / "p.csv")])
        rows = {ln.rsplit(",", 1)[0] for ln in (tmp_path / "p.csv").read_text().splitlines()[1:]}
        assert len(rows) == 1

    def test_simulate_sidecar(self, tmp_path):
        out = tmp_path / "sim.csv"
        assert main(["simulate", "--output", str(out), "--m", "100", "--k", "2", "--n", "5"]) == EXIT_OK
        truth = json.loads((tmp_path / "sim.csv.truth.json").read_text())
        assert truth["k"] == 2
        np.testing.assert_allclose(truth["origin"][:4], [1 / 3, 1 / 3, 1 / 3, 0.0])
        x, _ = read_csv(out)
        assert x.shape == (5, 100)

    def test_study_rows_and_determinism(self, tmp_path):
        argv = ["study", "--m", "4", "--k", "1", "--n", "50", "--n-test", "10", "--replicates", "1",
                "--iterations", "20", "--burn-in", "10", "--methods", "1,4"]
        assert main(argv + ["--output", str(tmp_path / "a.csv")]) == EXIT_OK
        assert main(argv + ["--output", str(tmp_path / "b.csv")]) == EXIT_OK
        text = (tmp_path / "a.csv").read_text()
        assert text == (tmp_path / "b.csv").read_text()
        assert len(text.splitlines()) == 1 + 2

    def test_validate_prior(self, tmp_path, capsys):
        cfg = write_text(tmp_path / "c.ini", "[prior]\nsigma0_upper = 1\nconsistency = 6, 7, 1, 2\n")
        assert main(["validate-prior", "--config", cfg, "--m", "3"]) == EXIT_OK
        assert "warning: prior condition tau^2 > 4A^2 fails (tau^2=4.0, 4A^2=4.0)" in capsys.readouterr().out

    def test_fit_validate_prior_flag(self, tmp_path, toy_csv, capsys):
        path, _ = toy_csv
        cfg = write_text(tmp_path / "c.ini", "[prior]\nsigma0_upper = 1\nconsistency = 6, 7, 1, 2\n")
        assert main(["fit", "--input", str(path), "--output", str(tmp_path / "o"), "--fixed-k", "1",
                     "--iterations", "3", "--burn-in", "1", "--config", cfg, "--validate-prior"]) == EXIT_OK
        assert "tau^2 > 4A^2 fails" in capsys.readouterr().out
