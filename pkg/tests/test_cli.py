import csv
import io

from ulm.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from ulm.dataset import read_ranges, read_records
from ulm.workflow import Predictor


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestDispatch:
    def test_help(self, capsys):
        code, out, _ = run(capsys, "--help")
        assert code == EXIT_OK and "roc-export" in out

    def test_unknown_command(self, capsys):
        assert run(capsys, "fly")[0] == EXIT_USAGE

    def test_unknown_flag(self, capsys):
        assert run(capsys, "synth", "--colour", "red")[0] == EXIT_USAGE

    def test_train_needs_config(self, capsys, fixtures, tmp_path):
        code, _, err = run(capsys, "train", "--data", fixtures / "synthetic.csv",
                           "--out", tmp_path / "m.ckpt")
        assert code == EXIT_USAGE and "--config" in err

    def test_bad_config_is_usage(self, capsys, fixtures, tmp_path):
        (tmp_path / "c.yaml").write_text("model: {kind: rnn}\n", encoding="utf-8")
        code, _, _ = run(capsys, "train", "--config", tmp_path / "c.yaml",
                         "--data", fixtures / "synthetic.csv", "--out", tmp_path / "m.ckpt")
        assert code == EXIT_USAGE

    def test_missing_data_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "ad-ranges", "--data", tmp_path / "nope.csv")
        assert code == EXIT_DATA and "nope.csv" in err

    def test_corrupt_checkpoint(self, capsys, fixtures, tmp_path):
        (tmp_path / "m.ckpt").write_bytes(b"garbage" * 20)
        code, _, err = run(capsys, "predict", "--model", tmp_path / "m.ckpt",
                           "--data", fixtures / "paper_rows.csv")
        assert code == EXIT_DATA and "magic" in err


class TestDataCommands:
    def test_synth_to_stdout_matches_file(self, capsys, fixtures, tmp_path):
        code, out, _ = run(capsys, "synth", "--config", fixtures / "toy.yaml")
        assert code == EXIT_OK
        assert out == (fixtures / "synthetic.csv").read_text(encoding="utf-8")

    def test_synth_seed_flag(self, capsys, fixtures):
        _, a, _ = run(capsys, "synth", "--config", fixtures / "toy.yaml", "--n", "20")
        _, b, _ = run(capsys, "synth", "--config", fixtures / "toy.yaml", "--n", "20", "--seed", "99")
        assert len(a.splitlines()) == 21 and a != b

    def test_ad_ranges(self, capsys, fixtures, tmp_path):
        code, _, _ = run(capsys, "ad-ranges", "--data", fixtures / "synthetic.csv",
                         "--out", tmp_path / "r.csv")
        assert code == EXIT_OK
        ranges = read_ranges(tmp_path / "r.csv")
        assert len(ranges) == 31
        assert (ranges[13].min, ranges[13].max) == (0.0, 1.0)

    def test_prepare(self, capsys, fixtures, tmp_path):
        code, out, _ = run(capsys, "prepare", "--data", fixtures / "synthetic.csv",
                           "--out", tmp_path / "p")
        assert code == EXIT_OK and "320 train, 80 test" in out
        train = read_records(tmp_path / "p" / "train.csv")
        test = read_records(tmp_path / "p" / "test.csv")
        assert len(train) == 320 and len(test) == 80


class TestModelCommands:
    def test_train_outputs(self, capsys, fixtures, tmp_path):
        code, _, _ = run(capsys, "train", "--config", fixtures / "toy.yaml",
                         "--data", fixtures / "synthetic.csv", "--out", tmp_path / "toy.ckpt")
        assert code == EXIT_OK
        assert (tmp_path / "toy.ckpt").read_bytes() == (fixtures / "toy.ckpt").read_bytes()
        assert (tmp_path / "toy.history.csv").read_bytes() == \
            (fixtures / "toy.history.csv").read_bytes()
        assert (tmp_path / "toy.history.png").read_bytes()[:4] == b"\x89PNG"

    def test_train_mlp_b_histories(self, capsys, fixtures, tmp_path):
        (tmp_path / "b.yaml").write_text(
            "seed: 1\nmodel: {kind: mlp_b, hidden: 8}\ntrain: {max_epochs: 2}\n", encoding="utf-8")
        code, _, _ = run(capsys, "train", "--config", tmp_path / "b.yaml",
                         "--data", fixtures / "synthetic.csv", "--out", tmp_path / "b.ckpt")
        assert code == EXIT_OK
        for c in ("glu", "chol", "fer", "uric"):
            assert (tmp_path / f"b.history_{c}.csv").exists()
        assert Predictor.from_file(tmp_path / "b.ckpt").model.kind == "mlp_b"

    def test_eval(self, capsys, fixtures):
        code, out, _ = run(capsys, "eval", "--model", fixtures / "toy.ckpt",
                           "--data", fixtures / "synthetic.csv")
        assert code == EXIT_OK
        table = out[:out.index("AUC GLU")]
        rows = list(csv.DictReader(io.StringIO(table)))
        assert [r["target"] for r in rows] == ["GLU", "CHOL", "FER", "URIC"]
        for r in rows:
            assert 0.0 <= float(r["auc"]) <= 1.0
            assert sum(int(r[k]) for k in ("tp", "tn", "fp", "fn")) == int(r["n"])
        assert out.count("AUC ") == 4

    def test_predict_paper_rows(self, capsys, fixtures, tmp_path):
        code, _, err = run(capsys, "predict", "--model", fixtures / "toy.ckpt",
                           "--data", fixtures / "paper_rows.csv", "--out", tmp_path / "p.csv")
        assert code == EXIT_OK
        assert "row 5: skipped: HGB out of applicability domain [11, 215]" in err
        assert "row 6: skipped: empty source set" in err
        assert "row 3: skipped: UREA out of applicability domain" in err
        rows = list(csv.DictReader(open(tmp_path / "p.csv", encoding="utf-8")))
        assert [r["row"] for r in rows] == ["1", "2", "4"]
        first = rows[0]
        probs = [float(first[f"prob_{c}"]) for c in ("glu", "chol", "fer", "uric")]
        assert all(0 < p < 1 for p in probs)
        assert float(first["observed_fer"]) == 8.67 and first["observed_chol"] == ""

    def test_targets_never_reach_model(self, capsys, fixtures, tmp_path):
        """Changing observed target values leaves every probability untouched."""
        text = (fixtures / "paper_rows.csv").read_text(encoding="utf-8")
        (tmp_path / "alt.csv").write_text(text.replace("5.37", "9.99").replace("8.67", "300"),
                                          encoding="utf-8")
        run(capsys, "predict", "--model", fixtures / "toy.ckpt", "--data",
            fixtures / "paper_rows.csv", "--out", tmp_path / "a.csv")
        run(capsys, "predict", "--model", fixtures / "toy.ckpt", "--data",
            tmp_path / "alt.csv", "--out", tmp_path / "b.csv")
        a = list(csv.DictReader(open(tmp_path / "a.csv", encoding="utf-8")))
        b = list(csv.DictReader(open(tmp_path / "b.csv", encoding="utf-8")))
        for ra, rb in zip(a, b):
            assert [ra[k] for k in ra if k.startswith("prob")] == \
                [rb[k] for k in rb if k.startswith("prob")]

    def test_predict_nothing_accepted(self, capsys, fixtures, tmp_path):
        (tmp_path / "bad.csv").write_text("gender,age,HGB\nM,40,300\nF,30,\n", encoding="utf-8")
        code, _, err = run(capsys, "predict", "--model", fixtures / "toy.ckpt",
                           "--data", tmp_path / "bad.csv")
        assert code == EXIT_DATA
        assert "row 1: skipped" in err and "row 2: skipped: empty source set" in err

    def test_roc_export(self, capsys, fixtures, tmp_path):
        code, out, _ = run(capsys, "roc-export", "--model", fixtures / "toy.ckpt",
                           "--data", fixtures / "synthetic.csv", "--out", tmp_path / "roc")
        assert code == EXIT_OK
        for c in ("glu", "chol", "fer", "uric"):
            lines = (tmp_path / "roc" / f"roc_{c}.csv").read_text(encoding="utf-8").splitlines()
            assert lines[0] == "threshold,fpr,tpr" and lines[-1].endswith(",1.0,1.0")
        assert (tmp_path / "roc" / "roc.png").read_bytes()[:4] == b"\x89PNG"

    def test_reproducible_outputs(self, capsys, fixtures, tmp_path):
        for k in range(2):
            run(capsys, "roc-export", "--model", fixtures / "toy.ckpt",
                "--data", fixtures / "synthetic.csv", "--out", tmp_path / f"r{k}")
        for name in ("roc_glu.csv", "roc.png"):
            assert (tmp_path / "r0" / name).read_bytes() == (tmp_path / "r1" / name).read_bytes()

    def test_serve_busy_port(self, capsys, fixtures):
        import socket
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            s.listen(1)
            port = s.getsockname()[1]
            code, _, err = run(capsys, "serve", "--model", fixtures / "toy.ckpt", "--port", port)
        assert code == EXIT_DATA and "cannot bind" in err
