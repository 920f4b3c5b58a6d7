import pytest

from unlearn import dataset
from unlearn.cli import main


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def pipeline(tmp_path):
    ds, tr, te = tmp_path / "ds.bin", tmp_path / "tr.bin", tmp_path / "te.bin"
    assert run("generate", "--synthetic", "--rows", 200, "--d", 8, "-o", ds) == 0
    assert run("preprocess", "-i", ds, "--train-out", tr, "--test-out", te) == 0
    return tmp_path


FAST = ["--n-trees", 2, "--max-depth", 4, "--sizes", "10,40"]


def test_generate_synthetic(tmp_path):
    out = tmp_path / "ds.bin"
    assert run("generate", "--synthetic", "--rows", 2000, "--d", 64, "-o", out) == 0
    ds = dataset.load(out)
    assert ds.features.shape == (2000, 64)


def test_generate_csv(tmp_path, capsys):
    src = tmp_path / "t.csv"
    src.write_text("user_id,label,text\na,1,buy now\nb,0,hi there\nc,0,ok\n")
    out = tmp_path / "ds.bin"
    assert run("generate", "--csv", src, "-o", out) == 0
    assert dataset.load(out).rows == 3
    assert "3 rows" in capsys.readouterr().out


def test_generate_csv_schema_error(tmp_path, capsys):
    src = tmp_path / "t.csv"
    src.write_text("user_id,text\na,hi\n")
    assert run("generate", "--csv", src, "-o", tmp_path / "x.bin") == 1
    assert "t.csv" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["generate", "-o", "x.bin"],
    ["generate", "--csv", "missing.csv", "-o", "x.bin"],
    ["preprocess", "-i", "missing.bin", "--train-out", "a", "--test-out", "b"],
])
def test_usage_errors(tmp_path, monkeypatch, args):
    monkeypatch.chdir(tmp_path)
    assert run(*args) == 2


def test_conflicting_sources(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("generate", "--synthetic", "--csv", "a.csv", "-o", tmp_path / "x.bin")
    assert exc.value.code == 2


def test_preprocess_split(pipeline, tmp_path):
    ds, tr, te = tmp_path / "d2.bin", tmp_path / "tr2.bin", tmp_path / "te2.bin"
    run("generate", "--synthetic", "--rows", 2000, "--d", 4, "-o", ds)
    assert run("preprocess", "-i", ds, "--train-out", tr, "--test-out", te) == 0
    assert (dataset.load(tr).rows, dataset.load(te).rows) == (1400, 600)


def test_preprocess_deterministic(pipeline):
    first = (pipeline / "tr.bin").read_bytes()
    run("preprocess", "-i", pipeline / "ds.bin", "--train-out", pipeline / "tr.bin", "--test-out", pipeline / "te.bin")
    assert (pipeline / "tr.bin").read_bytes() == first


def test_preprocess_single_class(tmp_path, caplog):
    import numpy as np

    p = tmp_path / "one.bin"
    dataset.save(dataset.Dataset(np.zeros((6, 2)), np.ones(6, np.uint8)), p)
    assert run("preprocess", "-i", p, "--train-out", tmp_path / "a", "--test-out", tmp_path / "b") == 0
    assert "single class" in caplog.text


def test_preprocess_malformed(tmp_path, capsys):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nonsense")
    assert run("preprocess", "-i", p, "--train-out", tmp_path / "a", "--test-out", tmp_path / "b") == 1
    assert "offset" in capsys.readouterr().err


def _bench(d, *extra):
    return run("bench", "--train", d / "tr.bin", "--test", d / "te.bin", "--log", d / "r.log", "--csv", d / "r.csv",
               *FAST, *extra)


def _rows(path):
    return path.read_text().count("\n") - 1


def test_pipeline_end_to_end(pipeline):
    assert _bench(pipeline, "--verify") == 0
    assert _rows(pipeline / "r.csv") == 12
    assert run("tidy", pipeline / "r.log", "-o", pipeline / "t.csv") == 0
    assert (pipeline / "t.csv").read_bytes() == (pipeline / "r.csv").read_bytes()
    assert run("plot", pipeline / "r.csv", "-o", pipeline / "r.svg") == 0
    assert (pipeline / "r.svg").read_text().count('class="panel"') == 3


def test_bench_filters_and_repeats(pipeline):
    assert _bench(pipeline, "--strategies", "sisa_dare") == 0
    assert _rows(pipeline / "r.csv") == 6
    assert _bench(pipeline, "--repeats", 3) == 0
    assert _rows(pipeline / "r.csv") == 36


def test_bench_rejects_unknown_strategy(pipeline):
    assert _bench(pipeline, "--strategies", "magic") == 2


def test_config_precedence(pipeline, monkeypatch):
    cfg = pipeline / "bench.cfg"
    cfg.write_text("# overrides\nstrategies = naive\nrepeats = 2\n")
    assert _bench(pipeline, "--config", cfg) == 0
    assert _rows(pipeline / "r.csv") == 12
    assert _bench(pipeline, "--config", cfg, "--repeats", 1) == 0
    assert _rows(pipeline / "r.csv") == 6


def test_config_unknown_key(pipeline):
    cfg = pipeline / "bad.cfg"
    cfg.write_text("nonsense = 1\n")
    assert _bench(pipeline, "--config", cfg) == 2


def test_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("UNLEARN_SEED", "17")
    run("generate", "--synthetic", "--rows", 20, "--d", 2, "-o", tmp_path / "a.bin")
    monkeypatch.delenv("UNLEARN_SEED")
    run("generate", "--synthetic", "--rows", 20, "--d", 2, "--seed", 17, "-o", tmp_path / "b.bin")
    run("generate", "--synthetic", "--rows", 20, "--d", 2, "-o", tmp_path / "c.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.bin").read_bytes() != (tmp_path / "c.bin").read_bytes()


def test_tidy_errors(tmp_path, capsys):
    log = tmp_path / "r.log"
    log.write_text("=== trial 1 ===\nstrategy: naive\n")
    assert run("tidy", log, "-o", tmp_path / "r.csv") == 1
    assert "line 1" in capsys.readouterr().err
    log.write_text("")
    assert run("tidy", log, "-o", tmp_path / "r.csv") == 0
    assert _rows(tmp_path / "r.csv") == 0


def test_plot_empty(tmp_path):
    src = tmp_path / "r.csv"
    src.write_text("")
    assert run("plot", src, "-o", tmp_path / "r.svg") == 1
    assert not (tmp_path / "r.svg").exists()


def test_selftest(capsys):
    assert run("selftest", "--instances", 10) == 0
    assert "0 failed" in capsys.readouterr().out


def test_selftest_negative_control(capsys):
    assert run("selftest", "--instances", 5, "--corrupt-counts") == 1
    assert "count conservation" in capsys.readouterr().out
