import numpy as np
import pytest

from tinyasc.cli import main
from tinyasc.models import build
from tinyasc.quant import deployment_model, load_model, save_model


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["make-corpus", "--out", str(root), "--per-class", "2", "--eval-per-class", "1"]) == 0
    assert main(["extract", "--features", "mel", "--data-root", str(root / "audio"), "--out", str(root / "feat" / "audio")]) == 0
    return root


def _m3_files(tmp_path, n):
    spec, params = build("M3", decomposed=True)
    paths = []
    for i in range(n):
        p = tmp_path / f"m3_{i}.lcas"
        save_model(p, deployment_model(spec, params))
        paths.append(str(p))
    return ",".join(paths)


def test_size_report_within_budget(tmp_path, capsys):
    assert main(["size-report", "--models", _m3_files(tmp_path, 3)]) == 0
    out = capsys.readouterr().out
    assert "status=ok" in out and "kb=" in out


def test_size_report_over_budget(tmp_path, capsys):
    assert main(["size-report", "--models", _m3_files(tmp_path, 4)]) == 3
    assert "status=over" in capsys.readouterr().out


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--feature", "mel"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1


def test_data_errors_exit_2(tmp_path):
    (tmp_path / "junk.lcas").write_bytes(b"not a model")
    assert main(["size-report", "--models", str(tmp_path / "junk.lcas")]) == 2
    assert main(["extract", "--features", "mel", "--data-root", str(tmp_path), "--out", str(tmp_path / "f")]) == 2


def test_extract_cache_is_byte_identical(corpus, capsys):
    feat = corpus / "feat" / "audio"
    files = sorted(feat.rglob("*.lcft"))
    assert len(files) == 20
    before = [f.read_bytes() for f in files]
    assert main(["extract", "--features", "mel", "--data-root", str(corpus / "audio"), "--out", str(feat)]) == 0
    assert "0 extracted, 20 cached" in capsys.readouterr().out
    assert main(["extract", "--features", "mel", "--data-root", str(corpus / "audio"), "--out", str(feat), "--force"]) == 0
    assert [f.read_bytes() for f in files] == before


def _train_args(corpus, out, *extra):
    return [
        "train", "--feature", "mel", "--model", "m1", "--decomposed",
        "--feature-dir", str(corpus / "feat"), "--train-csv", str(corpus / "fold1_train.csv"),
        "--meta-csv", str(corpus / "meta.csv"), "--out", str(out), *extra,
    ]


def test_train_zero_epochs_writes_init(corpus, tmp_path):
    out = tmp_path / "m.lcas"
    assert main(_train_args(corpus, out, "--epochs", "0", "--seed", "2")) == 0
    _, init = build("M1", decomposed=True, seed=2)
    stored = load_model(out).tensors
    assert all(np.array_equal(stored[k], init[k]) for k in init)
    assert out.with_suffix(".log").read_text() == ""


def test_train_quantize_evaluate(corpus, tmp_path):
    ck = tmp_path / "m.lcas"
    assert main(_train_args(corpus, ck, "--epochs", "1", "--batch-size", "5")) == 0
    assert ck.with_suffix(".log").read_text().startswith("epoch=1 loss=")
    q = tmp_path / "q.lcas"
    assert main(["quantize", "--in", str(ck), "--out", str(q)]) == 0
    assert load_model(q).is_quantized
    report = tmp_path / "report.txt"
    rc = main([
        "evaluate", "--models", f"{q},{q}", "--features", "mel,mel",
        "--feature-dirs", f"{corpus / 'feat'},{corpus / 'feat'}",
        "--eval-csv", str(corpus / "fold1_evaluate.csv"), "--meta-csv", str(corpus / "meta.csv"),
        "--out", str(report),
    ])
    assert rc == 0
    text = report.read_text()
    assert "Average" in text and "overall acc=" in text and text.count("solo model=") == 2


def test_evaluate_refuses_empty_split(corpus, tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("filename\tscene_label\n")
    rc = main(["evaluate", "--models", "x.lcas", "--features", "mel", "--eval-csv", str(empty), "--data-root", str(corpus)])
    assert rc == 2
    assert "evaluation split is empty" in capsys.readouterr().err


def test_bad_config_is_usage_error(corpus, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("no_such_key=1\n")
    assert main(_train_args(corpus, tmp_path / "m.lcas", "--config", str(cfg))) == 1


def test_selftest(capsys):
    assert main(["selftest", "--seeds", "2"]) == 0
    assert "FAIL" not in capsys.readouterr().out
