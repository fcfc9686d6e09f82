"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
collected into the "acceptance criteria" section of the terminal summary.
"""

import itertools
import math
import re

import numpy as np
import pytest

from tinyasc import SCENES
from tinyasc.augment import AugmentConfig, Batch, augment_batch
from tinyasc.checks import LAYER_CASES, check_layer, check_network
from tinyasc.cli import main
from tinyasc.data import make_corpus, parse_manifest, synth_clip
from tinyasc.frontend import AudioClip, FilterbankKind, FrontendConfig, extract, write_wav
from tinyasc.fusion import decide, evaluate, fuse_and_decide, prod_fuse
from tinyasc.models import build, build_spec, shape_trace
from tinyasc.nn import conv_weight_count
from tinyasc.quant import checkpoint, deployment_model, save_model, serialize, to_network
from tinyasc.train import TrainConfig, accuracy, fit, kl_loss, one_hot

# Published int8 sizes (KB) of the decomposed models.
PUBLISHED_KB = {"M1": 10.6, "M2": 10.0, "M3": 36.8}
BUDGET = 128_000


@pytest.fixture(scope="module")
def int8_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("int8")
    files = {}
    for mid in PUBLISHED_KB:
        spec, params = build(mid, decomposed=True)
        files[mid] = d / f"{mid}.lcas"
        save_model(files[mid], deployment_model(spec, params))
    return files


def test_criterion_1_size_budget(accept, int8_files, capsys):
    sizes = {mid: p.stat().st_size for mid, p in int8_files.items()}
    within = {mid: abs(sizes[mid] / 1000 - kb) / kb <= 0.15 for mid, kb in PUBLISHED_KB.items()}
    codes = {}
    for combo in itertools.combinations_with_replacement(PUBLISHED_KB, 3):
        codes[combo] = main(["size-report", "--models", ",".join(str(int8_files[m]) for m in combo)])
    capsys.readouterr()
    worst = max(sum(sizes[m] for m in c) for c in codes)
    ok = all(within.values()) and all(c == 0 for c in codes.values()) and worst < BUDGET
    detail = ", ".join(f"{m}={sizes[m] / 1000:.2f}KB vs {kb}" for m, kb in PUBLISHED_KB.items())
    accept(1, "int8 sizes within 15% and every 3-model ensemble < 128000 B", ok, f"{detail}; worst ensemble {worst} B")
    assert ok


def test_criterion_2_decomposition_ratio(accept):
    ratios = {}
    for mid in ("M2", "M3"):
        dec = conv_weight_count(build_spec(mid, decomposed=True).layers)
        std = conv_weight_count(build_spec(mid).layers)
        ratios[mid] = (dec, std, dec / std)
    ok = all(1 / 9.5 <= r <= 1 / 7.0 for _, _, r in ratios.values())
    detail = ", ".join(f"{m}: {d}/{s} = 1/{s / d:.2f}" for m, (d, s, _) in ratios.items())
    accept(2, "decomposed/standard conv weights in [1/9.5, 1/7]", ok, detail)
    assert ok


def test_criterion_3_quantization_ratio(accept):
    parts = []
    ok = True
    for mid in PUBLISHED_KB:
        spec, params = build(mid, decomposed=True)
        q = len(serialize(deployment_model(spec, params)))
        f = len(serialize(deployment_model(spec, params, quantize=False)))
        ck = len(serialize(checkpoint(spec, params)))
        ok &= 0.24 <= q / f <= 0.30
        parts.append(f"{mid}: {q}/{f} = {q / f:.3f} (vs checkpoint {q / ck:.3f})")
    accept(3, "int8 bytes / fp32 bytes in [0.24, 0.30]", ok, "; ".join(parts))
    assert ok


def test_criterion_4_gradients(accept):
    seeds = range(5)
    per_layer = {
        kind.value: max(max(check_layer(layer, shape, s, mode).values()) for s in seeds for mode in ("train", "infer"))
        for kind, (layer, shape) in LAYER_CASES.items()
    }
    m1 = build_spec("M1", decomposed=True)
    net = max(check_network(m1.layers, (4, 16, 16, 3), 10, s) for s in seeds)
    ok = max(per_layer.values()) < 1e-4 and net < 1e-3
    accept(4, "finite-difference gradients, 5 seeds", ok, f"worst layer {max(per_layer.values()):.1e}, M1 end-to-end {net:.1e}")
    assert ok


def _oracle_argmax(v):
    scores = [sum(math.log(v[s][c]) for s in range(len(v))) for c in range(len(v[0]))]
    return max(range(len(scores)), key=lambda c: (scores[c], -c))


def test_criterion_5_loss_and_fusion(accept):
    ln10 = kl_loss(one_hot([7], 10), np.full((1, 10), 0.1))
    fused = prod_fuse([[0.6, 0.4], [0.5, 0.5]]).tolist()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(10_000):
        v = rng.uniform(1e-4, 1.0, size=(3, 10)).tolist()
        oracle = _oracle_argmax(v)
        mismatches += (fuse_and_decide(v) != oracle) + (decide(prod_fuse(v)) != oracle)
    ok = abs(ln10 - math.log(10)) < 1e-9 and fused == [0.15, 0.10] and mismatches == 0
    accept(5, "ln 10, exact PROD example, decide vs log oracle", ok, f"kl={ln10:.9f}, fused={fused}, mismatches={mismatches}")
    assert ok


TABLE_TRACES = {
    "M1": [(64, 64, 16), (32, 32, 32), (16, 16, 64), (128,), (10,)],
    "M2": [(128, 128, 16), (64, 64, 16), (64, 64, 32), (32, 32, 32), (16, 16, 64), (64,), (10,)],
    "M3": [(128, 128, 16), (64, 64, 16), (64, 64, 32), (32, 32, 32), (32, 32, 64), (16, 16, 64), (16, 16, 128), (128,), (10,)],
}


def test_criterion_6_shapes(accept):
    clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 44100), 44100)
    feats = {k.short: extract(clip, FrontendConfig(filterbank_kind=k)).shape for k in FilterbankKind}
    batch = Batch(np.stack([extract(clip, FrontendConfig())] * 4), one_hot([0, 1, 2, 3], 10))
    aug = augment_batch(batch, AugmentConfig(), np.random.default_rng(0)).inputs.shape
    traces = {m: all(shape_trace(build_spec(m, d)) == t for d in (False, True)) for m, t in TABLE_TRACES.items()}
    ok = all(s == (128, 135, 3) for s in feats.values()) and aug == (4, 128, 128, 3) and all(traces.values())
    accept(6, "front-end, augmentation and table shape traces", ok, f"features {feats}, augmented {aug[1:]}, traces {traces}")
    assert ok


def test_criterion_7_overfit_and_quantized_accuracy(accept):
    rng = np.random.default_rng(7)
    cfg = FrontendConfig()
    labels = np.array([i % 2 for i in range(20)])
    # two textures: broadband noise vs a steady tone
    feats = np.stack([extract(AudioClip(synth_clip(0 if y == 0 else 5, rng), 44100), cfg) for y in labels])
    train_cfg = TrainConfig(epochs=40, seed=0)
    spec, params, history = fit(feats, labels, "M1", True, train_cfg, AugmentConfig(), num_classes=10)
    best_epoch = next((e.epoch for e in history if e.acc == 1.0), None)
    float_acc = accuracy(spec, params, feats, labels)
    qspec, qparams = to_network(deployment_model(spec, params))
    quant_acc = accuracy(qspec, qparams, feats, labels)
    drop = 100 * (float_acc - quant_acc)
    ok = best_epoch is not None and float_acc == 1.0 and drop <= 5 and history[-1].loss < history[0].loss
    accept(
        7, "overfit 20 clips / 2 classes, int8 loses <= 5 points", ok,
        f"100% at epoch {best_epoch} of {train_cfg.epochs}, final float {100 * float_acc:.0f}%, int8 {100 * quant_acc:.0f}%",
    )
    assert ok


@pytest.mark.slow
def test_criterion_8_end_to_end_smoke(accept, tmp_path, capsys):
    root = tmp_path / "corpus"
    assert main(["make-corpus", "--out", str(root), "--per-class", "4", "--eval-per-class", "2"]) == 0
    models, dirs = [], []
    for kind in ("mel", "gam", "cqt"):
        fdir = tmp_path / f"feat_{kind}"
        assert main(["extract", "--features", kind, "--data-root", str(root), "--out", str(fdir)]) == 0
        ck, q = tmp_path / f"{kind}.ckpt", tmp_path / f"{kind}.lcas"
        rc = main([
            "train", "--feature", kind, "--model", "m1", "--decomposed", "--feature-dir", str(fdir),
            "--train-csv", str(root / "fold1_train.csv"), "--meta-csv", str(root / "meta.csv"),
            "--epochs", "80", "--batch-size", "5", "--seed", "0", "--out", str(ck),
        ])
        assert rc == 0
        assert main(["quantize", "--in", str(ck), "--out", str(q)]) == 0
        models.append(str(q))
        dirs.append(str(fdir))
    report = tmp_path / "report.txt"
    rc = main([
        "evaluate", "--models", ",".join(models), "--features", "mel,gam,cqt", "--feature-dirs", ",".join(dirs),
        "--eval-csv", str(root / "fold1_evaluate.csv"), "--meta-csv", str(root / "meta.csv"),
        "--fusion", "prod", "--out", str(report),
    ])
    capsys.readouterr()
    text = report.read_text()
    lines = text.splitlines()
    class_rows = [l for l in lines if any(l.startswith(t) for t in ("Airport", "Bus", "Metro", "Park", "Public", "Shopping", "Street", "Tram"))]
    device_rows = [l for l in lines if l.startswith("Device ")]
    fused = float(re.search(r"^overall acc=([\d.]+)", text, re.M).group(1))
    solos = {m.group(1): float(m.group(2)) for m in re.finditer(r"^solo model=\S+ feature=(\w+) acc=([\d.]+)", text, re.M)}
    ok = (
        rc == 0 and len(class_rows) == 10 and len(device_rows) > 0
        and any(l.startswith("Average") for l in lines)
        and len(solos) == 3 and all(fused >= a for a in solos.values())
    )
    solo_txt = ", ".join(f"{k} {v:.0f}%" for k, v in solos.items())
    accept(8, "40-clip smoke: report shape and fused >= each solo", ok, f"fused {fused:.0f}%, solo {solo_txt}")
    assert ok


DCASE_ROWS = [
    # filename, scene_label, identifier, source_label (meta schema)
    ("audio/airport-lisbon-1000-40000-0-a.wav", "airport", "lisbon-1000", "a"),
    ("audio/bus-lyon-1001-40000-1-b.wav", "bus", "lyon-1001", "b"),
    ("audio/metro-helsinki-1002-40000-2-c.wav", "metro", "helsinki-1002", "c"),
    ("audio/metro_station-paris-1003-40000-3-s1.wav", "metro_station", "paris-1003", "s1"),
    ("audio/park-prague-1004-40000-4-s2.wav", "park", "prague-1004", "s2"),
    ("audio/public_square-vienna-1005-40000-5-s3.wav", "public_square", "vienna-1005", "s3"),
    ("audio/shopping_mall-milan-1006-40000-6-s4.wav", "shopping_mall", "milan-1006", "s4"),
    ("audio/street_pedestrian-london-1007-40000-7-s5.wav", "street_pedestrian", "london-1007", "s5"),
    ("audio/street_traffic-stockholm-1008-40000-8-s6.wav", "street_traffic", "stockholm-1008", "s6"),
    ("audio/tram-barcelona-1009-40000-9-a.wav", "tram", "barcelona-1009", "a"),
]


def test_criterion_9_dcase_manifest_ingest(accept, tmp_path, capsys):
    train_csv = tmp_path / "fold1_train.csv"
    eval_csv = tmp_path / "fold1_evaluate.csv"
    meta_csv = tmp_path / "meta.csv"
    train_csv.write_text("filename\tscene_label\n" + "".join(f"{r[0]}\t{r[1]}\n" for r in DCASE_ROWS[:3]))
    eval_csv.write_text("filename\tscene_label\n" + "".join(f"{r[0]}\t{r[1]}\n" for r in DCASE_ROWS[3:]))
    meta_csv.write_text("filename\tscene_label\tidentifier\tsource_label\n" + "".join("\t".join(r) + "\n" for r in DCASE_ROWS))
    manifest = parse_manifest(train_csv, eval_csv, meta_csv)
    rng = np.random.default_rng(9)
    for path, scene, _, _ in DCASE_ROWS:
        write_wav(tmp_path / path, AudioClip(synth_clip(SCENES.index(scene), rng), 44100))
    spec, params = build("M1", decomposed=True)
    model = tmp_path / "m1.lcas"
    save_model(model, deployment_model(spec, params))
    report = tmp_path / "report.txt"
    rc = main([
        "evaluate", "--models", str(model), "--features", "mel", "--data-root", str(tmp_path),
        "--eval-csv", str(eval_csv), "--meta-csv", str(meta_csv), "--out", str(report),
    ])
    capsys.readouterr()
    records = report.read_text()
    devices_seen = {m.group(1) for m in re.finditer(r"^device=(\w+) acc=[\d.]+ n=[1-9]", records, re.M)}
    ok = (
        rc == 0
        and len(manifest.split("train")) == 3 and len(manifest.split("eval")) == 7
        and devices_seen == {"s1", "s2", "s3", "s4", "s5", "s6", "a"}
        and "overall acc=" in records
    )
    accept(
        9, "DCASE-format manifest ingested unmodified (full-corpus reproduction out of scope)", ok,
        f"{len(manifest.entries)} rows, eval devices {sorted(devices_seen)}",
    )
    assert ok
