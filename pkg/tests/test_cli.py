import json
import subprocess
import sys

import numpy as np
import pytest

from ccihp_eval.cli import InputError, main, parse_thresholds
from ccihp_eval.dataset_tools import io as dio
from ccihp_eval.dataset_tools.report import parse_table
from ccihp_eval.maskcore import LabelMap


def synth(root, *extra):
    args = ["synth", "--out", str(root), "--images", "6", "--width", "32", "--height", "32",
            "--splits", "train,val", *extra]
    assert main(args) == 0
    return root / "manifest.json", root / "pred"


@pytest.fixture
def fixture(tmp_path):
    return synth(tmp_path / "ds")


def read(path):
    return json.loads(path.read_text())


def test_perfect_eval(fixture, tmp_path):
    gt, pred = fixture
    out = tmp_path / "r.json"
    assert main(["eval", "--gt", str(gt), "--pred", str(pred), "--out", str(out)]) == 0
    r = read(out)
    assert all(e["mean"] == 1.0 for e in r["miou"].values())
    assert r["ap_r"]["overall"] == r["ap_p"]["overall"] == 1.0
    assert all(b["overall"] == 1.0 for b in r["ap_cr"].values())
    assert r["metadata"]["missing_predictions"] == []


def test_naive_and_main_agree_bytewise(tmp_path):
    gt, pred = synth(tmp_path / "ds", "--erosion", "1", "--drop-prob", "0.2", "--relabel-prob", "0.2",
                     "--score-noise", "0.1")
    texts = []
    for engine in ("main", "naive"):
        out = tmp_path / f"{engine}.json"
        assert main(["eval", "--gt", str(gt), "--pred", str(pred), "--engine", engine,
                     "--out", str(out)]) == 0
        doc = read(out)
        doc["metadata"]["config"].pop("engine")
        texts.append(json.dumps(doc, sort_keys=True))
    assert texts[0] == texts[1]


def test_workers_give_identical_bytes(tmp_path):
    gt, pred = synth(tmp_path / "ds", "--erosion", "1", "--score-noise", "0.2")
    outs = set()
    for w in ("1", "2", "8"):
        out = tmp_path / f"w{w}.json"
        assert main(["eval", "--gt", str(gt), "--pred", str(pred), "--workers", w, "--out", str(out)]) == 0
        outs.add(out.read_bytes())
    assert len(outs) == 1


def test_color_block_table(fixture, tmp_path, tax):
    gt, pred = fixture
    out, table = tmp_path / "r.json", tmp_path / "t.md"
    assert main(["eval", "--gt", str(gt), "--pred", str(pred), "--metrics", "apcr", "--tasks", "color",
                 "--out", str(out), "--table", str(table)]) == 0
    block = read(out)["ap_cr"]["color"]
    assert set(block["per_class"]) == set(tax.names("color")) and len(block["per_class"]) == 12
    row = parse_table(table.read_text())["color"]["AP^cr_vol"]
    assert len(row) == 13 and "all" in row


def test_missing_predictions(fixture, tmp_path):
    gt, pred = fixture
    (pred / "img000001.json").unlink()
    out = tmp_path / "r.json"
    assert main(["eval", "--gt", str(gt), "--pred", str(pred), "--out", str(out)]) == 0
    assert read(out)["metadata"]["missing_predictions"] == ["img000001"]
    assert main(["eval", "--gt", str(gt), "--pred", str(pred), "--out", str(out),
                 "--require-complete"]) == 1


def test_input_errors_exit_one(fixture, tmp_path):
    gt, pred = fixture
    assert main(["eval", "--gt", str(tmp_path / "nope.json")]) == 1
    assert main(["eval", "--gt", str(gt), "--thresholds", "0.5:0.1:0.1"]) == 1
    assert main(["eval", "--gt", str(gt), "--metrics", "map"]) == 1
    assert main(["eval", "--gt", str(gt), "--pred", str(tmp_path / "none")]) == 1


def test_thresholds_parse():
    assert parse_thresholds("0.1:0.9:0.1") == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    assert parse_thresholds("0.5,0.75") == (0.5, 0.75)
    with pytest.raises(InputError):
        parse_thresholds("0:1:0.5")


def test_validate_clean(fixture, tmp_path):
    gt, _ = fixture
    out = tmp_path / "v.json"
    assert main(["validate", "--gt", str(gt), "--out", str(out)]) == 0
    assert read(out)["images"] == {}


def test_validate_sparse_over_pants(fixture, tmp_path, tax):
    gt, _ = fixture
    manifest = dio.load_manifest(gt)
    entry = manifest.entries[0]
    pants, sparse = tax.class_index("attribute", "Pants"), tax.class_index("size", "Sparse/bald")
    inst = np.ones((32, 32), np.uint16)
    attr = np.full((32, 32), pants, np.uint8)
    size = np.zeros((32, 32), np.uint8)
    size[:2, :3] = sparse
    root = manifest.root
    dio.write_label_raster(root / entry.paths["instance"], LabelMap("instance", inst))
    dio.write_label_raster(root / entry.paths["attribute"], LabelMap("attribute", attr))
    dio.write_label_raster(root / entry.paths["size"], LabelMap("size", size))
    for t in ("pattern", "color"):
        dio.write_label_raster(root / entry.paths[t], LabelMap(t, np.zeros((32, 32), np.uint8)))
    out = tmp_path / "v.json"
    assert main(["validate", "--gt", str(gt), "--out", str(out)]) == 1
    [v] = read(out)["images"][entry.image_id]
    assert (v["code"], v["severity"], v["pixels"]) == ("V2", "error", 6)


def test_validate_strict_fails_on_warnings(fixture, tax):
    gt, _ = fixture
    manifest = dio.load_manifest(gt)
    entry = manifest.entries[0]
    face = tax.class_index("attribute", "Face")
    inst = np.ones((32, 32), np.uint16)
    color = np.zeros((32, 32), np.uint8)
    color[0, 0] = 1
    dio.write_label_raster(manifest.root / entry.paths["instance"], LabelMap("instance", inst))
    dio.write_label_raster(manifest.root / entry.paths["attribute"],
                           LabelMap("attribute", np.full((32, 32), face, np.uint8)))
    for t in ("size", "pattern"):
        dio.write_label_raster(manifest.root / entry.paths[t], LabelMap(t, np.zeros((32, 32), np.uint8)))
    dio.write_label_raster(manifest.root / entry.paths["color"], LabelMap("color", color))
    assert main(["validate", "--gt", str(gt), "--tolerance", "0"]) == 0
    assert main(["validate", "--gt", str(gt), "--tolerance", "0", "--strict"]) == 1


def test_stats_and_truth(fixture, tmp_path):
    gt, _ = fixture
    out = tmp_path / "s.json"
    assert main(["stats", "--gt", str(gt), "--out", str(out)]) == 0
    stats, truth = read(out), read(gt.parent / "truth.json")
    assert stats["images"] == truth["totals"]["images"] == 6
    assert stats["images_per_split"] == {"train": 3, "val": 3}
    assert stats["instances_total"] == truth["totals"]["instances_total"]
    for task, counts in truth["totals"]["images_per_label"].items():
        for name, n in counts.items():
            assert stats["images_per_label"][task][name] == n


def test_synth_is_reproducible(tmp_path):
    synth(tmp_path / "a", "--erosion", "1", "--drop-prob", "0.3")
    synth(tmp_path / "b", "--erosion", "1", "--drop-prob", "0.3")
    for rel in ("truth.json", "pred/img000003.json", "gt/img000002_attribute.png"):
        if (tmp_path / "a" / rel).exists():
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_console_entry_point(fixture):
    gt, _ = fixture
    proc = subprocess.run([sys.executable, "-m", "ccihp_eval.cli", "validate", "--gt", str(gt)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "ccihp_eval.cli", "eval"], capture_output=True, text=True)
    assert proc.returncode == 2  # argparse usage error
