import json
import subprocess
import sys

import numpy as np
import pytest

from trpkit.cli import main
from trpkit.geometry import BinaryMask, rle_encode

from generators import TEMPLATES, random_annotations


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def files(tmp_path):
    return {
        "ann": write(tmp_path / "ann.json", random_annotations(0, 12)),
        "bank": write(tmp_path / "bank.json", TEMPLATES),
        "out": str(tmp_path / "corpus.json"),
        "dir": tmp_path,
    }


class TestCorpusCommands:
    def test_build_validate_stats(self, capsys, files):
        code, _, _ = run(capsys, "build", files["ann"], "--task", "det", "--templates", files["bank"],
                         "--seed", "1", "--out", files["out"])
        assert code == 0
        code, out, _ = run(capsys, "validate", files["out"], "--strict")
        assert code == 0 and json.loads(out)["ok"]
        code, out, _ = run(capsys, "stats", files["out"])
        assert code == 0 and json.loads(out)["samples"] == 12

    def test_validate_flags_mutant(self, capsys, files):
        run(capsys, "build", files["ann"], "--task", "det", "--templates", files["bank"],
            "--seed", "1", "--out", files["out"])
        doc = json.loads(open(files["out"]).read())
        doc["samples"][2]["cot"] = doc["samples"][2]["cot"].replace("Num: 1", "Num: 7", 1).replace(
            "Num: 2", "Num: 7", 1)
        path = write(files["dir"] / "bad.json", doc)
        code, out, _ = run(capsys, "validate", path)
        assert code == 1 and json.loads(out)["flagged_samples"] == [2]

    def test_usage_and_io_errors(self, capsys, files):
        code, _, err = run(capsys, "validate", str(files["dir"] / "missing.json"))
        assert code == 2 and "UnreadableFile" in err
        code, _, err = run(capsys, "stats", write(files["dir"] / "x.json", {"samples": 3}))
        assert code == 2 and "SchemaError" in err
        with pytest.raises(SystemExit) as info:
            main(["build", files["ann"], "--task", "pose", "--templates", files["bank"],
                  "--seed", "1", "--out", files["out"]])
        assert info.value.code == 2

    def test_missing_geometry_is_usage_error(self, capsys, files):
        ann = write(files["dir"] / "a.json", random_annotations(0, 2, with_masks=False))
        code, _, err = run(capsys, "build", ann, "--task", "seg", "--templates", files["bank"],
                           "--seed", "0", "--out", files["out"])
        assert code == 2 and "MissingGeometry" in err


class TestMatch:
    def test_box(self, capsys, tmp_path):
        preds = write(tmp_path / "p.json", {"groups": [[[0.5, 0, 1, 1], [0, 0, 0.5, 1]], [[0, 0, 1, 1]]]})
        targets = write(tmp_path / "t.json", {"groups": [[[0, 0, 0.5, 1], [0.5, 0, 1, 1]], [[0, 0, 1, 1]]]})
        code, out, _ = run(capsys, "match", preds, targets, "--unit", "box")
        doc = json.loads(out)
        assert code == 0
        assert [g["pairs"] for g in doc["groups"]] == [[[0, 1], [1, 0]], [[0, 0]]]
        assert doc["total_cost"] == 0

    def test_weights_override(self, capsys, tmp_path):
        preds = write(tmp_path / "p.json", {"groups": [[[0, 0, 0.5, 1]]]})
        targets = write(tmp_path / "t.json", {"groups": [[[0.5, 0, 1, 1]]]})
        code, out, _ = run(capsys, "match", preds, targets, "--unit", "box", "--l1", "1", "--giou", "0")
        assert code == 0 and json.loads(out)["total_cost"] == 0.5

    def test_mask(self, capsys, tmp_path):
        a = np.array([[1, 1], [0, 0]], dtype=bool)
        b = ~a
        preds = write(tmp_path / "p.json", {"groups": [[b.astype(float).tolist(), a.astype(float).tolist()]]})
        targets = write(tmp_path / "t.json", {"groups": [[rle_encode(BinaryMask(a)).to_json(),
                                                          rle_encode(BinaryMask(b)).to_json()]]})
        code, out, _ = run(capsys, "match", preds, targets, "--unit", "mask")
        assert code == 0 and json.loads(out)["groups"][0]["pairs"] == [[0, 1], [1, 0]]

    def test_group_count_mismatch(self, capsys, tmp_path):
        p = write(tmp_path / "p.json", {"groups": [[[0, 0, 1, 1]]]})
        t = write(tmp_path / "t.json", {"groups": []})
        assert run(capsys, "match", p, t, "--unit", "box")[0] == 2


class TestEval:
    def test_iou50(self, capsys, tmp_path):
        p = write(tmp_path / "p.json", {"boxes": [[0, 0, 1, 1], [0, 0, 0.1, 0.1]]})
        t = write(tmp_path / "t.json", {"boxes": [[0, 0, 1, 1], [0.5, 0.5, 1, 1]]})
        code, out, _ = run(capsys, "eval", p, t, "--metric", "iou50")
        assert code == 0 and json.loads(out)["value"] == 0.5

    @pytest.mark.parametrize("metric, value", [("ciou", 0.4), ("miou", 0.25)])
    def test_mask_metrics(self, capsys, tmp_path, metric, value):
        p = write(tmp_path / "p.json", {"masks": [[[1, 1, 1, 0, 0, 0]], [[1, 0, 0]]]})
        t = write(tmp_path / "t.json", {"masks": [[[0, 1, 1, 1, 0, 0]], [[0, 0, 0]]]})
        code, out, _ = run(capsys, "eval", p, t, "--metric", metric)
        assert code == 0 and json.loads(out)["value"] == value

    def test_ap50_and_maps(self, capsys, tmp_path):
        p = write(tmp_path / "p.json", {"detections": [
            {"class": 0, "score": 0.9, "box": [0, 0, 1, 1], "phrase": "person"},
            {"class": 1, "score": 0.8, "box": [0, 0, 0.5, 0.5], "phrase": "red car"}]})
        t = write(tmp_path / "t.json", {"classes": ["person", "red car"], "annotations": [
            {"class": 0, "box": [0, 0, 1, 1]}, {"class": 1, "box": [0, 0, 0.5, 0.5]}]})
        code, out, _ = run(capsys, "eval", p, t, "--metric", "ap50")
        assert code == 0 and json.loads(out)["value"] == 1.0
        code, out, _ = run(capsys, "eval", p, t, "--metric", "maps")
        assert code == 0 and json.loads(out)["value"] == 1.0

    def test_maps_with_table(self, capsys, tmp_path):
        p = write(tmp_path / "p.json", {"detections": [{"score": 1, "box": [0, 0, 1, 1], "phrase": "kid"}]})
        t = write(tmp_path / "t.json", {"classes": ["person", "car"], "annotations": [
            {"class": 0, "box": [0, 0, 1, 1]}]})
        emb = write(tmp_path / "e.json", {"dim": 2, "vectors": {"person": [1, 0], "car": [0, 1], "kid": [2, 0.1]}})
        code, out, _ = run(capsys, "eval", p, t, "--metric", "maps", "--embeddings", emb)
        assert code == 0 and json.loads(out)["value"] == 1.0

    def test_bad_document(self, capsys, tmp_path):
        p = write(tmp_path / "p.json", {"nothing": []})
        assert run(capsys, "eval", p, p, "--metric", "iou50")[0] == 2


class TestAggregateDemo:
    def test_dump(self, capsys, tmp_path):
        feats = np.ones((2, 4, 2, 2)).tolist()
        f = write(tmp_path / "f.json", {"features": feats})
        p = write(tmp_path / "p.json", {"kind": "box", "payload": [0, 0, 1, 1], "queries": 2})
        code, out, _ = run(capsys, "aggregate-demo", f, p)
        doc = json.loads(out)
        assert code == 0 and doc["shape"] == [2, 4, 2]
        assert np.array_equal(np.array(doc["V"]), np.full((2, 4, 2), 4.0))
        fused = np.array(doc["fused"])
        assert np.array_equal(fused[0, 0], [5.0, 5.0])

    def test_point_prompt(self, capsys, tmp_path):
        f = write(tmp_path / "f.json", {"features": np.ones((1, 1, 8, 8)).tolist()})
        p = write(tmp_path / "p.json", {"kind": "point", "payload": [0.5, 0.5]})
        code, out, _ = run(capsys, "aggregate-demo", f, p)
        assert code == 0 and json.loads(out)["V"] == [[[9.0]]]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "trpkit", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "validate" in proc.stdout
