import json

import numpy as np
import pytest

import oracles
from partgroup import cli
from partgroup.edges import nms_thin
from partgroup.metrics import EdgeEvalConfig
from partgroup.partition import PartitionConfig, partition
from partgroup.raster import CIHP, decode_raster, read_raster, write_raster
from partgroup.synth import SceneConfig, same_partition


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture()
def scenes(tmp_path):
    out = tmp_path / "scenes"
    assert run("synth", "-n", 3, "--seed", 11, "-o", out) == 0
    return out


def _manifest(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


class TestSynth:
    def test_count_and_determinism(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 7}))
        assert run("synth", cfg, "-n", 5, "-o", tmp_path / "a") == 0
        assert run("synth", cfg, "-n", 5, "-o", tmp_path / "b", "--jobs", 3) == 0
        dirs = sorted(p.name for p in (tmp_path / "a").iterdir() if p.is_dir())
        assert dirs == [f"scene_{i:04d}" for i in range(5)]
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
        seeds = [json.loads((tmp_path / "a" / d / "scene.json").read_text())["seed"] for d in dirs]
        assert seeds == [7, 8, 9, 10, 11]

    def test_count_zero(self, tmp_path, caplog):
        assert run("synth", "-n", 0, "-o", tmp_path / "z") == 0
        assert (tmp_path / "z" / "manifest.jsonl").read_text() == ""
        assert "empty manifest" in caplog.text

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"instances": [0, 2]}))
        assert run("synth", cfg, "-n", 1, "-o", tmp_path / "x") == cli.EXIT_VALIDATION

    def test_infeasible(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"width": 24, "height": 24, "instances": [6, 6],
                                   "max_retries": 3}))
        assert run("synth", cfg, "-n", 1, "-o", tmp_path / "x") == cli.EXIT_VALIDATION


class TestPartitionCmd:
    def test_recovers_ground_truth(self, scenes, tmp_path):
        out = tmp_path / "p"
        assert run("partition", scenes / "manifest.jsonl", "-o", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["failed"] == 0
        for e in summary["entries"]:
            got = read_raster(out / f"{e['id']}.pgm")
            gt = read_raster(scenes / e["id"] / "instances.pgm")
            assert same_partition(got, gt)
            assert e["instances"] == int(gt.max())

    def test_empty_manifest(self, tmp_path, capsys):
        m = tmp_path / "m.jsonl"
        m.write_text("\n")
        assert run("partition", m, "-o", tmp_path / "p") == cli.EXIT_VALIDATION
        assert "empty manifest" in capsys.readouterr().err

    def test_missing_edge_file(self, scenes, tmp_path):
        rows = [json.loads(l) for l in (scenes / "manifest.jsonl").read_text().splitlines()]
        rows[1]["edge"] = "nowhere/edge.fgr"
        m = _manifest(scenes / "broken.jsonl", rows)
        assert run("partition", m, "-o", tmp_path / "p1") == cli.EXIT_IO
        assert run("partition", m, "-o", tmp_path / "p2", "--continue-on-error") == cli.EXIT_PARTIAL
        summary = json.loads((tmp_path / "p2" / "summary.json").read_text())
        assert [e["status"] for e in summary["entries"]] == ["ok", "failed", "ok"]
        assert (tmp_path / "p2" / f"{rows[0]['id']}.pgm").exists()

    def test_manifest_validation(self, tmp_path):
        m = _manifest(tmp_path / "m.jsonl", [{"id": "a", "seg": "x"}, {"id": "a", "seg": "y"}])
        assert run("partition", m, "-o", tmp_path / "p") == cli.EXIT_VALIDATION
        m = _manifest(tmp_path / "m2.jsonl", [{"id": "../evil", "seg": "x"}])
        assert run("partition", m, "-o", tmp_path / "p") == cli.EXIT_VALIDATION
        assert run("partition", tmp_path / "absent.jsonl", "-o", tmp_path / "p") == cli.EXIT_IO

    def test_flags(self, scenes, tmp_path):
        assert run("partition", scenes / "manifest.jsonl", "-o", tmp_path / "p",
                   "--edge-threshold", 0.5, "--min-area", 10, "--min-part-labels", 1,
                   "--taxonomy", "pascal-person-part", "--jobs", 2) == 0
        assert run("partition", scenes / "manifest.jsonl", "-o", tmp_path / "q",
                   "--edge-threshold", 3) == cli.EXIT_VALIDATION
        assert run("partition", scenes / "manifest.jsonl", "-o", tmp_path / "q",
                   "--jobs", 0) == cli.EXIT_VALIDATION


class TestEvaluateCmd:
    def test_perfect(self, scenes, tmp_path):
        out = tmp_path / "r.json"
        assert run("evaluate", scenes / "manifest.jsonl", "-o", out) == 0
        text = out.read_text()
        doc = json.loads(text)
        assert list(doc) == ["version", "config", "seg", "edge", "inst"]
        assert '"mean_iou": 1.000000' in text
        assert '"ods": 1.000000' in text and '"ois": 1.000000' in text
        assert '"ap_vol": 1.000000' in text
        assert set(doc["inst"]["ap"]) == {f"{t / 10:g}" for t in range(1, 10)}

    def test_deterministic_bytes(self, scenes, tmp_path, monkeypatch):
        assert run("evaluate", scenes / "manifest.jsonl", "-o", tmp_path / "a.json") == 0
        monkeypatch.setenv("PARTGROUP_JOBS", "3")
        assert run("evaluate", scenes / "manifest.jsonl", "-o", tmp_path / "b.json") == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_one_third_case(self, tmp_path):
        write_raster(tmp_path / "gt.pgm", np.array([[1, 1, 0, 0]], np.uint8))
        write_raster(tmp_path / "pred.pgm", np.array([[1, 0, 1, 0]], np.uint8))
        m = _manifest(tmp_path / "m.jsonl", [{"id": "a", "seg": "pred.pgm", "gt_seg": "gt.pgm"}])
        assert run("evaluate", m, "--metrics", "seg", "-o", tmp_path / "r.json") == 0
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["seg"]["per_class_iou"]["Hat"] == 0.333333
        assert doc["seg"]["per_class_iou"]["Background"] == 0.333333
        assert doc["edge"] is None and doc["inst"] is None

    def test_missing_gt_names_entry(self, tmp_path, capsys):
        write_raster(tmp_path / "pred.pgm", np.array([[1, 0]], np.uint8))
        m = _manifest(tmp_path / "m.jsonl", [{"id": "img42", "seg": "pred.pgm"}])
        assert run("evaluate", m, "--metrics", "seg") == cli.EXIT_VALIDATION
        assert "img42" in capsys.readouterr().err

    def test_per_image_and_flags(self, scenes, tmp_path):
        out = tmp_path / "r.json"
        assert run("evaluate", scenes / "manifest.jsonl", "-o", out, "--per-image",
                   "--ap-thresholds", "0.5,0.75", "--match-radius-fraction", 0.01) == 0
        doc = json.loads(out.read_text())
        assert [r["id"] for r in doc["images"]] == ["scene_0000", "scene_0001", "scene_0002"]
        assert list(doc["inst"]["ap"]) == ["0.5", "0.75"]
        assert doc["config"]["edge_eval"]["match_radius_fraction"] == 0.01

    def test_matches_oracles_on_100_corrupted_scenes(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"height": 48, "width": 64, "instances": [2, 3],
                                   "edge_dropout": 0.2, "spurious_edge": 0.01,
                                   "label_flip": 0.03}))
        assert run("synth", cfg, "-n", 100, "-o", tmp_path / "s", "--seed", 100) == 0
        entries = cli.load_manifest(tmp_path / "s" / "manifest.jsonl")
        ecfg = EdgeEvalConfig(0.03, (0.25, 0.5, 0.75))
        doc, failures = cli.evaluate_entries(entries, "all", CIHP, PartitionConfig(), ecfg,
                                             (0.1, 0.5, 0.7, 0.9), score_mode="area")
        assert not failures

        conf = np.zeros((CIHP.K, CIHP.K), int)
        rows, opreds, gsets = [], [], {}
        for e in entries:
            seg = read_raster(e.seg)
            prob = read_raster(e.edge)
            conf += oracles.confusion(seg, read_raster(e.gt_seg), CIHP.K)
            thin = nms_thin(prob)
            gt_edge = read_raster(e.gt_edge) > 0
            r = ecfg.radius(*prob.shape)
            rows.append([(oracles.greedy_edge_match(thin > np.float32(t), gt_edge, r),
                          int((thin > np.float32(t)).sum()),
                          oracles.greedy_edge_match(thin > np.float32(t), gt_edge, r),
                          int(gt_edge.sum())) for t in ecfg.thresholds])
            inst = partition(seg, prob).instances
            for iid, pix in oracles.pixel_sets(inst).items():
                opreds.append((e.id, len(pix) / inst.size, len(pix), iid, pix))
            gsets[e.id] = oracles.pixel_sets(read_raster(e.gt_inst))

        assert abs(doc["seg"]["mean_iou"] - oracles.mean_iou(conf)) < 1e-9
        ods, ois = oracles.ods_ois(rows)
        assert abs(doc["edge"]["ods"] - ods) < 1e-9 and abs(doc["edge"]["ois"] - ois) < 1e-9
        exp_ap = oracles.region_ap(opreds, gsets, (0.1, 0.5, 0.7, 0.9))
        assert np.allclose(list(doc["inst"]["ap"].values()), exp_ap, atol=1e-9, rtol=0)
        assert doc["inst"]["ap"]["0.9"] < 1.0  # corruption is actually visible


class TestRender:
    def test_label_zero_black_and_distinct(self, tmp_path):
        g = np.arange(20, dtype=np.uint8).reshape(4, 5)
        write_raster(tmp_path / "l.pgm", g)
        assert run("render", tmp_path / "l.pgm", "-o", tmp_path / "l.ppm") == 0
        data = (tmp_path / "l.ppm").read_bytes()
        assert data.startswith(b"P6\n5 4\n255\n")
        rgb = np.frombuffer(data[len(b"P6\n5 4\n255\n"):], np.uint8).reshape(4, 5, 3)
        assert rgb[0, 0].tolist() == [0, 0, 0]
        assert len({tuple(p) for p in rgb.reshape(-1, 3).tolist()}) == 20

    def test_instances_deterministic(self, tmp_path):
        g = np.random.default_rng(0).integers(0, 40, (10, 10)).astype(np.int32)
        write_raster(tmp_path / "i.pgm", g, "instance")
        assert run("render", tmp_path / "i.pgm", "-o", tmp_path / "a.ppm") == 0
        assert run("render", tmp_path / "i.pgm", "-o", tmp_path / "b.ppm") == 0
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
        rgb = cli.render_grid(g)
        assert np.all(rgb[g == 0] == 0)
        assert len({tuple(p) for p in rgb[g > 0].tolist()}) == np.unique(g[g > 0]).size

    def test_prob_gray(self, tmp_path):
        write_raster(tmp_path / "e.fgr", np.array([[0.0, 1.0]], np.float32))
        assert run("render", tmp_path / "e.fgr", "-o", tmp_path / "e.ppm") == 0
        assert (tmp_path / "e.ppm").read_bytes().endswith(bytes([0, 0, 0, 255, 255, 255]))

    def test_unknown_kind(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"GIF89a....")
        assert run("render", tmp_path / "x.bin", "-o", tmp_path / "x.ppm") == cli.EXIT_VALIDATION


class TestPlumbing:
    def test_thresholds(self):
        assert cli.parse_thresholds("0.1:0.1:0.9") == tuple(round(0.1 * i, 1) for i in range(1, 10))
        assert cli.parse_thresholds("0.5, 0.75") == (0.5, 0.75)
        for bad in ("0:0.5:1", "a:b:c", "", "0.5:0:0.9"):
            with pytest.raises(Exception):
                cli.parse_thresholds(bad)

    def test_report_dump(self):
        text = cli.dumps_report({"b": 1.0, "a": [0.1234567, None], "c": {"x": -0.0}})
        assert text == ('{\n  "b": 1.000000,\n  "a": [0.123457, null],\n'
                        '  "c": {\n    "x": 0.000000\n  }\n}\n')

    def test_bad_jobs_env(self, monkeypatch):
        monkeypatch.setenv("PARTGROUP_JOBS", "many")
        assert cli.main(["render", "x", "-o", "y"]) == cli.EXIT_VALIDATION

    def test_usage_error(self):
        assert cli.main(["partition"]) == cli.EXIT_VALIDATION

    def test_scene_config_defaults_roundtrip(self):
        assert SceneConfig.from_dict(SceneConfig().to_dict()) == SceneConfig()

    def test_decode_sniffs(self, scenes):
        assert decode_raster((scenes / "scene_0000" / "edge_prob.fgr").read_bytes()).dtype == np.float32
