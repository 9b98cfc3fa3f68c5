import csv
import json
from pathlib import Path

import numpy as np
import pytest

from fpliveness import pipeline
from fpliveness.cli import main
from fpliveness.dataset import DatasetError, ingest_dataset
from fpliveness.image import GrayImage, load_image, save_png
from fpliveness.metrics import FingerprintResult, PatchScore
from fpliveness.orientation import GridParams, build_orientation_field
from fpliveness.overlay import GREEN, RED, marker_box, render_overlay
from fpliveness.patches import Label, PatchParams, read_manifest
from fpliveness.synthetic import generate_synthetic_ridge, synthetic_fingerprint, write_synthetic_dataset

from conftest import SMALL, gray

REDUCED = {
    "seed": 0,
    "sigma": 4,
    "patch_multiplier": 4,
    "padding_multiplier": 1,
    "noise_factor": 0.1,
    "block_filters": [8, 16],
    "block_dropout": [0.2, 0.3],
    "epochs": 3,
    "batch_size": 32,
}


def write_config(path: Path, **extra) -> Path:
    path.write_text(json.dumps({**REDUCED, **extra}))
    return path


def make_tree(root: Path, n_live=2, n_spoof=2):
    for split in ("train", "test"):
        for label, n in (("live", n_live), ("spoof", n_spoof)):
            d = root / split / label
            d.mkdir(parents=True)
            for i in range(n):
                save_png(gray(np.full((8, 8), 10 * i)), d / f"{i}.png")


class TestIngest:
    def test_counts_and_split(self, tmp_path):
        make_tree(tmp_path)
        m = ingest_dataset(tmp_path)
        train = m.split("train")
        assert len(train) == 4
        assert sorted(e.label.value for e in train) == ["live", "live", "spoof", "spoof"]
        assert all(e.split == "train" and e.path.exists() for e in train)

    def test_empty_tree(self, tmp_path):
        for split in ("train", "test"):
            for label in ("live", "spoof"):
                (tmp_path / split / label).mkdir(parents=True)
        with pytest.raises(DatasetError, match="zero images"):
            ingest_dataset(tmp_path)

    def test_missing_subdirectory(self, tmp_path):
        (tmp_path / "train" / "live").mkdir(parents=True)
        with pytest.raises(DatasetError, match="missing subdirectory"):
            ingest_dataset(tmp_path)

    def test_deterministic(self, tmp_path):
        make_tree(tmp_path)
        assert ingest_dataset(tmp_path).to_csv() == ingest_dataset(tmp_path).to_csv()

    def test_multiple_scanners(self, tmp_path):
        make_tree(tmp_path / "scanA")
        make_tree(tmp_path / "scanB", n_live=1)
        m = ingest_dataset(tmp_path)
        assert {e.scanner for e in m.entries} == {"scanA", "scanB"}
        for split in ("train", "test"):
            entries = m.split(split)
            assert len({e.source_id for e in entries}) == len(entries)


class TestSynthetic:
    def test_zero_degrees_rows_constant(self):
        img = generate_synthetic_ridge(40, 30, 0, 8, 100, noise_std=0)
        assert np.all(img.pixels == img.pixels[0])
        f = build_orientation_field(img, GridParams(5))
        assert np.all(f.unit_mag_y == 0) and np.all(f.unit_mag_x == 1)

    def test_ninety_degrees_vertical_gradient(self):
        img = generate_synthetic_ridge(40, 30, 90, 8, 100, noise_std=0)
        assert np.all(img.pixels == img.pixels[:, :1])
        f = build_orientation_field(img, GridParams(5))
        assert np.all(f.unit_mag_x == 0) and np.all(f.unit_mag_y == 1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            generate_synthetic_ridge(10, 10, 0, 3, 100)
        with pytest.raises(ValueError):
            generate_synthetic_ridge(10, 10, 0, 8, 0)

    def test_seeded(self):
        a = synthetic_fingerprint(64, 64, Label.LIVE, 5)
        assert a == synthetic_fingerprint(64, 64, Label.LIVE, 5)
        assert a != synthetic_fingerprint(64, 64, Label.LIVE, 6)


class TestOverlay:
    def test_no_patches(self, rng):
        img = gray(rng.integers(0, 256, (30, 40)))
        out = render_overlay(img, FingerprintResult("x"), SMALL)
        assert np.array_equal(out, np.repeat(img.pixels[..., None], 3, axis=2))

    def test_single_live_square(self):
        img = gray(np.full((40, 40), 100))
        result = FingerprintResult.from_scores("x", [(0, 0)], [PatchScore(0.8, 0.2)])
        out = render_overlay(img, result, SMALL)
        changed = np.any(out != 100, axis=2)
        ys, xs = np.nonzero(changed)
        # central cells start at (p*sigma) = 4 and span m*sigma = 16 px; the
        # marker is one cell wide and centred on them
        assert (ys.min(), xs.min(), ys.max(), xs.max()) == (10, 10, 13, 13)
        assert out[11, 11, 1] > out[11, 11, 0]

    def test_mixed_audit(self):
        img = gray(np.full((60, 60), 128))
        origins = [(0, 0), (0, 5), (5, 0), (5, 5)]
        scores = [PatchScore(0.9, 0.1), PatchScore(0.2, 0.8), PatchScore(0.3, 0.7), PatchScore(0.6, 0.4)]
        result = FingerprintResult.from_scores("x", origins, scores)
        out = render_overlay(img, result, SMALL)
        for origin, s in zip(origins, scores):
            top, left, side = marker_box(origin, SMALL)
            px = out[top + side // 2, left + side // 2].astype(int)
            if s.decision is Label.LIVE:
                assert px[1] > px[0]
            else:
                assert px[0] > px[1]
        changed = np.any(out != 128, axis=2)
        assert changed.sum() == len(origins) * SMALL.sigma ** 2
        assert GREEN != RED

    def test_inconsistent_geometry(self):
        img = gray(np.full((20, 20), 128))
        result = FingerprintResult.from_scores("x", [(9, 9)], [PatchScore(0.9, 0.1)])
        with pytest.raises(ValueError):
            render_overlay(img, result, SMALL)


class TestRunConfig:
    def test_defaults(self):
        cfg = pipeline.RunConfig()
        assert (cfg.patch.sigma, cfg.patch.patch_multiplier, cfg.patch.padding_multiplier) == (12, 10, 2)
        assert cfg.cnn.input_side == 82 and cfg.train.batch_size == 32

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            pipeline.RunConfig.from_dict({"sigmaa": 4})

    def test_paths_distinct(self, tmp_path):
        with pytest.raises(ValueError):
            pipeline.RunConfig(patches=tmp_path, report=tmp_path)

    def test_shape_mismatch(self):
        cfg = pipeline.RunConfig.from_dict({**REDUCED, "input_side": 24})
        with pytest.raises(pipeline.ShapeMismatchError):
            cfg.check_shapes()

    def test_flags_override_file(self, tmp_path):
        cfg = pipeline.RunConfig.load(write_config(tmp_path / "c.json"), {"sigma": 5, "epochs": None})
        assert cfg.patch.sigma == 5 and cfg.train.epochs == 3


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    cfg = write_config(root / "config.json")
    assert main(["synth", "--out", str(root / "data"), "--n-train", "4", "--n-test", "3", "--size", "96"]) == 0
    assert main(["extract", "--config", str(cfg), "--dataset", str(root / "data"), "--out", str(root / "store")]) == 0
    assert main(["train", "--config", str(cfg), "--patches", str(root / "store"), "--out", str(root / "model.bin")]) == 0
    assert main(["evaluate", "--config", str(cfg), "--patches", str(root / "store"),
                 "--model", str(root / "model.bin"), "--out", str(root / "report")]) == 0
    return root


class TestPipeline:
    def test_manifest_matches_files(self, run_dir):
        for split in ("train", "test"):
            d = run_dir / "store" / split
            rows = read_manifest(d)
            assert rows
            assert len(rows) == len(list(d.glob("*.png")))
            with open(d / "sources.csv") as fh:
                counts = sum(int(r["patch_count"]) for r in csv.DictReader(fh))
            assert counts == len(rows)

    def test_artifacts(self, run_dir):
        assert (run_dir / "model.history.csv").exists()
        assert (run_dir / "model.history.png").read_bytes()[:4] == b"\x89PNG"
        report = json.loads((run_dir / "report" / "report.json").read_text())
        assert set(report) == {"patch", "fingerprint", "unscored"}
        lines = (run_dir / "report" / "report.csv").read_text().splitlines()
        assert lines[0] == "level,tp,tn,fp,fn,far,frr,ace,accuracy"
        assert [l.split(",")[0] for l in lines[1:]] == ["patch", "fingerprint"]
        assert (run_dir / "report" / "report.png").exists()

    def test_fingerprint_accuracy_not_below_patch(self, run_dir):
        report = json.loads((run_dir / "report" / "report.json").read_text())
        assert report["fingerprint"]["accuracy"] >= report["patch"]["accuracy"]
        fp = report["fingerprint"]
        assert fp["tp"] + fp["tn"] + fp["fp"] + fp["fn"] == 6

    def test_evaluate_reads_store_only(self, run_dir, tmp_path):
        # with the dataset gone, evaluation still works from the persisted store
        cfg = pipeline.RunConfig.from_dict({**REDUCED, "patches": str(run_dir / "store"),
                                            "model": str(run_dir / "model.bin"),
                                            "report": str(tmp_path / "rep"),
                                            "dataset": str(tmp_path / "nowhere")})
        patch_rep, fp_rep = pipeline.run_evaluate(cfg)
        saved = json.loads((run_dir / "report" / "report.json").read_text())
        assert patch_rep.to_dict() == saved["patch"] and fp_rep.to_dict() == saved["fingerprint"]

    def test_classify_directory(self, run_dir, tmp_path, capsys):
        out = tmp_path / "res.json"
        code = main(["classify", "--config", str(run_dir / "config.json"), "--model", str(run_dir / "model.bin"),
                     "--out", str(out), str(run_dir / "data" / "test")])
        assert code == 0
        doc = json.loads(out.read_text())
        assert len(doc) == 6
        for r in doc:
            assert abs(r["aggregate_live"] + r["aggregate_spoof"] - r["patch_count"]) < 1e-6

    def test_classify_blank_image(self, run_dir, tmp_path, capsys):
        blank = tmp_path / "blank.png"
        save_png(gray(np.full((96, 96), 255)), blank)
        code = main(["classify", "--config", str(run_dir / "config.json"), "--model", str(run_dir / "model.bin"),
                     str(blank)])
        assert code == 5
        assert "no patches" in capsys.readouterr().out

    def test_render(self, run_dir, tmp_path):
        out = tmp_path / "ov.png"
        img = next((run_dir / "data" / "test" / "live").glob("*.png"))
        assert main(["render", "--config", str(run_dir / "config.json"), "--model", str(run_dir / "model.bin"),
                     "--out", str(out), str(img)]) == 0
        assert load_image(out).width == 96

    def test_shape_mismatch_exit_code(self, run_dir, capsys):
        code = main(["classify", "--config", str(run_dir / "config.json"), "--sigma", "5",
                     "--model", str(run_dir / "model.bin"), str(run_dir / "data" / "test")])
        assert code == 4
        assert "error[config]" in capsys.readouterr().err

    def test_baseline_scorer(self, run_dir, tmp_path):
        cfg = pipeline.RunConfig.from_dict({**REDUCED, "patches": str(run_dir / "store"),
                                            "report": str(tmp_path / "rep"), "baseline_threshold": 128.0})
        patch_rep, fp_rep = pipeline.run_evaluate(cfg)
        assert patch_rep.counts.total > 0 and fp_rep.counts.total == 6


class TestCliErrors:
    def test_missing_dataset(self, tmp_path, capsys):
        code = main(["extract", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "s")])
        assert code == 3
        assert "error[missing]" in capsys.readouterr().err

    def test_missing_model(self, tmp_path):
        img = tmp_path / "a.png"
        save_png(gray(np.zeros((8, 8))), img)
        assert main(["classify", "--model", str(tmp_path / "none.bin"), str(img)]) == 3

    def test_corrupt_model(self, tmp_path, capsys):
        img = tmp_path / "a.png"
        save_png(gray(np.zeros((8, 8))), img)
        (tmp_path / "m.bin").write_bytes(b"junk")
        assert main(["classify", "--model", str(tmp_path / "m.bin"), str(img)]) == 6
        assert "error[model]" in capsys.readouterr().err

    def test_bad_dataset_layout(self, tmp_path):
        (tmp_path / "d").mkdir()
        assert main(["extract", "--dataset", str(tmp_path / "d"), "--out", str(tmp_path / "s")]) == 5

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_help_documents_report(self, capsys):
        with pytest.raises(SystemExit):
            main(["evaluate", "--help"])
        out = capsys.readouterr().out
        assert "far" in out and "accuracy" in out
