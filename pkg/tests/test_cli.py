import csv
import json
from pathlib import Path

import numpy as np
import pytest

from featurefactor.cli import main
from featurefactor.pipeline import load_factorization, read_manifest


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def extracted(tmp_path_factory, tiny_net_path, fixture_images):
    out = tmp_path_factory.mktemp("extracted")
    code = run_cli(
        "extract", "--model", tiny_net_path, "--layer", "relu2",
        "--input-size", 64, "--images", *[p for _, p in fixture_images],
        "--out", out,
    )
    assert code == 0
    return out / "manifest.json"


class TestExtractCommand:
    def test_manifest_and_files(self, extracted):
        manifest = read_manifest(extracted)
        assert manifest["layer"] == "relu2"
        assert len(manifest["images"]) == 5
        for rec in manifest["images"]:
            assert Path(rec["activation_path"]).exists()

    def test_missing_image_exits_3(self, tiny_net_path, tmp_path):
        code = run_cli(
            "extract", "--model", tiny_net_path, "--layer", "relu2",
            "--images", tmp_path / "nope.png", "--out", tmp_path,
        )
        assert code == 3


class TestFactorizeCommand:
    def test_writes_container(self, extracted, tmp_path):
        out = tmp_path / "f.dff"
        code = run_cli("factorize", "--manifest", extracted, "--k", 3,
                       "--seed", 0, "--out", out)
        assert code == 0
        fact, layout = load_factorization(out)
        assert fact.k == 3
        assert len(layout) == 5

    def test_rank_too_large_exits_2(self, extracted, tmp_path):
        code = run_cli("factorize", "--manifest", extracted, "--k", 99,
                       "--out", tmp_path / "f.dff")
        assert code == 2


@pytest.fixture(scope="module")
def fact_path(extracted, tmp_path_factory):
    out = tmp_path_factory.mktemp("fact") / "f.dff"
    assert run_cli("factorize", "--manifest", extracted, "--k", 3,
                   "--max-iters", 60, "--out", out) == 0
    return out


class TestDownstreamCommands:
    def test_segment(self, extracted, fact_path, tmp_path):
        code = run_cli("segment", "--factorization", fact_path,
                       "--manifest", extracted, "--out", tmp_path / "masks")
        assert code == 0
        assert len(list((tmp_path / "masks").rglob("*.png"))) == 15

    def test_render(self, extracted, fact_path, tmp_path):
        code = run_cli("render", "--factorization", fact_path,
                       "--manifest", extracted, "--out", tmp_path)
        assert code == 0
        assert len(list((tmp_path / "maps").glob("*.png"))) == 15
        assert len(list((tmp_path / "overlays").glob("*.png"))) == 5

    def test_refine_then_segment(self, extracted, fact_path, tmp_path):
        refined = tmp_path / "refined"
        code = run_cli("refine", "--factorization", fact_path,
                       "--manifest", extracted, "--refine-iterations", 2,
                       "--radius", 4, "--out", refined)
        assert code == 0
        assert len(list(refined.glob("*.dffa"))) == 5
        code = run_cli("segment", "--factorization", fact_path,
                       "--manifest", extracted, "--refined", refined,
                       "--out", tmp_path / "masks")
        assert code == 0

    def test_eval_parts(self, extracted, fact_path, tmp_path, fixture_dir):
        out = tmp_path / "metrics.csv"
        code = run_cli("eval-parts", "--factorization", fact_path,
                       "--manifest", extracted,
                       "--parts", fixture_dir / "parts_index.json", "--out", out)
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 3
        assert set(rows[0]) == {"factor", "parts", "coverage", "iou"}

    def test_eval_corloc(self, extracted, fact_path, tmp_path, fixture_dir):
        out = tmp_path / "corloc.csv"
        code = run_cli("eval-corloc", "--factorization", fact_path,
                       "--manifest", extracted, "--boxes", fixture_dir / "boxes.json",
                       "--class-name", "blob", "--out", out)
        assert code == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["class", "corloc"]
        assert rows[1][0] == "blob"
        assert 0.0 <= float(rows[1][1]) <= 100.0

    def test_sweep(self, extracted, tmp_path, fixture_dir):
        out = tmp_path / "sweep.csv"
        code = run_cli("sweep", "--manifests", f"relu2={extracted}",
                       "--k-list", 1, 2, "--sweep-seeds", 2,
                       "--max-iters", 40,
                       "--parts", fixture_dir / "parts_index.json", "--out", out)
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2
        assert {r["k"] for r in rows} == {"1", "2"}
        for r in rows:
            assert 0.0 <= float(r["mean_iou"]) <= 1.0


class TestRunCommand:
    def test_full_pipeline_artifacts(self, tiny_net_path, fixture_images,
                                     fixture_dir, tmp_path):
        out = tmp_path / "run"
        code = run_cli(
            "run", "--model", tiny_net_path, "--layer", "relu2",
            "--input-size", 64, "--images", *[p for _, p in fixture_images],
            "--k", 3, "--seed", 0, "--max-iters", 60,
            "--parts", fixture_dir / "parts_index.json",
            "--boxes", fixture_dir / "boxes.json",
            "--out", out,
        )
        assert code == 0
        assert (out / "factorization.dff").exists()
        assert (out / "metrics.csv").exists()
        assert (out / "corloc.csv").exists()
        assert len(list((out / "masks").rglob("*.png"))) == 15
        assert len(list((out / "overlays").glob("*.png"))) == 5
        # artifacts re-readable (closed round trip)
        fact, layout = load_factorization(out / "factorization.dff")
        assert fact.k == 3

    def test_rank_too_large_names_error(self, tiny_net_path, fixture_images,
                                        tmp_path, capsys):
        code = run_cli(
            "run", "--model", tiny_net_path, "--layer", "relu2",
            "--input-size", 64, "--images", *[p for _, p in fixture_images],
            "--k", 999, "--out", tmp_path / "run",
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "RankTooLarge" in err
        assert "[factorize]" in err


class TestConfigFile:
    def test_config_supplies_flags_cli_wins(self, extracted, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"manifest": str(extracted), "k": 2, "seed": 5}))
        out1 = tmp_path / "a.dff"
        assert run_cli("factorize", "--config", cfg, "--out", out1) == 0
        fact1, _ = load_factorization(out1)
        assert fact1.k == 2
        # explicit flag overrides the config file value
        out2 = tmp_path / "b.dff"
        assert run_cli("factorize", "--config", cfg, "--k", 3, "--out", out2) == 0
        fact2, _ = load_factorization(out2)
        assert fact2.k == 3
