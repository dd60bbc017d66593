"""Dataset export tests, including the cross-component import check."""

import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from cnnexport.cli import main
from cnnexport.export import export_dataset
from cnnexport.extract import ExportSpec
from cnnexport.gdsc import read_gdsc


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("imgs")
    rng = np.random.default_rng(3)
    for i in range(3):
        arr = rng.integers(0, 255, size=(120 + 20 * i, 160, 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / f"img{i}.png")
    return root


class TestExportDataset:
    def test_record_count_and_metadata(self, image_dir, tmp_path):
        pairs = [(f"img{i}.png", image_dir / f"img{i}.png") for i in range(3)]
        spec = ExportSpec(model="alexnet", layer="fc6", crop="center")
        out = tmp_path / "fc6.gdsc"
        failures = export_dataset(pairs, spec, out, seed=0)
        assert failures == 0
        dim, records, metadata = read_gdsc(out)
        assert dim == 4096
        assert len(records) == 3
        assert metadata["layer"] == "fc6"
        assert metadata["model"] == "alexnet"
        assert metadata["crop"] == "center"

    def test_failures_logged_file_still_written(self, image_dir, tmp_path, capsys):
        pairs = [
            ("img0.png", image_dir / "img0.png"),
            ("missing.png", image_dir / "missing.png"),
        ]
        spec = ExportSpec(model="alexnet", layer="fc6", crop="center")
        out = tmp_path / "partial.gdsc"
        failures = export_dataset(pairs, spec, out, seed=0, log=sys.stdout)
        assert failures == 1
        assert "FAILED missing.png" in capsys.readouterr().out
        _, records, _ = read_gdsc(out)
        assert [r[0] for r in records] == ["img0.png"]

    def test_vectors_unit_norm_nonnegative(self, image_dir, tmp_path):
        pairs = [("img0.png", image_dir / "img0.png")]
        spec = ExportSpec(model="alexnet", layer="fc7", crop="squish")
        out = tmp_path / "fc7.gdsc"
        export_dataset(pairs, spec, out, seed=0)
        _, records, _ = read_gdsc(out)
        vector = records[0][1].astype(np.float64)
        assert (vector >= 0).all()
        assert abs(np.linalg.norm(vector) - 1.0) <= 1e-5


class TestCli:
    def test_export_and_engine_import(self, image_dir, tmp_path):
        listing = tmp_path / "list.txt"
        listing.write_text(
            "\n".join(str(image_dir / f"img{i}.png") for i in range(3)) + "\n"
        )
        out = tmp_path / "export.gdsc"
        assert main([
            "--model", "alexnet", "--layer", "fc6", "--crop", "center",
            "--input-list", str(listing), "--out", str(out), "--seed", "0",
        ]) == 0
        # Cross-component check: the retrieval engine's import command
        # must accept the exported file without validation errors.
        result = subprocess.run(
            [
                sys.executable, "-m", "fvretrieval.cli", "import",
                "--in", str(out), "--out", str(tmp_path / "copied.gdsc"),
            ],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0, result.stderr
        assert "imported 3 records" in result.stdout

    def test_nonzero_exit_on_failures(self, image_dir, tmp_path):
        listing = tmp_path / "broken.txt"
        listing.write_text(
            str(image_dir / "img0.png") + "\n" + str(image_dir / "nope.png") + "\n"
        )
        out = tmp_path / "partial.gdsc"
        assert main([
            "--model", "alexnet", "--layer", "fc6",
            "--input-list", str(listing), "--out", str(out),
        ]) == 1
        assert out.exists()

    def test_empty_list_is_error(self, tmp_path):
        listing = tmp_path / "empty.txt"
        listing.write_text("")
        assert main([
            "--model", "alexnet", "--layer", "fc6",
            "--input-list", str(listing), "--out", str(tmp_path / "x.gdsc"),
        ]) == 2

    def test_rerun_byte_identical(self, image_dir, tmp_path):
        listing = tmp_path / "list.txt"
        listing.write_text(str(image_dir / "img0.png") + "\n")
        out1, out2 = tmp_path / "a.gdsc", tmp_path / "b.gdsc"
        for out in (out1, out2):
            assert main([
                "--model", "alexnet", "--layer", "fc6",
                "--input-list", str(listing), "--out", str(out), "--seed", "7",
            ]) == 0
        assert out1.read_bytes() == out2.read_bytes()
