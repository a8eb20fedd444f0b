import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from finescale.cli import EXIT_CONFIG, EXIT_OK, main
from finescale.evaluate import grid_partition
from finescale.render import choropleth_svg, ramp_color


def test_ramp_endpoints_distinct():
    assert ramp_color(0.0) != ramp_color(1.0)
    assert ramp_color(0.5) not in (ramp_color(0.0), ramp_color(1.0))


def test_svg_well_formed_one_path_per_region():
    part = grid_partition(3, 2, "g")
    svg = choropleth_svg(part, np.arange(6, dtype=float))
    root = ET.fromstring(svg)  # raises on malformed XML
    paths = [e for e in root.iter() if e.tag.endswith("path")]
    assert len(paths) == 6
    assert sorted(p.get("id") for p in paths) == sorted(part.ids)


def test_svg_constant_values_identical_fills():
    part = grid_partition(2, 2, "g")
    svg = choropleth_svg(part, np.full(4, 1.5))
    root = ET.fromstring(svg)
    fills = {e.get("fill") for e in root.iter() if e.tag.endswith("path")}
    assert len(fills) == 1


def test_svg_binary_values_hit_ramp_endpoints():
    part = grid_partition(2, 1, "g")
    svg = choropleth_svg(part, np.array([0.0, 1.0]))
    root = ET.fromstring(svg)
    fills = [e.get("fill") for e in root.iter() if e.tag.endswith("path")]
    assert set(fills) == {ramp_color(0.0), ramp_color(1.0)}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    code = main(
        [
            "synth",
            "--out",
            str(out),
            "--seed",
            "3",
            "--fine-grid",
            "6",
            "5",
            "--coarse-grid",
            "3",
            "5",
            "--aux-grid",
            "3",
            "5",
            "--aux-grid",
            "6",
            "5",
            "--weights",
            "1.0",
            "-0.5",
        ]
    )
    assert code == EXIT_OK
    return out


def common_args(synth_dir, out):
    return [
        "--target",
        f"{synth_dir / 'coarse.geojson'},{synth_dir / 'target.csv'}",
        "--fine",
        str(synth_dir / "fine.geojson"),
        "--aux-manifest",
        str(synth_dir / "aux_manifest.json"),
        "--out",
        str(out),
        "--restarts",
        "2",
    ]


def test_synth_bundle_contents(synth_dir):
    for name in (
        "coarse.geojson",
        "fine.geojson",
        "target.csv",
        "truth.csv",
        "aux_manifest.json",
        "generating_params.json",
    ):
        assert (synth_dir / name).exists(), name
    manifest = json.loads((synth_dir / "aux_manifest.json").read_text())
    assert len(manifest) == 2
    assert all(set(e) == {"id", "geojson", "csv"} for e in manifest)


def test_fit_then_refine_round_trip(synth_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["fit", *common_args(synth_dir, out)]) == EXIT_OK
    models = json.loads((out / "models.json").read_text())
    assert len(models["aux_models"]) == 2
    assert "downscale" in models and "w" in models["downscale"]
    assert (out / "manifest.json").exists()

    assert main(["refine", *common_args(synth_dir, out), "--covariance"]) == EXIT_OK
    csv_text = (out / "refinement.csv").read_text()
    assert csv_text.splitlines()[0] == "region_id,mean,variance"
    assert len(csv_text.splitlines()) == 31  # header + 30 fine regions
    assert (out / "refinement_cov.csv").exists()
    ET.fromstring((out / "refinement.svg").read_text())


def test_fit_determinism_byte_identical(synth_dir, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["fit", *common_args(synth_dir, out1), "--seed", "5"]) == EXIT_OK
    assert main(["fit", *common_args(synth_dir, out2), "--seed", "5"]) == EXIT_OK
    assert (out1 / "models.json").read_bytes() == (out2 / "models.json").read_bytes()


def test_baseline_csv_schemas(synth_dir, tmp_path):
    out = tmp_path / "base"
    for method, has_variance in (("gpr", True), ("lr", False), ("sd2", False)):
        assert (
            main(["baseline", *common_args(synth_dir, out), "--method", method])
            == EXIT_OK
        )
        header = (out / f"{method}.csv").read_text().splitlines()[0]
        expected = "region_id,mean,variance" if has_variance else "region_id,mean"
        assert header == expected


def test_baseline_unknown_method_exit_2(synth_dir, tmp_path, capsys):
    code = main(
        ["baseline", *common_args(synth_dir, tmp_path / "x"), "--method", "magic"]
    )
    assert code == EXIT_CONFIG
    assert "magic" in capsys.readouterr().err


def test_eval_writes_comparison_table(synth_dir, tmp_path, capsys):
    out = tmp_path / "eval"
    code = main(
        [
            "eval",
            *common_args(synth_dir, out),
            "--truth",
            str(synth_dir / "truth.csv"),
            "--method",
            "lr,gpr",
        ]
    )
    assert code == EXIT_OK
    table = (out / "comparison.csv").read_text()
    assert table.splitlines()[0].startswith("method,mape")
    assert len(table.splitlines()) == 3
    assert "MAPE" in capsys.readouterr().out


def test_missing_aux_csv_exit_2(synth_dir, tmp_path, capsys):
    manifest = tmp_path / "broken_manifest.json"
    manifest.write_text(json.dumps([{"id": "aux0", "geojson": "aux0.geojson", "csv": "missing.csv"}]))
    (tmp_path / "aux0.geojson").write_text((synth_dir / "aux0.geojson").read_text())
    args = common_args(synth_dir, tmp_path / "out")
    args[args.index("--aux-manifest") + 1] = str(manifest)
    assert main(["fit", *args]) == EXIT_CONFIG
    assert "missing.csv" in capsys.readouterr().err


def test_mismatched_target_pair_exit_2(synth_dir, tmp_path, capsys):
    args = common_args(synth_dir, tmp_path / "out")
    args[args.index("--target") + 1] = str(synth_dir / "coarse.geojson")  # no CSV
    assert main(["fit", *args]) == EXIT_CONFIG
    assert "GEOJSON,CSV" in capsys.readouterr().err


def test_refine_with_wrong_models_exit_2(synth_dir, tmp_path, capsys):
    out = tmp_path / "out"
    out.mkdir()
    (out / "models.json").write_text(json.dumps({"aux_models": [], "downscale": {}}))
    assert main(["refine", *common_args(synth_dir, out)]) == EXIT_CONFIG


def test_synth_bundle_refine_determinism(synth_dir, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert main(["fit", *common_args(synth_dir, out)]) == EXIT_OK
        assert main(["refine", *common_args(synth_dir, out)]) == EXIT_OK
    assert (out1 / "refinement.csv").read_bytes() == (out2 / "refinement.csv").read_bytes()
    assert (out1 / "refinement.svg").read_bytes() == (out2 / "refinement.svg").read_bytes()
