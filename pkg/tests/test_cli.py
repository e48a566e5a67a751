"""`forge` command line: subcommands, exit codes, config overlay."""

import json

import pytest

from vesselforge.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run_cli
from vesselforge.phantoms import make_phantom
from vesselforge.volume import load_volume, save_volume

RECORD = json.dumps({"kind": "GlobalThicken", "segment_id": 7,
                     "magnitude": 1.5, "seed": 3})


@pytest.fixture
def subjects_dir(tmp_path):
    d = tmp_path / "subjects"
    d.mkdir()
    for sid, name in [("subA", "straight"), ("subB", "helix")]:
        vol, c = make_phantom(name)
        save_volume(vol, d / f"{sid}_gt.rawl.json")
        (d / f"{sid}_centerlines.json").write_text(
            json.dumps({"7": json.loads(c.to_json())}))
    return d


def _run(capsys, *argv):
    code = run_cli(list(argv))
    out = capsys.readouterr()
    payload = json.loads(out.out) if out.out.strip() else None
    return code, payload, out.err


def test_parse_subcommand(capsys):
    code, out, err = _run(capsys, "parse", "--text",
                          "Thin the BA by a factor of 1.3.")
    assert code == EXIT_OK
    assert out["commands"] == [{"action": "Thin", "segment_id": 1,
                                "magnitude": {"value": 1.3, "unit": "factor"}}]
    assert "seed" in err


def test_parse_unparseable_is_data_error(capsys):
    code, out, _ = _run(capsys, "parse", "--text", "squibble everything")
    assert code == EXIT_DATA
    assert out["errors"]


def test_usage_errors(capsys):
    assert run_cli(["frobnicate"]) == EXIT_USAGE
    capsys.readouterr()
    assert run_cli(["parse", "--no-such-flag", "x"]) == EXIT_USAGE
    capsys.readouterr()
    assert run_cli(["eval", "--pred", "x"]) == EXIT_USAGE  # missing --gt
    capsys.readouterr()


def test_eval_identical_volumes(capsys, tmp_path):
    vol, _ = make_phantom("straight")
    save_volume(vol, tmp_path / "v.rawl.json")
    code, out, _ = _run(capsys, "eval", "--pred", str(tmp_path / "v.rawl.json"),
                        "--gt", str(tmp_path / "v.rawl.json"))
    assert code == EXIT_OK
    assert out["macro_dice"] == 1.0


def test_eval_missing_file_is_data_error(capsys, tmp_path):
    vol, _ = make_phantom("straight")
    save_volume(vol, tmp_path / "v.rawl.json")
    code, _, err = _run(capsys, "eval", "--pred", "/no/such",
                        "--gt", str(tmp_path / "v.rawl.json"))
    assert code == EXIT_DATA
    assert "data error" in err


def test_corrupt_instruct_refine_eval_pipeline(capsys, subjects_dir, tmp_path):
    gt = str(subjects_dir / "subA_gt.rawl.json")
    cl = str(subjects_dir / "subA_centerlines.json")
    code, out, _ = _run(capsys, "corrupt", "--gt", gt, "--centerlines", cl,
                        "--record", RECORD,
                        "--out", str(tmp_path / "err.rawl.json"))
    assert code == EXIT_OK and out["changed_voxels"] > 0

    code, doc, _ = _run(capsys, "instruct", "--record", RECORD)
    assert code == EXIT_OK
    (tmp_path / "instr.txt").write_text(doc["text"] + "\n")

    code, res, _ = _run(capsys, "refine",
                        "--in", str(tmp_path / "err.rawl.json"),
                        "--instructions", str(tmp_path / "instr.txt"),
                        "--gt", gt, "--centerlines", cl,
                        "--out", str(tmp_path / "fixed.rawl.json"))
    assert code == EXIT_OK
    assert res["metrics"]["macro_dice"] >= 0.95

    code, rep, _ = _run(capsys, "eval",
                        "--pred", str(tmp_path / "fixed.rawl.json"),
                        "--gt", gt)
    assert code == EXIT_OK
    assert rep["macro_dice"] == pytest.approx(res["metrics"]["macro_dice"])


def test_instruct_granularity(capsys):
    code, doc, _ = _run(capsys, "instruct", "--record", RECORD,
                        "--granularity", "concise")
    assert code == EXIT_OK
    assert doc["text"] == doc["concise"]


def test_corrupt_bad_record_is_data_error(capsys, subjects_dir, tmp_path):
    code, _, _ = _run(capsys, "corrupt",
                      "--gt", str(subjects_dir / "subA_gt.rawl.json"),
                      "--centerlines", str(subjects_dir / "subA_centerlines.json"),
                      "--record", "{not json",
                      "--out", str(tmp_path / "o.rawl.json"))
    assert code == EXIT_DATA


def test_synth_produces_manifest(capsys, subjects_dir, tmp_path):
    code, out, err = _run(capsys, "synth", "--subjects", str(subjects_dir),
                          "--out", str(tmp_path / "ds"), "--variants", "2",
                          "--drop-p", "0.0", "--seed", "5")
    assert code == EXIT_OK
    assert out["variants"] == 4
    assert "seed: 5" in err
    lines = (tmp_path / "ds" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 4


def test_synth_jobs_byte_identical(capsys, subjects_dir, tmp_path):
    _run(capsys, "synth", "--subjects", str(subjects_dir),
         "--out", str(tmp_path / "a"), "--variants", "2", "--seed", "5")
    _run(capsys, "synth", "--subjects", str(subjects_dir),
         "--out", str(tmp_path / "b"), "--variants", "2", "--seed", "5",
         "--jobs", "2")
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == \
        (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_config_file_overlay_with_flag_precedence(capsys, subjects_dir, tmp_path):
    cfg = tmp_path / "forge.cfg"
    cfg.write_text("variants = 1\nseed = 9\ndrop-p = 0.0\n")
    code, out, err = _run(capsys, "synth", "--subjects", str(subjects_dir),
                          "--out", str(tmp_path / "ds"),
                          "--config", str(cfg), "--variants", "3")
    assert code == EXIT_OK
    assert out["seed"] == 9          # from config
    assert out["variants"] == 6      # --variants 3 beats config's 1
