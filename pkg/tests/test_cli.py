import json
from pathlib import Path

import pytest

from shapediff.cli import main
from shapediff.config import RunConfig, dump_config, validate

FIXTURES = Path(__file__).parent / "fixtures" / "corpus50"


def toy_config_text() -> str:
    cfg = RunConfig(
        shape_points=48, shape_queries=64, shape_knn=8, shape_layers=2,
        shape_hidden_channels=8, shape_embed_dim=12, shape_decoder_hidden=24,
        steps=20, stop_step=6, layers=2, neighbors=4, scalar_dim=12, vector_dim=4,
        time_dim=8, attention_dim=4,
        se_steps=4, se_batch=4, se_eval_interval=4,
        diff_steps=4, diff_batch=2, diff_eval_interval=4,
        volume_bins=4, seed=11,
    )
    return dump_config(validate(cfg))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "toy.cfg").write_text(toy_config_text())
    return root


@pytest.fixture(scope="module")
def ingested(workdir):
    out = workdir / "dataset"
    code = main(["ingest", "--data", str(FIXTURES), "--out", str(out),
                 "--config", str(workdir / "toy.cfg")])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def shape_ckpt(workdir, ingested):
    path = workdir / "shape.sdck"
    code = main(["train-shape", "--manifest", str(ingested), "--out", str(path),
                 "--config", str(workdir / "toy.cfg")])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def diff_ckpt(workdir, ingested, shape_ckpt):
    path = workdir / "diff.sdck"
    code = main(["train-diff", "--manifest", str(ingested),
                 "--shape-checkpoint", str(shape_ckpt), "--out", str(path),
                 "--config", str(workdir / "toy.cfg")])
    assert code == 0
    return path


class TestInspectSchedule:
    def test_sigmoid_midpoint_csv(self, capsys):
        assert main(["inspect-schedule", "--kind", "sigmoid"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "t,beta,alpha,alpha_bar,beta_tilde"
        row = dict(zip(lines[0].split(","), lines[501].split(",")))
        assert row["t"] == "500"
        assert float(row["beta"]) == 0.00500005

    def test_both_csv_to_file(self, workdir):
        out = workdir / "sched.csv"
        assert main(["inspect-schedule", "--kind", "both", "--steps", "10",
                     "--out", str(out)]) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("t,beta_x")
        assert len(lines) == 12

    def test_bad_config_exit_code(self, workdir):
        bad = workdir / "bad.cfg"
        bad.write_text("[diffusion]\nsteps = 1\n")
        assert main(["inspect-schedule", "--config", str(bad)]) == 2


class TestErrorPaths:
    def test_missing_condition_exit_3(self, diff_ckpt, workdir, capsys):
        code = main(["generate", "--checkpoint", str(diff_ckpt),
                     "--condition", "/nonexistent/cond.sdf",
                     "--out", str(workdir / "gen-missing")])
        assert code == 3
        assert "/nonexistent/cond.sdf" in capsys.readouterr().err

    def test_empty_data_dir_exit_3(self, workdir, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert main(["ingest", "--data", str(empty), "--out", str(tmp_path / "o")]) == 3

    def test_unknown_config_key_exit_2(self, workdir, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[run]\nwho = 1\n")
        assert main(["ingest", "--data", str(FIXTURES), "--out", str(tmp_path / "o"),
                     "--config", str(bad)]) == 2

    def test_wrong_checkpoint_kind_exit_3(self, shape_ckpt, workdir):
        code = main(["generate", "--checkpoint", str(shape_ckpt),
                     "--condition", str(FIXTURES / "benzene.sdf"),
                     "--out", str(workdir / "gen-bad")])
        assert code == 3


class TestPipeline:
    def test_checkpoints_written(self, shape_ckpt, diff_ckpt):
        assert shape_ckpt.read_bytes()[:4] == b"SDCK"
        assert diff_ckpt.read_bytes()[:4] == b"SDCK"

    def test_generate_runs_and_is_deterministic(self, diff_ckpt, workdir):
        for name in ("gen-a", "gen-b"):
            code = main([
                "generate", "--checkpoint", str(diff_ckpt),
                "--condition", str(FIXTURES / "benzene.sdf"),
                "--out", str(workdir / name), "--n", "2", "--seed", "5",
                "--shape-guidance", "--trace",
            ])
            assert code == 0
        a = (workdir / "gen-a" / "samples.sdf").read_bytes()
        b = (workdir / "gen-b" / "samples.sdf").read_bytes()
        assert a == b
        trace = (workdir / "gen-a" / "sample-000.trace.jsonl").read_text().strip().split("\n")
        events = [json.loads(line) for line in trace]
        assert events[0]["t"] == 20
        assert all(e["shape_guided"] == 0 for e in events if e["t"] < 6)

    def test_generate_with_pocket(self, diff_ckpt, workdir, tmp_path):
        pocket = tmp_path / "pocket.pdb"
        lines = ["HEADER    wall\n"]
        serial = 1
        for x in (-8.0, 0.0, 8.0):
            for y in (-8.0, 0.0, 8.0):
                lines.append(
                    f"ATOM  {serial:>5d}  C{serial:<3d}POC A{serial:>4d}    "
                    f"{x:8.3f}{y:8.3f}{6.0:8.3f}  1.00  0.00           C\n"
                )
                serial += 1
        pocket.write_text("".join(lines))
        code = main([
            "generate", "--checkpoint", str(diff_ckpt),
            "--condition", str(FIXTURES / "alkane-3.sdf"),
            "--out", str(workdir / "gen-pocket"), "--n", "1", "--seed", "9",
            "--pocket", str(pocket), "--pocket-guidance", "--no-clash-table",
        ])
        assert code == 0
        assert (workdir / "gen-pocket" / "samples.sdf").exists()

    def test_evaluate_report(self, diff_ckpt, workdir):
        report_path = workdir / "report.json"
        code = main([
            "evaluate", "--generated", str(workdir / "gen-a" / "samples.sdf"),
            "--condition", str(FIXTURES / "benzene.sdf"),
            "--reference", str(FIXTURES), "--delta-g", "1.0",
            "--out", str(report_path),
        ])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert "summary" in report and "geometry_js" in report
        assert report["summary"]["desirable_pct"] is not None

    def test_resume_continues(self, ingested, shape_ckpt, workdir):
        resumed = workdir / "diff-resumed.sdck"
        code = main(["train-diff", "--manifest", str(ingested),
                     "--shape-checkpoint", str(shape_ckpt), "--out", str(resumed),
                     "--config", str(workdir / "toy.cfg"), "--steps", "6",
                     "--resume", str(workdir / "diff.sdck")])
        assert code == 0
        assert resumed.exists()
