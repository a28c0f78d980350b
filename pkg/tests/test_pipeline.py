import dataclasses
import json
import socket

import pytest

from videoguide import pipeline
from videoguide.cli import main
from videoguide.errors import ConfigurationError, TrackingLost
from videoguide.pipeline import RunManifest, StageFailed, build_providers, report, run
from videoguide.taskfile import load_task

SMALL = dict(population=6, iterations=2)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Two identical small push-box runs, the second one made without network access."""
    base = tmp_path_factory.mktemp("runs")
    a = run("push-box", seed=7, out=base / "a", **SMALL)
    real = socket.socket.connect

    def refuse(self, *args):
        raise AssertionError("offline run opened a network connection")

    socket.socket.connect = refuse
    try:
        b = run("push-box", seed=7, out=base / "b", **SMALL)
    finally:
        socket.socket.connect = real
    return base, a, b


def test_identical_manifests_modulo_timestamps(runs):
    _, a, b = runs
    assert a.without_timestamps() == b.without_timestamps()
    assert a.checksums["trajectory"] == b.checksums["trajectory"]
    assert a.checksums["cost_log"] == b.checksums["cost_log"]


def test_manifest_artifacts_exist_and_seeds_recorded(runs):
    base, a, _ = runs
    assert a.status == "complete" and not a.missing_artifacts()
    loaded = RunManifest.load(base / "a" / "full")
    assert loaded.to_dict() == a.to_dict()
    assert {"video", "prompts", "poses", "cma"} <= set(a.seeds)
    assert a.metrics["evaluations"] == 12 and "success" in a.metrics


def test_resume_is_idempotent(runs):
    base, a, _ = runs
    files = sorted(p for p in (base / "a").rglob("*") if p.is_file() and p.name != "manifest.json")
    before = {p: (p.stat().st_mtime_ns, p.read_bytes()) for p in files}
    again = run("push-box", seed=7, out=base / "a", resume=True, **SMALL)
    assert all(s["status"] == "cached" for s in again.stages.values())
    assert {p: (p.stat().st_mtime_ns, p.read_bytes()) for p in files} == before
    assert again.checksums == a.checksums and again.metrics == a.metrics


def test_no_contact_weights_in_manifest(runs):
    base, _, _ = runs
    m = run("push-box", seed=7, out=base / "a", resume=True, ablate="no-contact", **SMALL)
    assert m.weights["w_contact"] == 0.0 and m.variant == "no-contact"
    assert m.stages["perceive"]["status"] == "cached"  # perception shared with the full variant


def test_report_sections(runs, tmp_path):
    base, a, b = runs
    text = report([base / "a" / "full"], tmp_path / "one")
    for term in ("act_iou", "tar_iou", "act_cd", "tar_cd", "contact"):
        assert term in text
    assert "videos scored" in text and "rejected" in text
    assert (tmp_path / "one" / "summary.txt").exists()
    assert any(p.suffix == ".png" for p in (tmp_path / "one").iterdir())
    both = report([base / "a" / "full", base / "b" / "full"], tmp_path / "two")
    assert "push-box/full/s7" in both and both.count("push-box/full/s7") >= 2


def test_report_flags_gaps(runs, tmp_path):
    base, a, _ = runs
    d = a.to_dict()
    d["stages"].pop("execute")
    d["artifacts"]["end_depth"] = "full/nowhere.dpth"
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(d))
    text = report([path], tmp_path / "r")
    assert "GAPS" in text and "execute" in text and "end_depth" in text


def test_rejection_counts_reported(tmp_path):
    m = run("hammer-peg", seed=0, out=tmp_path / "h", population=4, iterations=1, noise=0.0)
    assert m.metrics["rejected_videos"] >= 1
    text = report([m], tmp_path / "rep")
    assert f"rejected {m.metrics['rejected_videos']}" in text


def test_stage_failure_recorded(tmp_path, monkeypatch):
    def lost(*a, **k):
        raise TrackingLost("mask vanished", keyframe=10)

    monkeypatch.setattr(pipeline, "perceive", lost)
    with pytest.raises(StageFailed) as e:
        run("push-box", seed=1, out=tmp_path / "f", **SMALL)
    assert e.value.stage == "perceive"
    m = RunManifest.load(tmp_path / "f" / "full")
    assert m.status == "failed" and m.error["stage"] == "perceive" and "vanished" in m.error["message"]


def test_remote_video_with_oracle_perception_rejected():
    task = dataclasses.replace(load_task("push-box"), providers={"depth": {"kind": "oracle"}})
    with pytest.raises(ConfigurationError, match="oracle perception"):
        build_providers(task, "remote", 0.0)
    with pytest.raises(ConfigurationError):
        build_providers(task, "bogus", 0.0)


def test_descriptor_endpoint_names_environment_variable(monkeypatch):
    for var in ("VIDEO", "VERIFIER", "LLM", "SEGMENT", "DEPTH", "HAND", "VLM"):
        monkeypatch.setenv(f"VIDEOGUIDE_{var}_URL", f"http://{var.lower()}.invalid")
    monkeypatch.setenv("MY_DEPTH", "http://mine.invalid/")
    task = dataclasses.replace(load_task("push-box"), providers={"depth": {"endpoint": "MY_DEPTH"}})
    ps = build_providers(task, "remote", 0.0)
    assert ps.perception.depth.client.base_url == "http://mine.invalid"
    assert ps.descriptors["video"]["endpoint"] == "VIDEOGUIDE_VIDEO_URL"


def test_cli_missing_task_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.task"
    assert main(["run", "--task", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_cli_tasks_lists_suite(capsys):
    assert main(["tasks"]) == 0
    out = capsys.readouterr().out
    for name in ("push-box", "hammer-peg", "pour-grains", "stretch-band", "open-door"):
        assert name in out


def test_cli_remote_without_endpoints_exit_2(tmp_path, monkeypatch, capsys):
    for var in ("VIDEO", "VERIFIER", "LLM", "SEGMENT", "DEPTH", "HAND", "VLM"):
        monkeypatch.delenv(f"VIDEOGUIDE_{var}_URL", raising=False)
    assert main(["run", "push-box", "--provider", "remote", "--out", str(tmp_path / "r")]) == 2
    assert "VIDEOGUIDE_" in capsys.readouterr().err


def test_cli_run_and_report(tmp_path, capsys):
    out = tmp_path / "cli"
    assert main(["run", "push-box", "--seed", "2", "--out", str(out), "--population", "4",
                 "--iterations", "1", "--noise", "0"]) == 0
    assert "success:" in capsys.readouterr().out
    assert main(["report", str(out / "full"), "--out", str(tmp_path / "rep")]) == 0
    assert "contact" in capsys.readouterr().out
