"""Command line behavior, exercised in process through main(argv)."""

from __future__ import annotations

import json

import pytest

from govtier.cli import main


def write_task(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def read_task_doc(task_id="cli-read"):
    return {
        "task": {
            "id": task_id,
            "goal": "cli test read",
            "op_kind": "read",
            "scope": {"tenant_id": "ten", "brand_ids": ["brand-a"],
                      "cross_domain": False},
            "affected_object_estimate": 1,
        },
        "objects": [{"id": "o1", "data": {"tenant_id": "ten", "brand_id": "brand-a",
                                          "status": "draft"}}],
        "scenario": {"plans": [[{"tool": "object.read",
                                 "payload": {"tenant_id": "ten", "brand_id": "brand-a",
                                             "object_id": "o1"}}]]},
    }


def delete_task_doc(task_id="cli-del"):
    return {
        "task": {
            "id": task_id,
            "goal": "cli test delete",
            "op_kind": "delete_irreversible",
            "scope": {"tenant_id": "ten", "brand_ids": ["brand-a"],
                      "cross_domain": False},
            "affected_object_estimate": 1,
        },
        "objects": [{"id": "o-old", "data": {"tenant_id": "ten", "brand_id": "brand-a",
                                             "status": "stale"}}],
        "scenario": {"plans": [[{"tool": "object.delete",
                                 "payload": {"tenant_id": "ten", "brand_id": "brand-a",
                                             "object_id": "o-old"}}]]},
    }


def test_run_prints_outcome_and_trace(tmp_path, capsys):
    path = write_task(tmp_path, "read.json", read_task_doc())
    assert main(["run", path]) == 0
    out = capsys.readouterr().out
    assert "terminal: completed" in out
    assert "tier:     light" in out
    assert "runner.tier.selected" in out


def test_run_json_output_is_parseable(tmp_path, capsys):
    path = write_task(tmp_path, "read.json", read_task_doc("cli-json"))
    assert main(["run", path, "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["terminal"] == "completed"
    assert doc["events"][0]["name"] == "runner.tier.selected"


def test_run_rejects_unreadable_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert "cannot read task file" in capsys.readouterr().err


def test_run_rejects_invalid_task_document(tmp_path, capsys):
    path = write_task(tmp_path, "bad.json", {"task": {"id": "x", "goal": "no kind"}})
    assert main(["run", path]) == 2
    assert "invalid task document" in capsys.readouterr().err


def test_held_task_yields_ticket_approvable_in_a_later_process(tmp_path, capsys):
    root = str(tmp_path / "store")
    path = write_task(tmp_path, "del.json", delete_task_doc())
    assert main(["run", path, "--storage-root", root]) == 0
    out = capsys.readouterr().out
    assert "terminal: pending_approval" in out
    ticket_line = next(line for line in out.splitlines() if line.startswith("ticket:"))
    ticket_id = ticket_line.split()[-1]

    # a separate invocation over the same root sees and decides the ticket
    assert main(["approve", ticket_id, "--storage-root", root]) == 0
    out = capsys.readouterr().out
    assert "terminal: completed" in out

    assert main(["replay", "cli-del", "--storage-root", root]) == 0
    out = capsys.readouterr().out
    assert "replay consistent" in out


def test_reject_marks_the_task_failed(tmp_path, capsys):
    root = str(tmp_path / "store")
    path = write_task(tmp_path, "del.json", delete_task_doc("cli-rej"))
    main(["run", path, "--storage-root", root])
    out = capsys.readouterr().out
    ticket_id = next(line for line in out.splitlines()
                     if line.startswith("ticket:")).split()[-1]
    assert main(["reject", ticket_id, "--storage-root", root, "--note", "nope"]) == 0
    assert "terminal: failed" in capsys.readouterr().out


def test_approve_unknown_ticket_is_an_invocation_error(tmp_path, capsys):
    root = str(tmp_path / "store")
    assert main(["approve", "apt-nope", "--storage-root", root]) == 2


def test_double_decision_is_a_domain_failure(tmp_path, capsys):
    root = str(tmp_path / "store")
    path = write_task(tmp_path, "del.json", delete_task_doc("cli-twice"))
    main(["run", path, "--storage-root", root])
    out = capsys.readouterr().out
    ticket_id = next(line for line in out.splitlines()
                     if line.startswith("ticket:")).split()[-1]
    assert main(["approve", ticket_id, "--storage-root", root]) == 0
    capsys.readouterr()
    assert main(["reject", ticket_id, "--storage-root", root]) == 1


def test_replay_unknown_task_is_an_invocation_error(tmp_path, capsys):
    root = str(tmp_path / "store")
    assert main(["replay", "nope", "--storage-root", root]) == 2


def test_sim_subset_runs_and_reports(tmp_path, capsys):
    out_dir = str(tmp_path / "reports")
    code = main(["sim", "--out", out_dir, "--configs", "dynamic",
                 "--bootstrap", "200", "--max-workers", "2"])
    captured = capsys.readouterr()
    assert code == 0, captured.err
    assert "properties hold" in captured.out
    emitted = json.loads((tmp_path / "reports" / "comparison.json").read_text())
    assert any(row["config"] == "dynamic" for row in emitted["reports"])


def test_sim_rejects_unknown_configuration(capsys):
    assert main(["sim", "--configs", "imaginary"]) == 2
    assert "unknown configuration" in capsys.readouterr().err
