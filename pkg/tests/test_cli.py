import json

from meningrade import cli
from meningrade.core import CriterionKind


class TestEvalCommand:
    def test_classification_report(self, tmp_path, capsys):
        pred = tmp_path / "pred.jsonl"
        truth = tmp_path / "truth.jsonl"
        pred.write_text(
            "\n".join(
                json.dumps({"key": k, "score": s})
                for k, s in [("a", 0.9), ("b", 0.8), ("c", 0.1)]
            )
        )
        truth.write_text(
            "\n".join(
                json.dumps({"key": k, "label": l})
                for k, l in [("a", 1), ("b", 1), ("c", 0)]
            )
        )
        out = tmp_path / "report.json"
        assert cli.main(["eval", "--pred", str(pred), "--truth", str(truth), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["best_f1"] == 1.0

    def test_error_exit_code(self, tmp_path, capsys):
        rc = cli.main(
            ["eval", "--pred", str(tmp_path / "nope.jsonl"), "--truth", str(tmp_path / "nope2.jsonl")]
        )
        assert rc == 2
        assert "missing-file" in capsys.readouterr().err


class TestReportCommand:
    def test_report_files(self, small_case, tmp_path, capsys):
        out = tmp_path / "rep"
        rc = cli.main(["report", "--case-dir", str(small_case["case_dir"]), "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["grade"] == "II"
        assert report["main_contributing"] == "MitoticCount"
        text = (out / "report.txt").read_text()
        assert "WHO grade II" in text
        assert "MitoticCount" in text

    def test_report_with_session(self, small_case, tmp_path):
        from meningrade.session import SessionStore, create_session, submit_action

        store = SessionStore(tmp_path / "sessions")
        session = create_session(small_case["case_dir"], session_id="rep-1")
        store.persist_new(session)
        items = session.review.assessment.evidence[CriterionKind.MITOTIC_COUNT]
        action = submit_action(
            session, "evidence_action", {"evidence_id": items[0].evidence_id, "action": "decline"}
        )
        store.append_action(session, action)
        out = tmp_path / "rep2"
        rc = cli.main(
            [
                "report",
                "--case-dir",
                str(small_case["case_dir"]),
                "--session",
                str(tmp_path / "sessions" / "rep-1"),
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["grade"] == "I"  # post-review grade, not the pipeline's


class TestSynthCommand:
    def test_synth_then_process(self, tmp_path, capsys):
        case = tmp_path / "case"
        rc = cli.main(
            [
                "synth", "--out", str(case), "--seed", "5", "--node-px", "1024",
                "--mitoses", "2", "--no-ki67",
            ]
        )
        assert rc == 0
        assert (case / "manifest.json").is_file()
        assert (case / "annotations.json").is_file()
        assert (case / "bindings.json").is_file()
        out = tmp_path / "out"
        rc = cli.main(
            [
                "process", "--manifest", str(case / "manifest.json"),
                "--bindings", str(case / "bindings.json"), "--out", str(out),
            ]
        )
        assert rc == 0
        assert "grade" in capsys.readouterr().out
