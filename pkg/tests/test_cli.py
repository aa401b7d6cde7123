"""Command-line interface: subcommands, output, and exit codes."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

import scibench
from helpers import (
    distinct_body,
    document_row,
    identity_eval_rows,
    read_json_lines,
    write_jsonl,
)
from scibench.cli import main
from scibench.pipeline import report_from_json

# Keep the HTTP-backed judge and classifier from ever being reachable.


@pytest.fixture(autouse=True)
def _no_service_env(monkeypatch):
    monkeypatch.delenv("SCIBENCH_JUDGE_URL", raising=False)
    monkeypatch.delenv("SCIBENCH_CLASSIFIER_URL", raising=False)


# ----- fixtures -----

_CLI_TOML = """\
schema = "document"
seed = 7
input_paths = ["corpus.jsonl"]
output_dir = "out"

[balance.targets]
general = 0.5
academic_paper = 0.5
"""


def _corpus_rows() -> list[dict]:
    rows = [
        document_row(f"doc-{i}", distinct_body(200 + i),
                     source="academic_paper" if i % 2 else "general")
        for i in range(8)
    ]
    rows.append(document_row("doc-copy", rows[0]["body"], source="general"))
    rows.append(document_row("doc-blank", "   "))
    return rows


def _write_cli_config(tmp_path: Path) -> Path:
    write_jsonl(tmp_path / "corpus.jsonl", _corpus_rows())
    config_path = tmp_path / "config.toml"
    config_path.write_text(_CLI_TOML, encoding="utf-8")
    return config_path


def _eval_files(tmp_path: Path) -> tuple[Path, Path]:
    pred_rows, gold_rows = identity_eval_rows()
    return (
        write_jsonl(tmp_path / "pred.jsonl", pred_rows),
        write_jsonl(tmp_path / "gold.jsonl", gold_rows),
    )


def _snapshot(directory: Path) -> dict[str, bytes]:
    return {
        p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()
    }


# ----- parser-level behavior -----


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert scibench.__version__ in capsys.readouterr().out

    def test_subcommand_is_required(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["clean", "--config", "x.toml", "--frobnicate"])
        assert excinfo.value.code == 2


# ----- pipeline and stage subcommands -----


class TestPipelineCommands:
    def test_pipeline_prints_stages_and_provenance(self, tmp_path, capsys):
        config_path = _write_cli_config(tmp_path)
        assert main(["pipeline", "--config", str(config_path)]) == 0
        out_lines = capsys.readouterr().out.splitlines()

        expected_hash = hashlib.sha256(config_path.read_bytes()).hexdigest()
        assert out_lines[0] == "clean: 10 in, 9 out"
        assert out_lines[1] == "  rejected 1 (empty_document)"
        assert out_lines[2] == "dedup: 9 in, 8 out"
        assert out_lines[-1] == f"config {expected_hash} seed 7"
        assert (tmp_path / "out" / "pipeline_summary.json").is_file()

    def test_stage_by_stage_equals_composed_pipeline(self, tmp_path, capsys):
        import shutil

        config_path = _write_cli_config(tmp_path)
        assert main(["pipeline", "--config", str(config_path)]) == 0
        composed = _snapshot(tmp_path / "out")
        shutil.rmtree(tmp_path / "out")

        for stage in ("clean", "dedup", "balance", "sequence"):
            assert main([stage, "--config", str(config_path)]) == 0
        staged = _snapshot(tmp_path / "out")

        composed.pop("pipeline_summary.json")  # written only by `pipeline`
        assert staged == composed

    def test_seed_override_changes_outputs_not_hash(self, tmp_path, capsys):
        config_path = _write_cli_config(tmp_path)
        assert main(["pipeline", "--config", str(config_path), "--seed", "99"]) == 0
        out = capsys.readouterr().out
        expected_hash = hashlib.sha256(config_path.read_bytes()).hexdigest()
        assert f"config {expected_hash} seed 99" in out
        summary = json.loads(
            (tmp_path / "out" / "pipeline_summary.json").read_text(encoding="utf-8")
        )
        assert summary["seed"] == 99
        assert summary["config_hash"] == expected_hash

    def test_missing_config_exits_1(self, tmp_path, capsys):
        assert main(["clean", "--config", str(tmp_path / "nope.toml")]) == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_stage_out_of_order_exits_1(self, tmp_path, capsys):
        # dedup before clean: its input artifact does not exist yet
        config_path = _write_cli_config(tmp_path)
        assert main(["dedup", "--config", str(config_path)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_stage_failure_exits_2(self, tmp_path, capsys):
        write_jsonl(
            tmp_path / "pairs.jsonl",
            [
                {
                    "id": f"p{i}",
                    "instruction": "Name the entities.",
                    "response": distinct_body(220 + i, n_words=20),
                    "domain": "general",
                    "task": "named_entity_recognition",
                    "language": "en",
                }
                for i in range(3)
            ],
        )
        config_path = tmp_path / "pairs.toml"
        config_path.write_text(
            'schema = "instruction_pair"\n'
            'input_paths = ["pairs.jsonl"]\n'
            'output_dir = "out"\n\n'
            "[curriculum]\n"
            "stage1_target_count = 3\n"
            "stage2_new_count = 3\n",
            encoding="utf-8",
        )
        # no stage-2 tasks in the corpus -> the sequence stage fails
        assert main(["pipeline", "--config", str(config_path)]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error: stage 'sequence' failed")


# ----- eval and report subcommands -----


class TestEvalCommand:
    def test_markdown_table_on_stdout(self, tmp_path, capsys):
        pred, gold = _eval_files(tmp_path)
        code = main([
            "eval", "--pred", str(pred), "--gold", str(gold),
            "--model-name", "echo",
        ])
        assert code == 0
        out_lines = capsys.readouterr().out.splitlines()
        assert out_lines[1] == "| Task | Dataset | echo | - | Evaluation Metrics |"
        assert (
            "| Sequence Labeling | Named Entity Recognition | 1.0000 | - | F1 |"
            in out_lines
        )
        assert len([l for l in out_lines if l.startswith("|")]) == 12

    def test_out_flag_writes_report_json(self, tmp_path, capsys):
        pred, gold = _eval_files(tmp_path)
        out_path = tmp_path / "report.json"
        code = main([
            "eval", "--pred", str(pred), "--gold", str(gold),
            "--out", str(out_path),
        ])
        assert code == 0
        assert f"wrote {out_path}" in capsys.readouterr().out
        report = report_from_json(out_path.read_text(encoding="utf-8"))
        assert len(report.rows) == 10
        assert all(row.score_model_a == 1.0 for row in report.rows)

    def test_csv_format(self, tmp_path, capsys):
        pred, gold = _eval_files(tmp_path)
        assert main([
            "eval", "--pred", str(pred), "--gold", str(gold), "--format", "csv",
        ]) == 0
        out_lines = capsys.readouterr().out.splitlines()
        assert out_lines[0].startswith("# config_hash=")
        assert "task_group,dataset,score_model_a,score_model_b,metric" in out_lines

    def test_bootstrap_intervals_are_printed(self, tmp_path, capsys):
        pred, gold = _eval_files(tmp_path)
        assert main([
            "eval", "--pred", str(pred), "--gold", str(gold),
            "--bootstrap", "50",
        ]) == 0
        out = capsys.readouterr().out
        assert (
            "bootstrap 95% interval abstract_to_title: 1.0000..1.0000" in out
        )
        assert out.count("bootstrap 95% interval") == 10

    def test_id_mismatch_exits_1(self, tmp_path, capsys):
        pred = write_jsonl(
            tmp_path / "pred.jsonl",
            [{"id": "a", "task": "machine_translation", "text": "x"}],
        )
        gold = write_jsonl(
            tmp_path / "gold.jsonl",
            [{"id": "b", "task": "machine_translation", "text": "x"}],
        )
        assert main(["eval", "--pred", str(pred), "--gold", str(gold)]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestReportCommand:
    def test_renders_stored_report(self, tmp_path, capsys):
        pred, gold = _eval_files(tmp_path)
        report_path = tmp_path / "report.json"
        main(["eval", "--pred", str(pred), "--gold", str(gold),
              "--out", str(report_path)])
        capsys.readouterr()

        assert main(["report", "--in", str(report_path), "--format", "csv"]) == 0
        assert capsys.readouterr().out.startswith("# config_hash=")

        rendered = tmp_path / "table.md"
        assert main([
            "report", "--in", str(report_path), "--out", str(rendered),
        ]) == 0
        assert f"wrote {rendered}" in capsys.readouterr().out
        assert rendered.read_text(encoding="utf-8").splitlines()[1] == (
            "| Task | Dataset | model_a | - | Evaluation Metrics |"
        )

    def test_bad_report_json_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        assert main(["report", "--in", str(bad)]) == 1
        assert capsys.readouterr().err.startswith("error:")


# ----- judge subcommand -----


def _write_judge_inputs(tmp_path: Path) -> tuple[Path, Path]:
    cases = write_jsonl(
        tmp_path / "cases.jsonl",
        [
            {"question_id": "q1", "question": "Which answer is clearer?",
             "answer_a": "first answer", "answer_b": "second answer"},
            {"question_id": "q2", "question": "Which answer is correct?",
             "answer_a": "right answer", "answer_b": "wrong answer"},
        ],
    )
    # q1: the judge always scores the first slot 9 -> position bias -> tie.
    # q2: the judge prefers answer a in both orders -> a wins.
    fixture = tmp_path / "fixture.json"
    fixture.write_text(
        json.dumps([
            ["q1", "ab", 9.0, 1.0],
            ["q1", "ba", 9.0, 1.0],
            ["q2", "ab", 8.0, 3.0],
            ["q2", "ba", 3.0, 8.0],
        ]),
        encoding="utf-8",
    )
    return cases, fixture


class TestJudgeCommand:
    def test_fixture_judging_and_tally(self, tmp_path, capsys):
        cases, fixture = _write_judge_inputs(tmp_path)
        verdicts_path = tmp_path / "verdicts.jsonl"
        code = main([
            "judge", "--cases", str(cases), "--fixture", str(fixture),
            "--out", str(verdicts_path),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "wins_a=1 wins_b=0 ties=1 total=2" in out
        assert f"wrote {verdicts_path}" in out

        rows = read_json_lines(verdicts_path)
        assert [row["question_id"] for row in rows] == ["q1", "q2"]
        assert rows[0]["winner"] == "tie"
        assert rows[1]["winner"] == "a"

    def test_tie_margin_flag_widens_ties(self, tmp_path, capsys):
        cases, fixture = _write_judge_inputs(tmp_path)
        assert main([
            "judge", "--cases", str(cases), "--fixture", str(fixture),
            "--tie-margin", "6.0",
        ]) == 0
        assert "wins_a=0 wins_b=0 ties=2 total=2" in capsys.readouterr().out

    def test_without_fixture_or_endpoint_exits_2(self, tmp_path, capsys):
        cases, _ = _write_judge_inputs(tmp_path)
        assert main(["judge", "--cases", str(cases)]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_malformed_cases_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "cases.jsonl"
        bad.write_text('{"question_id": "q1"}\n', encoding="utf-8")
        assert main(["judge", "--cases", str(bad)]) == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_malformed_fixture_exits_1(self, tmp_path, capsys):
        cases, _ = _write_judge_inputs(tmp_path)
        fixture = tmp_path / "fixture.json"
        fixture.write_text(json.dumps([["q1", "ab", 9.0]]), encoding="utf-8")
        assert main([
            "judge", "--cases", str(cases), "--fixture", str(fixture),
        ]) == 1
        assert "fixture" in capsys.readouterr().err

    def test_incomplete_fixture_exits_2(self, tmp_path, capsys):
        # both orders are required; a one-sided fixture is a judge outage
        cases, _ = _write_judge_inputs(tmp_path)
        fixture = tmp_path / "fixture.json"
        fixture.write_text(
            json.dumps([
                ["q1", "ab", 9.0, 1.0],
                ["q2", "ab", 8.0, 3.0],
                ["q2", "ba", 3.0, 8.0],
            ]),
            encoding="utf-8",
        )
        assert main([
            "judge", "--cases", str(cases), "--fixture", str(fixture),
        ]) == 2
        assert capsys.readouterr().err.startswith("error:")


# ----- dpo-check subcommand -----


class TestDpoCheckCommand:
    def test_all_checks_pass(self, capsys):
        assert main(["dpo-check", "--samples", "50", "--total-steps", "1000"]) == 0
        out_lines = capsys.readouterr().out.splitlines()
        assert out_lines[-1] == "all checks passed"
        pass_lines = [l for l in out_lines if l.startswith("PASS ")]
        assert len(pass_lines) == 8
        assert any(l.startswith("PASS loss_at_equal_logprobs:") for l in pass_lines)
        assert any(
            l.startswith("PASS gradient_finite_difference:") for l in pass_lines
        )
        assert any(l.startswith("PASS lr_at_cosine_midpoint:") for l in pass_lines)

    def test_respects_config_hyperparams(self, tmp_path, capsys):
        write_jsonl(tmp_path / "corpus.jsonl", [document_row("d", "text")])
        config_path = tmp_path / "config.toml"
        config_path.write_text(
            'input_paths = ["corpus.jsonl"]\noutput_dir = "out"\n\n'
            "[dpo]\nbeta = 0.3\nlr_init = 1e-4\nwarmup_steps = 100\n",
            encoding="utf-8",
        )
        assert main([
            "dpo-check", "--config", str(config_path),
            "--samples", "20", "--total-steps", "500",
        ]) == 0
        out = capsys.readouterr().out
        assert "lr(100)=0.0001" in out
        assert "all checks passed" in out


# ----- validate-manifest subcommand -----


class TestValidateManifestCommand:
    def test_inconsistent_manifest_exits_1(self, data_dir, capsys):
        path = data_dir / "reference_manifest.json"
        assert main(["validate-manifest", str(path)]) == 1
        out = capsys.readouterr().out
        assert "total_consistency" in out
        assert "1070962" in out

    def test_consistent_manifest_exits_0(self, tmp_path, capsys):
        manifest = {
            "rows": [
                {"domain": "patent", "task": "named_entity_recognition",
                 "language": "en", "count": 600},
                {"domain": "general", "task": "general_dialogue",
                 "language": "en", "count": 400},
            ],
            "declared_total": 1000,
            "declared_proportions": {"patent": 0.6, "general": 0.4},
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(manifest), encoding="utf-8")
        assert main(["validate-manifest", str(path)]) == 0
        assert "total_consistency" in capsys.readouterr().out

    def test_missing_manifest_exits_1(self, tmp_path, capsys):
        assert main(["validate-manifest", str(tmp_path / "nope.json")]) == 1
        assert capsys.readouterr().err.startswith("error:")
