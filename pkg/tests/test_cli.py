import json

import numpy as np
import pytest

from spotlight import PageImage, aggregate
from spotlight.cli import main
from spotlight.harness import _question_text, load_dataset, parse_csv_rows
from spotlight.metrics import QuestionScore
from conftest import echo_gold_replies, gray_background, make_needle_page, needle_query, write_dataset


def write_config(tmp_path, name="config.json", **blocks):
    path = tmp_path / name
    path.write_text(json.dumps(blocks), encoding="utf-8")
    return path


def save_uniform_page(tmp_path, name="page.png", value=205, w=120, h=120):
    page = PageImage(id=name, pixels=np.full((h, w, 3), value, dtype=np.uint8))
    path = tmp_path / name
    page.save_png(path)
    return path


class TestSpot:
    def test_uniform_page_no_draw_passthrough(self, tmp_path, capsys):
        img = save_uniform_page(tmp_path)
        out = tmp_path / "attended.png"
        code = main(["spot", "--image", str(img), "--query", "find the red box", "--out", str(out)])
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["draw"] is False
        assert PageImage.load(out).pixels.tobytes() == PageImage.load(img).pixels.tobytes()

    def test_needle_page_draws_in_planted_cell(self, tmp_path, capsys, rng):
        page, (i, j) = make_needle_page(rng, "needle", "green")
        img = tmp_path / "needle.png"
        page.save_png(img)
        out = tmp_path / "attended.png"
        code = main(
            ["spot", "--image", str(img), "--query", needle_query("green"), "--out", str(out), "--emit-debug"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["draw"] is True
        assert (payload["i_star"], payload["j_star"]) == (i, j)
        debug = json.loads((tmp_path / "attended.png.debug.json").read_text())
        assert debug["selection"]["i_star"] == i
        assert debug["mask"]["draw"] is True

    def test_missing_image_exits_4_naming_path(self, tmp_path, capsys):
        missing = tmp_path / "ghost.png"
        code = main(["spot", "--image", str(missing), "--query", "q"])
        assert code == 4
        assert "ghost.png" in capsys.readouterr().err

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as err:
            main(["spot", "--image", "x", "--query", "q", "--definitely-not-a-flag"])
        assert err.value.code == 2


@pytest.fixture
def eval_fixture(tmp_path):
    pages = []
    questions = []
    rng = np.random.default_rng(0)
    for i in range(3):
        name = f"page{i}.png"
        page = PageImage(id=name, pixels=gray_background(rng, 100, 100))
        page.save_png(tmp_path / name)
        pages.append(name)
        questions.append(
            {
                "qid": f"q{i}",
                "question": f"What is item number {i}?",
                "answers": [f"item-{i}"],
                "category": "inline",
                "domain": "menus" if i % 2 == 0 else "papers",
                "doc_id": f"d{i}",
                "pages": [name],
            }
        )
    dataset = write_dataset(tmp_path, questions)
    records = load_dataset(dataset)
    replies = echo_gold_replies([(_question_text(r), r.answers[0]) for r in records])
    replies_path = tmp_path / "replies.json"
    replies_path.write_text(json.dumps(replies), encoding="utf-8")
    config = write_config(
        tmp_path,
        mllm={"kind": "mock", "replies": str(replies_path)},
        embedding={"kind": "synthetic"},
    )
    return dataset, config


class TestEval:
    def test_oracle_run_reports_perfect_em(self, eval_fixture, tmp_path, capsys):
        dataset, config = eval_fixture
        out_dir = tmp_path / "out"
        code = main(
            ["eval", "--dataset", str(dataset), "--config", str(config), "--out-dir", str(out_dir), "--json"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["overall"]["em"] == 1.0
        assert (out_dir / "report.json").is_file()
        assert (out_dir / "report.md").is_file()
        assert (out_dir / "report.csv").is_file()

    def test_human_summary_contains_table(self, eval_fixture, tmp_path, capsys):
        dataset, config = eval_fixture
        code = main(["eval", "--dataset", str(dataset), "--config", str(config), "--out-dir", str(tmp_path / "o")])
        assert code == 0
        out = capsys.readouterr().out
        assert "Exact Match (EM)" in out

    def test_open_without_index_exits_2(self, eval_fixture, tmp_path, capsys):
        dataset, config = eval_fixture
        code = main(
            ["eval", "--dataset", str(dataset), "--config", str(config), "--setting", "open", "--out-dir", str(tmp_path / "o2")]
        )
        assert code == 2
        assert "index" in capsys.readouterr().err

    def test_spotlight_vs_baseline_runs(self, eval_fixture, tmp_path):
        dataset, config = eval_fixture
        for pipeline in ("baseline", "spotlight"):
            code = main(
                [
                    "eval", "--dataset", str(dataset), "--config", str(config),
                    "--pipeline", pipeline, "--out-dir", str(tmp_path / f"out-{pipeline}"),
                ]
            )
            assert code == 0

    def test_index_then_open_eval_round_trip(self, eval_fixture, tmp_path, capsys):
        dataset, config = eval_fixture
        index_path = tmp_path / "index.json"
        code = main(["index", "--images", str(tmp_path), "--out", str(index_path), "--config", str(config)])
        assert code == 0
        capsys.readouterr()
        code = main(
            [
                "eval", "--dataset", str(dataset), "--config", str(config), "--setting", "open",
                "--index-path", str(index_path), "--k", "1", "--out-dir", str(tmp_path / "out-open"), "--json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["overall"]["count"] == 3


class TestReportCommand:
    def test_csv_reparses_to_equal_scores(self, eval_fixture, tmp_path, capsys):
        dataset, config = eval_fixture
        out_dir = tmp_path / "out"
        assert main(["eval", "--dataset", str(dataset), "--config", str(config), "--out-dir", str(out_dir)]) == 0
        capsys.readouterr()
        report_path = out_dir / "report.json"
        assert main(["report", "--report", str(report_path), "--format", "csv"]) == 0
        csv_text = capsys.readouterr().out
        rows = parse_csv_rows(csv_text)
        scores = [QuestionScore(qid=r["qid"], em=r["em"], f1=r["f1"], anls=r["anls"], acc=r["acc"]) for r in rows]

        class _Rec:
            def __init__(self, domain):
                self.domain = domain

        from spotlight import EvalReport

        report = EvalReport.load(report_path)
        recomputed = aggregate(scores, [_Rec(r["domain"]) for r in rows], latencies=[r["latency_ms"] for r in rows])
        assert recomputed == report.scores

    def test_json_format_round_trip(self, eval_fixture, tmp_path, capsys):
        dataset, config = eval_fixture
        out_dir = tmp_path / "out"
        assert main(["eval", "--dataset", str(dataset), "--config", str(config), "--out-dir", str(out_dir)]) == 0
        capsys.readouterr()
        out_file = tmp_path / "re.json"
        assert main(["report", "--report", str(out_dir / "report.json"), "--format", "json", "--out", str(out_file)]) == 0
        assert json.loads(out_file.read_text())["scores"]["overall"]["em"] == 1.0

    def test_missing_report_exits_4(self, tmp_path, capsys):
        assert main(["report", "--report", str(tmp_path / "none.json")]) == 4


class TestAnswerCommand:
    def test_answer_round_trip(self, tmp_path, capsys):
        img = save_uniform_page(tmp_path)
        from spotlight import build_prompt
        from spotlight.caching import hash_text

        replies = {hash_text(build_prompt("What is this?", "baseline")): "a page"}
        config = write_config(tmp_path, mllm={"kind": "mock", "replies_inline": replies})
        code = main(["answer", "--image", str(img), "--question", "What is this?", "--config", str(config), "--json"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["raw"] == "a page"

    def test_answer_without_mllm_exits_2(self, tmp_path):
        img = save_uniform_page(tmp_path)
        config = write_config(tmp_path)
        assert main(["answer", "--image", str(img), "--question", "q", "--config", str(config)]) == 2


class TestOcclude:
    def test_constant_mock_dumps_all_zero_grid(self, tmp_path, capsys):
        img = save_uniform_page(tmp_path, w=64, h=64)
        config = write_config(tmp_path, mllm={"kind": "mock", "replies_inline": {"*": "x"}})
        prefix = tmp_path / "heat"
        code = main(
            [
                "occlude", "--image", str(img), "--query", "anything?", "--window", "16", "--stride", "16",
                "--reference", "x", "--out-prefix", str(prefix), "--config", str(config), "--json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip())
        grid = json.loads((tmp_path / "heat.json").read_text())
        assert all(v == 0.0 for row in grid["values"] for v in row)
        assert (tmp_path / "heat.png").is_file()
        assert payload["p_orig"] == 1.0

    def test_mock_logits_backend_from_config(self, tmp_path, capsys):
        img = save_uniform_page(tmp_path, w=32, h=32)
        config = write_config(tmp_path, mllm={"kind": "mock_logits", "logits": {"ref": 1.0, "other": 0.0}})
        prefix = tmp_path / "heat2"
        code = main(
            [
                "occlude", "--image", str(img), "--query", "q", "--window", "16", "--stride", "16",
                "--out-prefix", str(prefix), "--config", str(config),
            ]
        )
        assert code == 0
        grid = json.loads((tmp_path / "heat2.json").read_text())
        assert all(v == 0.0 for row in grid["values"] for v in row)
