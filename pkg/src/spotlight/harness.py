"""Dataset loading, the three evaluation settings, and report rendering.

A run resolves each question's page set (as given, retrieved from a corpus,
or mixed with distractors), pushes the pages through the chosen pipeline,
asks the MLLM, scores the reply, and folds everything into a report that can
be re-rendered as markdown, CSV, or JSON. Offline backends make runs
byte-reproducible: deterministic replies, zeroed timings, cache-keyed reruns.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import answering, config as config_mod
from .answering import MllmRequest, ask, build_ocr_prompt, build_prompt, extract_cot_answer, normalize_answer
from .attention import HighlightStyle, apply_attention, mask_params
from .caching import FileCache
from .embedding import clean_query, embed_text, encode_image_b64, select_from_page
from .errors import ConfigError, DatasetError, InputError, SpotlightError
from .metrics import AggregateScores, QuestionScore, aggregate, score_answer
from .pages import GridSpec, PageImage
from .retrieval import CorpusIndex, inject_distractors, retrieve_topk

CATEGORIES = ("inline", "boolean", "comparative", "reasoning", "commonsense", "unanswerable")
SETTINGS = ("closed", "open", "distractor")
PIPELINES = ("baseline", "spotlight", "ocr_stub", "cot")
DATASET_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
FINE_GRAINED_MAX_RATIO = 0.05
MCQ_LABELS = "ABCD"


@dataclass(frozen=True)
class EvidenceBBox:
    page_index: int
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class QARecord:
    qid: str
    question: str
    answers: tuple[str, ...]
    category: str
    domain: str
    doc_id: str
    pages: tuple[str, ...]
    choices: tuple[str, ...] | None = None
    evidence_bbox: EvidenceBBox | None = None


def load_dataset(path: str | Path) -> list[QARecord]:
    """Parse and validate a dataset file, reporting every problem at once.

    Schema (JSON, version 1): {"version": 1, "questions": [{qid, question,
    answers, category, domain, doc_id, pages, choices?, evidence_bbox?}]}.
    Page paths resolve relative to the dataset file and must exist on disk.
    """
    p = Path(path)
    if not p.is_file():
        raise InputError(f"dataset file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError([f"not valid JSON: {exc}"]) from exc
    problems: list[str] = []
    if not isinstance(doc, dict) or doc.get("version") != DATASET_SCHEMA_VERSION:
        raise DatasetError([f"version: expected {DATASET_SCHEMA_VERSION}, got {doc.get('version') if isinstance(doc, dict) else type(doc).__name__}"])
    questions = doc.get("questions")
    if not isinstance(questions, list) or not questions:
        raise DatasetError(["questions: must be a nonempty list"])
    records: list[QARecord] = []
    seen_qids: set[str] = set()
    for idx, item in enumerate(questions):
        qid = item.get("qid") if isinstance(item, dict) else None
        label = qid if isinstance(qid, str) and qid else f"questions[{idx}]"
        if not isinstance(item, dict):
            problems.append(f"{label}: entry must be an object")
            continue
        if not isinstance(qid, str) or not qid:
            problems.append(f"{label}: qid: required nonempty string")
            continue
        if qid in seen_qids:
            problems.append(f"{label}: qid: duplicate")
            continue
        seen_qids.add(qid)
        record = _validate_record(label, item, p.parent, problems)
        if record is not None:
            records.append(record)
    if problems:
        raise DatasetError(problems)
    return records


def _validate_record(label: str, item: dict, base_dir: Path, problems: list[str]) -> QARecord | None:
    before = len(problems)
    question = item.get("question")
    if not isinstance(question, str) or not question.strip():
        problems.append(f"{label}: question: required nonempty string")
    answers = item.get("answers")
    if not isinstance(answers, list) or not answers or any(not isinstance(a, str) or not a.strip() for a in answers):
        problems.append(f"{label}: answers: required list of nonempty strings")
        answers = []
    category = item.get("category")
    if category not in CATEGORIES:
        problems.append(f"{label}: category: must be one of {CATEGORIES}, got {category!r}")
    domain = item.get("domain")
    if not isinstance(domain, str) or not domain.strip():
        problems.append(f"{label}: domain: required nonempty string")
    doc_id = item.get("doc_id", "")
    if not isinstance(doc_id, str):
        problems.append(f"{label}: doc_id: must be a string")
    pages_raw = item.get("pages")
    pages: list[str] = []
    if not isinstance(pages_raw, list) or not pages_raw:
        problems.append(f"{label}: pages: required nonempty list of image paths")
    else:
        for k, page in enumerate(pages_raw):
            if not isinstance(page, str) or not page:
                problems.append(f"{label}: pages[{k}]: must be a nonempty string")
                continue
            resolved = Path(page) if Path(page).is_absolute() else base_dir / page
            if not resolved.is_file():
                problems.append(f"{label}: pages[{k}]: file not found: {resolved}")
            pages.append(str(resolved))
    choices_raw = item.get("choices")
    choices: tuple[str, ...] | None = None
    if choices_raw is not None:
        if (
            not isinstance(choices_raw, list)
            or not (2 <= len(choices_raw) <= len(MCQ_LABELS))
            or any(not isinstance(c, str) or not c.strip() for c in choices_raw)
        ):
            problems.append(f"{label}: choices: must be 2-{len(MCQ_LABELS)} nonempty strings")
        else:
            choices = tuple(choices_raw)
            valid = set(MCQ_LABELS[: len(choices)])
            for a in answers:
                if a.strip().upper() not in valid:
                    problems.append(f"{label}: answers: MCQ gold {a!r} is not an option label in {sorted(valid)}")
    if category == "unanswerable":
        for a in answers:
            if normalize_answer(a) != [answering.UNANSWERABLE_TOKEN]:
                problems.append(f"{label}: answers: unanswerable gold must normalize to {answering.UNANSWERABLE_TOKEN}, got {a!r}")
    bbox_raw = item.get("evidence_bbox")
    bbox: EvidenceBBox | None = None
    if bbox_raw is not None:
        try:
            bbox = EvidenceBBox(
                page_index=int(bbox_raw["page_index"]),
                x=int(bbox_raw["x"]),
                y=int(bbox_raw["y"]),
                w=int(bbox_raw["w"]),
                h=int(bbox_raw["h"]),
            )
        except (KeyError, TypeError, ValueError):
            problems.append(f"{label}: evidence_bbox: must carry integer page_index, x, y, w, h")
        else:
            if not (0 <= bbox.page_index < max(len(pages), 1)):
                problems.append(f"{label}: evidence_bbox.page_index: {bbox.page_index} out of range")
            if bbox.x < 0 or bbox.y < 0 or bbox.w < 1 or bbox.h < 1:
                problems.append(f"{label}: evidence_bbox: x,y must be >= 0 and w,h >= 1")
    if len(problems) > before:
        return None
    return QARecord(
        qid=item["qid"],
        question=question.strip(),
        answers=tuple(a.strip() for a in answers),
        category=category,
        domain=domain.strip(),
        doc_id=doc_id,
        pages=tuple(pages),
        choices=choices,
        evidence_bbox=bbox,
    )


def fineness_ratio(bbox: EvidenceBBox, page: PageImage) -> tuple[float, bool]:
    """Evidence area over page area; fine-grained when strictly below 5%."""
    if bbox.x < 0 or bbox.y < 0 or bbox.x + bbox.w > page.width or bbox.y + bbox.h > page.height:
        raise InputError(
            f"bbox ({bbox.x},{bbox.y},{bbox.w},{bbox.h}) outside page {page.width}x{page.height}"
        )
    ratio = (bbox.w * bbox.h) / (page.width * page.height)
    return ratio, ratio < FINE_GRAINED_MAX_RATIO


@dataclass(frozen=True)
class RunConfig:
    setting: str = "closed"
    pipeline: str = "baseline"
    grid_n: int = 6
    alpha: float = 0.5
    highlight_color: tuple[int, int, int] = (0, 0, 255)
    sigma_bounds: tuple[float, float] = (0.0, 0.8)
    k: int = 4
    m: int = 0
    seed: int = 0
    clean_mode: str = "rule_based"
    parallelism: int = 8
    max_tokens: int = 256
    temperature: float = 0.0
    retries: int = 3
    cache_dir: str | None = None
    index_path: str | None = None
    embedding: dict = field(default_factory=lambda: {"kind": "synthetic"})
    mllm: dict = field(default_factory=dict)
    deterministic_timing: bool | None = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")

    def snapshot(self) -> dict:
        return {
            "setting": self.setting,
            "pipeline": self.pipeline,
            "grid_n": self.grid_n,
            "alpha": self.alpha,
            "highlight_color": list(self.highlight_color),
            "sigma_bounds": list(self.sigma_bounds),
            "k": self.k,
            "m": self.m,
            "seed": self.seed,
            "clean_mode": self.clean_mode,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "embedding": dict(self.embedding),
            "mllm": {k: v for k, v in self.mllm.items() if k != "replies_inline"},
            "index_path": self.index_path,
        }


@dataclass(frozen=True)
class EvalRow:
    qid: str
    domain: str
    category: str
    pages_used: tuple[str, ...]
    pred_raw: str
    pred: str
    golds: tuple[str, ...]
    em: int
    f1: float
    anls: float
    acc: int | None
    latency_ms: dict
    cache_hit: bool
    selection: tuple[dict, ...] | None = None
    fineness: dict | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "domain": self.domain,
            "category": self.category,
            "pages_used": list(self.pages_used),
            "pred_raw": self.pred_raw,
            "pred": self.pred,
            "golds": list(self.golds),
            "em": self.em,
            "f1": self.f1,
            "anls": self.anls,
            "acc": self.acc,
            "latency_ms": dict(self.latency_ms),
            "cache_hit": self.cache_hit,
            "selection": [dict(s) for s in self.selection] if self.selection is not None else None,
            "fineness": dict(self.fineness) if self.fineness is not None else None,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRow":
        return cls(
            qid=d["qid"],
            domain=d["domain"],
            category=d["category"],
            pages_used=tuple(d["pages_used"]),
            pred_raw=d["pred_raw"],
            pred=d["pred"],
            golds=tuple(d["golds"]),
            em=d["em"],
            f1=d["f1"],
            anls=d["anls"],
            acc=d["acc"],
            latency_ms=d["latency_ms"],
            cache_hit=d["cache_hit"],
            selection=tuple(d["selection"]) if d.get("selection") is not None else None,
            fineness=d.get("fineness"),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class EvalReport:
    scores: AggregateScores
    rows: tuple[EvalRow, ...]
    config_snapshot: dict
    cache_hit_ratio: float

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config_snapshot,
            "cache_hit_ratio": self.cache_hit_ratio,
            "scores": self.scores.to_dict(),
            "rows": [row.to_dict() for row in self.rows],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise InputError(f"unsupported report schema version {data.get('schema_version')!r}")
        return cls(
            scores=AggregateScores.from_dict(data["scores"]),
            rows=tuple(EvalRow.from_dict(r) for r in data["rows"]),
            config_snapshot=data["config"],
            cache_hit_ratio=data["cache_hit_ratio"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError as exc:
            raise InputError(f"report file not found: {path}") from exc


class _PageLoader:
    """Per-run page cache so multi-question documents decode once."""

    def __init__(self):
        self._pages: dict[str, PageImage] = {}

    def get(self, path: str) -> PageImage:
        if path not in self._pages:
            self._pages[path] = PageImage.load(path)
        return self._pages[path]


def _record_seed(seed: int, qid: str) -> int:
    digest = hashlib.sha256(f"{seed}:{qid}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _question_text(record: QARecord) -> str:
    if not record.choices:
        return record.question
    lines = [record.question, "", "Options:"]
    lines += [f"{MCQ_LABELS[i]}) {c}" for i, c in enumerate(record.choices)]
    lines.append("Answer with the letter of the correct option.")
    return "\n".join(lines)


def _failed_row(record: QARecord, message: str) -> EvalRow:
    return EvalRow(
        qid=record.qid,
        domain=record.domain,
        category=record.category,
        pages_used=(),
        pred_raw="",
        pred="",
        golds=record.answers,
        em=0,
        f1=0.0,
        anls=0.0,
        acc=0 if record.choices else None,
        latency_ms={"select_ms": 0.0, "mask_ms": 0.0, "ask_ms": 0.0},
        cache_hit=False,
        error=message,
    )


def run_eval(
    records: Sequence[QARecord],
    config: RunConfig,
    embed_backend=None,
    mllm_backend=None,
    index: CorpusIndex | None = None,
) -> EvalReport:
    """Evaluate every record under the configured setting and pipeline.

    Configuration problems abort before any backend call; per-question
    backend failures become failed rows scored zero. Rows assemble in qid
    order and every record yields exactly one row.
    """
    if not records:
        raise InputError("dataset is empty")
    if mllm_backend is None:
        if not config.mllm:
            raise ConfigError("no MLLM backend configured")
        mllm_backend = config_mod.build_mllm_backend(config.mllm)
    needs_embedding = config.pipeline == "spotlight" or config.setting in ("open", "distractor")
    if embed_backend is None and needs_embedding:
        embed_backend = config_mod.build_embedding_backend(config.embedding, cache_dir=config.cache_dir)
    if config.setting in ("open", "distractor"):
        if index is None:
            if not config.index_path:
                raise ConfigError(f"setting {config.setting!r} requires a corpus index")
            index = CorpusIndex.load(config.index_path)
        index.require_backend(embed_backend.descriptor.backend_id)
    answer_cache = FileCache(config.cache_dir, "answers") if config.cache_dir else None
    deterministic = config.deterministic_timing
    if deterministic is None:
        mock_mllm = getattr(mllm_backend, "deterministic_latency_ms", None) is not None
        offline_embed = embed_backend is None or embed_backend.descriptor.kind == "synthetic"
        deterministic = mock_mllm and offline_embed
    loader = _PageLoader()
    grid = GridSpec(config.grid_n)
    style = HighlightStyle(color=config.highlight_color, alpha=config.alpha)

    def process(record: QARecord) -> EvalRow:
        try:
            return _run_record(
                record, config, grid, style, loader, embed_backend, mllm_backend, index, answer_cache, deterministic
            )
        except SpotlightError as exc:
            return _failed_row(record, str(exc))

    if config.parallelism > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            rows = list(pool.map(process, records))
    else:
        rows = [process(r) for r in records]
    rows.sort(key=lambda row: row.qid)
    record_by_qid = {r.qid: r for r in records}
    ordered_records = [record_by_qid[row.qid] for row in rows]
    scores = [
        QuestionScore(qid=row.qid, em=row.em, f1=row.f1, anls=row.anls, acc=row.acc) for row in rows
    ]
    aggregates = aggregate(scores, ordered_records, latencies=[row.latency_ms for row in rows])
    asked = [row for row in rows if row.error is None]
    hit_ratio = (sum(1 for row in asked if row.cache_hit) / len(asked)) if asked else 0.0
    return EvalReport(
        scores=aggregates,
        rows=tuple(rows),
        config_snapshot=config.snapshot(),
        cache_hit_ratio=hit_ratio,
    )


def _resolve_pages(record: QARecord, config: RunConfig, embed_backend, mllm_backend, index) -> list[str]:
    if config.setting == "closed":
        return list(record.pages)
    if config.setting == "open":
        cleaned = clean_query(record.question, mode=config.clean_mode, mllm=mllm_backend if config.clean_mode == "llm" else None)
        q_vec = embed_text(embed_backend, cleaned if cleaned.strip() else record.question)
        result = retrieve_topk(q_vec, index, config.k, backend_id=embed_backend.descriptor.backend_id)
        return result.page_ids
    pool = sorted(set(index.page_ids) - set(record.pages))
    return inject_distractors(record.pages, pool, config.m, _record_seed(config.seed, record.qid))


def _run_record(
    record: QARecord,
    config: RunConfig,
    grid: GridSpec,
    style: HighlightStyle,
    loader: _PageLoader,
    embed_backend,
    mllm_backend,
    index,
    answer_cache,
    deterministic: bool,
) -> EvalRow:
    page_paths = _resolve_pages(record, config, embed_backend, mllm_backend, index)
    pages = [loader.get(path) for path in page_paths]
    question_text = _question_text(record)
    select_ms = 0.0
    mask_ms = 0.0
    selection_out: list[dict] | None = None
    images_b64: list[str] = []
    if config.pipeline == "spotlight":
        selection_out = []
        for page in pages:
            t0 = time.perf_counter()
            sel = select_from_page(
                page, record.question, embed_backend, grid, clean_mode=config.clean_mode,
                mllm=mllm_backend if config.clean_mode == "llm" else None,
            )
            t1 = time.perf_counter()
            params = mask_params(sel.p, sel.center, config.sigma_bounds)
            attended = apply_attention(page, params, style)
            t2 = time.perf_counter()
            select_ms += (t1 - t0) * 1000.0
            mask_ms += (t2 - t1) * 1000.0
            selection_out.append(
                {
                    "page_id": sel.page_id,
                    "i_star": sel.i_star,
                    "j_star": sel.j_star,
                    "p": sel.p,
                    "sigma": params.sigma,
                    "draw": params.draw,
                }
            )
            images_b64.append(encode_image_b64(attended.image.pixels))
        prompt = build_prompt(question_text, "spotlight")
    elif config.pipeline == "ocr_stub":
        texts = []
        for path in page_paths:
            sidecar = Path(path + ".txt")
            if not sidecar.is_file():
                raise InputError(f"ocr_stub pipeline: sidecar text not found: {sidecar}")
            texts.append(sidecar.read_text(encoding="utf-8"))
        prompt = build_ocr_prompt(question_text, texts)
    else:
        images_b64 = [encode_image_b64(page.pixels) for page in pages]
        prompt = build_prompt(question_text, "cot" if config.pipeline == "cot" else "baseline")
    req = MllmRequest(
        prompt=prompt,
        images=tuple(images_b64),
        max_tokens=config.max_tokens,
        temperature=config.temperature,
    )
    answer = ask(mllm_backend, req, cache=answer_cache, retries=config.retries)
    pred = extract_cot_answer(answer.raw) if config.pipeline == "cot" else answer.raw
    gold_option = record.answers[0] if record.choices else None
    score = score_answer(record.qid, pred, record.answers, gold_option=gold_option)
    fineness = None
    if record.evidence_bbox is not None:
        evidence_page = loader.get(record.pages[record.evidence_bbox.page_index])
        ratio, fine = fineness_ratio(record.evidence_bbox, evidence_page)
        fineness = {"ratio": ratio, "fine_grained": fine}
    if deterministic:
        select_ms = mask_ms = 0.0
        ask_ms = answer.latency_ms  # mock backends pin this; cache hits replay it
    else:
        ask_ms = answer.latency_ms
    return EvalRow(
        qid=record.qid,
        domain=record.domain,
        category=record.category,
        pages_used=tuple(page_paths),
        pred_raw=answer.raw,
        pred=pred,
        golds=record.answers,
        em=score.em,
        f1=score.f1,
        anls=score.anls,
        acc=score.acc,
        latency_ms={"select_ms": select_ms, "mask_ms": mask_ms, "ask_ms": ask_ms},
        cache_hit=answer.cache_hit,
        selection=tuple(selection_out) if selection_out is not None else None,
        fineness=fineness,
    )


def render_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Render a report as a markdown table set, lossless CSV rows, or JSON."""
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n"
    if fmt == "csv":
        return _render_csv(report)
    if fmt == "markdown":
        return _render_markdown(report)
    raise InputError(f"unknown report format {fmt!r}")


_CSV_COLUMNS = (
    "qid", "domain", "category", "em", "f1", "anls", "acc",
    "select_ms", "mask_ms", "ask_ms", "cache_hit", "error", "pred_raw", "pred", "golds", "pages_used",
)


def _render_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for row in report.rows:
        writer.writerow(
            [
                row.qid, row.domain, row.category, row.em, repr(row.f1), repr(row.anls),
                "" if row.acc is None else row.acc,
                repr(row.latency_ms.get("select_ms", 0.0)),
                repr(row.latency_ms.get("mask_ms", 0.0)),
                repr(row.latency_ms.get("ask_ms", 0.0)),
                int(row.cache_hit),
                row.error or "",
                row.pred_raw,
                row.pred,
                json.dumps(list(row.golds)),
                json.dumps(list(row.pages_used)),
            ]
        )
    return buf.getvalue()


def parse_csv_rows(text: str) -> list[dict]:
    """Inverse of the CSV rendering, for round-trip checks and scripting."""
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for raw in reader:
        out.append(
            {
                "qid": raw["qid"],
                "domain": raw["domain"],
                "category": raw["category"],
                "em": int(raw["em"]),
                "f1": float(raw["f1"]),
                "anls": float(raw["anls"]),
                "acc": None if raw["acc"] == "" else int(raw["acc"]),
                "latency_ms": {
                    "select_ms": float(raw["select_ms"]),
                    "mask_ms": float(raw["mask_ms"]),
                    "ask_ms": float(raw["ask_ms"]),
                },
                "cache_hit": bool(int(raw["cache_hit"])),
                "error": raw["error"] or None,
                "pred_raw": raw["pred_raw"],
                "pred": raw["pred"],
                "golds": json.loads(raw["golds"]),
                "pages_used": json.loads(raw["pages_used"]),
            }
        )
    return out


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def _render_markdown(report: EvalReport) -> str:
    scores = report.scores
    domains = list(scores.domains)
    cfg = report.config_snapshot
    lines = [
        "# Evaluation Report",
        "",
        f"Setting: {cfg.get('setting')} | Pipeline: {cfg.get('pipeline')} | "
        f"Questions: {scores.overall['count']} | Cache-hit ratio: {report.cache_hit_ratio:.2f}",
        "",
        "| Metric | " + " | ".join(domains + ["All"]) + " |",
        "| --- |" + " --- |" * (len(domains) + 1),
    ]
    metric_rows = [("Exact Match (EM)", "em"), ("F1", "f1"), ("ANLS", "anls")]
    if scores.overall.get("acc") is not None:
        metric_rows.append(("Accuracy (MCQ)", "acc"))
    for title, key in metric_rows:
        cells = [_fmt(scores.per_domain[d][key]) for d in domains] + [_fmt(scores.overall[key])]
        lines.append(f"| {title} | " + " | ".join(cells) + " |")
    lines += [
        "",
        "| Domain | " + " | ".join(domains + ["All"]) + " |",
        "| --- |" + " --- |" * (len(domains) + 1),
        "| Questions | "
        + " | ".join(str(scores.per_domain[d]["count"]) for d in domains)
        + f" | {scores.overall['count']} |",
        "",
        "| Stage | Mean latency (ms) |",
        "| --- | --- |",
    ]
    for stage in ("select_ms", "mask_ms", "ask_ms"):
        lines.append(f"| {stage.removesuffix('_ms')} | {scores.mean_latency_ms.get(stage, 0.0):.3f} |")
    failures = [row.qid for row in report.rows if row.error]
    if failures:
        lines += ["", f"Failed rows: {len(failures)} ({', '.join(failures[:10])})"]
    lines.append("")
    return "\n".join(lines)


def write_report_files(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json / report.md / report.csv into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "markdown": out / "report.md",
        "csv": out / "report.csv",
    }
    paths["json"].write_text(render_report(report, "json"), encoding="utf-8")
    paths["markdown"].write_text(render_report(report, "markdown"), encoding="utf-8")
    paths["csv"].write_text(render_report(report, "csv"), encoding="utf-8")
    return paths
