import base64
import io
import json
import re

import numpy as np
import pytest
from PIL import Image

from spotlight import PageImage, SyntheticEmbedder, build_prompt
from spotlight.caching import hash_text
from spotlight.embedding import MARKER_COLORS

MARKER_NAMES = list(MARKER_COLORS)


def gray_background(rng, w, h):
    """Noisy gray page that never trips the marker tolerance."""
    base = rng.integers(186, 216, size=(h, w, 1), dtype=np.uint8)
    return np.repeat(base, 3, axis=2)


def make_needle_page(rng, page_id, marker, n=6, w=360, h=360):
    """One marker block planted strictly inside a random grid cell."""
    px = gray_background(rng, w, h)
    i = int(rng.integers(1, n + 1))
    j = int(rng.integers(1, n + 1))
    cw, ch = w // n, h // n
    x0, y0 = (j - 1) * cw, (i - 1) * ch
    bw, bh = int(cw * 0.78), int(ch * 0.78)
    px[y0 + 4 : y0 + 4 + bh, x0 + 4 : x0 + 4 + bw] = MARKER_COLORS[marker]
    return PageImage(id=page_id, pixels=px), (i, j)


def needle_query(marker):
    return f"find the {marker} box"


def make_needle_suite(seed, count, n=6, w=360, h=360):
    rng = np.random.default_rng(seed)
    suite = []
    for case in range(count):
        marker = MARKER_NAMES[case % len(MARKER_NAMES)]
        page, cell = make_needle_page(rng, f"needle-{case}", marker, n=n, w=w, h=h)
        suite.append((page, needle_query(marker), cell))
    return suite


class RegionAwareMock:
    """Directional MLLM mock: answers the gold only when the gold cell's mean
    blue channel rose by more than `threshold` units versus the original page."""

    backend_id = "mock-region"
    default_model_id = "mock"
    deterministic_latency_ms = 0.0

    def __init__(self, cases, threshold=20.0):
        # cases: question -> (original pixels, (y0, y1, x0, x1), gold answer)
        self._cases = dict(cases)
        self._threshold = threshold

    def generate(self, req):
        match = re.search(r"^Question: (.+)$", req.prompt, flags=re.MULTILINE)
        question = match.group(1).strip() if match else ""
        if question not in self._cases or not req.images:
            return "Information not available.", None
        original, (y0, y1, x0, x1), gold = self._cases[question]
        sent = np.asarray(Image.open(io.BytesIO(base64.b64decode(req.images[0]))).convert("RGB"))
        uplift = float(sent[y0:y1, x0:x1, 2].mean()) - float(original[y0:y1, x0:x1, 2].mean())
        if uplift > self._threshold:
            return gold, None
        return "Information not available.", None


def write_dataset(tmp_dir, records):
    """Write records (list of dicts) plus their page images; returns dataset path."""
    path = tmp_dir / "dataset.json"
    path.write_text(json.dumps({"version": 1, "questions": records}, indent=1), encoding="utf-8")
    return path


def echo_gold_replies(questions_and_golds, modes=("baseline", "spotlight", "cot")):
    """Mock reply map answering every prompt variant of a question with its gold."""
    replies = {}
    for question, gold in questions_and_golds:
        for mode in modes:
            replies[hash_text(build_prompt(question, mode))] = gold
    return replies


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def synthetic_backend():
    return SyntheticEmbedder()
