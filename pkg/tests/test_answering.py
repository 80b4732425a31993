import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spotlight import (
    BackendError,
    ConfigError,
    HttpMllm,
    InputError,
    MllmRequest,
    MockMllm,
    UNANSWERABLE_TOKEN,
    ask,
    build_prompt,
    extract_cot_answer,
    normalize_answer,
)
from spotlight.answering import build_ocr_prompt
from spotlight.caching import FileCache, answer_cache_key, hash_text

BASELINE_GOLDEN = """Read the above Images and answer this question

Question: What is the cheapest breakfast extra?

Instructions:
- DO NOT use external knowledge.
- Provide a one-word or numerical answer if possible.
- If information is unavailable, state "Information not available."
"""

SPOTLIGHT_GOLDEN = """Read the above Images and answer this question

Focus on the BLUE Highlighted area in images as it is more relevant to the query. First, try to answer only using the highlighted area, and if not found, then, consider whole image

Question: What is the cheapest breakfast extra?

Instructions:
- DO NOT use external knowledge.
- Provide a one-word or numerical answer if possible.
- If information is unavailable, state "Information not available."
"""

COT_GOLDEN = (
    BASELINE_GOLDEN
    + """
Think step by step about where the answer appears before replying.
End your reply with a final line of the form:
Answer: <your final answer>
"""
)


class TestBuildPrompt:
    def test_baseline_template_is_byte_stable(self):
        assert build_prompt("What is the cheapest breakfast extra?", "baseline") == BASELINE_GOLDEN

    def test_spotlight_template_is_byte_stable(self):
        assert build_prompt("What is the cheapest breakfast extra?", "spotlight") == SPOTLIGHT_GOLDEN

    def test_cot_template_is_byte_stable(self):
        assert build_prompt("What is the cheapest breakfast extra?", "cot") == COT_GOLDEN

    def test_baseline_contains_no_external_knowledge_line(self):
        assert "DO NOT use external knowledge." in build_prompt("q?", "baseline")

    def test_baseline_contains_unavailable_phrase(self):
        assert "Information not available." in build_prompt("q?", "baseline")

    def test_spotlight_contains_blue_directive(self):
        prompt = build_prompt("q?", "spotlight")
        assert "Focus on the BLUE Highlighted area" in prompt
        assert "DO NOT use external knowledge." in prompt

    def test_cot_appends_marker(self):
        prompt = build_prompt("q?", "cot")
        assert prompt.startswith(build_prompt("q?", "baseline"))
        assert "Answer:" in prompt

    def test_empty_question_rejected(self):
        with pytest.raises(InputError):
            build_prompt("  ", "baseline")

    def test_unknown_mode_rejected(self):
        with pytest.raises(InputError):
            build_prompt("q?", "zero-shot")

    def test_ocr_prompt_embeds_texts(self):
        prompt = build_ocr_prompt("q?", ["alpha text", "beta text"])
        assert "alpha text" in prompt and "beta text" in prompt
        assert "DO NOT use external knowledge." in prompt


class TestCotExtraction:
    def test_extracts_after_last_marker(self):
        raw = "Step 1: look.\nAnswer: draft\nmore thought\nAnswer: 42"
        assert extract_cot_answer(raw) == "42"

    def test_whole_reply_without_marker(self):
        assert extract_cot_answer("just 42") == "just 42"

    def test_marker_with_trailing_text_same_line(self):
        assert extract_cot_answer("reasoning...\nAnswer: The Hindu") == "The Hindu"


class TestNormalizeAnswer:
    def test_strips_article_case_punctuation(self):
        assert normalize_answer("The Hindu.") == ["hindu"]

    def test_unanswerable_phrase_any_casing(self):
        assert normalize_answer("Information not available") == [UNANSWERABLE_TOKEN]
        assert normalize_answer("INFORMATION NOT AVAILABLE.") == [UNANSWERABLE_TOKEN]
        assert normalize_answer(UNANSWERABLE_TOKEN) == [UNANSWERABLE_TOKEN]

    def test_empty(self):
        assert normalize_answer("") == []

    @settings(max_examples=100, deadline=None)
    @given(st.text(max_size=50))
    def test_idempotent_on_joined_output(self, text):
        tokens = normalize_answer(text)
        assert normalize_answer(" ".join(tokens)) == tokens


class TestMockAndCache:
    def test_mock_map_contract(self):
        prompt = build_prompt("the meaning?", "baseline")
        backend = MockMllm({hash_text(prompt): "42"})
        result = ask(backend, MllmRequest(prompt=prompt, images=("aW1n",)))
        assert result.raw == "42"
        assert result.latency_ms == 0.0

    def test_mock_fallback_star(self):
        backend = MockMllm({"*": "fallback"})
        assert ask(backend, MllmRequest(prompt="anything")).raw == "fallback"

    def test_empty_reply_is_empty_answer_not_error(self):
        backend = MockMllm({})
        result = ask(backend, MllmRequest(prompt="unknown"))
        assert result.raw == "" and result.normalized == ()

    def test_cache_round_trip(self, tmp_path):
        cache = FileCache(tmp_path, "answers")
        prompt = build_prompt("cache me?", "baseline")
        backend = MockMllm({hash_text(prompt): "yes"})
        first = ask(backend, MllmRequest(prompt=prompt), cache=cache)
        second = ask(MockMllm({}), MllmRequest(prompt=prompt), cache=cache)
        assert first.cache_hit is False
        assert second.cache_hit is True
        assert second.raw == "yes"
        assert second.latency_ms == first.latency_ms

    def test_cache_key_sensitivity(self):
        base = dict(backend_id="b", model_id="m", prompt="p", image_hashes=["i"], max_tokens=256, temperature=0.0)

        def key(**overrides):
            merged = {**base, **overrides}
            return answer_cache_key(
                merged["backend_id"], merged["model_id"], merged["prompt"],
                merged["image_hashes"], merged["max_tokens"], merged["temperature"],
            )

        baseline = key()
        assert key(backend_id="b2") != baseline
        assert key(model_id="m2") != baseline
        assert key(prompt="p2") != baseline
        assert key(image_hashes=["j"]) != baseline
        assert key(max_tokens=128) != baseline
        assert key(temperature=1.0) != baseline

    def test_pipeline_version_invalidates_cache_keys(self, monkeypatch):
        from spotlight import caching

        before = answer_cache_key("b", "m", "p", [], 256, 0.0)
        monkeypatch.setattr(caching, "PIPELINE_VERSION", "999-test")
        assert answer_cache_key("b", "m", "p", [], 256, 0.0) != before

    def test_request_requires_prompt(self):
        with pytest.raises(InputError):
            MllmRequest(prompt="")


class _MllmHandler(BaseHTTPRequestHandler):
    style = "plain"
    fail_first = 0
    require_token = None
    seen = []

    def log_message(self, *args):
        pass

    def do_POST(self):
        cls = type(self)
        if cls.require_token and self.headers.get("Authorization") != f"Bearer {cls.require_token}":
            self.send_response(401)
            self.end_headers()
            return
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(502)
            self.end_headers()
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        cls.seen.append(body)
        if cls.style == "plain":
            reply = {"text": f"echo:{body['prompt'][:10]}", "usage": {"total_tokens": 7}}
        else:
            reply = {"choices": [{"message": {"content": "chat reply"}}], "usage": {}}
        payload = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def mllm_server():
    handler = type("Handler", (_MllmHandler,), {"seen": []})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", handler
    server.shutdown()
    thread.join(timeout=2)


class TestHttpMllm:
    def test_plain_style_round_trip(self, mllm_server):
        url, handler = mllm_server
        backend = HttpMllm(endpoint=url, model_id="test-model")
        result = ask(backend, MllmRequest(prompt="hello there", images=("aW1n",)))
        assert result.raw.startswith("echo:")
        assert result.token_usage == {"total_tokens": 7}
        assert handler.seen[0]["model_id"] == "test-model"
        assert handler.seen[0]["images_b64"] == ["aW1n"]
        assert handler.seen[0]["temperature"] == 0.0

    def test_openai_chat_style(self, mllm_server):
        url, handler = mllm_server
        handler.style = "openai_chat"
        backend = HttpMllm(endpoint=url, model_id="gpt-test", style="openai_chat")
        result = ask(backend, MllmRequest(prompt="hi", images=("aW1n",)))
        assert result.raw == "chat reply"
        content = handler.seen[0]["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "hi"}
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_retry_then_success(self, mllm_server):
        url, handler = mllm_server
        handler.fail_first = 2
        backend = HttpMllm(endpoint=url, model_id="m")
        result = ask(backend, MllmRequest(prompt="retry me"), retries=3, backoff_s=0.01)
        assert result.raw.startswith("echo:")

    def test_unreachable_surfaces_attempt_count(self):
        backend = HttpMllm(endpoint="http://127.0.0.1:1", model_id="m")
        with pytest.raises(BackendError) as err:
            ask(backend, MllmRequest(prompt="x"), retries=3, backoff_s=0.01)
        assert err.value.attempts == 3

    def test_auth_env(self, mllm_server, monkeypatch):
        url, handler = mllm_server
        handler.require_token = "tok"
        backend = HttpMllm(endpoint=url, model_id="m", auth_env="MLLM_TOKEN")
        with pytest.raises(ConfigError):
            backend.generate(MllmRequest(prompt="x"))
        monkeypatch.setenv("MLLM_TOKEN", "tok")
        raw, _ = backend.generate(MllmRequest(prompt="x"))
        assert raw.startswith("echo:")

    def test_unknown_style_rejected(self):
        with pytest.raises(ConfigError):
            HttpMllm(endpoint="http://x", model_id="m", style="grpc")

    def test_mock_determinism_at_temperature_zero(self):
        prompt = build_prompt("stable?", "baseline")
        backend = MockMllm({hash_text(prompt): "same"})
        req = MllmRequest(prompt=prompt, temperature=0.0)
        assert ask(backend, req).raw == ask(backend, req).raw == "same"

    def test_concurrency_cap_enforced(self, mllm_server):
        import threading as _threading

        url, _ = mllm_server
        backend = HttpMllm(endpoint=url, model_id="m", max_concurrency=2)
        peak = {"now": 0, "max": 0}
        lock = _threading.Lock()
        original_post = backend._session.post

        def tracking_post(*args, **kwargs):
            with lock:
                peak["now"] += 1
                peak["max"] = max(peak["max"], peak["now"])
            try:
                return original_post(*args, **kwargs)
            finally:
                with lock:
                    peak["now"] -= 1

        backend._session.post = tracking_post
        threads = [
            _threading.Thread(target=lambda: backend.generate(MllmRequest(prompt=f"p{i}")))
            for i in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak["max"] <= 2
