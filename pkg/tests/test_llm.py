import json
import os
import socket

import pytest

from conftest import Scripted, completion_body

from recipe_nutrients.llm import (
    ChatRequest,
    EndpointConfig,
    EndpointError,
    FewShotBank,
    ParseError,
    TransportError,
    TranscriptCache,
    complete,
    complete_many,
    merge_predictions,
    parse_llm_nutrients,
    parse_refine_json,
    refine,
    render_direct_prompt,
    render_prediction_line,
    render_refine_prompt,
    request_hash,
)
from recipe_nutrients.ridge import NutrientPrediction

ANSWER1 = "Nutrient values per 100 g: fat - 8.55, protein - 12.31, saturates - 1.72, sugars - 14.17"
ANSWER2 = "Nutrient values per 100 g: fat - 14.20, protein - 3.10, saturates - 2.15, sugars - 0.50"


def pred(fat=0, protein=0, saturates=0, sugars=0):
    return NutrientPrediction(fat=fat, protein=protein, saturates=saturates, sugars=sugars)


def endpoint(server, **kw):
    base = dict(base_url=server.base_url, model_name="stub-model",
                timeout=5.0, max_retries=2, backoff_base=0.01)
    base.update(kw)
    return EndpointConfig(**base)


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TestRenderDirectPrompt:
    def test_default_bank_first_assistant_turn(self):
        req = render_direct_prompt("1 cup oats", FewShotBank.default())
        assert req.messages[1] == {"role": "assistant", "content": ANSWER1}
        assert req.messages[3] == {"role": "assistant", "content": ANSWER2}

    def test_zero_shot(self):
        bank = FewShotBank(exemplars=(), k=0)
        req = render_direct_prompt("1 cup oats", bank)
        assert len(req.messages) == 1
        assert req.messages[0]["role"] == "user"

    def test_final_turn_wraps_text(self):
        req = render_direct_prompt("X", FewShotBank.default())
        assert req.messages[-1]["content"] == "[INST] X [/INST]"

    def test_system_prompt_carries_conversion_anchors(self):
        req = render_direct_prompt("X", FewShotBank.default())
        assert "1 cup water ≈ 236.6g" in req.system
        assert "1 tablespoon butter ≈ 14.2g" in req.system
        assert "Nutrient values per 100 g: fat - [value], protein - [value], " \
               "saturates - [value], sugars - [value]" in req.system

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            render_direct_prompt("  ", FewShotBank.default())

    def test_deterministic(self):
        a = render_direct_prompt("1 cup oats", FewShotBank.default())
        b = render_direct_prompt("1 cup oats", FewShotBank.default())
        assert a == b

    def test_k_limits_exemplars(self):
        bank = FewShotBank.default(k=1)
        req = render_direct_prompt("X", bank)
        assert len(req.messages) == 3


class TestRenderRefinePrompt:
    def test_field_order_and_values(self):
        req = render_refine_prompt("1 cup oats", pred(fat=1, protein=2, saturates=3, sugars=4))
        body = req.messages[0]["content"]
        assert "Protein: 2.00" in body and "Fat: 1.00" in body
        assert "Sugar: 4.00" in body and "Saturates: 3.00" in body
        assert body.index("Protein:") < body.index("Fat:") < body.index("Sugar:") \
            < body.index("Saturates:")

    def test_names_all_json_keys(self):
        body = render_refine_prompt("X", pred()).messages[0]["content"]
        for key in ("protein_g", "fat_g", "sugars_g", "saturates_g"):
            assert key in body

    def test_half_up_rounding(self):
        body = render_refine_prompt("X", pred(fat=0.005)).messages[0]["content"]
        assert "Fat: 0.01" in body

    def test_system_is_nutrition_expert(self):
        assert render_refine_prompt("X", pred()).system == "You are a nutrition expert."


class TestChatRequest:
    def test_rejects_final_assistant_message(self):
        with pytest.raises(ValueError, match="user"):
            ChatRequest(system="s", messages=({"role": "assistant", "content": "x"},))

    def test_rejects_non_alternating(self):
        with pytest.raises(ValueError, match="alternate"):
            ChatRequest(system="s", messages=(
                {"role": "user", "content": "a"}, {"role": "user", "content": "b"}))

    def test_payload_shape(self):
        req = ChatRequest(system="s", messages=({"role": "user", "content": "u"},))
        payload = req.to_payload("m")
        assert payload["model"] == "m"
        assert payload["messages"][0] == {"role": "system", "content": "s"}
        assert payload["messages"][-1] == {"role": "user", "content": "u"}


class TestComplete:
    def test_echo(self, endpoint_stub):
        endpoint_stub.reply_with("OK")
        req = render_direct_prompt("1 cup oats", FewShotBank.default())
        assert complete(req, endpoint(endpoint_stub)) == "OK"
        sent = endpoint_stub.requests[0]["payload"]
        assert sent["model"] == "stub-model"
        assert sent["messages"][0]["role"] == "system"

    def test_retry_on_429_then_success(self, endpoint_stub):
        endpoint_stub.script(
            Scripted(429, b"slow down"),
            Scripted(429, b"slow down"),
            Scripted(200, completion_body("recovered")),
        )
        req = ChatRequest(system="s", messages=({"role": "user", "content": "u"},))
        assert complete(req, endpoint(endpoint_stub, max_retries=2)) == "recovered"
        assert len(endpoint_stub.requests) == 3

    def test_persistent_500_exhausts_retries(self, endpoint_stub):
        endpoint_stub.default = Scripted(500, b"boom")
        req = ChatRequest(system="s", messages=({"role": "user", "content": "u"},))
        with pytest.raises(TransportError, match="2 attempts"):
            complete(req, endpoint(endpoint_stub, max_retries=1))
        assert len(endpoint_stub.requests) == 2

    def test_terminal_4xx_fails_immediately(self, endpoint_stub):
        endpoint_stub.default = Scripted(404, b"nope")
        req = ChatRequest(system="s", messages=({"role": "user", "content": "u"},))
        with pytest.raises(EndpointError, match="404"):
            complete(req, endpoint(endpoint_stub))
        assert len(endpoint_stub.requests) == 1

    def test_malformed_body_is_endpoint_error(self, endpoint_stub):
        endpoint_stub.default = Scripted(200, b'{"unexpected": true}')
        req = ChatRequest(system="s", messages=({"role": "user", "content": "u"},))
        with pytest.raises(EndpointError, match="malformed"):
            complete(req, endpoint(endpoint_stub))

    def test_api_key_header(self, endpoint_stub, monkeypatch):
        monkeypatch.setenv("STUB_KEY", "sekret")
        endpoint_stub.reply_with("OK")
        req = ChatRequest(system="s", messages=({"role": "user", "content": "u"},))
        complete(req, endpoint(endpoint_stub, api_key_env="STUB_KEY"))
        assert endpoint_stub.requests[0]["authorization"] == "Bearer sekret"

    def test_missing_api_key_env(self, endpoint_stub, monkeypatch):
        monkeypatch.delenv("NO_SUCH_KEY", raising=False)
        req = ChatRequest(system="s", messages=({"role": "user", "content": "u"},))
        with pytest.raises(ValueError, match="NO_SUCH_KEY"):
            complete(req, endpoint(endpoint_stub, api_key_env="NO_SUCH_KEY"))


class TestParseLlmNutrients:
    def test_answer1(self):
        assert parse_llm_nutrients(ANSWER1) == pred(8.55, 12.31, 1.72, 14.17)

    def test_answer2(self):
        assert parse_llm_nutrients(ANSWER2) == pred(14.20, 3.10, 2.15, 0.50)

    def test_missing_keys_named(self):
        with pytest.raises(ParseError, match="protein"):
            parse_llm_nutrients("I think fat - 1.0")

    def test_prose_and_order_tolerated(self):
        text = "Sure! sugars - 1.5, then saturates - 0.2; protein - 3 and finally FAT - 9.0. Enjoy!"
        assert parse_llm_nutrients(text) == pred(fat=9.0, protein=3, saturates=0.2, sugars=1.5)

    def test_round_trips_rendered_predictions(self):
        import random
        rng = random.Random(5)
        for _ in range(200):
            original = pred(*(round(rng.uniform(0, 120), rng.randint(0, 3)) for _ in range(4)))
            recovered = parse_llm_nutrients(render_prediction_line(original))
            for key in ("fat", "protein", "saturates", "sugars"):
                assert abs(getattr(recovered, key) - getattr(original, key)) <= 0.005 + 1e-9


class TestParseRefineJson:
    def test_plain_object(self):
        text = '{"protein_g": 2.0, "fat_g": 1.0, "sugars_g": 4.0, "saturates_g": 0.5}'
        assert parse_refine_json(text) == pred(fat=1.0, protein=2.0, saturates=0.5, sugars=4.0)

    def test_fenced_block(self):
        text = 'Here you go:\n```json\n{"protein_g": 2, "fat_g": 1, "sugars_g": 4, "saturates_g": 0.5}\n```'
        assert parse_refine_json(text) == pred(fat=1.0, protein=2.0, saturates=0.5, sugars=4.0)

    def test_negative_clamped(self):
        text = '{"protein_g": -1, "fat_g": 1, "sugars_g": 4, "saturates_g": 0.5}'
        assert parse_refine_json(text).protein == 0.0

    def test_missing_key(self):
        with pytest.raises(ParseError, match="saturates_g"):
            parse_refine_json('{"protein_g": 1, "fat_g": 1, "sugars_g": 1}')

    def test_no_object(self):
        with pytest.raises(ParseError, match="no json"):
            parse_refine_json("nothing here")

    def test_non_numeric_value(self):
        with pytest.raises(ParseError, match="fat_g"):
            parse_refine_json('{"protein_g": 1, "fat_g": "lots", "sugars_g": 1, "saturates_g": 1}')

    def test_prose_before_object(self):
        text = 'The revised values {not json} are: {"protein_g": 1, "fat_g": 2, "sugars_g": 3, "saturates_g": 4}'
        assert parse_refine_json(text) == pred(fat=2, protein=1, saturates=4, sugars=3)


class TestRefine:
    def test_happy_path(self, endpoint_stub):
        endpoint_stub.reply_with('{"protein_g": 9, "fat_g": 8, "sugars_g": 7, "saturates_g": 6}')
        out = refine("1 cup oats", pred(fat=1, protein=1, saturates=1, sugars=1),
                     endpoint(endpoint_stub))
        assert out == pred(fat=8, protein=9, saturates=6, sugars=7)

    def test_garbage_falls_back(self, endpoint_stub):
        endpoint_stub.reply_with("I cannot help with that.")
        base = pred(fat=1, protein=2, saturates=3, sugars=4)
        assert refine("1 cup oats", base, endpoint(endpoint_stub)) == base

    def test_unreachable_endpoint_falls_back(self):
        ep = EndpointConfig(base_url=f"http://127.0.0.1:{free_port()}/v1",
                            model_name="m", timeout=0.5, max_retries=0, backoff_base=0.01)
        base = pred(fat=1, protein=2, saturates=3, sugars=4)
        assert refine("1 cup oats", base, ep) == base

    def test_http_error_falls_back(self, endpoint_stub):
        endpoint_stub.default = Scripted(400, b"bad request")
        base = pred(fat=1, protein=2, saturates=3, sugars=4)
        assert refine("1 cup oats", base, endpoint(endpoint_stub)) == base


class TestMergePredictions:
    def test_empty_ids_is_identity(self):
        base = {"1": pred(fat=1), "2": pred(fat=2)}
        assert merge_predictions(base, {}, set()) == base

    def test_selected_entries_replaced(self):
        base = {"1": pred(fat=1), "2": pred(fat=2), "3": pred(fat=3)}
        override = {"2": pred(fat=99)}
        merged = merge_predictions(base, override, {"2"})
        assert merged["2"] == pred(fat=99)
        assert merged["1"] == base["1"] and merged["3"] == base["3"]
        assert len(merged) == 3

    def test_id_outside_base_rejected(self):
        with pytest.raises(ValueError, match="not in the base"):
            merge_predictions({"1": pred()}, {"9": pred()}, {"9"})

    def test_id_missing_from_override_rejected(self):
        with pytest.raises(ValueError, match="no override"):
            merge_predictions({"1": pred()}, {}, {"1"})

    def test_changes_exactly_the_id_set(self):
        base = {str(i): pred(fat=float(i)) for i in range(50)}
        override = {str(i): pred(fat=1000.0 + i) for i in range(0, 50, 3)}
        ids = set(override)
        merged = merge_predictions(base, override, ids)
        changed = {k for k in base if merged[k] != base[k]}
        assert changed == ids


class TestTranscriptCache:
    def test_replay_avoids_network(self, endpoint_stub, tmp_path):
        endpoint_stub.reply_with("cached answer")
        cache = TranscriptCache(tmp_path / "transcripts.jsonl")
        ep = endpoint(endpoint_stub)
        req = render_direct_prompt("1 cup oats", FewShotBank.default())

        first = complete_many([("s1", req)], ep, cache=cache)
        assert first == {"s1": "cached answer"}
        assert len(endpoint_stub.requests) == 1

        reloaded = TranscriptCache(tmp_path / "transcripts.jsonl")
        second = complete_many([("s1", req)], ep, cache=reloaded)
        assert second == {"s1": "cached answer"}
        assert len(endpoint_stub.requests) == 1  # no new traffic

    def test_hash_distinguishes_requests(self):
        ep = EndpointConfig(base_url="http://x/v1", model_name="m")
        a = render_direct_prompt("oats", FewShotBank.default())
        b = render_direct_prompt("corn", FewShotBank.default())
        assert request_hash(a, ep) != request_hash(b, ep)
        assert request_hash(a, ep) == request_hash(a, ep)


class TestCompleteMany:
    def test_failures_yield_none(self, endpoint_stub):
        endpoint_stub.script(Scripted(200, completion_body("one")),
                             Scripted(400, b"bad"))
        ep = endpoint(endpoint_stub, max_concurrency=1)
        reqs = [("a", ChatRequest(system="s", messages=({"role": "user", "content": "1"},))),
                ("b", ChatRequest(system="s", messages=({"role": "user", "content": "2"},)))]
        results = complete_many(reqs, ep)
        assert results["a"] == "one"
        assert results["b"] is None

    def test_bounded_concurrency_completes(self, endpoint_stub):
        endpoint_stub.reply_with("pong")
        ep = endpoint(endpoint_stub, max_concurrency=4)
        reqs = [(f"s{i}", ChatRequest(system="s",
                                      messages=({"role": "user", "content": str(i)},)))
                for i in range(12)]
        results = complete_many(reqs, ep)
        assert all(results[f"s{i}"] == "pong" for i in range(12))


LIVE_URL = os.environ.get("RECIPE_NUTRIENTS_LIVE_BASE_URL")


@pytest.mark.skipif(not LIVE_URL, reason="set RECIPE_NUTRIENTS_LIVE_BASE_URL for a live smoke test")
def test_live_endpoint_smoke():
    ep = EndpointConfig(
        base_url=LIVE_URL,
        model_name=os.environ.get("RECIPE_NUTRIENTS_LIVE_MODEL", "default"),
        api_key_env=os.environ.get("RECIPE_NUTRIENTS_LIVE_API_KEY_ENV") or None,
        timeout=120.0)
    req = render_direct_prompt("1 cup wheat flour, 2 tbsp olive oil", FewShotBank.default())
    response = complete(req, ep)
    parsed = parse_llm_nutrients(response)
    assert parsed.fat >= 0
