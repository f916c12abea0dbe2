import json
import logging

import pytest
from hypothesis import given, strategies as st

from webshock import classify
from webshock.archive import FirmRecord
from webshock.errors import FetchError, ModelOutputError
from webshock.extract import Paragraph
from webshock.net import HttpClient


def _para(text):
    return Paragraph("F1", "S1", "https://a.example/", text,
                     (("English", "corona"),))


# --- prompt ---------------------------------------------------------------

def test_template_shape():
    tpl = classify.prompt_template()
    assert tpl.count("<Input paragraph>") == 1
    assert tpl.endswith("Input: <Input paragraph>\n\nOutput: ")


def test_build_prompt_substitution():
    prompt = classify.build_prompt("Some paragraph.")
    assert prompt.endswith("Input: Some paragraph.\n\nOutput: ")
    assert "<Input paragraph>" not in prompt


def test_build_prompt_rejects_empty():
    with pytest.raises(ValueError):
        classify.build_prompt("")


# --- output parsing -------------------------------------------------------

def test_parse_well_formed():
    c = classify.parse_model_output(
        '{"affected": 2, "affectedness_category": "production, demand", '
        '"tags": "closure, home office"}')
    assert c.affected == 2
    assert c.categories == frozenset({"production", "demand"})
    assert c.tags == ("closure", "home office")


def test_parse_bare_prefix_is_zero():
    c = classify.parse_model_output('{"affected": ')
    assert (c.affected, c.categories, c.tags) == (0, frozenset(), ())


def test_parse_repairs_missing_brace():
    c = classify.parse_model_output(
        '{"affected": 1, "affectedness_category": "supply", "tags": "delays"')
    assert c.affected == 1
    assert c.categories == frozenset({"supply"})


def test_parse_score_zero_clears_lists():
    c = classify.parse_model_output(
        '{"affected": 0, "affectedness_category": "demand", "tags": "closure"}')
    assert (c.categories, c.tags) == (frozenset(), ())


def test_parse_drops_unknown_category(caplog):
    with caplog.at_level(logging.WARNING):
        c = classify.parse_model_output(
            '{"affected": 1, "affectedness_category": "weather, demand", '
            '"tags": ""}')
    assert c.categories == frozenset({"demand"})
    assert "weather" in caplog.text


def test_parse_rejects_garbage_and_bad_scores():
    for bad in ("no json at all", '{"other": 1}', '{"affected": 7}',
                '{"affected": "high"}'):
        with pytest.raises(ModelOutputError):
            classify.parse_model_output(bad)


def test_classification_validation():
    with pytest.raises(ValueError):
        classify.Classification(4, frozenset(), ())
    with pytest.raises(ValueError):
        classify.Classification(0, frozenset({"demand"}), ())


@given(st.integers(1, 3),
       st.sets(st.sampled_from(["production", "demand", "supply"]), min_size=1),
       st.lists(st.sampled_from(["closure", "home office", "delays"]),
                max_size=3, unique=True))
def test_render_parse_roundtrip(score, cats, tags):
    c = classify.Classification(score, frozenset(cats), tuple(tags))
    back = classify.parse_model_output(classify.render_classification(c))
    assert (back.affected, back.categories, set(back.tags)) == (
        score, frozenset(cats), set(tags))


# --- parameters and backends ---------------------------------------------

def test_model_params_warn_on_overrides(caplog):
    with caplog.at_level(logging.WARNING):
        classify.ModelParams(temperature=0.7, max_output_tokens=128,
                             stop_sequences=("\n",))
    assert "temperature" in caplog.text
    assert "max_output_tokens" in caplog.text
    assert "stop_sequences" in caplog.text


def test_stub_replays_template_examples():
    for text, expected in classify._template_examples():
        got = classify.stub_classify(_para(text))
        assert (got.affected, got.categories, got.tags) == (
            expected.affected, expected.categories, expected.tags)


def test_stub_defaults_to_zero():
    c = classify.stub_classify(_para("unknown text"))
    assert (c.affected, c.categories, c.tags) == (0, frozenset(), ())


def test_classify_paragraph_posts_prompt(scripted_server):
    server = scripted_server([(200, {"completion":
                                     '{"affected": 2, "affectedness_category": '
                                     '"supply", "tags": "delays"}'})])
    params = classify.ModelParams(endpoint=server.url, model_name="m")
    client = HttpClient(sleep=lambda s: None)
    c = classify.classify_paragraph(_para("Corona hit us."), params, client=client)
    assert c.affected == 2
    sent = json.loads(server.requests[0]["body"])
    assert sent["model"] == "m"
    assert sent["temperature"] == 0.0 and sent["max_tokens"] == 64
    assert sent["stop"] == ["0", "}"]
    assert sent["prompt"].endswith("Input: Corona hit us.\n\nOutput: ")


def test_classify_paragraph_retries_transient_errors(scripted_server):
    body = {"text": '{"affected": 1, "affectedness_category": "demand", "tags": ""}'}
    server = scripted_server([(503, b"busy"), (503, b"busy"), (200, body)])
    sleeps = []
    client = HttpClient(sleep=sleeps.append)
    params = classify.ModelParams(endpoint=server.url)
    c = classify.classify_paragraph(_para("x"), params, client=client)
    assert c.affected == 1
    assert server.hits == 3
    backoffs = [s for s in sleeps if s > 0]
    assert len(backoffs) >= 2
    # exponential: second retry waits longer on average than the first
    assert backoffs[-1] > backoffs[0] / 2


def test_classify_paragraph_gives_up_after_five(scripted_server):
    server = scripted_server([(500, b"boom")])
    client = HttpClient(sleep=lambda s: None)
    params = classify.ModelParams(endpoint=server.url)
    with pytest.raises(FetchError, match="5 attempts"):
        classify.classify_paragraph(_para("x"), params, client=client)
    assert server.hits == 5


# --- firm-period aggregation ---------------------------------------------

FIRM = FirmRecord("F1", frozenset({"a.example", "b.example"}), "DE", "Berlin",
                  56, 20)


def _cls(score, cats=(), tags=()):
    return classify.Classification(score, frozenset(cats), tuple(tags))


def test_aggregate_max_and_union():
    ind = classify.aggregate_firm_period(
        [("a.example", _cls(1, {"production"}, ("home office",))),
         ("b.example", _cls(3, {"demand"}, ("closure",)))],
        FIRM, "S1")
    assert ind.score == 3
    assert ind.categories == frozenset({"production", "demand"})
    assert ind.tags == frozenset({"home office", "closure"})
    assert ind.mention and ind.n_passages == 2


def test_aggregate_empty_means_no_mention():
    ind = classify.aggregate_firm_period([], FIRM, "S1")
    assert (ind.mention, ind.score, ind.n_passages) == (False, 0, 0)
    assert ind.categories == frozenset() and ind.tags == frozenset()


def test_aggregate_rejects_foreign_domain():
    with pytest.raises(ValueError, match="does not belong"):
        classify.aggregate_firm_period([("evil.example", _cls(1, {"demand"}))],
                                       FIRM, "S1")


def test_indicator_json_roundtrip():
    ind = classify.FirmPeriodIndicator("F1", "S1", True, 2,
                                       frozenset({"supply"}),
                                       frozenset({"delays"}), 3)
    assert classify.FirmPeriodIndicator.from_json(ind.to_json()) == ind
