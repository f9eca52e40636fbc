import socket
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rax.narrative import (
    BackendError,
    GatedMass,
    GatingConfig,
    HttpBackend,
    HttpConfig,
    Lexicon,
    LexiconError,
    NarrativeRequest,
    PromptError,
    TemplateBackend,
    align,
    align_sets,
    alignment_score,
    augment_with_probs,
    build_prompt,
    build_report,
    default_lexicon,
    gate,
    generate_all,
    parse_prediction,
    serialize_event,
)
from rax.narrative.mock import MockServer
from rax.narrative.prompts import probability_sentence
from rax.schema import EventFeatureRow, SeverityLabel, canonical_schema

SCHEMA = canonical_schema()


def make_row(values: dict, factors=(), cid=1):
    v = np.zeros(len(SCHEMA))
    m = np.ones(len(SCHEMA), bool)
    for d in SCHEMA.features:
        if d.kind.value == "Binary":
            m[SCHEMA.index(d.name)] = False
    for k, x in values.items():
        v[SCHEMA.index(k)] = x
        m[SCHEMA.index(k)] = False
    return EventFeatureRow(cid, datetime(2025, 3, 1, 2), SeverityLabel.Injury, v, m, tuple(factors))


BROOKLYN = {
    "BORO_BROOKLYN": 1,
    "CRASH_HOUR": 2,
    "NUM_PERSON_RECORDS": 3,
    "ROLE_PEDESTRIAN": 1 / 3,
    "PCT_WITH_SAFETY_EQUIPMENT": 0.5,
    "LATITUDE": 40.65,
    "LONGITUDE": -73.95,
}


def test_default_lexicon_is_complete_and_collision_free():
    lex = default_lexicon()
    lex.validate()
    assert set(lex.table) == set(SCHEMA.names)
    assert all(1 <= len(v) <= 6 for v in lex.table.values())
    assert Lexicon.from_json(lex.to_json()).table == lex.table


def test_lexicon_rejects_gaps_and_collisions():
    table = dict(default_lexicon().table)
    del table["SUV"]
    with pytest.raises(LexiconError):
        Lexicon(table)
    table = dict(default_lexicon().table, SUV=("suv", "taxi rank"))
    with pytest.raises(LexiconError):
        Lexicon(table)


def test_lexicon_whole_word_matching():
    lex = default_lexicon()
    assert lex.mentions("Two buses collided") == {"BUS"}
    assert "BUS" not in lex.mentions("business district")
    assert lex.mentions("The DRIVER was UNBELTED") == {"ROLE_DRIVER", "PCT_NO_SAFETY_EQUIPMENT"}


def test_serialize_brooklyn_example():
    text = serialize_event(make_row(BROOKLYN, ["Driver Inattention/Distraction"]))
    for piece in ("Brooklyn", "02:00", "pedestrian", "50.0%", "Driver Inattention"):
        assert piece in text
    assert text == serialize_event(make_row(BROOKLYN, ["Driver Inattention/Distraction"]))


def test_serialize_omits_missing_location():
    vals = {k: v for k, v in BROOKLYN.items() if k not in ("BORO_BROOKLYN", "LATITUDE", "LONGITUDE")}
    text = serialize_event(make_row(vals))
    assert "Location" not in text
    assert not any(b in text for b in ("Bronx", "Brooklyn", "Manhattan", "Queens", "Staten"))
    assert "None" not in text and "nan" not in text


def test_probability_sentences():
    s = probability_sentence((0.27, 0.65, 0.08))
    assert "0.08 probability to a fatal outcome" in s and "0.65 probability to an injury" in s
    s = probability_sentence((1, 0, 0))
    assert "0.00 probability to a fatal outcome" in s and "0.00 probability to an injury" in s
    prompt = augment_with_probs(build_prompt(make_row(BROOKLYN)), (0.27, 0.65, 0.08))
    assert prompt.render().index("0.08") < prompt.render().index("Classify")
    with pytest.raises(PromptError):
        augment_with_probs(prompt, (0.27, 0.65, 0.08))
    with pytest.raises(PromptError):
        probability_sentence((0.5, 0.5, 0.5))


def test_gate_examples():
    assert gate((0.27, 0.65, 0.08), GatingConfig(0.05))
    assert not gate((0.0, 0.0, 1.0), GatingConfig(1.0))
    assert gate((0.999, 0.0, 0.001), GatingConfig(0.0))
    assert gate((0.5, 0.45, 0.05), GatingConfig(0.4, GatedMass.InjuryPlusFatal)) is True
    assert gate((0.5, 0.45, 0.05), GatingConfig(0.05)) is False
    with pytest.raises(PromptError):
        GatingConfig(1.5)


probas = st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda v: sum(v) > 0).map(
    lambda v: np.array(v) / sum(v)
)


@given(probas, st.floats(0, 1), st.floats(0, 1), st.sampled_from(list(GatedMass)))
def test_gate_monotone_in_threshold(p, t1, t2, mass):
    lo, hi = sorted((t1, t2))
    if gate(p, GatingConfig(hi, mass)):
        assert gate(p, GatingConfig(lo, mass))


@pytest.mark.parametrize(
    "text, label",
    [
        ("This is likely a fatal outcome", SeverityLabel.Fatal),
        ("No injury expected", SeverityLabel.NoInjury),
        ("", None),
        ("Severity: Injury. Explanation: ...", SeverityLabel.Injury),
        ("Two people were injured, none fatally", SeverityLabel.Injury),
        ("Property damage only", SeverityLabel.NoInjury),
        ("hard to say", None),
    ],
)
def test_parse_prediction_examples(text, label):
    assert parse_prediction(text) == label


@given(st.text())
def test_parse_prediction_total_and_deterministic(text):
    a = parse_prediction(text)
    assert a == parse_prediction(text)
    assert a is None or isinstance(a, SeverityLabel)


def test_align_examples():
    assert align_sets(["A", "B", "C"], {"A", "B", "D"}) == (2 / 3, 2 / 3, True)
    assert align_sets(["A", "B", "C"], {"A", "B", "C"}) == (1.0, 1.0, True)
    assert align_sets(["A", "B", "C"], {"X"}) == (0.0, 0.0, False)
    assert align_sets(["A", "B", "C"], set()) == (0.0, 0.0, False)
    r, p, ok = align(["CRASH_HOUR", "ROLE_PEDESTRIAN", "PCT_EJECTED"], "A pedestrian struck at night by a taxi.")
    assert (r, p, ok) == (2 / 3, 2 / 3, True)


@given(
    st.sets(st.sampled_from("ABCDEFGH"), min_size=3, max_size=3),
    st.sets(st.sampled_from("ABCDEFGH")),
)
def test_align_matches_enumeration(top, mentions):
    hits = sum(1 for a in top for b in mentions if a == b)
    r, p, ok = align_sets(sorted(top), mentions)
    assert r == hits / 3
    assert p == (hits / len(mentions) if mentions else 0.0)
    assert ok == (hits >= 2)


def test_alignment_score_reference_values():
    # harmonic means of two-decimal recall/precision pairs
    assert alignment_score(0.67, 0.57) == pytest.approx(0.6159677419354839, abs=1e-15)
    assert alignment_score(0.62, 0.50) == pytest.approx(0.5535714285714285, abs=1e-15)
    assert round(alignment_score(0.62, 0.50), 2) == 0.55
    assert alignment_score(0, 0) == 0.0
    with pytest.raises(ValueError):
        alignment_score(1.2, 0.5)


def test_reference_score_reachable_from_unrounded_means():
    # a two-decimal 0.61 is reachable from means that display as 0.67 / 0.57
    r = np.linspace(0.665, 0.675, 41)
    p = np.linspace(0.565, 0.575, 41)
    scores = np.array([[alignment_score(a, b) for b in p] for a in r])
    assert scores.min() < 0.615 < scores.max()


@given(st.floats(0, 1))
def test_alignment_score_identity(x):
    assert alignment_score(x, x) == pytest.approx(x, abs=1e-15)


def _request(cid=7, top=("CRASH_HOUR", "ROLE_PEDESTRIAN", "PCT_WITH_SAFETY_EQUIPMENT"), proba=(0.27, 0.65, 0.08)):
    return NarrativeRequest(cid, build_prompt(make_row(BROOKLYN, cid=cid)), np.array(proba), list(top))


def test_template_backend_mentions_top_features():
    res = TemplateBackend().generate(_request())
    assert res.predicted_class is SeverityLabel.Injury
    assert {"CRASH_HOUR", "ROLE_PEDESTRIAN", "PCT_WITH_SAFETY_EQUIPMENT"} <= default_lexicon().mentions(res.explanation)
    assert res.policy_suggestion and res.error is None
    assert res.explanation == TemplateBackend().generate(_request()).explanation


def test_template_report_scores_one():
    rng = np.random.default_rng(0)
    reqs = []
    for cid in range(20):
        top = list(rng.choice(SCHEMA.names, 3, replace=False))
        reqs.append(_request(cid, top))
    results = generate_all(TemplateBackend(), reqs)
    report = build_report((r.collision_id, q.shap_top, r.explanation) for q, r in zip(reqs, results))
    assert report.alignment_score == 1.0 and report.aligned_fraction == 1.0


def test_http_backend_parses_mock_reply():
    with MockServer() as srv:
        backend = HttpBackend(HttpConfig(base_url=srv.url, max_retries=0))
        res = backend.generate(_request())
        backend.close()
    assert res.predicted_class is SeverityLabel.Injury
    assert res.policy_suggestion == "add lighting."
    body = srv.requests[0]
    assert body["temperature"] == 0 and body["max_tokens"] == 256
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert "Brooklyn" in body["messages"][1]["content"]


def test_http_backend_unparseable_label():
    with MockServer(reply=lambda body: "The weather was clear and the road was dry.") as srv:
        res = HttpBackend(HttpConfig(base_url=srv.url)).generate(_request())
    assert res.predicted_class is None and res.error == "unparseable_label"


def test_http_retries_on_server_error_with_backoff():
    sleeps = []
    with MockServer(status=500) as srv:
        backend = HttpBackend(HttpConfig(base_url=srv.url, max_retries=2, backoff=0.5), sleep=sleeps.append)
        with pytest.raises(BackendError, match="3 attempts"):
            backend.generate(_request())
    assert len(srv.requests) == 3
    assert sleeps == [0.5, 1.0]


def test_http_unreachable_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    sleeps = []
    backend = HttpBackend(HttpConfig(base_url=f"http://127.0.0.1:{port}", max_retries=1, timeout=2), sleep=sleeps.append)
    with pytest.raises(BackendError, match="unreachable"):
        backend.generate(_request())
    assert sleeps == [0.5]


def test_http_url_required(monkeypatch):
    monkeypatch.delenv("RAX_NARRATIVE_URL", raising=False)
    with pytest.raises(BackendError):
        HttpBackend(HttpConfig())
    monkeypatch.setenv("RAX_NARRATIVE_URL", "http://localhost:9/")
    assert HttpBackend(HttpConfig()).url == "http://localhost:9/v1/chat/completions"


def test_generate_all_keeps_request_order():
    def reply(body):
        text = body["messages"][1]["content"]
        return "Severity: Fatal." if "ZIP code 00001" in text else "Severity: No injury."

    reqs = []
    for cid in range(1, 9):
        row = make_row(dict(BROOKLYN, ZIP_CODE=cid), cid=cid)
        reqs.append(NarrativeRequest(cid, build_prompt(row), np.array([0.2, 0.3, 0.5])))
    with MockServer(reply=reply) as srv:
        results = generate_all(HttpBackend(HttpConfig(base_url=srv.url)), reqs, max_in_flight=4)
    assert [r.collision_id for r in results] == list(range(1, 9))
    assert results[0].predicted_class is SeverityLabel.Fatal
    assert all(r.predicted_class is SeverityLabel.NoInjury for r in results[1:])
