from __future__ import annotations

import json
import math
import threading
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nileztn.intent import (UNITS_KBPS, AmbiguousIntentError, BandwidthBound, ConflictError,
                            CorpusError, EmptyIntentError, ExemplarCorpus,
                            HttpTranslationClient, IntentStore, NaturalIntent, NileIntent,
                            NileSyntaxError, NonPositiveValueError, NumToken,
                            TranslationBackendError, UnknownUnitError,
                            UntranslatableIntentError, detect_conflict, extract_bandwidth,
                            normalize, parse_nile, render_nile, retrieve_exemplars, translate,
                            translate_with_backend)


def nile(name="x", o="cn", d="ue1", mode="max", value=300, unit="kbps"):
    return NileIntent(name, o, d, BandwidthBound(mode, value, unit))


@pytest.fixture(scope="module")
def corpus():
    return ExemplarCorpus.bundled()


# --- normalize ----------------------------------------------------------------

def test_normalize_attaches_units():
    assert normalize("Give me 300 Kbps from UE1 to Server") == [
        "give", "me", NumToken(Decimal(300), "kbps"), "from", "ue1", "to", "server"]
    assert normalize("AT LEAST 2 Mbps!") == ["at", "least", NumToken(Decimal(2), "mbps")]
    assert normalize("300kbps") == normalize("300 kbps")


def test_normalize_keeps_words_with_digits():
    assert normalize("ue1 on 5g") == ["ue1", "on", "5g"]
    assert normalize("wait 10") == ["wait", NumToken(Decimal(10), None)]


@pytest.mark.parametrize("text", ["", "   ", "?!.,"])
def test_normalize_empty(text):
    with pytest.raises(EmptyIntentError):
        normalize(text)


def test_natural_intent_rejects_blank():
    with pytest.raises(EmptyIntentError):
        NaturalIntent("  \n\t")


# --- retrieval ----------------------------------------------------------------

THREE = ExemplarCorpus([
    ("alpha beta", "define intent a: from endpoint('x') to endpoint('y') set bandwidth('max', '1', 'kbps')"),
    ("beta gamma gamma", "define intent b: from endpoint('x') to endpoint('y') set bandwidth('max', '2', 'kbps')"),
    ("delta", "define intent c: from endpoint('x') to endpoint('y') set bandwidth('max', '3', 'kbps')"),
])


def test_idf_weights_hand_computed():
    # N = 3; idf = ln((1 + N) / (1 + df)) + 1
    assert THREE.term_index["alpha"] == pytest.approx(math.log(2) + 1, abs=1e-15)
    assert THREE.term_index["beta"] == pytest.approx(math.log(4 / 3) + 1, abs=1e-15)
    assert THREE.term_index["gamma"] == pytest.approx(math.log(2) + 1, abs=1e-15)


def test_cosine_ranking_hand_computed():
    a = 1 + math.log(2)      # weight of a term with df = 1
    b = 1 + math.log(4 / 3)  # weight of "beta", df = 2
    # query "beta gamma" = (b, a) over (beta, gamma)
    cos0 = b * b / (a * a + b * b)
    cos1 = (b * b + 2 * a * a) / (math.sqrt(a * a + b * b) * math.sqrt(b * b + 4 * a * a))
    got = retrieve_exemplars(normalize("beta gamma"), THREE, k=3)
    assert [m.index for m in got] == [1, 0, 2]
    assert got[0].similarity == pytest.approx(cos1, abs=1e-12)
    assert got[1].similarity == pytest.approx(cos0, abs=1e-12)
    assert got[2].similarity == 0.0


def test_retrieval_orthogonal_query_returns_first_k():
    got = retrieve_exemplars(normalize("zeta eta"), THREE, k=2)
    assert [m.index for m in got] == [0, 1]
    assert all(m.similarity == 0.0 for m in got)


def test_retrieval_k_larger_than_corpus():
    assert len(retrieve_exemplars(normalize("alpha"), THREE, k=10)) == 3


def test_self_match_similarity_one(corpus):
    for i, (en, _) in enumerate(corpus.entries):
        top = retrieve_exemplars(normalize(en), corpus, k=1)[0]
        assert top.index == i
        assert top.similarity == pytest.approx(1.0, abs=1e-12)


words = st.sampled_from(["cap", "limit", "speed", "video", "fast", "ue", "link", "min", "max",
                         "guarantee", "reserve", "stream", "server", "core", "edge"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.frozensets(words, min_size=1, max_size=5), min_size=1, max_size=6, unique=True))
def test_self_match_property(docs):
    c = ExemplarCorpus([(" ".join(sorted(d)), render_nile(nile(f"i{k}")))
                        for k, d in enumerate(docs)])
    for i, (en, _) in enumerate(c.entries):
        assert retrieve_exemplars(normalize(en), c, k=1)[0].index == i


def test_corpus_rejects_duplicates_and_empty():
    with pytest.raises(CorpusError):
        ExemplarCorpus([])
    with pytest.raises(CorpusError):
        ExemplarCorpus([("a b", render_nile(nile())), ("A, b!", render_nile(nile()))])


def test_corpus_file_format(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("EN: cap it at 5 kbps\n"
                 "define intent capIt: from endpoint('a')\n"
                 "   to endpoint('b') set bandwidth('max', '5', 'kbps')\n"
                 "---\n"
                 "EN: at least 7 mbps\n"
                 "define intent atLeast: from endpoint('a') to endpoint('c') set bandwidth('min', '7', 'mbps')\n",
                 encoding="utf-8")
    c = ExemplarCorpus.load(p)
    assert len(c) == 2
    assert c.intents[1] == nile("atLeast", "a", "c", "min", 7, "mbps")
    assert c.endpoints == {"a", "b", "c"}


@pytest.mark.parametrize("text", [
    "define intent x: from endpoint('a') to endpoint('b') set bandwidth('max', '5', 'kbps')\n",
    "EN: only english\n---\n",
    "EN: bad nile\ndefine intent x: from endpoint('a')\n",
])
def test_corpus_file_errors(tmp_path, text):
    p = tmp_path / "c.txt"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(CorpusError):
        ExemplarCorpus.load(p)


# --- translation ----------------------------------------------------------------

def test_translate_id_intent(corpus):
    got = translate(NaturalIntent("I need at most 300 kbps from gateway to appserver"), corpus)
    assert got.bandwidth_bound == BandwidthBound("max", 300, "kbps")
    assert got.pair == ("gateway", "appserver")


def test_translate_ood_intent_uses_template_endpoints(corpus):
    got = translate(NaturalIntent("Limit streaming to 450 kbps"), corpus)
    assert got.bandwidth_bound == BandwidthBound("max", 450, "kbps")
    assert got.pair == ("cn", "ue1")


def test_translate_errors(corpus):
    with pytest.raises(UntranslatableIntentError):
        translate(NaturalIntent("Please make the network fast"), corpus)
    with pytest.raises(AmbiguousIntentError):
        translate(NaturalIntent("Give me 300 kbps or maybe 2 mbps"), corpus)
    with pytest.raises(UntranslatableIntentError):
        translate(NaturalIntent("Give me 0.5 kbps"), corpus)


def test_translate_repeated_equal_mentions_are_fine(corpus):
    got = translate(NaturalIntent("at most 1 mbps, that is 1000 kbps, from cn to ue2"), corpus)
    assert extract_bandwidth(got).beta_target == 1000


def test_translate_fractional_unit_scales_down(corpus):
    got = translate(NaturalIntent("Guarantee at least 2.5 Mbps from cn to ue1"), corpus)
    assert got.bandwidth_bound == BandwidthBound("min", 2500, "kbps")


def test_translate_uses_identifier_id(corpus):
    got = translate(NaturalIntent("Limit streaming to 450 kbps", id="oodIntent"), corpus)
    assert got.name == "oodIntent"
    got = translate(NaturalIntent("Limit streaming to 450 kbps", id="not an ident"), corpus)
    assert got.name == "limitStreaming"


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10_000), st.sampled_from(list(UNITS_KBPS)))
def test_translate_deterministic(value, unit):
    c = ExemplarCorpus.bundled()
    text = f"cap streaming at {value} {unit} from cn to ue9"
    assert translate(NaturalIntent(text), c) == translate(NaturalIntent(text), c)


# --- Nile ---------------------------------------------------------------------

def test_parse_example_clause():
    got = parse_nile("define intent qosIntent: from endpoint('cn') to endpoint('ue1') "
                     "set bandwidth('max', '300', 'kbps')")
    assert got == nile("qosIntent", "cn", "ue1", "max", 300, "kbps")


def test_parse_whitespace_insensitive():
    got = parse_nile("define   intent q :from endpoint ( 'cn' )\n to endpoint('ue1')"
                     "set bandwidth('min','2','MBPS')")
    assert got == nile("q", "cn", "ue1", "min", 2, "mbps")


@pytest.mark.parametrize("value", ["0", "-3"])
def test_parse_non_positive(value):
    with pytest.raises(NonPositiveValueError):
        parse_nile(f"define intent q: from endpoint('a') to endpoint('b') "
                   f"set bandwidth('max','{value}','kbps')")


def test_parse_unknown_unit():
    with pytest.raises(UnknownUnitError):
        parse_nile("define intent q: from endpoint('a') to endpoint('b') "
                   "set bandwidth('max','3','bps')")


def test_parse_syntax_error_position():
    with pytest.raises(NileSyntaxError) as info:
        parse_nile("define intent q:\nfrom endpoint('a') too endpoint('b')")
    assert (info.value.line, info.value.col) == (2, 20)


@pytest.mark.parametrize("text", [
    "define intent q: for group('x') from endpoint('a') to endpoint('b') set bandwidth('max','3','kbps')",
    "define intent q: from endpoint('a') to endpoint('b') set bandwidth('max','3','kbps') set bandwidth('min','1','kbps')",
    "define intent q: from endpoint('a') to endpoint('b') set bandwidth('max','3','kbps') for group('x')",
])
def test_parse_rejects_other_clauses(text):
    with pytest.raises(NileSyntaxError, match="unsupported"):
        parse_nile(text)


@pytest.mark.parametrize("text", [
    "",
    "define intent q: from endpoint('a') to endpoint('b')",
    "define intent q: from endpoint('a) to endpoint('b') set bandwidth('max','3','kbps')",
    "define intent q: from endpoint('') to endpoint('b') set bandwidth('max','3','kbps')",
    "define intent q: from endpoint('a') to endpoint('b') set bandwidth('avg','3','kbps')",
    "define intent q: from endpoint('a') to endpoint('b') set bandwidth('max','3.5','kbps')",
])
def test_parse_syntax_errors(text):
    with pytest.raises(NileSyntaxError):
        parse_nile(text)


idents = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,10}", fullmatch=True)
labels = st.text(st.characters(blacklist_characters="'\n\r", blacklist_categories=("Cs",)),
                 min_size=1, max_size=12)
bounds = st.builds(BandwidthBound, st.sampled_from(["max", "min"]),
                   st.integers(1, 10**9), st.sampled_from(list(UNITS_KBPS)))
intents = st.builds(NileIntent, idents, labels, labels, bounds)


@settings(max_examples=200, deadline=None)
@given(intents)
def test_render_parse_round_trip(v):
    assume(all(not c.isspace() or c == " " for c in v.origin + v.destination))
    again = parse_nile(render_nile(v))
    assert again == v
    goal = extract_bandwidth(again).beta_target
    assert isinstance(goal, int)
    assert goal == v.bandwidth_bound.value * {"kbps": 1, "mbps": 10**3, "gbps": 10**6}[v.bandwidth_bound.unit]


def test_extract_bandwidth_examples():
    assert extract_bandwidth(nile(value=300)).beta_target == 300
    assert extract_bandwidth(nile(value=2, unit="mbps")).beta_target == 2000
    assert extract_bandwidth(nile(value=450)).beta_target == 450
    assert extract_bandwidth(nile(value=7, unit="gbps")).beta_target == 7_000_000


# --- conflicts ----------------------------------------------------------------

def test_conflict_examples():
    stored = [nile("s", "cn", "ue1", "max", 450)]
    assert detect_conflict(nile("c", "cn", "ue1", "max", 300), stored)
    assert not detect_conflict(nile("c", "cn", "ue2", "max", 300), stored)
    assert detect_conflict(nile("c", "cn", "ue1", "max", 200), [nile("s", mode="min", value=400)])
    assert not detect_conflict(nile("c", "cn", "ue1", "max", 500), [nile("s", mode="min", value=400)])
    # same bound in different units is not a conflict
    assert not detect_conflict(nile("c", value=1, unit="mbps"), [nile("s", value=1000)])


pool = st.builds(nile, st.just("n"), st.sampled_from(["cn", "gw"]), st.sampled_from(["ue1", "ue2"]),
                 st.sampled_from(["max", "min"]), st.sampled_from([100, 300, 450, 1000]),
                 st.sampled_from(["kbps", "mbps"]))


@settings(max_examples=300, deadline=None)
@given(pool, pool)
def test_conflict_symmetry(a, b):
    assert bool(detect_conflict(a, [b])) == bool(detect_conflict(b, [a]))


def test_store_admit_and_files(tmp_path):
    store = IntentStore()
    store.admit(nile("a", value=300))
    store.admit(nile("b", "cn", "ue2", value=450))
    with pytest.raises(ConflictError) as info:
        store.admit(nile("c", value=450))
    assert len(info.value.conflicts) == 1
    assert len(store.active) == 2
    p = tmp_path / "store.nile"
    store.save(p)
    assert IntentStore.load(p).active == store.active


# --- external backend -------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    reply: bytes = b""

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.seen.append(body)
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(self.server.reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def service():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    srv.seen = []
    srv.reply = b""
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_backend_round_trip(service):
    text = render_nile(nile("svc", value=300))
    service.reply = json.dumps({"nile_text": text}).encode()
    url = f"http://127.0.0.1:{service.server_port}/translate"
    got = translate_with_backend(NaturalIntent("300 kbps please"), HttpTranslationClient(url))
    assert got == nile("svc", value=300)
    assert service.seen == [{"text": "300 kbps please"}]


@pytest.mark.parametrize("reply", [b"not json", b'{"nile": "x"}', b'{"nile_text": "garbage"}'])
def test_backend_bad_replies(service, reply):
    service.reply = reply
    url = f"http://127.0.0.1:{service.server_port}/"
    with pytest.raises(TranslationBackendError):
        translate_with_backend(NaturalIntent("300 kbps"), HttpTranslationClient(url))


def test_backend_unreachable():
    client = HttpTranslationClient("http://127.0.0.1:9/", timeout=0.5)
    with pytest.raises(TranslationBackendError):
        translate_with_backend(NaturalIntent("300 kbps"), client)
