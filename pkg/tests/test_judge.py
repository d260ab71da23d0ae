import base64
import hashlib
import io
import json
import random

import numpy as np
import pytest
from PIL import Image

from crossview_eval.judge import (
    CRITERIA,
    AuthenticationError,
    DamagePrompt,
    JudgeClient,
    JudgeConfig,
    JudgeRequest,
    JudgeVerdict,
    MissingScoreField,
    RateLimited,
    RetriesExhausted,
    ScoreOutOfRange,
    StubTransport,
    TokenBucket,
    TransportError,
    UnparsableVerdict,
    VerdictError,
    VerdictSource,
    aggregate_verdicts,
    build_judge_prompt,
    canonical_payload_bytes,
    hash_embedding,
    load_rubric,
    parse_verdict,
    serialize_verdict,
)


def png_bytes(value: int = 128, size=(16, 16)) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.full((size[1], size[0]), value, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def make_request(gen_value=100, ref_value=200, rubric="v1") -> JudgeRequest:
    return JudgeRequest(
        pair_id="p1",
        method="m1",
        generated_image=png_bytes(gen_value),
        reference_image=png_bytes(ref_value),
        rubric_version=rubric,
    )


class CountingTransport:
    """Scripted fake: returns/raises each response in turn, counting calls."""

    source = VerdictSource.LIVE

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def __call__(self, payload):
        self.calls += 1
        item = self.responses[min(self.calls - 1, len(self.responses) - 1)]
        if isinstance(item, Exception):
            raise item
        return item


def make_client(tmp_path, transport, **config_kwargs) -> JudgeClient:
    config = JudgeConfig(cache_dir=tmp_path / "cache", **config_kwargs)
    return JudgeClient(config, transport=transport, sleep=lambda s: None)


WELL_FORMED = [
    ('{"structural":2,"damage":1,"realism":3}', (2, 1, 3)),
    ('{"structural": 5, "damage": 5, "realism": 5}', (5, 5, 5)),
    ('{"realism":1,"damage":1,"structural":1}', (1, 1, 1)),
    ('\n  {"structural":4, "damage":3, "realism":2}\n', (4, 3, 2)),
    ('```json\n{"structural":3,"damage":4,"realism":5}\n```', (3, 4, 5)),
    ('{"structural":2,"damage":2,"realism":2,"comment":"blurry"}', (2, 2, 2)),
    ('Here are my scores: {"structural":1,"damage":2,"realism":3}', (1, 2, 3)),
    ('{"structural":4.0,"damage":2.0,"realism":1.0}', (4, 2, 1)),
    ('{"structural":"4","damage":"2","realism":"5"}', (4, 2, 5)),
    ('{"structural":3,"damage":3,"realism":3}extra trailing prose', (3, 3, 3)),
]

LENIENT = [
    ("Structural: 4/5 ... Damage: 2 ... Realism: 3", (4, 2, 3)),
    ("structural consistency: 3, damage accuracy: 2, perceptual realism: 5", (3, 2, 5)),
    ("Structure = 4\nDamage = 4\nRealism = 2", (4, 4, 2)),
    ("STRUCTURAL SCORE 5; DAMAGE SCORE 1; REALISM SCORE 2", (5, 1, 2)),
    ("I rate structural a 2, damage a 3, and realism a 4.", (2, 3, 4)),
    ('{"structure":3,"damage":4,"realism":2}', (3, 4, 2)),
    ("Scores - structural:1 damage:1 realism:1", (1, 1, 1)),
    ("realism 4. damage 3. structural 2.", (2, 3, 4)),
    ("The structural alignment deserves 3 out of 5, damage rendering 2 out of 5, realism merits 3.", (3, 2, 3)),
    ('"structural"=2 "damage"=5 "realism"=4', (2, 5, 4)),
]

MALFORMED = [
    ("", UnparsableVerdict),
    ("I cannot evaluate these images.", UnparsableVerdict),
    ('{"verdict": "good"}', UnparsableVerdict),
    ('{"structural":2.5,"damage":1,"realism":3}', UnparsableVerdict),
    ("Structural: 3.5/5 Damage: 2 Realism: 3", UnparsableVerdict),
    ('{"structural":true,"damage":1,"realism":3}', UnparsableVerdict),
    ('{"structural":7,"damage":1,"realism":3}', ScoreOutOfRange),
    ('{"structural":0,"damage":1,"realism":3}', ScoreOutOfRange),
    ('{"structural":2,"damage":1}', MissingScoreField),
    ("structural: 4 and damage: 2", MissingScoreField),
]


class TestParseVerdict:
    @pytest.mark.parametrize("raw,expected", WELL_FORMED, ids=range(len(WELL_FORMED)))
    def test_well_formed(self, raw, expected):
        assert parse_verdict(raw).scores() == expected

    @pytest.mark.parametrize("raw,expected", LENIENT, ids=range(len(LENIENT)))
    def test_lenient(self, raw, expected):
        assert parse_verdict(raw).scores() == expected

    @pytest.mark.parametrize("raw,error", MALFORMED, ids=range(len(MALFORMED)))
    def test_malformed_taxonomy(self, raw, error):
        with pytest.raises(error):
            parse_verdict(raw)
        assert issubclass(error, VerdictError)

    def test_out_of_range_reports_value(self):
        with pytest.raises(ScoreOutOfRange) as err:
            parse_verdict('{"structural":9,"damage":1,"realism":1}')
        assert err.value.criterion == "structural"
        assert err.value.value == 9

    def test_missing_reports_fields(self):
        with pytest.raises(MissingScoreField) as err:
            parse_verdict('{"damage":1}')
        assert set(err.value.missing) == {"structural", "realism"}

    def test_round_trip(self):
        gen = random.Random(0)
        for _ in range(20):
            v = JudgeVerdict(
                structural=gen.randint(1, 5), damage=gen.randint(1, 5), realism=gen.randint(1, 5)
            )
            assert parse_verdict(serialize_verdict(v)).scores() == v.scores()

    def test_verdict_invariants(self):
        with pytest.raises(ValueError):
            JudgeVerdict(structural=0, damage=1, realism=1)
        with pytest.raises(ValueError):
            JudgeVerdict(structural=1, damage=6, realism=1)


class TestBuildPrompt:
    def test_deterministic_bytes(self):
        p1 = build_judge_prompt(make_request(), model="m")
        p2 = build_judge_prompt(make_request(), model="m")
        assert canonical_payload_bytes(p1) == canonical_payload_bytes(p2)
        h1 = hashlib.sha256(canonical_payload_bytes(p1)).hexdigest()
        h2 = hashlib.sha256(canonical_payload_bytes(p2)).hexdigest()
        assert h1 == h2

    def test_rubric_version_changes_bytes(self):
        p1 = build_judge_prompt(make_request(rubric="v1"), model="m")
        p2 = build_judge_prompt(make_request(rubric="v2"), model="m")
        assert canonical_payload_bytes(p1) != canonical_payload_bytes(p2)
        assert load_rubric("v1") != load_rubric("v2")

    def test_embeds_criteria(self):
        payload = build_judge_prompt(make_request(), model="m")
        for criterion in CRITERIA:
            assert criterion in payload["prompt"]

    def test_oversized_image_downscaled(self):
        req = JudgeRequest(
            pair_id="p", method="m",
            generated_image=png_bytes(10, size=(2000, 100)),
            reference_image=png_bytes(20),
        )
        payload = build_judge_prompt(req, model="m", image_edge_limit=768)
        with Image.open(io.BytesIO(base64.b64decode(payload["images"][0]))) as img:
            assert max(img.size) == 768
        with Image.open(io.BytesIO(base64.b64decode(payload["images"][1]))) as img:
            assert img.size == (16, 16)  # small image passes through untouched

    def test_undecodable_payload(self):
        req = JudgeRequest(pair_id="p", method="m", generated_image=b"not an image",
                           reference_image=png_bytes())
        with pytest.raises(VerdictError):
            build_judge_prompt(req, model="m")


class TestJudgePair:
    def test_cache_prevents_second_live_call(self, tmp_path):
        transport = CountingTransport(['{"structural":2,"damage":3,"realism":4}'])
        client = make_client(tmp_path, transport)
        first = client.judge_pair(make_request())
        assert first.scores() == (2, 3, 4)
        assert first.source is VerdictSource.LIVE
        assert transport.calls == 1
        second = client.judge_pair(make_request())
        assert second.scores() == (2, 3, 4)
        assert second.source is VerdictSource.CACHE
        assert transport.calls == 1  # no second live call

    def test_cache_shared_across_clients(self, tmp_path):
        t1 = CountingTransport(['{"structural":1,"damage":1,"realism":1}'])
        make_client(tmp_path, t1).judge_pair(make_request())
        t2 = CountingTransport(['{"structural":5,"damage":5,"realism":5}'])
        verdict = make_client(tmp_path, t2).judge_pair(make_request())
        assert verdict.scores() == (1, 1, 1)
        assert verdict.source is VerdictSource.CACHE
        assert t2.calls == 0

    def test_malformed_twice_then_valid_records_attempts(self, tmp_path):
        transport = CountingTransport(["garbage", "also garbage",
                                       '{"structural":4,"damage":4,"realism":4}'])
        client = make_client(tmp_path, transport)
        verdict = client.judge_pair(make_request())
        assert verdict.scores() == (4, 4, 4)
        assert transport.calls == 3
        records = list((tmp_path / "cache").glob("*.json"))
        assert len(records) == 1
        assert json.loads(records[0].read_text())["attempts"] == 3

    def test_retries_exhausted(self, tmp_path):
        transport = CountingTransport(["junk"])
        client = make_client(tmp_path, transport, max_attempts=5)
        with pytest.raises(RetriesExhausted) as err:
            client.judge_pair(make_request())
        assert err.value.attempts == 5
        assert transport.calls == 5
        assert not list((tmp_path / "cache").glob("*.json"))  # failures are not cached

    def test_backoff_schedule(self, tmp_path):
        transport = CountingTransport([TransportError("boom")] * 3 +
                                      ['{"structural":1,"damage":1,"realism":1}'])
        sleeps = []
        config = JudgeConfig(cache_dir=tmp_path / "cache")
        client = JudgeClient(config, transport=transport, sleep=sleeps.append)
        client.judge_pair(make_request())
        assert sleeps == [1.0, 2.0, 4.0]

    def test_backoff_jitter(self, tmp_path):
        transport = CountingTransport([TransportError("boom"),
                                       '{"structural":1,"damage":1,"realism":1}'])
        sleeps = []
        config = JudgeConfig(cache_dir=tmp_path / "cache")
        client = JudgeClient(config, transport=transport, sleep=sleeps.append,
                             jitter_rng=random.Random(7))
        client.judge_pair(make_request())
        assert len(sleeps) == 1
        assert 1.0 <= sleeps[0] <= 1.1

    def test_rate_limit_retry_after_honored(self, tmp_path):
        transport = CountingTransport([RateLimited(retry_after=7.5),
                                       '{"structural":1,"damage":2,"realism":3}'])
        sleeps = []
        config = JudgeConfig(cache_dir=tmp_path / "cache")
        client = JudgeClient(config, transport=transport, sleep=sleeps.append)
        verdict = client.judge_pair(make_request())
        assert verdict.scores() == (1, 2, 3)
        assert sleeps == [7.5]  # retry-after dominates the 1s base backoff

    def test_auth_error_not_retried(self, tmp_path):
        transport = CountingTransport([AuthenticationError("bad key")])
        client = make_client(tmp_path, transport)
        with pytest.raises(AuthenticationError):
            client.judge_pair(make_request())
        assert transport.calls == 1

    def test_stub_mode_deterministic(self, tmp_path):
        c1 = make_client(tmp_path / "a", StubTransport())
        c2 = make_client(tmp_path / "b", StubTransport())
        v1 = c1.judge_pair(make_request())
        v2 = c2.judge_pair(make_request())
        assert v1.source is VerdictSource.STUB
        assert v1.scores() == v2.scores()
        other = c1.judge_pair(make_request(gen_value=17))
        assert isinstance(other, JudgeVerdict)

    def test_stub_scores_follow_hash(self, tmp_path):
        client = make_client(tmp_path, StubTransport())
        req = make_request()
        payload = build_judge_prompt(req, model=client.config.model,
                                     image_edge_limit=client.config.image_edge_limit)
        digest = hashlib.sha256(canonical_payload_bytes(payload)).digest()
        expected = tuple((int.from_bytes(digest[4 * i : 4 * i + 4], "little") % 5) + 1
                         for i in range(3))
        assert client.judge_pair(req).scores() == expected

    def test_bounded_concurrency_order_preserved(self, tmp_path):
        client = make_client(tmp_path, StubTransport(), max_inflight=3)
        reqs = [make_request(gen_value=v) for v in range(30, 40)]
        parallel = client.judge_pairs(reqs)
        sequential = [make_client(tmp_path / "seq", StubTransport()).judge_pair(r) for r in reqs]
        assert [v.scores() for v in parallel] == [v.scores() for v in sequential]


class TestExtractDamagePrompt:
    def test_stub_contains_severity_token(self, tmp_path):
        client = make_client(tmp_path, StubTransport())
        dark = png_bytes(40)  # mean ~0.16 -> severe
        prompt = client.extract_damage_prompt(dark, pair_id="p9")
        assert "severe" in prompt.text
        assert prompt.pair_id == "p9"
        assert prompt.source is VerdictSource.STUB
        bright = client.extract_damage_prompt(png_bytes(220))
        assert "mild" in bright.text

    def test_cached_on_repeat(self, tmp_path):
        client = make_client(tmp_path, StubTransport())
        image = png_bytes(90)
        first = client.extract_damage_prompt(image)
        second = client.extract_damage_prompt(image)
        assert second.source is VerdictSource.CACHE
        assert first.text == second.text
        assert np.array_equal(first.embedding, second.embedding)

    def test_live_path_uses_transport(self, tmp_path):
        transport = CountingTransport(["Roofline largely intact; moderate debris on the street."])
        client = make_client(tmp_path, transport)
        prompt = client.extract_damage_prompt(png_bytes(90))
        assert transport.calls == 1
        assert "moderate" in prompt.text
        assert prompt.embedding is not None

    def test_embedding_deterministic(self):
        a = hash_embedding("collapsed roof with scattered debris")
        b = hash_embedding("collapsed roof with scattered debris")
        c = hash_embedding("pristine street, no visible damage")
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert a.shape == (64,)
        assert abs(float(np.linalg.norm(a)) - 1.0) < 1e-12


class TestAggregate:
    def test_midpoint(self):
        verdicts = [JudgeVerdict(1, 1, 1), JudgeVerdict(3, 3, 3)]
        means = aggregate_verdicts({"m": verdicts})["m"]
        assert means == (2.0, 2.0, 2.0)

    def test_single_verdict(self):
        means = aggregate_verdicts({"m": [JudgeVerdict(4, 2, 5)]})["m"]
        assert means == (4.0, 2.0, 5.0)

    def test_permutation_invariant_exact(self):
        gen = random.Random(1)
        verdicts = [JudgeVerdict(gen.randint(1, 5), gen.randint(1, 5), gen.randint(1, 5))
                    for _ in range(17)]
        base = aggregate_verdicts({"m": verdicts})["m"]
        shuffled = verdicts[:]
        gen.shuffle(shuffled)
        assert aggregate_verdicts({"m": shuffled})["m"] == base
        assert all(1.0 <= v <= 5.0 for v in base)

    def test_empty_group_rejected(self):
        with pytest.raises(Exception):
            aggregate_verdicts({"m": []})


class TestTokenBucket:
    def test_blocks_at_rate(self):
        clock = {"t": 0.0}
        sleeps = []

        def fake_sleep(s):
            sleeps.append(s)
            clock["t"] += s

        bucket = TokenBucket(rate_per_sec=2.0, capacity=1.0,
                             clock=lambda: clock["t"], sleep=fake_sleep)
        bucket.acquire()
        bucket.acquire()
        bucket.acquire()
        assert sleeps == pytest.approx([0.5, 0.5])
