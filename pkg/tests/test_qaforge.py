import json
import threading

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from radvqa.corpus import DatasetManifest, ImageRef, QARecord
from radvqa.qaforge import (
    FilterRules,
    HttpClient,
    LocalEchoClient,
    ParsedPair,
    PromptTemplate,
    QAForgeError,
    RecordedReplayClient,
    Sampling,
    builtin_template,
    filter_noisy,
    format_qa,
    generate_dataset,
    parse_qa,
    prompt_key,
    render_judge_prompt,
    render_prompt,
)


def caption_record(i: int, caption: str) -> QARecord:
    return QARecord(
        id=f"cap{i:03d}",
        image=ImageRef(path=f"images/{i:03d}.npy", width=64, height=16,
                       modality="ct", organ="chest"),
        kind="caption",
        question="",
        answer=caption,
    )


CAPTION = "Axial CT of the chest showing a right pleural effusion"


class TestTemplates:
    def test_case_based_embeds_caption_once(self):
        prompt = render_prompt(builtin_template("case_based"), caption_record(0, CAPTION))
        assert prompt.count(CAPTION) == 1
        assert "{" not in prompt.replace("{caption}", "")

    def test_literature_differs_only_in_framing(self):
        rec = caption_record(0, CAPTION)
        case = render_prompt(builtin_template("case_based"), rec)
        lit = render_prompt(builtin_template("literature_based"), rec)
        assert case != lit
        assert CAPTION in lit and CAPTION in case

    def test_unresolved_placeholder_named(self):
        tpl = PromptTemplate(mode="case_based", template="Caption: {caption}\n{missing}")
        with pytest.raises(QAForgeError, match="missing"):
            render_prompt(tpl, caption_record(0, CAPTION))

    def test_empty_caption_rejected(self):
        rec = caption_record(0, "   ")
        with pytest.raises(QAForgeError, match="empty caption"):
            render_prompt(builtin_template("case_based"), rec)

    def test_non_caption_record_rejected(self):
        rec = QARecord(id="x", image=ImageRef(path="a.npy", width=8, height=8),
                       kind="open", question="q?", answer="a")
        with pytest.raises(QAForgeError, match="caption"):
            render_prompt(builtin_template("case_based"), rec)

    def test_judge_mode_not_renderable_here(self):
        with pytest.raises(QAForgeError, match="judge"):
            render_prompt(builtin_template("judge"), caption_record(0, CAPTION))

    def test_judge_prompt_renders_fields(self):
        out = render_judge_prompt(builtin_template("judge"), "Q?", "ref", "cand")
        assert "Question: Q?" in out and "Reference answer: ref" in out
        assert "Candidate answer: cand" in out

    def test_template_without_caption_placeholder_rejected(self):
        tpl = PromptTemplate(mode="case_based", template="no placeholder at all")
        with pytest.raises(QAForgeError, match="embed the caption"):
            render_prompt(tpl, caption_record(0, CAPTION))

    def test_hash_tracks_wording(self):
        a = PromptTemplate(mode="case_based", template="Caption: {caption}")
        b = PromptTemplate(mode="case_based", template="Caption: {caption}!")
        assert a.sha256() != b.sha256()


class TestParse:
    def test_single_inline_pair(self):
        pairs, rejects = parse_qa("Q: What modality is shown? A: CT")
        assert rejects == []
        assert pairs == [ParsedPair(question="What modality is shown?", answer="CT")]

    def test_three_good_one_truncated(self):
        text = (
            "Q: One?\nA: first\n\n"
            "Q: Two?\nA: second\n\n"
            "Q: Three?\nA: third\n\n"
            "Q: Four, cut off mid-"
        )
        pairs, rejects = parse_qa(text)
        assert len(pairs) == 3
        assert [r.reason for r in rejects] == ["truncated"]

    def test_empty_string(self):
        assert parse_qa("") == ([], [])

    def test_mcq_block(self):
        text = "Q: Best match?\nA: effusion\nO: effusion | mass | fracture | lesion"
        pairs, rejects = parse_qa(text)
        assert rejects == []
        assert pairs[0].kind == "mcq"
        assert pairs[0].options == ("effusion", "mass", "fracture", "lesion")

    def test_options_before_answer(self):
        text = "Q: Best match?\nO: a1 | a2 | a3 | a4\nA: a2"
        pairs, _ = parse_qa(text)
        assert pairs[0].answer == "a2" and pairs[0].kind == "mcq"

    def test_bad_option_count(self):
        text = "Q: Pick\nA: x\nO: x | y | z"
        pairs, rejects = parse_qa(text)
        assert pairs == [] and rejects[0].reason == "bad_option_count"

    def test_answer_not_in_options(self):
        text = "Q: Pick\nA: nope\nO: a | b | c | d"
        _, rejects = parse_qa(text)
        assert rejects[0].reason == "answer_not_in_options"

    def test_prose_only_block_rejected(self):
        pairs, rejects = parse_qa("Here are your questions, doctor.")
        assert pairs == [] and rejects[0].reason == "no_markers"

    def test_preamble_inside_block_ignored(self):
        text = "Sure thing:\nQ: One?\nA: yes"
        pairs, rejects = parse_qa(text)
        assert rejects == [] and pairs[0].question == "One?"

    def test_duplicate_marker_rejected(self):
        text = "Q: One?\nA: x\nQ: Two?"
        _, rejects = parse_qa(text)
        assert rejects[0].reason == "duplicate_marker"

    def test_continuation_lines_join(self):
        text = "Q: A very\nlong question?\nA: spread\nanswer"
        pairs, _ = parse_qa(text)
        assert pairs[0].question == "A very long question?"
        assert pairs[0].answer == "spread answer"

    def test_never_raises_on_junk(self):
        for junk in ("\x00\x01", "::::", "A: orphan answer", "O: a|b|c|d", "Q:"):
            pairs, rejects = parse_qa(junk)
            assert isinstance(pairs, list) and isinstance(rejects, list)

    _clean = st.text(
        alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), max_codepoint=0x24F),
        min_size=1, max_size=18).map(lambda s: s.strip()).filter(bool)

    @settings(max_examples=60, deadline=None)
    @given(data=st.data(), n=st.integers(min_value=0, max_value=5))
    def test_roundtrip(self, data, n):
        pairs = []
        for _ in range(n):
            q = data.draw(self._clean)
            a = data.draw(self._clean)
            if data.draw(st.booleans()):
                extra = [data.draw(self._clean) for _ in range(3)]
                opts = [a] + extra
                if len(set(opts)) == 4:
                    pairs.append(ParsedPair(question=q, answer=a, kind="mcq",
                                            options=tuple(opts)))
                    continue
            pairs.append(ParsedPair(question=q, answer=a))
        reparsed, rejects = parse_qa(format_qa(pairs))
        assert rejects == []
        assert reparsed == pairs


class TestFilters:
    RULES = FilterRules(min_answer_tokens=2, max_answer_tokens=6,
                        min_question_overlap=1)

    def test_banned_phrase(self):
        pair = ParsedPair(question="What is in the chest image?",
                          answer="I cannot see the image")
        kept, rejected = filter_noisy([pair], self.RULES, caption="chest image")
        assert kept == [] and rejected[0].rule == "banned_phrase"

    def test_too_short(self):
        pair = ParsedPair(question="What chest finding?", answer="effusion")
        _, rejected = filter_noisy([pair], self.RULES, caption="chest effusion")
        assert rejected[0].rule == "too_short"

    def test_too_long(self):
        pair = ParsedPair(question="What chest finding?",
                          answer="one two three four five six seven")
        _, rejected = filter_noisy([pair], self.RULES, caption="chest x")
        assert rejected[0].rule == "too_long"

    def test_low_overlap(self):
        pair = ParsedPair(question="What about stars?", answer="two words")
        _, rejected = filter_noisy([pair], self.RULES, caption="chest effusion")
        assert rejected[0].rule == "low_overlap"

    def test_overlapping_pair_kept(self):
        pair = ParsedPair(question="Where is the effusion located?",
                          answer="right pleural space")
        kept, rejected = filter_noisy([pair], self.RULES,
                                      caption="right pleural effusion on chest CT")
        assert rejected == [] and kept == [pair]

    def test_first_rule_wins(self):
        # violates banned phrase, length, and overlap at once
        pair = ParsedPair(question="Unrelated?", answer="as an AI")
        _, rejected = filter_noisy([pair], self.RULES, caption="chest")
        assert rejected[0].rule == "banned_phrase"

    def test_partition(self):
        pairs = [
            ParsedPair(question="Where is the effusion?", answer="right side"),
            ParsedPair(question="What?", answer="x"),
        ]
        kept, rejected = filter_noisy(pairs, self.RULES, caption="effusion study")
        assert len(kept) + len(rejected) == len(pairs)
        assert kept[0] is pairs[0] and rejected[0].pair is pairs[1]


class TestClients:
    def test_echo_output_parses_to_three_pairs(self):
        prompt = render_prompt(builtin_template("case_based"), caption_record(0, CAPTION))
        text = LocalEchoClient().generate(prompt, Sampling())
        pairs, rejects = parse_qa(text)
        assert rejects == []
        kinds = [p.kind for p in pairs]
        assert kinds == ["open", "open", "mcq"]

    def test_echo_deterministic(self):
        prompt = render_prompt(builtin_template("case_based"), caption_record(0, CAPTION))
        client = LocalEchoClient()
        assert client.generate(prompt, Sampling()) == client.generate(prompt, Sampling())

    def test_echo_judge_verdicts(self):
        tpl = builtin_template("judge")
        client = LocalEchoClient()
        agree = render_judge_prompt(tpl, "Q?", "pleural effusion", "a pleural effusion")
        disagree = render_judge_prompt(tpl, "Q?", "pleural effusion", "pneumothorax")
        assert client.generate(agree, Sampling()).strip() == "VERDICT: correct"
        assert client.generate(disagree, Sampling()).strip() == "VERDICT: incorrect"

    def test_replay_records_then_replays(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        rec = RecordedReplayClient(cassette, record_with=LocalEchoClient())
        prompt = render_prompt(builtin_template("case_based"), caption_record(0, CAPTION))
        first = rec.generate(prompt, Sampling())

        replay = RecordedReplayClient(cassette)
        assert replay.generate(prompt, Sampling()) == first
        entry = json.loads(cassette.read_text().splitlines()[0])
        assert entry["prompt_sha256"] == prompt_key(prompt)

    def test_replay_miss_is_error(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        cassette.write_text("")
        replay = RecordedReplayClient(cassette)
        with pytest.raises(QAForgeError, match="no entry"):
            replay.generate("never recorded", Sampling())

    def test_replay_missing_file_without_recorder(self, tmp_path):
        with pytest.raises(QAForgeError, match="does not exist"):
            RecordedReplayClient(tmp_path / "absent.jsonl")

    def test_http_client_roundtrip(self, monkeypatch):
        monkeypatch.setenv("RADVQA_TEXTGEN_API_KEY", "sk-test")
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["auth"] = request.headers.get("authorization")
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json={"text": "Q: ok? A: yes"})

        client = HttpClient("http://textgen.local/v1/generate",
                            transport=httpx.MockTransport(handler))
        out = client.generate("hello", Sampling(temperature=0.5, max_tokens=32, seed=9))
        assert out == "Q: ok? A: yes"
        assert seen["auth"] == "Bearer sk-test"
        assert seen["body"] == {"prompt": "hello", "temperature": 0.5,
                                "max_tokens": 32, "seed": 9}

    def test_http_client_missing_key(self, monkeypatch):
        monkeypatch.delenv("RADVQA_TEXTGEN_API_KEY", raising=False)
        client = HttpClient("http://textgen.local/gen",
                            transport=httpx.MockTransport(lambda r: httpx.Response(200)))
        with pytest.raises(QAForgeError, match="RADVQA_TEXTGEN_API_KEY"):
            client.generate("x", Sampling())

    def test_http_client_error_status(self, monkeypatch):
        monkeypatch.setenv("RADVQA_TEXTGEN_API_KEY", "k")
        client = HttpClient("http://textgen.local/gen",
                            transport=httpx.MockTransport(lambda r: httpx.Response(500)))
        with pytest.raises(QAForgeError, match="500"):
            client.generate("x", Sampling())


class _FlakyClient:
    """Fails the first call per prompt, succeeds on retry."""

    def __init__(self):
        self.inner = LocalEchoClient()
        self.seen = set()
        self.lock = threading.Lock()

    def identity(self):
        return "flaky"

    def generate(self, prompt, sampling):
        with self.lock:
            if prompt not in self.seen:
                self.seen.add(prompt)
                raise RuntimeError("transient")
        return self.inner.generate(prompt, sampling)


class _GarbageForOne:
    def __init__(self, bad_caption):
        self.inner = LocalEchoClient()
        self.bad_caption = bad_caption

    def identity(self):
        return "garbage-for-one"

    def generate(self, prompt, sampling):
        if self.bad_caption in prompt:
            return "%%% nonsense with no markers %%%"
        return self.inner.generate(prompt, sampling)


class TestGenerate:
    def _manifest(self, n=10):
        captions = [
            f"{mod} of the {organ} showing {finding}"
            for mod, organ, finding in [
                ("Axial CT", "chest", "a pleural effusion"),
                ("Chest radiograph", "chest", "right lower lobe pneumonia"),
                ("MRI", "brain", "a small cortical lesion"),
                ("Ultrasound", "abdomen", "gallbladder wall thickening"),
                ("CT", "abdomen", "a bowel obstruction"),
                ("Radiograph", "wrist", "a distal radius fracture"),
                ("MRI", "knee", "a meniscal tear"),
                ("CT", "head", "an acute hemorrhage"),
                ("Radiograph", "hip", "degenerative arthritis"),
                ("Ultrasound", "kidney", "a simple renal cyst"),
            ][:n]
        ]
        return DatasetManifest(
            name="caps",
            records=[caption_record(i, c) for i, c in enumerate(captions)],
            provenance=[])

    def test_generates_three_per_caption(self):
        out = generate_dataset(self._manifest(), LocalEchoClient(), "case_based", Sampling())
        assert len(out.records) == 30
        assert all(r.source == "synthetic_case" for r in out.records)
        assert out.records[0].id == "cap000-q00"

    def test_literature_source_tag(self):
        out = generate_dataset(self._manifest(3), LocalEchoClient(), "literature_based", Sampling())
        assert all(r.source == "synthetic_literature" for r in out.records)

    def test_deterministic_order_regardless_of_workers(self):
        a = generate_dataset(self._manifest(), LocalEchoClient(), "case_based",
                             Sampling(), max_workers=1)
        b = generate_dataset(self._manifest(), LocalEchoClient(), "case_based",
                             Sampling(), max_workers=8)
        assert [r.id for r in a.records] == [r.id for r in b.records]
        assert a.records == b.records

    def test_empty_manifest(self):
        empty = DatasetManifest(name="caps", records=[], provenance=[])
        out = generate_dataset(empty, LocalEchoClient(), "case_based", Sampling())
        assert out.records == []
        assert out.provenance[-1]["op"] == "generate_dataset"

    def test_garbage_for_one_caption_skipped(self):
        client = _GarbageForOne("meniscal tear")
        out = generate_dataset(self._manifest(), client, "case_based", Sampling())
        covered = {r.id.rsplit("-", 1)[0] for r in out.records}
        assert len(covered) == 9
        skips = out.provenance[-1]["skips"]
        assert len(skips) == 1 and skips[0]["reason"] == "no_pairs"

    def test_retry_rescues_transient_failure(self):
        out = generate_dataset(self._manifest(4), _FlakyClient(), "case_based",
                               Sampling(), retries=1)
        assert len(out.records) == 12
        assert out.provenance[-1]["skips"] == []

    def test_exhausted_retries_become_skip(self):
        class AlwaysFails:
            def identity(self):
                return "broken"

            def generate(self, prompt, sampling):
                raise RuntimeError("down")

        out = generate_dataset(self._manifest(2), AlwaysFails(), "case_based",
                               Sampling(), retries=1)
        assert out.records == []
        skips = out.provenance[-1]["skips"]
        assert [s["reason"] for s in skips] == ["client_error", "client_error"]

    def test_provenance_fields(self):
        out = generate_dataset(self._manifest(2), LocalEchoClient(), "case_based",
                               Sampling(temperature=0.2, max_tokens=128, seed=5))
        note = out.provenance[-1]
        assert note["client"] == "local-echo"
        assert note["sampling"] == {"temperature": 0.2, "max_tokens": 128, "seed": 5}
        assert len(note["template_sha256"]) == 64

    def test_non_caption_input_rejected(self):
        bad = DatasetManifest(name="caps", records=[QARecord(
            id="x", image=ImageRef(path="a.npy", width=8, height=8),
            kind="open", question="q?", answer="a")], provenance=[])
        with pytest.raises(QAForgeError, match="caption"):
            generate_dataset(bad, LocalEchoClient(), "case_based", Sampling())

    def test_judge_mode_rejected(self):
        with pytest.raises(QAForgeError, match="template_mode"):
            generate_dataset(self._manifest(1), LocalEchoClient(), "judge", Sampling())

    def test_filters_applied(self):
        rules = FilterRules(min_answer_tokens=1, max_answer_tokens=64,
                            min_question_overlap=3)
        out = generate_dataset(self._manifest(2), LocalEchoClient(), "case_based",
                               Sampling(), rules=rules)
        # echo questions share exactly one content word with the caption
        assert out.records == []
        note = out.provenance[-1]
        assert note["filtered"].get("low_overlap", 0) > 0
        assert all(s["reason"] == "no_pairs" for s in note["skips"])
