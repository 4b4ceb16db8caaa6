import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotor.errors import DomainError, PromptFormatError
from rotor.inputs import (
    decode,
    encode,
    make_input,
    parse_prompt,
    parse_prompt_file,
    serialize_prompt,
    shuffle_permutation,
    shuffle_segments,
)


class TestTokenizer:
    def test_empty(self):
        assert encode("") == []

    def test_byte_identity(self):
        assert encode("AB") == [65, 66]

    def test_round_trip_random_byte_strings(self):
        import random

        r = random.Random(0)
        for _ in range(1000):
            s = bytes(r.randrange(256) for _ in range(r.randrange(0, 20)))
            assert decode(encode(s)) == s

    @given(st.binary(max_size=64))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, s):
        assert decode(encode(s)) == s

    def test_specials_never_emitted(self):
        assert all(t < 256 for t in encode(bytes(range(256))))

    def test_decode_out_of_vocab(self):
        with pytest.raises(DomainError):
            decode([259])

    def test_decode_drops_specials(self):
        assert decode([65, 256, 66, 257, 258]) == b"AB"


class TestSegmentedInput:
    def test_needs_a_segment(self):
        with pytest.raises(DomainError):
            make_input([1], [], [2])

    def test_rejects_empty_segment(self):
        with pytest.raises(DomainError):
            make_input([1], [[2], []], [3])

    def test_token_concatenation(self):
        inp = make_input([1], [[2, 3], [4]], [5])
        assert inp.tokens() == [1, 2, 3, 4, 5]
        assert inp.tokens((9,)) == [1, 2, 3, 4, 5, 9]


class TestPromptFiles:
    MINIMAL = {"prefix": "p", "segments": ["a"], "suffix": "s"}

    def test_minimal(self):
        prompt = parse_prompt(dict(self.MINIMAL))
        assert prompt.input.k == 1
        assert prompt.input.prefix == (112,)
        assert prompt.candidates is None and prompt.scores is None

    def test_missing_field_named(self):
        with pytest.raises(PromptFormatError) as e:
            parse_prompt({"prefix": "p", "suffix": "s"})
        assert e.value.field == "segments"

    def test_empty_segment_list(self):
        with pytest.raises(PromptFormatError):
            parse_prompt({"prefix": "p", "segments": [], "suffix": "s"})

    def test_wrong_type(self):
        with pytest.raises(PromptFormatError) as e:
            parse_prompt({"prefix": 3, "segments": ["a"], "suffix": "s"})
        assert e.value.field == "prefix"

    def test_scores_length_checked(self):
        obj = dict(self.MINIMAL, segment_scores=[0.5, 0.25])
        with pytest.raises(PromptFormatError) as e:
            parse_prompt(obj)
        assert e.value.field == "segment_scores"

    def test_candidates_single_token(self):
        obj = dict(self.MINIMAL, answer_candidates=["AB"])
        with pytest.raises(PromptFormatError):
            parse_prompt(obj)

    def test_gold_must_be_candidate(self):
        obj = dict(self.MINIMAL, answer_candidates=["A", "B"], gold_answer="C")
        with pytest.raises(PromptFormatError):
            parse_prompt(obj)

    def test_triple_style_prompt_preserves_order(self):
        # three fact triples in the style of a KGQA prompt
        obj = {
            "prefix": "Below are the facts in the form of the triple. ",
            "segments": [
                "(Super Bowl XLII, winner, New York Giants)",
                "(Super Bowl XLII, location, State Farm Stadium)",
                "(Super Bowl XLII, sport, American football)",
            ],
            "suffix": "Question: which team won?, Answer: ",
        }
        prompt = parse_prompt(obj)
        assert prompt.input.k == 3
        assert [decode(s).decode() for s in prompt.input.segments] == obj["segments"]

    def test_parse_serialize_parse_fixed_point(self, tmp_path):
        obj = {
            "prefix": "p",
            "segments": ["aa", "b"],
            "suffix": "s",
            "answer_candidates": ["A", "B"],
            "segment_scores": [0.5, -1.0],
            "gold_answer": "B",
        }
        first = parse_prompt(obj)
        text = serialize_prompt(first)
        path = tmp_path / "p.json"
        path.write_text(text)
        second = parse_prompt_file(path)
        assert second.input == first.input
        assert second.candidates == first.candidates
        assert second.scores == first.scores
        assert second.gold == first.gold
        assert serialize_prompt(second) == text

    def test_invalid_json_is_format_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(PromptFormatError):
            parse_prompt_file(path)

    def test_non_object_root(self, tmp_path):
        path = tmp_path / "arr.json"
        path.write_text(json.dumps([1, 2]))
        with pytest.raises(PromptFormatError):
            parse_prompt_file(path)


class TestShuffle:
    def test_single_segment_unchanged(self):
        inp = make_input([1], [[2, 3]], [4])
        assert shuffle_segments(inp, 0) == inp

    def test_same_seed_same_permutation(self):
        inp = make_input([1], [[2], [3], [4], [5]], [6])
        assert shuffle_segments(inp, 7) == shuffle_segments(inp, 7)

    def test_all_permutations_reachable(self):
        perms = {tuple(shuffle_permutation(3, seed)) for seed in range(100)}
        assert perms == set(itertools.permutations(range(3)))

    def test_multiset_and_ends_preserved(self):
        inp = make_input([1, 2], [[3], [4, 5], [3]], [6])
        out = shuffle_segments(inp, 11)
        assert out.prefix == inp.prefix
        assert out.suffix == inp.suffix
        assert sorted(out.segments) == sorted(inp.segments)
