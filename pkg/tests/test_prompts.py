import hashlib
import itertools
import json
import re

import httpx
import numpy as np
import pytest

from annimpute.core import AnnotationMatrix, Dataset, LabelSchema
from annimpute.prompts import (
    CONDITIONS,
    CacheMiss,
    CompletionCache,
    CompletionError,
    EndpointConfig,
    PromptError,
    Shot,
    ShotSet,
    assemble_shots,
    build_prompt,
    complete,
    load_catalog,
    load_skeletons,
    parse_response,
    parse_version,
    prompt_hash,
    render,
    score_conditions,
    select_low_response_annotators,
)
from annimpute.prompts.templates import PromptSkeleton, distribution_excluding
from oracles import f1_confusion_oracle

S = LabelSchema(0, 4)
SKELETONS = load_skeletons()
CATALOG = load_catalog()
_EXAMPLE = re.compile(r"Example \d+:\nText: (.*)\nAnnotation from annotator: (\d+)")
_TARGET = re.compile(r"(?:^|\n)Text: (.*)\nAnnotation from annotator:(?:\n|$)")


def _shots_from(text, source):
    return [Shot(t, int(y), k, source) for k, (t, y) in enumerate(_EXAMPLE.findall(text))]


def _target_from(text):
    *_, last = _TARGET.finditer(text)
    return Shot(last.group(1), -1, 999, "original")


# -- golden prompts: complete reference prompts with 30 shots ------------------

@pytest.mark.parametrize("version", ["v-1.-1.-1.-1.-1", "v-1.0.0.-1.-1"])
def test_imputed_skeleton_reproduces_reference_prompt(fixtures_dir, version):
    golden = (fixtures_dir / "golden" / "prompts" / f"imputed_2_{version}.txt").read_text(encoding="utf-8")
    shots = ShotSet([], _shots_from(golden, "imputed"), _target_from(golden), "imputed_only", 0)
    assert len(shots.imputed) == 30
    assert build_prompt(SKELETONS["imputed_2"], CATALOG, version, shots, "unused") == golden


def test_all_omitted_version_has_no_headers(fixtures_dir):
    golden = (fixtures_dir / "golden" / "prompts" / "imputed_2_v-1.-1.-1.-1.-1.txt").read_text(encoding="utf-8")
    assert golden.startswith("Example 1:\n")
    for opts in CATALOG.options.values():
        assert not any(o in golden for o in opts)


def test_version_addressing_reproduces_reference_prompt(fixtures_dir):
    golden = (fixtures_dir / "golden" / "prompts" / "original_1_v4.-1.0.-1.1.txt").read_text(encoding="utf-8")
    description = golden.split("\n\n", 1)[0]
    shots = ShotSet(_shots_from(golden, "original"), [], _target_from(golden), "original_only", 0)
    got = build_prompt(SKELETONS["original_1"], CATALOG, "v4.-1.0.-1.1", shots, description)
    assert got == golden
    chosen = CATALOG.choose("v4.-1.0.-1.1")
    assert chosen["orig_examples_header"] == CATALOG.options["orig_examples_header"][4]
    assert chosen["imputed_examples_header"] is None and chosen["instructions"] is None
    assert chosen["target_example_header"] == CATALOG.options["target_example_header"][0]
    assert chosen["final_words"] == CATALOG.options["final_words"][1]


def test_final_words_options_are_in_catalog():
    assert CATALOG.options["final_words"][1] == "Your output should be a single integer and nothing else."
    assert len(CATALOG.options["final_words"]) == 7


def test_build_prompt_is_pure():
    shots = ShotSet([Shot("a", 1, 0, "original")], [Shot("b", 2, 1, "imputed")], Shot("c", 3, 2, "original"), "combined", 0)
    args = (SKELETONS["combined"], CATALOG, "v1.0.0.-1.-1", shots, "desc")
    assert build_prompt(*args).encode() == build_prompt(*args).encode()


# -- versions and rendering ----------------------------------------------------

@pytest.mark.parametrize("bad", ["4.-1.0.-1.1", "v4.-1.0.-1", "v4.-1.0.-1.1.0", "v4.-2.0.-1.1", "v4..0.-1.1", "vx.0.0.0.0", ""])
def test_malformed_versions(bad):
    with pytest.raises(PromptError):
        parse_version(bad)


def test_out_of_range_index():
    with pytest.raises(PromptError, match="out of range"):
        CATALOG.choose("v5.0.0.0.0")


def test_parse_version_values():
    assert parse_version("v4.-1.0.-1.1") == [4, -1, 0, -1, 1]


def test_omitted_slot_removes_its_line_only():
    sk = PromptSkeleton("t", "top\n{instructions}\nmiddle {final_words} end\n{target_example}")
    text = render(sk, CATALOG, "v0.0.0.-1.0", {"target_example": "T"})
    assert text == f"top\nmiddle {CATALOG.options['final_words'][0]} end\nT"


def test_substitution_is_single_pass():
    sk = PromptSkeleton("t", "{dataset_description}\n{target_example}")
    text = render(sk, CATALOG, "v0.0.0.0.0", {"dataset_description": "{target_example}", "target_example": "x"})
    assert text == "{target_example}\nx"


def test_unknown_placeholder_rejected():
    with pytest.raises(PromptError):
        PromptSkeleton("t", "{nonsense}")


def test_missing_data_value():
    with pytest.raises(PromptError, match="target_example"):
        render(PromptSkeleton("t", "{target_example}"), CATALOG, "v0.0.0.0.0", {})


def test_every_bundled_skeleton_is_valid():
    assert {"original_1", "combined", "imputed_2"} <= set(SKELETONS)
    for sk in SKELETONS.values():
        assert sk.condition in (None, *CONDITIONS)


def test_half_scale_labels_are_shown_on_original_scale():
    half = LabelSchema(0, 4, scale=2)
    shots = ShotSet([Shot("a", 3, 0, "original")], [], Shot("b", 1, 1, "original"), "original_only", 0)
    assert "annotator: 1.5" in build_prompt(SKELETONS["original_1"], CATALOG, "v0.0.0.0.0", shots, "d", half)


def test_distribution_excludes_target_annotator():
    dist = distribution_excluding({0: 1, 1: 1, 2: 3}, exclude=2, schema=S)
    np.testing.assert_array_equal(dist, [0, 1, 0, 0, 0])


# -- annotator selection and shots ----------------------------------------------

def _matrix_with_counts(counts, n_items=10):
    cells = [(i, j, 0) for j, c in enumerate(counts) for i in range(c)]
    return AnnotationMatrix(n_items, len(counts), cells, S, allow_empty_rows=True)


def test_low_response_examples():
    assert select_low_response_annotators(_matrix_with_counts([5, 1, 3]), 2) == [1, 2]
    assert select_low_response_annotators(_matrix_with_counts([2, 2, 2]), 2) == [0, 1]
    assert select_low_response_annotators(_matrix_with_counts([4, 0, 3]), 3) == [1, 2, 0]
    with pytest.raises(ValueError):
        select_low_response_annotators(_matrix_with_counts([1, 1]), 3)


def test_min_annotations_skips_sparse_annotators():
    assert select_low_response_annotators(_matrix_with_counts([4, 0, 1, 3]), 2, min_annotations=2) == [3, 0]


def _dataset(n_items, cells, texts=None):
    texts = texts or [f"text {i}" for i in range(n_items)]
    return Dataset(texts, AnnotationMatrix(n_items, 2, cells, S, allow_empty_rows=True), "toy")


def test_two_annotations_original_only():
    ds = _dataset(4, [(0, 0, 1), (1, 0, 2)])
    s = assemble_shots(0, ds, None, "original_only", seed=0)
    assert len(s.original) == 1 and not s.imputed
    assert {s.original[0].item, s.held_out.item} == {0, 1}


def test_original_shots_are_capped():
    ds = _dataset(40, [(i, 0, i % 5) for i in range(40)])
    assert len(assemble_shots(0, ds, None, "original_only", seed=1).original) == 30


def test_zero_annotations_rejected():
    with pytest.raises(ValueError):
        assemble_shots(1, _dataset(2, [(0, 0, 1)]), None, "original_only", seed=0)


def test_imputed_shots_never_reuse_texts_exhaustive():
    # 10 items with repeated texts; every seed and every annotator subset size
    texts = [f"t{i % 6}" for i in range(10)]
    imputed = np.arange(20).reshape(10, 2) % 5
    for n_own, seed, cond in itertools.product(range(1, 10), range(8), ("combined", "imputed_only")):
        ds = _dataset(10, [(i, 0, i % 5) for i in range(n_own)], texts)
        s = assemble_shots(0, ds, imputed, cond, seed)
        orig_texts = {x.text for x in assemble_shots(0, ds, imputed, "combined", seed).original}
        imp_texts = [x.text for x in s.imputed]
        assert len(imp_texts) == len(set(imp_texts))
        assert s.held_out.text not in imp_texts
        assert not set(imp_texts) & orig_texts
        assert all(x.item >= n_own for x in s.imputed)


def test_conditions_share_target_and_separate_sources():
    rng = np.random.default_rng(0)
    cells = [(i, 0, int(rng.integers(0, 5))) for i in range(6)] + [(i, 1, 1) for i in range(12)]
    ds = _dataset(12, cells)
    imputed = rng.integers(0, 5, size=(12, 2))
    sets = {c: assemble_shots(0, ds, imputed, c, seed=3) for c in CONDITIONS}
    assert len({s.held_out for s in sets.values()}) == 1
    assert all(x.source == "original" for x in sets["original_only"].shots)
    assert all(x.source == "imputed" for x in sets["imputed_only"].shots)
    assert sets["combined"].original == sets["original_only"].original
    assert sets["combined"].imputed == sets["imputed_only"].imputed


def test_prompt_never_contains_target_annotation():
    rng = np.random.default_rng(1)
    texts = [f"sentence {i} ends here" for i in range(15)]
    for seed in range(20):
        cells = [(i, 0, int(rng.integers(0, 5))) for i in range(int(rng.integers(2, 10)))]
        ds = _dataset(15, cells, texts)
        imputed = rng.integers(0, 5, size=(15, 2))
        for cond, skel, ver in [("original_only", "original_1", "v0.-1.0.-1.0"), ("imputed_only", "imputed_2", "v-1.0.0.-1.-1"),
                                ("combined", "combined", "v1.0.0.-1.-1")]:
            s = assemble_shots(0, ds, imputed, cond, seed)
            prompt = build_prompt(SKELETONS[skel], CATALOG, ver, s, "d")
            assert prompt.count(s.held_out.text) == 1
            after = prompt.split(s.held_out.text, 1)[1]
            assert after.startswith("\nAnnotation from annotator:") and not after[27:28].strip()


# -- parsing and scoring -----------------------------------------------------------

@pytest.mark.parametrize("raw, want", [(" 3 \n", 3), ("3", 3), ("\t0", 0), ("3.", None), ("The answer is 3", None),
                                       ("5", None), ("-1", None), ("", None), ("3 4", None)])
def test_parse_response(raw, want):
    assert parse_response(raw, S) == want


def test_parse_half_scale():
    half = LabelSchema(0, 4, scale=2)
    assert parse_response("1.5", half) == 3
    assert parse_response("2.0", half) == 4


def test_score_conditions_examples():
    truths = [0, 1, 2, 3, 4]
    results = {
        ("original_only", "original_1", "v0.0.0.0.0"): list(zip(truths, truths)),
        ("combined", "combined", "v0.0.0.0.0"): [(None, t) for t in truths],
    }
    best = score_conditions(results, S)
    assert best["original_only"]["best_f1"] == 1.0
    assert best["combined"]["best_f1"] == 0.0


def test_score_picks_maximum_and_breaks_ties():
    truths = [0, 0, 1, 1, 2]
    weak = [(0, 0), (1, 0), (1, 1), (0, 1), (None, 2)]
    strong = [(0, 0), (0, 0), (1, 1), (0, 1), (2, 2)]
    res = {("imputed_only", "imputed_1", "v0.0.0.0.0"): weak, ("imputed_only", "imputed_2", "v0.0.0.0.0"): strong}
    best = score_conditions(res, S)["imputed_only"]
    assert best["best_skeleton"] == "imputed_2"
    assert best["best_f1"] == pytest.approx(f1_confusion_oracle([p for p, _ in strong], truths))
    tie = {("imputed_only", "imputed_2", "v1.0.0.0.0"): strong, ("imputed_only", "imputed_2", "v0.0.0.0.0"): strong,
           ("imputed_only", "imputed_1", "v2.0.0.0.0"): strong}
    got = score_conditions(tie, S)["imputed_only"]
    assert (got["best_skeleton"], got["best_version"]) == ("imputed_1", "v2.0.0.0.0")


def test_invalid_counts_as_wrong_in_oracle_terms():
    pairs = [(None, 1), (1, 1), (2, 2), (None, 2)]
    best = score_conditions({("combined", "combined", "v0.0.0.0.0"): pairs}, S)["combined"]["best_f1"]
    assert best == pytest.approx(f1_confusion_oracle([-99, 1, 2, -99], [1, 1, 2, 2]))


def test_empty_results_rejected():
    with pytest.raises(ValueError):
        score_conditions({("combined", "combined", "v0.0.0.0.0"): []}, S)


# -- completion client -------------------------------------------------------------

def _reply(content):
    return {"choices": [{"message": {"role": "assistant", "content": content}}]}


def test_prompt_hash_is_sha256_of_canonical_json():
    payload = '{"model": "m", "prompt": "p", "temperature": 0.0}'
    assert prompt_hash("p", "m", 0.0) == hashlib.sha256(payload.encode()).hexdigest()
    assert prompt_hash("p", "m", 0.0) != prompt_hash("p", "m", 0.5)


def _no_network():
    def handler(request):
        raise AssertionError("network touched")
    return httpx.MockTransport(handler)


def test_replay_hit_uses_no_network(tmp_path):
    cfg = EndpointConfig(model="m", cache_path=str(tmp_path / "c.ndjson"))
    key = prompt_hash("hello", "m", 0.0)
    (tmp_path / "c.ndjson").write_text(json.dumps({"prompt_hash": key, "raw_response": " 2\n", "model": "m",
                                                   "temperature": 0.0, "timestamp": "t"}) + "\n")
    rec = complete("hello", cfg, S, cache=CompletionCache(cfg.cache_path), transport=_no_network())
    assert rec.raw_response == " 2\n" and rec.parsed == 2


def test_replay_miss_names_hash(tmp_path):
    cfg = EndpointConfig(model="m", cache_path=str(tmp_path / "c.ndjson"))
    with pytest.raises(CacheMiss, match=prompt_hash("nope", "m", 0.0)):
        complete("nope", cfg, cache=CompletionCache(cfg.cache_path), transport=_no_network())


def test_live_response_is_persisted_then_replayed(tmp_path, monkeypatch):
    monkeypatch.setenv("TEST_TOKEN", "secret")
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(200, json=_reply("4"))

    path = str(tmp_path / "c.ndjson")
    live = EndpointConfig(base_url="https://example.test/v1", model="m", token_env="TEST_TOKEN", mode="live", cache_path=path)
    rec = complete("q", live, S, cache=CompletionCache(path), transport=httpx.MockTransport(handler))
    assert rec.parsed == 4 and len(seen) == 1
    req = seen[0]
    assert str(req.url) == "https://example.test/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer secret"
    body = json.loads(req.content)
    assert body["messages"] == [{"role": "user", "content": "q"}] and body["temperature"] == 0.0
    assert "secret" not in (tmp_path / "c.ndjson").read_text()

    replay = EndpointConfig(model="m", cache_path=path)
    again = complete("q", replay, S, cache=CompletionCache(path), transport=_no_network())
    assert again.raw_response == "4" and again.prompt_hash == rec.prompt_hash


def test_live_auth_failure_is_distinct(tmp_path, monkeypatch):
    monkeypatch.setenv("TEST_TOKEN", "bad")
    cfg = EndpointConfig(model="m", token_env="TEST_TOKEN", mode="live")
    transport = httpx.MockTransport(lambda r: httpx.Response(401, json={"error": "no"}))
    with pytest.raises(CompletionError, match="authentication"):
        complete("q", cfg, cache=CompletionCache(None), transport=transport)


def test_live_network_failure(monkeypatch):
    monkeypatch.setenv("TEST_TOKEN", "x")

    def handler(request):
        raise httpx.ConnectError("down")

    cfg = EndpointConfig(model="m", token_env="TEST_TOKEN", mode="live")
    with pytest.raises(CompletionError, match="network"):
        complete("q", cfg, cache=CompletionCache(None), transport=httpx.MockTransport(handler))


def test_missing_token_env(monkeypatch):
    monkeypatch.delenv("ABSENT_TOKEN", raising=False)
    cfg = EndpointConfig(model="m", token_env="ABSENT_TOKEN", mode="live")
    with pytest.raises(CompletionError, match="ABSENT_TOKEN"):
        complete("q", cfg, cache=CompletionCache(None), transport=_no_network())


def test_token_in_config_rejected():
    with pytest.raises(ValueError, match="environment"):
        EndpointConfig.from_json({"model": "m", "api_key": "sk-123"})
