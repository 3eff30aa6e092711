import json
import random
import re

import pytest

from switchsim.codec import IsoMsg
from switchsim.generator import (
    FieldConfig,
    InvalidTemplateMti,
    MissingPattern,
    SchemaError,
    UnknownFieldNumber,
    default_field_config,
    instantiate,
    load_field_config,
    load_suite,
    load_template,
)
from switchsim.regexgen import (
    UNBOUNDED_CAP,
    RegexError,
    UnsupportedRegexFeature,
    compile_pattern,
    generate_matching,
)

BALANCE_OK = ('{"name":"balance-ok","mti":"0200","fields":{"3":"310000","41":"TERM0001"},'
              '"randomize":[2,11],"expected":{"39":"00"}}')
CONFIG = '{"2":"4[0-9]{15}","11":"[0-9]{6}","3":"31[0-9]{4}"}'


def random_pattern(rng: random.Random, depth: int = 0, quantify: bool = True, min_atoms: int = 0) -> str:
    """A random pattern drawn from the supported subset.

    A quantified group only holds unquantified, non-empty alternatives; nesting
    quantifiers makes the ``re`` oracle backtrack exponentially.
    """
    def atom():
        roll = rng.random()
        if roll < 0.3:
            return rng.choice("abcXYZ019 -_:"), True
        if roll < 0.4:
            return "\\" + rng.choice(".*+?()[]{}|\\^$"), True
        if roll < 0.55:
            lo = rng.choice("a0A")
            hi = chr(ord(lo) + rng.randint(0, 9))
            neg = "^" if rng.random() < 0.2 else ""
            return f"[{neg}{lo}-{hi}{rng.choice(['', '_', '.', '-'])}]", True
        if roll < 0.6:
            return ".", True
        if roll < 0.7:
            return "\\" + rng.choice("dwsDWS"), True
        if roll < 0.85 and depth < 3:
            group_quantified = quantify and rng.random() < 0.5
            inner = "|".join(
                random_pattern(rng, depth + 1, quantify=not group_quantified, min_atoms=int(group_quantified))
                for _ in range(rng.randint(1, 3))
            )
            return rng.choice(["(", "(?:"]) + inner + ")", group_quantified
        return rng.choice("mnop"), True

    def quant():
        if not quantify or rng.random() < 0.55:
            return ""
        m = rng.randint(0, 4)
        return rng.choice(["?", "*", "+", f"{{{m}}}", f"{{{m},{m + rng.randint(0, 4)}}}", f"{{{m},}}"])

    parts = []
    for _ in range(rng.randint(min_atoms, 5)):
        text, may_quantify = atom()
        parts.append(text + (quant() if may_quantify else ""))
    return "".join(parts)


def test_generate_examples():
    rng = random.Random(0)
    assert generate_matching("A{3}", rng) == "AAA"
    value = generate_matching("31[0-9]{4}", rng)
    assert len(value) == 6 and value.startswith("31") and value[2:].isdigit()
    assert re.fullmatch("[0-9]{16}", generate_matching("[0-9]{16}", rng))


def test_generation_is_deterministic_per_seed():
    pattern = "4[0-9]{15}|5[1-5][0-9]{14}"
    a = [generate_matching(pattern, random.Random(9)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_soundness_1000_random_pattern_seed_pairs():
    rng = random.Random(2024)
    for _ in range(1000):
        pattern = random_pattern(rng)
        seed = rng.getrandbits(64)
        out = generate_matching(pattern, random.Random(seed))
        assert re.fullmatch(pattern, out), (pattern, out)
        assert all(" " <= c <= "~" for c in out)


def test_unbounded_quantifiers_are_capped():
    rng = random.Random(1)
    lengths = {len(generate_matching("x*", rng)) for _ in range(500)}
    assert max(lengths) == UNBOUNDED_CAP and min(lengths) == 0
    assert max(len(generate_matching("x+", rng)) for _ in range(500)) == UNBOUNDED_CAP + 1


def test_negated_class_stays_printable():
    rng = random.Random(3)
    for _ in range(200):
        c = generate_matching("[^0-9a-zA-Z]", rng)
        assert " " <= c <= "~" and not c.isalnum()


def test_anchors_at_the_ends_are_accepted():
    assert generate_matching("^ab$", random.Random(0)) == "ab"


@pytest.mark.parametrize(
    "pattern",
    [r"(a)\1", r"a(?=b)", r"(?P<x>a)", r"a*?", r"\bword", "a^b", r"\n", r"(?i)abc", "a{x}"],
)
def test_unsupported_features(pattern):
    with pytest.raises(UnsupportedRegexFeature):
        compile_pattern(pattern)


@pytest.mark.parametrize("pattern", ["(ab", "ab)", "[ab", "*a", "a{3,1}", "[z-a]"])
def test_malformed_patterns(pattern):
    with pytest.raises(RegexError):
        compile_pattern(pattern)


def test_load_template_example():
    t = load_template(BALANCE_OK)
    assert t.name == "balance-ok"
    assert t.mti == "0200"
    assert t.fields == {3: "310000", 41: "TERM0001"}
    assert t.randomize == (2, 11)
    assert t.expected == {39: "00"}
    assert load_template(t.dumps()) == t


@pytest.mark.parametrize(
    "mutate, error",
    [
        (lambda d: d.update(expected={}), SchemaError),
        (lambda d: d.update(mti="02X0"), InvalidTemplateMti),
        (lambda d: d.update(extra=1), SchemaError),
        (lambda d: d.pop("name"), SchemaError),
        (lambda d: d.update(fields={"1": "x"}), UnknownFieldNumber),
        (lambda d: d.update(fields={"abc": "x"}), UnknownFieldNumber),
        (lambda d: d.update(randomize=[129]), UnknownFieldNumber),
        (lambda d: d.update(randomize=[2, 2]), SchemaError),
        (lambda d: d.update(fields={"41": 7}), SchemaError),
        (lambda d: d.update(patterns={"2": r"(a)\1"}), UnsupportedRegexFeature),
    ],
)
def test_load_template_rejects(mutate, error):
    doc = json.loads(BALANCE_OK)
    mutate(doc)
    with pytest.raises(error):
        load_template(json.dumps(doc))


def test_load_template_rejects_bad_json():
    with pytest.raises(SchemaError):
        load_template("{not json")


def test_load_field_config_examples():
    cfg = load_field_config(CONFIG)
    assert cfg.patterns == {2: "4[0-9]{15}", 3: "31[0-9]{4}", 11: "[0-9]{6}"}
    assert load_field_config("{}").patterns == {}
    with pytest.raises(UnsupportedRegexFeature):
        load_field_config(r'{"2": "(4)\\1"}')
    with pytest.raises(SchemaError):
        load_field_config("[]")


def test_default_field_config_patterns_are_valid():
    cfg = default_field_config()
    assert cfg.patterns[3] == "31[0-9]{4}"


def test_instantiate_example():
    t = load_template(BALANCE_OK)
    cfg = load_field_config(CONFIG)
    msg = instantiate(t, cfg, seed=7)
    assert msg.mti == "0200"
    assert msg.get(3) == "310000"
    assert msg.get(41) == "TERM0001"
    assert re.fullmatch(cfg.patterns[2], msg.get(2))
    assert re.fullmatch(cfg.patterns[11], msg.get(11))
    assert instantiate(t, cfg, seed=7) == msg


def test_instantiate_identity_without_randomize():
    doc = json.loads(BALANCE_OK)
    doc["randomize"] = []
    t = load_template(json.dumps(doc))
    assert instantiate(t, FieldConfig(), seed=1) == IsoMsg("0200", t.fields)


def test_instantiate_missing_pattern():
    doc = json.loads(BALANCE_OK)
    doc["randomize"] = [55]
    with pytest.raises(MissingPattern) as exc:
        instantiate(load_template(json.dumps(doc)), load_field_config(CONFIG), seed=1)
    assert exc.value.field == 55


def test_template_patterns_override_config():
    doc = json.loads(BALANCE_OK)
    doc["patterns"] = {"11": "9{6}"}
    msg = instantiate(load_template(json.dumps(doc)), load_field_config(CONFIG), seed=3)
    assert msg.get(11) == "999999"


def test_reproducibility_across_seeds():
    t = load_template(BALANCE_OK)
    cfg = load_field_config(CONFIG)
    msgs = [instantiate(t, cfg, seed) for seed in range(100)]
    assert len(set(msgs)) >= 99
    assert [instantiate(t, cfg, seed) for seed in range(100)] == msgs
    for m in msgs:
        assert (m.get(3), m.get(41)) == ("310000", "TERM0001")


def test_bundled_suite_loads(suite_dir):
    suite = load_suite(suite_dir)
    assert len(suite) >= 2
    names = [p.name for p, _ in suite]
    assert names == sorted(names)
