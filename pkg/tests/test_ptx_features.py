import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DATA
from dso.errors import MalformedPtx
from dso.ptx_features import (
    DTYPES,
    INSTRUCTIONS,
    MEMSPACES,
    KernelInstructionCounts,
    featurize,
    parse_ptx,
    zero_features,
)


def wrap(body, name="k"):
    return f".visible .entry {name}()\n{{\n{body}\n}}\n"


def test_category_sizes_and_other_slot():
    assert (len(INSTRUCTIONS), len(DTYPES), len(MEMSPACES)) == (101, 17, 8)
    assert INSTRUCTIONS[-1] == DTYPES[-1] == MEMSPACES[-1] == "other"
    for names in (INSTRUCTIONS, DTYPES, MEMSPACES):
        assert len(set(names)) == len(names)


def test_two_instruction_snippet():
    (k,) = parse_ptx(wrap("add.s32 %r1,%r2,%r3; bra L1;"))
    assert k.instr_counts == {"add": 1, "bra": 1}
    assert k.dtype_counts == {".s32": 1}
    assert k.memspace_counts == {}
    assert k.total_instructions == 2


def test_empty_body():
    (k,) = parse_ptx(wrap(""))
    assert k.total_instructions == 0
    assert not (k.instr_counts or k.dtype_counts or k.memspace_counts)


def test_shared_and_global_f64():
    body = "ld.shared.f64 %fd1, [%rd1];\nld.shared.f64 %fd2, [%rd2];\nst.global.f64 [%rd3], %fd1;"
    (k,) = parse_ptx(wrap(body))
    assert k.memspace_counts == {".shared": 2, ".global": 1}
    assert k.dtype_counts == {".f64": 3}


def test_multi_suffix_counts_each_type():
    (k,) = parse_ptx(wrap("cvt.rn.f32.s32 %f1, %r1;"))
    assert k.dtype_counts == {".f32": 1, ".s32": 1}


def test_opcode_root_is_text_before_first_dot():
    (k,) = parse_ptx(wrap("fma.rn.f32 %f1, %f2, %f3, %f4;"))
    assert k.instr_counts == {"fma": 1}


def test_labels_and_predicates_are_not_counted():
    (k,) = parse_ptx(wrap("LOOP: @%p1 bra LOOP;\n@!%p2 ret;\nDONE:\nexit;"))
    assert k.instr_counts == {"bra": 1, "ret": 1, "exit": 1}


def test_scope_operator_is_not_a_label():
    (k,) = parse_ptx(wrap("cvta.to.global.u64 %rd1, %rd2;"))
    assert k.memspace_counts == {".global": 1}


@pytest.mark.parametrize("name", sorted(json.loads((DATA / "expected_counts.json").read_text())))
def test_hand_counted_fixture(name):
    expected = json.loads((DATA / "expected_counts.json").read_text())[name]
    got = parse_ptx((DATA / name).read_text())
    assert [k.kernel_name for k in got] == [e["kernel"] for e in expected]
    for k, e in zip(got, expected):
        assert k.instr_counts == e["instr"]
        assert k.dtype_counts == e["dtype"]
        assert k.memspace_counts == e["memspace"]
        assert k.total_instructions == sum(e["instr"].values())


def test_kernel_count_matches_entry_directives():
    text = (DATA / "multi_kernel.ptx").read_text()
    assert len(parse_ptx(text)) == text.count(".entry")


@pytest.mark.parametrize("text, line", [
    (".entry k()\n{\nret;\n", 2),
    (".entry k()\n{\nret;\n}\n}\n", 5),
    (".entry k()\n{\nret\n}\n", 4),
])
def test_malformed(text, line):
    with pytest.raises(MalformedPtx) as info:
        parse_ptx(text)
    assert info.value.line == line


def test_crlf_and_func_body_ignored():
    text = ".func f()\r\n{\r\nret;\r\n}\r\n.entry k()\r\n{\r\nexit;\r\n}\r\n"
    (k,) = parse_ptx(text)
    assert k.instr_counts == {"exit": 1}


def test_featurize_halves():
    (k,) = parse_ptx(wrap("add.s32 %r1,%r2,%r3; bra L1;"))
    vec = featurize(k)
    assert vec.instr[INSTRUCTIONS.index("add")] == 0.5
    assert vec.instr[INSTRUCTIONS.index("bra")] == 0.5
    assert vec.instr.sum() == 1.0
    assert vec.memspace.sum() == 0.0


def test_featurize_dtype_fractions():
    k = KernelInstructionCounts("k", {"add": 4}, {".f32": 3, ".s32": 1}, {})
    vec = featurize(k)
    assert vec.dtype[DTYPES.index(".f32")] == 0.75
    assert vec.dtype[DTYPES.index(".s32")] == 0.25


def test_zero_counts_give_zero_vector():
    vec = featurize(KernelInstructionCounts("k"))
    assert not vec.as_vector().any()
    assert np.array_equal(vec.as_vector(), zero_features().as_vector())


opcodes = st.sampled_from([
    "add.s32", "ld.global.f32", "st.shared.v4.b32", "mov.u64", "cvt.rn.f16.f64",
    "bar.sync", "foo.bar", "atom.global.add.u32", "ld.local.bf16", "tex.2d.v4.f32.s32",
])


@given(st.lists(opcodes, max_size=40))
def test_category_sums_are_zero_or_one(ops):
    (k,) = parse_ptx(wrap("\n".join(f"{op} %r1, %r2;" for op in ops)))
    vec = featurize(k)
    for part in (vec.instr, vec.dtype, vec.memspace):
        assert np.all((part >= 0) & (part <= 1))
        assert abs(part.sum() - (1.0 if part.any() else 0.0)) <= 1e-12
    assert k.total_instructions == len(ops)


@given(st.lists(opcodes, min_size=1, max_size=40))
def test_counts_round_trip_through_features(ops):
    (k,) = parse_ptx(wrap("\n".join(f"{op} %r1, %r2;" for op in ops)))
    vec = featurize(k)
    for part, names, counts in ((vec.instr, INSTRUCTIONS, k.instr_counts),
                                (vec.dtype, DTYPES, k.dtype_counts),
                                (vec.memspace, MEMSPACES, k.memspace_counts)):
        total = sum(counts.values())
        for i, name in enumerate(names):
            assert round(part[i] * total) == counts.get(name, 0)


@given(st.text(alphabet="abcdefgh.xyz0123", min_size=1, max_size=12).filter(lambda s: s[0].isalpha()))
def test_unknown_roots_go_to_other(root):
    (k,) = parse_ptx(wrap(f"{root} %r1;"))
    expected = root.split(".")[0] if root.split(".")[0] in INSTRUCTIONS else "other"
    assert k.instr_counts == {expected: 1}
