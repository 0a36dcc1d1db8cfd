"""Static PTX features: per-kernel instruction, data-type and memory-space mix.

The parser is line/token based rather than a full PTX grammar.  It tracks
block braces to find ``.entry`` bodies, splits bodies into ``;``-terminated
statements, drops directives, labels and guard predicates, and tallies the
dotted suffixes of each opcode.

Canonical category lists
------------------------
PTX does not publish a fixed 101/17/8 taxonomy, so the lists below are a
reconstruction from the PTX ISA 7.x instruction set, fundamental types and
state spaces.  The final slot of every list is an ``other`` bucket.  Opcode
roots not listed land in ``other``.  For data types and memory spaces only
the members of ``DTYPE_OTHER`` / ``MEMSPACE_OTHER`` land in ``other``; any
remaining suffix is a modifier (``.rn``, ``.v4``, ``.sync`` ...) and is
ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from dso.errors import MalformedPtx

OTHER = "other"

INSTRUCTIONS: tuple[str, ...] = (
    # integer arithmetic
    "add", "sub", "mul", "mad", "mul24", "mad24", "sad", "div", "rem", "abs",
    "neg", "min", "max", "popc", "clz", "bfind", "fns", "brev", "bfe", "bfi",
    "dp4a", "dp2a", "addc", "subc", "madc",
    # floating point
    "testp", "copysign", "fma", "rcp", "sqrt", "rsqrt", "sin", "cos", "lg2",
    "ex2", "tanh",
    # comparison and selection
    "set", "setp", "selp", "slct",
    # logic and shift
    "and", "or", "xor", "not", "cnot", "lop3", "shf", "shl", "shr",
    # data movement and conversion
    "mov", "shfl", "prmt", "ld", "ldu", "st", "prefetch", "prefetchu",
    "isspacep", "cvta", "cvt", "cp",
    # texture and surface
    "tex", "tld4", "txq", "suld", "sust", "sured", "suq",
    # control flow
    "bra", "brx", "call", "ret", "exit",
    # synchronization and communication
    "bar", "barrier", "membar", "fence", "atom", "red", "vote", "match",
    "activemask", "redux", "mbarrier",
    # warp-level matrix
    "wmma", "mma", "ldmatrix", "movmatrix",
    # video
    "vadd", "vsub", "vabsdiff", "vmin", "vmax", "vshl", "vshr", "vmad", "vset",
    # miscellaneous
    "trap", "pmevent", "nanosleep",
    OTHER,
)

DTYPES: tuple[str, ...] = (
    ".b8", ".b16", ".b32", ".b64",
    ".u8", ".u16", ".u32", ".u64",
    ".s8", ".s16", ".s32", ".s64",
    ".f16", ".f16x2", ".f32", ".f64",
    OTHER,
)
DTYPE_OTHER = frozenset({
    ".bf16", ".bf16x2", ".tf32", ".b128", ".pred", ".e4m3", ".e5m2",
    ".e4m3x2", ".e5m2x2", ".s4", ".u4", ".b1",
})

MEMSPACES: tuple[str, ...] = (
    ".global", ".shared", ".local", ".const", ".param", ".reg", ".tex", OTHER,
)
MEMSPACE_OTHER = frozenset({".sreg", ".surf", ".texref", ".surfref", ".samplerref"})

assert len(INSTRUCTIONS) == 101 and len(DTYPES) == 17 and len(MEMSPACES) == 8

_INSTR_INDEX = {name: i for i, name in enumerate(INSTRUCTIONS)}
_DTYPE_INDEX = {name: i for i, name in enumerate(DTYPES)}
_MEMSPACE_INDEX = {name: i for i, name in enumerate(MEMSPACES)}

_LABEL = re.compile(r"^([A-Za-z_$%][\w$]*)\s*:(?!:)")
_PREDICATE = re.compile(r"^@!?%?[\w$]+\s*")
_ENTRY = re.compile(r"\.entry\s+([\w$]+)")
_BLOCK_COMMENT = re.compile(r"/\*.*?\*/", re.DOTALL)


@dataclass
class KernelInstructionCounts:
    kernel_name: str
    instr_counts: dict[str, int] = field(default_factory=dict)
    dtype_counts: dict[str, int] = field(default_factory=dict)
    memspace_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total_instructions(self) -> int:
        return sum(self.instr_counts.values())

    def add_instruction(self, opcode: str) -> None:
        parts = opcode.split(".")
        root = parts[0] if parts[0] in _INSTR_INDEX else OTHER
        self.instr_counts[root] = self.instr_counts.get(root, 0) + 1
        for part in parts[1:]:
            suffix = "." + part.split("::", 1)[0]
            if suffix in _DTYPE_INDEX:
                key = suffix
                target = self.dtype_counts
            elif suffix in DTYPE_OTHER:
                key = OTHER
                target = self.dtype_counts
            elif suffix in _MEMSPACE_INDEX:
                key = suffix
                target = self.memspace_counts
            elif suffix in MEMSPACE_OTHER:
                key = OTHER
                target = self.memspace_counts
            else:
                continue
            target[key] = target.get(key, 0) + 1


@dataclass(frozen=True)
class PtxFeatureVector:
    instr: np.ndarray
    dtype: np.ndarray
    memspace: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.instr, self.dtype, self.memspace])

    def to_dict(self, kernel: str | None = None) -> dict:
        out = {} if kernel is None else {"kernel": kernel}
        out.update(
            instr=self.instr.tolist(),
            dtype=self.dtype.tolist(),
            memspace=self.memspace.tolist(),
        )
        return out


def _strip_comments(text: str) -> str:
    # keep newlines inside block comments so line numbers stay correct
    text = _BLOCK_COMMENT.sub(lambda m: "\n" * m.group(0).count("\n"), text)
    return "\n".join(line.split("//", 1)[0] for line in text.splitlines())


def _instruction_opcode(statement: str) -> str | None:
    stmt = statement.strip()
    while True:
        m = _LABEL.match(stmt)
        if not m:
            break
        stmt = stmt[m.end():].lstrip()
    stmt = _PREDICATE.sub("", stmt, count=1)
    if not stmt or stmt.startswith("."):
        return None
    return stmt.split(None, 1)[0]


def parse_ptx(source_text: str) -> list[KernelInstructionCounts]:
    """Count instructions per ``.entry`` kernel, in source order.

    Raises MalformedPtx on an unmatched ``}`` or a body still open at EOF.
    """
    kernels: list[KernelInstructionCounts] = []
    current: KernelInstructionCounts | None = None
    depth = 0
    operand_depth = 0
    pending = ""
    open_line = 0

    for lineno, line in enumerate(_strip_comments(source_text).splitlines(), start=1):
        for tok in re.split(r"([{};])", line):
            if tok == "{":
                if depth > 0 and (operand_depth or _instruction_opcode(pending)):
                    operand_depth += 1
                    pending += tok
                    continue
                if depth == 0:
                    m = _ENTRY.search(pending)
                    if m:
                        current = KernelInstructionCounts(m.group(1))
                        kernels.append(current)
                    open_line = lineno
                pending = ""
                depth += 1
            elif tok == "}":
                if operand_depth:
                    operand_depth -= 1
                    pending += tok
                    continue
                if depth == 0:
                    raise MalformedPtx("unmatched '}'", lineno)
                if current is not None and _instruction_opcode(pending):
                    raise MalformedPtx("statement missing ';' before '}'", lineno)
                pending = ""
                depth -= 1
                if depth == 0:
                    current = None
            elif tok == ";":
                if current is not None:
                    opcode = _instruction_opcode(pending)
                    if opcode is not None:
                        current.add_instruction(opcode)
                pending = ""
            else:
                pending += tok + ("" if depth else " ")
        if depth:
            pending += " "

    if depth:
        raise MalformedPtx("unterminated block opened here", open_line)
    return kernels


def _normalize(counts: dict[str, int], index: dict[str, int]) -> np.ndarray:
    vec = np.zeros(len(index))
    for key, n in counts.items():
        vec[index[key]] += n
    total = vec.sum()
    return vec / total if total > 0 else vec


def featurize(counts: KernelInstructionCounts) -> PtxFeatureVector:
    """Normalize each category by its own total, in canonical order."""
    return PtxFeatureVector(
        instr=_normalize(counts.instr_counts, _INSTR_INDEX),
        dtype=_normalize(counts.dtype_counts, _DTYPE_INDEX),
        memspace=_normalize(counts.memspace_counts, _MEMSPACE_INDEX),
    )


def zero_features() -> PtxFeatureVector:
    return PtxFeatureVector(np.zeros(101), np.zeros(17), np.zeros(8))
