"""Canonical app IR: parsing, serialization and n-gram feature extraction.

The IR is a line-oriented stand-in for disassembler output::

    APP <app_id>
    CLASS <dotted.class.path>
    METHOD <name> <descriptor>
    I <opcode>;<type_sigs>;<string_literal>;<call_sig>
    END

Library documents use ``LIBRARY <name> <prefix,prefix,...>`` as header and may
concatenate the methods of several library versions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator
from urllib.parse import unquote_to_bytes

# characters that must never appear raw inside an instruction field
_ESCAPES = str.maketrans({"%": "%25", ";": "%3B", "|": "%7C", "\n": "%0A", "\r": "%0D"})
_BAD_ESCAPE = re.compile(r"%(?![0-9A-Fa-f]{2})")


class IRParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class InstructionRecord:
    opcode: str
    type_sigs: str = ""
    string_literal: str = ""
    call_sig: str = ""

    def __post_init__(self) -> None:
        if not self.opcode or ";" in self.opcode or "\n" in self.opcode:
            raise ValueError(f"invalid opcode {self.opcode!r}")


@dataclass(frozen=True)
class FeatureTuple:
    """Location of one n-gram: (function offset, bytecode offset)."""

    function_offset: int
    bytecode_offset: int


@dataclass(frozen=True)
class NGramFeature:
    content: bytes
    location: FeatureTuple


@dataclass
class MethodIR:
    class_path: str
    method_name: str
    descriptor: str
    instructions: list[InstructionRecord]
    function_offset: int


@dataclass
class AppIR:
    app_id: str
    methods: list[MethodIR] = field(default_factory=list)
    # set only for LIBRARY documents
    is_library: bool = False
    lib_prefixes: tuple[str, ...] = ()

    @property
    def declared_namespaces(self) -> set[str]:
        """Every dot-boundary prefix of every class path in the app."""
        out: set[str] = set()
        for path in {m.class_path for m in self.methods}:
            parts = path.split(".")
            for i in range(1, len(parts) + 1):
                out.add(".".join(parts[:i]))
        return out


def escape_field(value: str) -> str:
    return value.translate(_ESCAPES)


def unescape_field(value: str) -> str:
    if _BAD_ESCAPE.search(value):
        raise ValueError(f"bad percent escape in {value!r}")
    return unquote_to_bytes(value).decode("utf-8")


def _parse_instruction(body: str, line_no: int) -> InstructionRecord:
    parts = body.split(";")
    if len(parts) != 4:
        raise IRParseError(line_no, f"instruction needs 4 ';'-separated fields, got {len(parts)}")
    try:
        opcode, type_sigs, literal, call_sig = (unescape_field(p) for p in parts)
        return InstructionRecord(opcode, type_sigs, literal, call_sig)
    except ValueError as exc:
        raise IRParseError(line_no, str(exc)) from None


def parse_app_ir(text: str) -> AppIR:
    """Parse an APP or LIBRARY document. Methods keep file order."""
    app: AppIR | None = None
    current_class: str | None = None
    method: MethodIR | None = None
    method_line = 0
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        tag, _, rest = line.partition(" ")
        if app is None:
            if tag == "APP" and rest.strip():
                app = AppIR(app_id=rest.strip())
            elif tag == "LIBRARY":
                fields = rest.split()
                if len(fields) != 2:
                    raise IRParseError(line_no, "LIBRARY header needs a name and a prefix list")
                prefixes = tuple(p for p in fields[1].split(",") if p)
                if not prefixes:
                    raise IRParseError(line_no, "LIBRARY header has an empty prefix list")
                app = AppIR(app_id=fields[0], is_library=True, lib_prefixes=prefixes)
            else:
                raise IRParseError(line_no, "expected 'APP <id>' or 'LIBRARY <name> <prefixes>' header")
            continue
        if tag == "CLASS":
            if method is not None:
                raise IRParseError(line_no, "CLASS inside an open METHOD block")
            if not rest.strip():
                raise IRParseError(line_no, "CLASS without a path")
            current_class = rest.strip()
        elif tag == "METHOD":
            if method is not None:
                raise IRParseError(line_no, "METHOD inside an open METHOD block")
            if current_class is None:
                raise IRParseError(line_no, "METHOD before any CLASS")
            name, _, descriptor = rest.partition(" ")
            if not name or not descriptor:
                raise IRParseError(line_no, "METHOD needs a name and a descriptor")
            method = MethodIR(current_class, name, descriptor, [], len(app.methods))
            method_line = line_no
        elif tag == "I":
            if method is None:
                raise IRParseError(line_no, "instruction outside a METHOD block")
            method.instructions.append(_parse_instruction(rest, line_no))
        elif tag == "END":
            if method is None:
                raise IRParseError(line_no, "END without METHOD")
            app.methods.append(method)
            method = None
        else:
            raise IRParseError(line_no, f"unknown line tag {tag!r}")
    if app is None:
        raise IRParseError(1, "empty document")
    if method is not None:
        raise IRParseError(method_line, "METHOD block is never closed with END")
    return app


def serialize_app_ir(app: AppIR) -> str:
    """Normalized form: one CLASS line per run of same-class methods, LF endings."""
    if app.is_library:
        lines = [f"LIBRARY {app.app_id} {','.join(app.lib_prefixes)}"]
    else:
        lines = [f"APP {app.app_id}"]
    current = None
    for m in app.methods:
        if m.class_path != current:
            lines.append(f"CLASS {m.class_path}")
            current = m.class_path
        lines.append(f"METHOD {m.method_name} {m.descriptor}")
        for rec in m.instructions:
            lines.append("I " + _encode_record(rec))
        lines.append("END")
    return "\n".join(lines) + "\n"


def _encode_record(rec: InstructionRecord) -> str:
    return ";".join(
        escape_field(f) for f in (rec.opcode, rec.type_sigs, rec.string_literal, rec.call_sig)
    )


def instruction_token(rec: InstructionRecord) -> bytes:
    return _encode_record(rec).encode("utf-8")


def method_ngrams(method: MethodIR, n: int) -> Iterator[NGramFeature]:
    tokens = [instruction_token(r) for r in method.instructions]
    for j in range(len(tokens) - n + 1):
        yield NGramFeature(b"|".join(tokens[j : j + n]), FeatureTuple(method.function_offset, j))


def extract_ngram_features(app: AppIR, n: int) -> list[NGramFeature]:
    if n < 1:
        raise ValueError("gram size must be >= 1")
    out: list[NGramFeature] = []
    for method in sorted(app.methods, key=lambda m: m.function_offset):
        out.extend(method_ngrams(method, n))
    return out


def prefix_matches(class_path: str, prefix: str) -> bool:
    return class_path == prefix or class_path.startswith(prefix + ".")


def namespaces_present(app: AppIR, lib_prefixes: Iterable[str]) -> set[str]:
    declared = app.declared_namespaces
    return {p for p in lib_prefixes if p in declared}
