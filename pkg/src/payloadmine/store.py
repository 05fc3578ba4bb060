"""On-disk formats for fingerprints, candidates, library profiles and signatures.

All binary records are little-endian. Bitmaps are raw: bit i lives in byte
i // 8 at position i % 8, LSB first. Paths ending in ``.gz`` are transparently
gzip-compressed, which keeps mostly-zero 1 MB bitmaps small on disk.
"""
from __future__ import annotations

import gzip
import io
import struct
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .corpus_ir import FeatureTuple
from .fingerprint import BitFingerprint, FeatureBitMap
from .libstrip import LibraryProfile
from .payload_extract import CandidatePayload
from .scale import MinHashConfig, MinHashSignature

FP_MAGIC = b"FPV1"
CANDIDATE_MAGIC = b"CPV1"
LIB_MAGIC = b"LIB1"
SIG_MAGIC = b"MHS1"


class StoreFormatError(ValueError):
    pass


def _open(path: Path | str, mode: str) -> BinaryIO:
    path = Path(path)
    raw = open(path, mode + "b")
    if path.suffix != ".gz":
        return raw
    # fixed mtime and no embedded name keep compressed artifacts reproducible
    return _OwnedGzip(filename="", mode=mode + "b", compresslevel=1, fileobj=raw, mtime=0)  # type: ignore[return-value]


class _OwnedGzip(gzip.GzipFile):
    """GzipFile that also closes the file object it was handed."""

    def close(self) -> None:
        fileobj = self.fileobj
        try:
            super().close()
        finally:
            if fileobj is not None:
                fileobj.close()


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise StoreFormatError(f"truncated record: wanted {n} bytes, got {len(data)}")
    return data


def _u32(f: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(f, 4))[0]


def _text(f: BinaryIO) -> str:
    return _read_exact(f, _u32(f)).decode("utf-8")


def _put_text(buf: io.BytesIO, value: str) -> None:
    raw = value.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def encode_bitmap(fp: BitFingerprint) -> bytes:
    buf = np.zeros((fp.width + 7) // 8, dtype=np.uint8)
    idx = fp.indices
    np.bitwise_or.at(buf, idx >> 3, (np.int64(1) << (idx & 7)).astype(np.uint8))
    return buf.tobytes()


def decode_bitmap(raw: bytes, width: int) -> BitFingerprint:
    arr = np.frombuffer(raw, dtype=np.uint8)
    nz = np.flatnonzero(arr)
    bits = np.unpackbits(arr[nz][:, None], axis=1, bitorder="little").astype(bool)
    idx = (nz[:, None].astype(np.int64) * 8 + np.arange(8))[bits]
    if idx.size and idx[-1] >= width:
        raise StoreFormatError("bitmap has bits beyond the declared width")
    return BitFingerprint(idx, width, _trusted=True)


def _read_magic(f: BinaryIO, magic: bytes) -> bool:
    head = f.read(4)
    if not head:
        return False
    if head != magic:
        raise StoreFormatError(f"bad magic {head!r}, expected {magic!r}")
    return True


# app fingerprints ---------------------------------------------------------

def write_fingerprints(path: Path | str, records: Sequence[tuple[str, BitFingerprint]]) -> None:
    with _open(path, "w") as f:
        for app_id, fp in records:
            buf = io.BytesIO()
            buf.write(FP_MAGIC)
            buf.write(struct.pack("<I", fp.width))
            _put_text(buf, app_id)
            buf.write(encode_bitmap(fp))
            f.write(buf.getvalue())


def read_fingerprints(path: Path | str) -> list[tuple[str, BitFingerprint]]:
    out = []
    with _open(path, "r") as f:
        while _read_magic(f, FP_MAGIC):
            width = _u32(f)
            app_id = _text(f)
            out.append((app_id, decode_bitmap(_read_exact(f, (width + 7) // 8), width)))
    return out


# candidate payloads -------------------------------------------------------

def write_candidates(path: Path | str, candidates: Sequence[CandidatePayload]) -> None:
    with _open(path, "w") as f:
        for c in candidates:
            buf = io.BytesIO()
            buf.write(CANDIDATE_MAGIC)
            buf.write(struct.pack("<I", c.fingerprint.width))
            _put_text(buf, c.apps[0])
            _put_text(buf, c.apps[1])
            buf.write(encode_bitmap(c.fingerprint))
            f.write(buf.getvalue())


def read_candidates(path: Path | str) -> list[CandidatePayload]:
    out = []
    with _open(path, "r") as f:
        while _read_magic(f, CANDIDATE_MAGIC):
            width = _u32(f)
            a, b = _text(f), _text(f)
            fp = decode_bitmap(_read_exact(f, (width + 7) // 8), width)
            out.append(CandidatePayload.for_pair(a, b, fp))
    return out


# library profiles ---------------------------------------------------------

def write_library_profiles(path: Path | str, profiles: Sequence[LibraryProfile]) -> None:
    with _open(path, "w") as f:
        for p in profiles:
            buf = io.BytesIO()
            buf.write(LIB_MAGIC)
            buf.write(struct.pack("<I", p.fingerprint.width))
            _put_text(buf, p.lib_name)
            prefixes = sorted(p.namespace_prefixes)
            buf.write(struct.pack("<I", len(prefixes)))
            for prefix in prefixes:
                _put_text(buf, prefix)
            buf.write(encode_bitmap(p.fingerprint))
            f.write(buf.getvalue())


def read_library_profiles(path: Path | str) -> list[LibraryProfile]:
    out = []
    with _open(path, "r") as f:
        while _read_magic(f, LIB_MAGIC):
            width = _u32(f)
            name = _text(f)
            prefixes = frozenset(_text(f) for _ in range(_u32(f)))
            fp = decode_bitmap(_read_exact(f, (width + 7) // 8), width)
            out.append(LibraryProfile(name, prefixes, fp))
    return out


# minHash signatures -------------------------------------------------------

def write_signatures(
    path: Path | str, cfg: MinHashConfig, records: Sequence[tuple[str, MinHashSignature]]
) -> None:
    with _open(path, "w") as f:
        f.write(SIG_MAGIC)
        f.write(struct.pack("<IQ", cfg.k, cfg.seed))
        f.write(cfg.random_numbers().astype("<u4").tobytes())
        for ident, sig in records:
            if sig.values.size != cfg.k:
                raise StoreFormatError(f"signature for {ident} has length {sig.values.size}, expected {cfg.k}")
            buf = io.BytesIO()
            _put_text(buf, ident)
            buf.write(sig.values.astype("<u4").tobytes())
            f.write(buf.getvalue())


def read_signatures(path: Path | str) -> tuple[MinHashConfig, np.ndarray, list[tuple[str, MinHashSignature]]]:
    """Returns (config, persisted random numbers, records)."""
    with _open(path, "r") as f:
        if not _read_magic(f, SIG_MAGIC):
            raise StoreFormatError("empty signature store")
        k, seed = struct.unpack("<IQ", _read_exact(f, 12))
        randoms = np.frombuffer(_read_exact(f, 4 * k), dtype="<u4").astype(np.uint32)
        records = []
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise StoreFormatError("truncated signature record")
            ident = _read_exact(f, struct.unpack("<I", head)[0]).decode("utf-8")
            values = np.frombuffer(_read_exact(f, 4 * k), dtype="<u4").astype(np.uint32)
            records.append((ident, MinHashSignature(values, seed)))
    return MinHashConfig(k, seed), randoms, records


# feature bit-map sidecar --------------------------------------------------

def format_bitmap_sidecar(bitmap: FeatureBitMap) -> str:
    lines = []
    for bit in sorted(bitmap):
        tuples = ";".join(f"{t.function_offset},{t.bytecode_offset}" for t in bitmap[bit])
        lines.append(f"{bit}\t{tuples}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_bitmap_sidecar(text: str) -> FeatureBitMap:
    out: FeatureBitMap = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        try:
            bit, tuples = line.split("\t")
            out[int(bit)] = [
                FeatureTuple(int(i), int(j)) for i, j in (t.split(",") for t in tuples.split(";"))
            ]
        except ValueError:
            raise StoreFormatError(f"sidecar line {line_no}: malformed entry {line!r}") from None
    return out

