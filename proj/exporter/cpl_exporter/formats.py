# SPDX-License-Identifier: Apache-2.0
"""Little-endian bank (CPLF), lexicon (CPLL) and manifest sidecar files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BANK_VERSION = 1
LEXICON_VERSION = 1
CATEGORIES = ("color", "material", "size", "shape", "texture", "other")
SPLITS = ("train", "test")
NORM_TOLERANCE = 1e-5


class FormatError(ValueError):
    pass


class DimMismatch(ValueError):
    pass


@dataclass
class Record:
    record_id: str
    class_id: int
    split: str
    final: np.ndarray  # float32, d_v
    levels: list[np.ndarray] = field(default_factory=list)  # float32 per level


@dataclass
class Manifest:
    dataset_name: str
    class_names: list[str]
    shots_per_class: int
    feature_dim: int
    text_dim: int
    channel_dims: list[int]
    bank: str = ""
    lexicon: str = ""
    encoder_kind: str = "remote"
    encoder_seed: int = 0
    encoder_endpoint: str = ""
    truncation_policy: str = "none"

    @property
    def level_count(self) -> int:
        return len(self.channel_dims)

    def to_json(self) -> str:
        # same key order as the engine writes
        j = {
            "bank": self.bank,
            "channel_dims": list(self.channel_dims),
            "class_names": list(self.class_names),
            "dataset_name": self.dataset_name,
            "encoder": {"endpoint": self.encoder_endpoint, "kind": self.encoder_kind, "seed": self.encoder_seed},
            "feature_dim": self.feature_dim,
            "level_count": self.level_count,
            "lexicon": self.lexicon,
            "shots_per_class": self.shots_per_class,
            "text_dim": self.text_dim,
            "truncation_policy": self.truncation_policy,
        }
        return json.dumps(j, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "Manifest":
        j = json.loads(text)
        enc = j.get("encoder", {})
        m = Manifest(
            dataset_name=j["dataset_name"],
            class_names=list(j["class_names"]),
            shots_per_class=int(j["shots_per_class"]),
            feature_dim=int(j["feature_dim"]),
            text_dim=int(j["text_dim"]),
            channel_dims=[int(c) for c in j["channel_dims"]],
            bank=j.get("bank", ""),
            lexicon=j.get("lexicon", ""),
            encoder_kind=enc.get("kind", "toy"),
            encoder_seed=int(enc.get("seed", 0)),
            encoder_endpoint=enc.get("endpoint", ""),
            truncation_policy=j.get("truncation_policy", "none"),
        )
        if int(j["level_count"]) != m.level_count:
            raise DimMismatch("level_count disagrees with channel_dims")
        return m


def sidecar_path(bank_path: Path) -> Path:
    return Path(str(bank_path) + ".json")


def check_record(r: Record, m: Manifest) -> None:
    who = f"record '{r.record_id}'"
    if r.final.shape != (m.feature_dim,):
        raise DimMismatch(f"{who} has {r.final.shape[0]} feature values, expected {m.feature_dim}")
    if len(r.levels) != m.level_count:
        raise DimMismatch(f"{who} has {len(r.levels)} levels, expected {m.level_count}")
    for q, (lv, c) in enumerate(zip(r.levels, m.channel_dims)):
        if lv.shape != (c,):
            raise DimMismatch(f"{who} level {q} has {lv.shape[0]} channels, expected {c}")
        if not np.all(np.isfinite(lv)):
            raise FormatError(f"{who} has a non-finite level summary")
    if not np.all(np.isfinite(r.final)):
        raise FormatError(f"{who} has a non-finite feature")
    if not 0 <= r.class_id < len(m.class_names):
        raise FormatError(f"{who} has class id {r.class_id} out of range")
    if r.split not in SPLITS:
        raise FormatError(f"{who} has split '{r.split}'")
    n = float(np.sqrt(np.sum(r.final.astype(np.float64) ** 2)))
    if abs(n - 1.0) > NORM_TOLERANCE:
        raise FormatError(f"{who} is not unit norm ({n})")


def _short_string(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise FormatError("string longer than 65535 bytes")
    return struct.pack("<H", len(b)) + b


def encode_bank(records: list[Record], m: Manifest) -> bytes:
    out = bytearray(b"CPLF")
    out += struct.pack("<IIII", BANK_VERSION, m.feature_dim, m.text_dim, m.level_count)
    out += struct.pack(f"<{m.level_count}I", *m.channel_dims)
    out += struct.pack("<Q", len(records))
    for r in records:
        check_record(r, m)
        out += _short_string(r.record_id)
        out += struct.pack("<IB", r.class_id, SPLITS.index(r.split))
        out += r.final.astype("<f4").tobytes()
        for lv in r.levels:
            out += lv.astype("<f4").tobytes()
    return bytes(out)


def decode_bank(data: bytes, m: Manifest) -> list[Record]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("feature bank is truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != b"CPLF":
        raise FormatError("not a feature bank")
    version, d_v, d_t, levels = struct.unpack("<IIII", take(16))
    if version != BANK_VERSION:
        raise FormatError(f"feature bank version {version}")
    channels = list(struct.unpack(f"<{levels}I", take(4 * levels)))
    if (d_v, d_t, channels) != (m.feature_dim, m.text_dim, list(m.channel_dims)):
        raise DimMismatch("feature bank header dims disagree with the manifest")
    (count,) = struct.unpack("<Q", take(8))
    records = []
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        rid = bytes(take(n)).decode("utf-8")
        class_id, tag = struct.unpack("<IB", take(5))
        if tag > 1:
            raise FormatError(f"record '{rid}' has split tag {tag}")
        final = np.frombuffer(take(4 * d_v), dtype="<f4").copy()
        lv = [np.frombuffer(take(4 * c), dtype="<f4").copy() for c in channels]
        r = Record(rid, class_id, SPLITS[tag], final, lv)
        check_record(r, m)
        records.append(r)
    if pos != len(view):
        raise FormatError("feature bank has trailing bytes")
    return records


def write_bank(records: list[Record], m: Manifest, path: Path) -> Path:
    """Writes the bank and its sidecar manifest; returns the sidecar path."""
    path = Path(path)
    m.bank = path.name
    data = encode_bank(records, m)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    side = sidecar_path(path)
    side.write_text(m.to_json(), encoding="utf-8")
    return side


def read_bank(path: Path) -> tuple[Manifest, list[Record]]:
    path = Path(path)
    side = path if path.suffix == ".json" else sidecar_path(path)
    m = Manifest.from_json(side.read_text(encoding="utf-8"))
    return m, decode_bank((side.parent / m.bank).read_bytes(), m)


def encode_lexicon(words: list[tuple[str, str]], rows: np.ndarray) -> bytes:
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[0] != len(words) or not words:
        raise DimMismatch("lexicon needs one embedding row per word")
    seen = set()
    out = bytearray(b"CPLL")
    out += struct.pack("<IIQ", LEXICON_VERSION, rows.shape[1], len(words))
    for (word, category), row in zip(words, rows):
        if word in seen:
            raise FormatError(f"duplicate concept word '{word}'")
        seen.add(word)
        n = float(np.sqrt(np.sum(row.astype(np.float64) ** 2)))
        if abs(n - 1.0) > NORM_TOLERANCE:
            raise FormatError(f"row for '{word}' is not unit norm")
        out += _short_string(word) + struct.pack("<B", CATEGORIES.index(category))
    out += rows.astype("<f4").tobytes()
    return bytes(out)


def write_lexicon(words: list[tuple[str, str]], rows: np.ndarray, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_lexicon(words, rows))


def read_lexicon(path: Path) -> tuple[list[tuple[str, str]], np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != b"CPLL":
        raise FormatError("not a lexicon")
    version, d_t, count = struct.unpack_from("<IIQ", data, 4)
    if version != LEXICON_VERSION:
        raise FormatError(f"lexicon version {version}")
    pos = 20
    words = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        word = data[pos + 2 : pos + 2 + n].decode("utf-8")
        words.append((word, CATEGORIES[data[pos + 2 + n]]))
        pos += 3 + n
    rows = np.frombuffer(data, dtype="<f4", count=count * d_t, offset=pos).reshape(count, d_t).copy()
    if pos + 4 * count * d_t != len(data):
        raise FormatError("lexicon has trailing bytes")
    return words, rows
