"""CIDDS-style NetFlow CSV parsing and dataset construction.

Source IPs, destination IPs and timestamps are read but never stored: they
carry no signal the classifier is allowed to use. Record order always equals
source-file order; nothing here shuffles.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError, PreconditionError

FLAG_ORDER = "UAPRSF"

REQUIRED_COLUMNS = ("Duration", "Proto", "Src Pt", "Dst Pt", "Packets", "Bytes", "Flags", "class")

BENIGN_LABELS = frozenset({"normal", "unknown"})

KNOWN_MALICIOUS_LABELS = frozenset(
    {"suspicious", "dos", "portScan", "pingScan", "bruteForce", "scan"}
)

_SUFFIX_FACTOR = {"K": 10**3, "M": 10**6, "G": 10**9}

FLOWSET_HEADER = "FLOWSET v1"


class BinaryLabel(enum.IntEnum):
    BENIGN = 0
    MALICIOUS = 1


@dataclass(frozen=True)
class RawFlowRecord:
    duration: float
    proto: str
    src_pt: float
    dst_pt: float
    packets: int
    bytes: int
    flags: tuple[int, int, int, int, int, int]
    label: str
    attack_type: str | None = None

    def __post_init__(self):
        if self.duration < 0 or self.packets < 0 or self.bytes < 0:
            raise ParseError(f"negative duration/packets/bytes in record: {self}")
        if len(self.flags) != 6:
            raise ParseError(f"flags must have 6 components, got {self.flags!r}")


@dataclass
class FlowDataset:
    """Ordered (record, label) pairs plus parse provenance and counters."""

    records: list[tuple[RawFlowRecord, BinaryLabel]]
    provenance: list[str] = field(default_factory=list)
    original_order: bool = True
    skipped_rows: int = 0
    unrecognized_labels: int = 0

    def __len__(self):
        return len(self.records)

    def label_counts(self) -> tuple[int, int]:
        """(benign, malicious) record counts."""
        mal = sum(1 for _, y in self.records if y == BinaryLabel.MALICIOUS)
        return len(self.records) - mal, mal


def parse_flags(text: str) -> tuple[int, ...]:
    """Decode a six-character flag string ('.' = unset) in U,A,P,R,S,F order."""
    if len(text) != 6:
        raise ParseError(f"flag string must have 6 characters, got {text!r}")
    bits = []
    for i, ch in enumerate(text):
        if ch == ".":
            bits.append(0)
        elif ch == FLAG_ORDER[i]:
            bits.append(1)
        else:
            raise ParseError(
                f"unexpected character {ch!r} at position {i} of flag string {text!r}"
                f" (expected '.' or {FLAG_ORDER[i]!r})"
            )
    return tuple(bits)


def flags_to_text(bits) -> str:
    """Inverse of parse_flags."""
    if len(bits) != 6:
        raise ParseError(f"flag vector must have 6 components, got {bits!r}")
    return "".join(FLAG_ORDER[i] if b else "." for i, b in enumerate(bits))


def map_label_binary(label: str) -> BinaryLabel:
    """normal/unknown are benign; everything else is treated as malicious."""
    if label in BENIGN_LABELS:
        return BinaryLabel.BENIGN
    return BinaryLabel.MALICIOUS


def parse_bytes_field(text: str) -> int:
    """Expand magnitude suffixes: '1.2 M' -> 1200000. Plain integers pass through."""
    s = text.strip()
    if not s:
        raise ParseError("empty Bytes cell")
    if s[-1].upper() in _SUFFIX_FACTOR:
        factor = _SUFFIX_FACTOR[s[-1].upper()]
        return int(round(float(s[:-1].strip()) * factor))
    value = float(s)
    if value != int(value):
        raise ParseError(f"non-integer Bytes cell {text!r}")
    return int(value)


def _parse_row(row: dict[str, str]) -> tuple[RawFlowRecord, BinaryLabel, bool]:
    duration = float(row["Duration"].strip())
    proto = row["Proto"].strip().upper()
    src_pt = float(row["Src Pt"].strip())
    dst_pt = float(row["Dst Pt"].strip())
    packets_raw = float(row["Packets"].strip())
    if packets_raw != int(packets_raw):
        raise ParseError(f"non-integer Packets cell {row['Packets']!r}")
    packets = int(packets_raw)
    nbytes = parse_bytes_field(row["Bytes"])
    flags = parse_flags(row["Flags"].strip())
    label = row["class"].strip()
    if not label:
        raise ParseError("empty class cell")
    attack_type = row.get("attackType")
    if attack_type is not None:
        attack_type = attack_type.strip() or None
    if src_pt < 0 or dst_pt < 0:
        raise ParseError(f"negative port in row: {row}")
    record = RawFlowRecord(
        duration=duration,
        proto=proto,
        src_pt=src_pt,
        dst_pt=dst_pt,
        packets=packets,
        bytes=nbytes,
        flags=flags,
        label=label,
        attack_type=attack_type,
    )
    unrecognized = label not in BENIGN_LABELS and label not in KNOWN_MALICIOUS_LABELS
    return record, map_label_binary(label), unrecognized


def parse_cidds_csv(path, strict: bool = False) -> FlowDataset:
    """Parse one CIDDS-format CSV into a FlowDataset, preserving row order.

    Malformed rows abort when strict, otherwise they are skipped and counted.
    A missing required column is always a configuration error.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"input file does not exist: {path}")
    dataset = FlowDataset(records=[], provenance=[str(path)])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty file, no header row")
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ConfigurationError(f"{path}: missing required column(s): {', '.join(missing)}")
        index = {name: header.index(name) for name in header}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < len(header):
                    raise ParseError(f"row has {len(row)} cells, header has {len(header)}")
                cells = {name: row[i] for name, i in index.items()}
                record, label, unrecognized = _parse_row(cells)
            except (ParseError, ValueError, KeyError) as exc:
                if strict:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
                dataset.skipped_rows += 1
                continue
            if unrecognized:
                dataset.unrecognized_labels += 1
            dataset.records.append((record, label))
    return dataset


def concat_datasets(datasets: list[FlowDataset]) -> FlowDataset:
    """Concatenate in the given order, merging provenance and counters."""
    out = FlowDataset(records=[], provenance=[])
    for ds in datasets:
        out.records.extend(ds.records)
        out.provenance.extend(ds.provenance)
        out.skipped_rows += ds.skipped_rows
        out.unrecognized_labels += ds.unrecognized_labels
    return out


def balance_dataset(data: FlowDataset, seed: int) -> FlowDataset:
    """Down-sample benign records uniformly to the malicious count, keeping order."""
    benign_idx = [i for i, (_, y) in enumerate(data.records) if y == BinaryLabel.BENIGN]
    mal_count = len(data.records) - len(benign_idx)
    if len(benign_idx) < mal_count:
        raise PreconditionError(
            f"cannot balance: {len(benign_idx)} benign < {mal_count} malicious"
        )
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(len(benign_idx), size=mal_count, replace=False).tolist())
    chosen = {benign_idx[i] for i in keep}
    records = [
        pair
        for i, pair in enumerate(data.records)
        if pair[1] == BinaryLabel.MALICIOUS or i in chosen
    ]
    return FlowDataset(
        records=records,
        provenance=list(data.provenance),
        original_order=data.original_order,
        skipped_rows=data.skipped_rows,
        unrecognized_labels=data.unrecognized_labels,
    )


def filter_benign(data: FlowDataset) -> FlowDataset:
    """Keep only benign records; removed flows leave no gap."""
    records = [pair for pair in data.records if pair[1] == BinaryLabel.BENIGN]
    return FlowDataset(
        records=records,
        provenance=list(data.provenance),
        original_order=data.original_order,
        skipped_rows=data.skipped_rows,
        unrecognized_labels=data.unrecognized_labels,
    )


def write_flowset(path, tokens: np.ndarray, labels: np.ndarray, vocab_digest: str,
                  feature_names: list[str]) -> None:
    """Write a discretized dataset cache ("FLOWSET v1"): one flow per line."""
    tokens = np.asarray(tokens)
    labels = np.asarray(labels)
    if tokens.shape[0] != labels.shape[0]:
        raise PreconditionError("tokens and labels must have equal length")
    lines = [FLOWSET_HEADER,
             f"features={','.join(feature_names)}",
             f"vocab_digest={vocab_digest}",
             f"count={tokens.shape[0]}"]
    for row, y in zip(tokens, labels):
        lines.append(" ".join(str(int(t)) for t in row) + f" {int(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_flowset(path) -> tuple[np.ndarray, np.ndarray, str, list[str]]:
    """Read a FLOWSET cache; returns (tokens, labels, vocab_digest, feature_names)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != FLOWSET_HEADER:
        raise ParseError(f"{path}: not a {FLOWSET_HEADER} file")
    meta = {}
    for line in text[1:4]:
        key, _, value = line.partition("=")
        meta[key] = value
    feature_names = meta.get("features", "").split(",")
    count = int(meta.get("count", "0"))
    width = len(feature_names)
    tokens = np.empty((count, width), dtype=np.int64)
    labels = np.empty(count, dtype=np.int64)
    body = text[4:]
    if len(body) != count:
        raise ParseError(f"{path}: expected {count} rows, found {len(body)}")
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != width + 1:
            raise ParseError(f"{path}: row {i} has {len(parts)} fields, expected {width + 1}")
        tokens[i] = [int(p) for p in parts[:width]]
        labels[i] = int(parts[width])
    return tokens, labels, meta.get("vocab_digest", ""), feature_names
