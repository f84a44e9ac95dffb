"""Per-feature discretization of flow records into token indices.

Numeric features map to the smallest bin whose upper bound is >= the value
(inclusive upper bound). The protocol feature is categorical with an
out-of-vocabulary bucket; TCP flag vectors collapse to a single 64-way token.
Each feature's token space is extended with a MASK and a PAD id, in that
order, after the real tokens.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError, PreconditionError
from .ingest import RawFlowRecord

FEATURE_NAMES = ["duration", "proto", "src_pt", "dst_pt", "packets", "bytes", "flags"]

DURATION_BOUNDS = [0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.01, 0.04, 1, 10, 100, float("inf")]
PORT_BOUNDS = [50, 60, 100, 400, 500, 40000, 60000, float("inf")]
BYTES_BOUNDS = [50, 60, 70, 90, 100, 110, 200, 300, 400, 500, 700, 1000, 5000, float("inf")]
PACKETS_BOUNDS = [2, 3, 4, 5, 6, 7, 10, 20, float("inf")]
PROTO_CATEGORIES = ["TCP", "UDP", "GRE", "ICMP", "IGMP"]

VOCAB_HEADER = "FSNIDS-VOCAB v1"


@dataclass(frozen=True)
class BinSpec:
    """Token space for one feature: numeric bins, categories, or flag combinations."""

    feature_name: str
    kind: str  # "numeric" | "categorical" | "flags"
    upper_bounds: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == "numeric":
            bounds = self.upper_bounds
            if not bounds or bounds[-1] != float("inf"):
                raise ConfigurationError(f"{self.feature_name}: last upper bound must be +inf")
            if any(a >= b for a, b in zip(bounds, bounds[1:])):
                raise ConfigurationError(f"{self.feature_name}: bounds must be strictly ascending")
        elif self.kind == "categorical":
            if not self.categories or len(set(self.categories)) != len(self.categories):
                raise ConfigurationError(f"{self.feature_name}: categories empty or duplicated")
        elif self.kind != "flags":
            raise ConfigurationError(f"{self.feature_name}: unknown kind {self.kind!r}")

    @property
    def size(self) -> int:
        """Number of real tokens (excluding MASK/PAD)."""
        if self.kind == "numeric":
            return len(self.upper_bounds)
        if self.kind == "categorical":
            return len(self.categories) + 1  # trailing OOV bucket
        return 64


def build_default_bins() -> list[BinSpec]:
    """The fixed feature binning used throughout: seven features, flag table order."""
    return [
        BinSpec("duration", "numeric", upper_bounds=tuple(float(b) for b in DURATION_BOUNDS)),
        BinSpec("proto", "categorical", categories=tuple(PROTO_CATEGORIES)),
        BinSpec("src_pt", "numeric", upper_bounds=tuple(float(b) for b in PORT_BOUNDS)),
        BinSpec("dst_pt", "numeric", upper_bounds=tuple(float(b) for b in PORT_BOUNDS)),
        BinSpec("packets", "numeric", upper_bounds=tuple(float(b) for b in PACKETS_BOUNDS)),
        BinSpec("bytes", "numeric", upper_bounds=tuple(float(b) for b in BYTES_BOUNDS)),
        BinSpec("flags", "flags"),
    ]


def discretize_value(spec: BinSpec, value) -> int:
    """Token index of one raw feature value under spec."""
    if spec.kind == "numeric":
        v = float(value)
        if v < 0:
            raise PreconditionError(f"{spec.feature_name}: negative value {value!r}")
        return int(np.searchsorted(np.asarray(spec.upper_bounds), v, side="left"))
    if spec.kind == "categorical":
        try:
            return spec.categories.index(value)
        except ValueError:
            return len(spec.categories)  # OOV bucket
    # flags: big-endian over the canonical U,A,P,R,S,F order
    bits = value
    if len(bits) != 6:
        raise ParseError(f"flag vector must have 6 components, got {bits!r}")
    token = 0
    for b in bits:
        token = token * 2 + (1 if b else 0)
    return token


class FeatureVocabulary:
    """Immutable per-feature token spaces with trailing MASK and PAD ids."""

    def __init__(self, specs: list[BinSpec] | None = None):
        self.specs = list(specs) if specs is not None else build_default_bins()
        self.feature_names = [s.feature_name for s in self.specs]
        self.real_sizes = [s.size for s in self.specs]
        self.mask_ids = [s.size for s in self.specs]
        self.pad_ids = [s.size + 1 for s in self.specs]
        self.total_sizes = [s.size + 2 for s in self.specs]

    @property
    def feature_count(self) -> int:
        return len(self.specs)

    def discretize_flow(self, record: RawFlowRecord) -> tuple[int, ...]:
        """Fixed-order token tuple for one flow record."""
        values = {
            "duration": record.duration,
            "proto": record.proto,
            "src_pt": record.src_pt,
            "dst_pt": record.dst_pt,
            "packets": record.packets,
            "bytes": record.bytes,
            "flags": record.flags,
        }
        return tuple(discretize_value(s, values[s.feature_name]) for s in self.specs)

    def discretize_records(self, records) -> np.ndarray:
        """Token matrix (N, F) for an iterable of records."""
        rows = [self.discretize_flow(r) for r in records]
        if not rows:
            return np.empty((0, self.feature_count), dtype=np.int64)
        return np.asarray(rows, dtype=np.int64)

    def pad_row(self) -> np.ndarray:
        return np.asarray(self.pad_ids, dtype=np.int64)

    def mask_row(self) -> np.ndarray:
        return np.asarray(self.mask_ids, dtype=np.int64)

    def manifest_text(self) -> str:
        """Key-value manifest pinning the binning; written next to checkpoints."""
        lines = [VOCAB_HEADER, f"feature_order={','.join(self.feature_names)}"]
        for spec in self.specs:
            name = spec.feature_name
            lines.append(f"{name}.kind={spec.kind}")
            if spec.kind == "numeric":
                lines.append(f"{name}.upper_bounds={','.join(repr(b) for b in spec.upper_bounds)}")
            elif spec.kind == "categorical":
                lines.append(f"{name}.categories={','.join(spec.categories)}")
            lines.append(f"{name}.size={spec.size}")
            lines.append(f"{name}.mask_id={spec.size}")
            lines.append(f"{name}.pad_id={spec.size + 1}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.manifest_text().encode()).hexdigest()

    def write_manifest(self, path) -> None:
        Path(path).write_text(self.manifest_text())


def subset_vocabulary(vocab: FeatureVocabulary, feature_names: list[str]) -> FeatureVocabulary:
    """Vocabulary restricted to the named features, preserving their order."""
    by_name = {s.feature_name: s for s in vocab.specs}
    missing = [n for n in feature_names if n not in by_name]
    if missing:
        raise ConfigurationError(f"unknown feature(s): {', '.join(missing)}")
    return FeatureVocabulary([by_name[n] for n in feature_names])


def load_manifest(path) -> FeatureVocabulary:
    """Rebuild a vocabulary from its manifest file."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != VOCAB_HEADER:
        raise ParseError(f"{path}: not a {VOCAB_HEADER} manifest")
    kv = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        kv[key] = value
    order = kv.get("feature_order", "").split(",")
    specs = []
    for name in order:
        kind = kv.get(f"{name}.kind")
        if kind == "numeric":
            bounds = tuple(float(b) for b in kv[f"{name}.upper_bounds"].split(","))
            specs.append(BinSpec(name, "numeric", upper_bounds=bounds))
        elif kind == "categorical":
            specs.append(BinSpec(name, "categorical", categories=tuple(kv[f"{name}.categories"].split(","))))
        elif kind == "flags":
            specs.append(BinSpec(name, "flags"))
        else:
            raise ParseError(f"{path}: bad kind {kind!r} for feature {name!r}")
    return FeatureVocabulary(specs)
