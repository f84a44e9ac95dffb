"""Synthetic labeled flow corpora with controllable context dependence.

The generator is template-based: a template pins one token tuple, raw values
jitter only inside bin boundaries. The stream alternates between attack
sessions and quiet periods (blocks of ~block_len flows), the way labeled
captures look in practice, and the catalog is built so that:

* ambiguous templates appear in BOTH classes with identical tokens — as
  attack bursts (repeated instances with rotating ephemeral source ports)
  inside attack blocks, and as isolated benign occurrences inside quiet
  blocks, with exactly equal instance counts. A single-flow classifier is
  mathematically capped at chance on them; class is pure context;
* attack and benign templates are paired to share their class-neutral
  context features (duration, packets, flags), leaving the single-flow
  class signal entirely in destination-port and byte bins — exactly the
  bins a domain shift moves;
* attack blocks also carry benign "victim response" filler whose context
  features come from a reserved pool, so a sequence reader can recognize an
  attack session from surrounding content that no port/byte shift touches,
  while per-flow feature marginals stay class-balanced;
* a small set of shift-invariant attack templates (tiny byte counts,
  ephemeral destination ports) keeps some malicious content recognizable
  after any shift, anchoring both models' post-shift behavior.

Ground-truth labels are a function of the generating pattern, never of the
sampled feature noise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .discretize import FeatureVocabulary
from .errors import ConfigurationError, PreconditionError
from .ingest import BinaryLabel, FlowDataset, RawFlowRecord, flags_to_text, parse_flags

SIDECAR_HEADER = "FSNIDS-SYNTH v1"

KIND_BURST = "AttackBurst"
KIND_ISOLATED = "IsolatedService"
KIND_BACKGROUND = "BackgroundNoise"

_CATALOG_SEED = 7  # fixed: corpora from the same config must share templates

_DURATION_RANGES = [(0.0, 0.0008), (0.0066, 0.0094), (0.012, 0.038), (0.06, 0.9), (1.2, 9.5)]
_PACKET_RANGES = [(1, 2), (3, 3), (4, 4), (5, 5), (6, 6), (7, 7), (8, 10), (11, 20)]
_FLAG_CHOICES = [".AP.SF", ".AP.S.", ".APRSF", "....S.", ".A..S.", ".A.RS.", "......", ".AP..F"]

# one shared destination-port pool for every template group: ports spread
# over several bins but carry no class signal, so the single-flow class
# signal lives entirely in the byte bins
_DST_POOL = [21, 22, 23, 25, 53, 57, 79, 80, 88, 110, 143, 389, 443, 465, 495,
             3128, 5000, 8000, 8080, 8443, 8888, 9000, 10000, 45000, 46500]

_EPHEMERAL_RANGE = (41000, 56000)
_AMBIGUOUS_BYTES = (210, 240)      # bin 7; a 4x scale moves it to the unseen bin 10
_ATTACK_BYTES = (1550, 2400)       # bin 12; a 4x scale moves it onto benign bin 13
_INVARIANT_BYTES = (8, 11)         # bin 0; stable under a 4x scale
_BENIGN_BYTES = [(6000, 9000), (6000, 9000)]   # bin 13; stable under a 4x scale
_FILLER_BYTES = (10000, 13500)     # bin 13 too: filler identity lives in its
                                   # context combos, which no shift touches


@dataclass(frozen=True)
class PatternSpec:
    """One template: a fixed token tuple with in-bin jitter ranges."""

    name: str
    kind_hint: str                      # which pattern kinds may emit it
    ambiguous: bool
    duration_range: tuple[float, float]
    packets_range: tuple[int, int]
    flags: str
    dst_port: int
    bytes_range: tuple[int, int]
    src_port_range: tuple[int, int] = _EPHEMERAL_RANGE
    proto: str = "TCP"
    label: BinaryLabel | None = None    # fixed class, None for ambiguous templates


@dataclass(frozen=True)
class DomainShift:
    """Raw-value transform applied flow-wise; structure and labels untouched."""

    port_offset: float = 0.0
    byte_scale: float = 1.0


@dataclass(frozen=True)
class SynthConfig:
    total_flows: int = 100_000
    ambiguous_fraction: float = 0.5
    pattern_weights: tuple[float, float, float] = (0.5, 0.25, 0.25)  # burst, isolated, background
    seed: int = 0
    port_offset: float = 0.0
    byte_scale: float = 1.0
    block_len: int = 2048
    ambiguous_templates: int = 48
    attack_templates: int = 48
    benign_templates: int = 48
    filler_templates: int = 16
    invariant_attack_templates: int = 6
    filler_fraction: float = 0.25   # benign share of an attack block
    scatter_fraction: float = 0.25  # share of plain attack bursts placed in quiet blocks
    ambiguous_burst_range: tuple[int, int] = (8, 16)
    attack_burst_range: tuple[int, int] = (10, 18)
    scatter_burst_range: tuple[int, int] = (3, 5)

    def validate(self) -> None:
        if self.total_flows < 1:
            raise ConfigurationError("total_flows must be >= 1")
        if not 0.0 <= self.ambiguous_fraction <= 1.0:
            raise ConfigurationError("ambiguous_fraction must sit in [0, 1]")
        w_burst, w_iso, w_bg = self.pattern_weights
        if abs(w_burst + w_iso + w_bg - 1.0) > 1e-9:
            raise ConfigurationError("pattern weights must sum to 1")
        if min(self.pattern_weights) < 0:
            raise ConfigurationError("pattern weights must be non-negative")
        if not 0.0 <= self.filler_fraction < 0.5:
            raise ConfigurationError("filler_fraction must sit in [0, 0.5)")
        if not 0.0 <= self.scatter_fraction <= 0.5:
            raise ConfigurationError("scatter_fraction must sit in [0, 0.5]")
        if abs(w_iso - self.ambiguous_fraction / 2.0) > 1e-6:
            raise ConfigurationError(
                "isolated weight must equal ambiguous_fraction/2: isolated occurrences "
                "are exactly the benign half of the ambiguous flows"
            )
        amb_mal = self.ambiguous_fraction / 2.0
        if amb_mal > w_burst + 1e-9:
            raise ConfigurationError(
                f"infeasible mix: ambiguous_fraction {self.ambiguous_fraction} needs "
                f"ambiguous bursts {amb_mal:.3f} of flows but burst weight is {w_burst}"
            )
        plan = self.plan()
        if plan["quiet_background"] < 0:
            raise ConfigurationError(
                f"infeasible mix: filler_fraction {self.filler_fraction} consumes more "
                "benign flows than the background budget provides"
            )

    def plan(self) -> dict[str, int]:
        """Integer flow budgets per pattern family."""
        total = self.total_flows
        amb_side = int(round(total * self.ambiguous_fraction / 2.0))
        mal_total = int(round(total * self.pattern_weights[0]))
        nonamb_mal = mal_total - amb_side
        scattered = int(round(nonamb_mal * self.scatter_fraction))
        benign_rest = total - mal_total - amb_side
        attack_mal = amb_side + (nonamb_mal - scattered)
        filler = int(round(attack_mal * self.filler_fraction / (1.0 - self.filler_fraction)))
        filler = min(filler, max(0, benign_rest))
        return {
            "ambiguous_burst": amb_side,
            "ambiguous_isolated": amb_side,
            "attack_burst": nonamb_mal - scattered,
            "scattered_burst": scattered,
            "attack_filler": filler,
            "quiet_background": benign_rest - filler,
        }


def build_template_catalog(config: SynthConfig) -> list[PatternSpec]:
    """Deterministic template catalog shared by every corpus of this config."""
    if config.benign_templates > config.attack_templates:
        raise ConfigurationError("benign templates are paired: need benign <= attack count")
    rng = np.random.default_rng(_CATALOG_SEED)
    pool = list(itertools.product(range(len(_DURATION_RANGES)),
                                  range(len(_PACKET_RANGES)),
                                  range(len(_FLAG_CHOICES))))
    need = config.ambiguous_templates + config.attack_templates + config.filler_templates
    if need > len(pool):
        raise ConfigurationError(f"template count {need} exceeds context pool {len(pool)}")
    picks = rng.choice(len(pool), size=need, replace=False)
    combos = [pool[i] for i in picks]
    # every group draws destinations from the same shuffled pool, so no
    # port bin is class-informative
    ports = [_DST_POOL[i] for i in rng.permutation(len(_DST_POOL))]
    catalog: list[PatternSpec] = []
    for j in range(config.ambiguous_templates):
        d, p, f = combos[j]
        catalog.append(PatternSpec(
            name=f"amb{j:02d}",
            kind_hint="ambiguous",
            ambiguous=True,
            duration_range=_DURATION_RANGES[d],
            packets_range=_PACKET_RANGES[p],
            flags=_FLAG_CHOICES[f],
            dst_port=ports[j % len(ports)],
            bytes_range=_AMBIGUOUS_BYTES,
        ))
    for i in range(config.attack_templates):
        d, p, f = combos[config.ambiguous_templates + i]
        invariant = i < config.invariant_attack_templates
        catalog.append(PatternSpec(
            name=f"atk{i:02d}",
            kind_hint="attack",
            ambiguous=False,
            duration_range=_DURATION_RANGES[d],
            packets_range=_PACKET_RANGES[p],
            flags=_FLAG_CHOICES[f],
            dst_port=ports[(i + 7) % len(ports)],
            bytes_range=_INVARIANT_BYTES if invariant else _ATTACK_BYTES,
            label=BinaryLabel.MALICIOUS,
        ))
        # the paired benign template reuses the attack template's context
        # features, keeping duration/packets/flags marginals class-neutral
        if i < config.benign_templates:
            catalog.append(PatternSpec(
                name=f"ben{i:02d}",
                kind_hint="benign",
                ambiguous=False,
                duration_range=_DURATION_RANGES[d],
                packets_range=_PACKET_RANGES[p],
                flags=_FLAG_CHOICES[f],
                dst_port=ports[(i + 13) % len(ports)],
                bytes_range=_BENIGN_BYTES[i % 2],
                label=BinaryLabel.BENIGN,
            ))
    base = config.ambiguous_templates + config.attack_templates
    for k in range(config.filler_templates):
        d, p, f = combos[base + k]
        catalog.append(PatternSpec(
            name=f"fil{k:02d}",
            kind_hint="filler",
            ambiguous=False,
            duration_range=_DURATION_RANGES[d],
            packets_range=_PACKET_RANGES[p],
            flags=_FLAG_CHOICES[f],
            dst_port=ports[(k + 3) % len(ports)],
            bytes_range=_FILLER_BYTES,
            label=BinaryLabel.BENIGN,
        ))
    return catalog


@dataclass
class SynthCorpus:
    """Generated stream plus per-flow ground truth and provenance."""

    config: SynthConfig
    records: list[RawFlowRecord]
    labels: np.ndarray                 # (N,) 0/1
    kinds: list[str]                   # pattern kind per flow
    template_names: list[str]
    ambiguous: np.ndarray              # (N,) bool
    clamped_values: int = 0
    _token_cache: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def to_dataset(self) -> FlowDataset:
        pairs = [(r, BinaryLabel(int(y))) for r, y in zip(self.records, self.labels)]
        return FlowDataset(records=pairs, provenance=[f"synth(seed={self.config.seed})"])

    def token_matrix(self, vocab: FeatureVocabulary) -> np.ndarray:
        if self._token_cache is None:
            self._token_cache = vocab.discretize_records(self.records)
        return self._token_cache

    def write_csv(self, path) -> None:
        """CIDDS-schema CSV so the whole ingest pipeline runs on synthetic data."""
        lines = ["Date first seen,Duration,Proto,Src IP Addr,Src Pt,Dst IP Addr,Dst Pt,Packets,Bytes,Flags,class"]
        base_ms = 0
        for i, rec in enumerate(self.records):
            base_ms += 7
            ts = f"2017-03-15 00:{(base_ms // 60000) % 60:02d}:{(base_ms // 1000) % 60:02d}.{base_ms % 1000:03d}"
            octet = 100 + sum(map(ord, self.template_names[i])) % 80
            src_ip = f"192.168.{octet}.{(i * 13) % 200 + 2}"
            dst_ip = f"10.0.{(int(rec.dst_pt) % 250)}.{(int(rec.dst_pt) * 7) % 250 + 1}"
            lines.append(
                f"{ts},{rec.duration:.4f},{rec.proto},{src_ip},{int(rec.src_pt)},{dst_ip},"
                f"{int(rec.dst_pt)},{rec.packets},{rec.bytes},{flags_to_text(rec.flags)},{rec.label}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    def write_sidecar(self, path) -> None:
        """Ground truth: flow index, pattern kind, label (+ template, ambiguity)."""
        lines = [SIDECAR_HEADER, "index kind label template ambiguous"]
        for i, (kind, name) in enumerate(zip(self.kinds, self.template_names)):
            lines.append(f"{i} {kind} {int(self.labels[i])} {name} {int(self.ambiguous[i])}")
        Path(path).write_text("\n".join(lines) + "\n")


def read_sidecar(path) -> dict:
    """Parse a sidecar file back into arrays."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SIDECAR_HEADER:
        raise PreconditionError(f"{path}: not a {SIDECAR_HEADER} file")
    kinds, labels, templates, ambiguous = [], [], [], []
    for line in lines[2:]:
        _, kind, label, template, amb = line.split()
        kinds.append(kind)
        labels.append(int(label))
        templates.append(template)
        ambiguous.append(bool(int(amb)))
    return {
        "kinds": kinds,
        "labels": np.asarray(labels, dtype=np.int64),
        "templates": templates,
        "ambiguous": np.asarray(ambiguous, dtype=bool),
    }


@dataclass
class _Event:
    template: PatternSpec
    kind: str
    length: int
    label: BinaryLabel


def _split_lengths(total: int, low: int, high: int, rng, minimum: int) -> list[int]:
    """Event lengths in [low, high] summing exactly to total (tail merged if short)."""
    if 0 < total < minimum:
        raise ConfigurationError(
            f"quota {total} cannot fill an event of minimum length {minimum}; "
            "use fewer templates for corpora this small"
        )
    lengths: list[int] = []
    remaining = total
    while remaining > 0:
        n = int(rng.integers(low, high + 1))
        if remaining - n < 0:
            n = remaining
        lengths.append(n)
        remaining -= n
    if len(lengths) > 1 and lengths[-1] < minimum:
        lengths[-2] += lengths[-1]
        lengths.pop()
    return lengths


def _share_counts(total: int, parts: int) -> list[int]:
    """Split total into near-equal integer shares, deterministically."""
    base = total // parts
    counts = [base] * parts
    for i in range(total - base * parts):
        counts[i] += 1
    return counts


def generate_corpus(config: SynthConfig) -> SynthCorpus:
    """Generate one deterministic corpus under config. See the module docstring."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    catalog = build_template_catalog(config)
    amb = [t for t in catalog if t.kind_hint == "ambiguous"]
    attack = [t for t in catalog if t.kind_hint == "attack"]
    benign = [t for t in catalog if t.kind_hint == "benign"]
    filler = [t for t in catalog if t.kind_hint == "filler"]

    plan = config.plan()
    attack_region = plan["ambiguous_burst"] + plan["attack_burst"] + plan["attack_filler"]
    quiet_region = plan["ambiguous_isolated"] + plan["quiet_background"] + plan["scattered_burst"]

    # the stream is a deterministic interleaving of attack blocks (bursts +
    # filler) and quiet blocks (isolated occurrences + background); a window
    # up to block_len long almost always sees a single session type
    n_attack_blocks = max(1, int(round(attack_region / config.block_len))) if attack_region else 0
    n_quiet_blocks = max(1, int(round(quiet_region / config.block_len))) if quiet_region else 0
    block_kinds = [True] * n_attack_blocks + [False] * n_quiet_blocks
    block_kinds = [block_kinds[i] for i in rng.permutation(len(block_kinds))]
    attack_ids = [i for i, is_attack in enumerate(block_kinds) if is_attack]
    quiet_ids = [i for i, is_attack in enumerate(block_kinds) if not is_attack]
    blocks: list[list[_Event]] = [[] for _ in block_kinds]

    def place(event: _Event, ids: list[int]) -> None:
        blocks[ids[int(rng.integers(len(ids)))]].append(event)

    # ambiguous templates: equal burst and isolated instance counts per
    # template; bursts live in attack blocks, isolated occurrences in quiet
    # blocks, so no window mixes the two roles of one template
    amb_lo, amb_hi = config.ambiguous_burst_range
    for template, quota in zip(amb, _share_counts(plan["ambiguous_burst"], len(amb))):
        if quota == 0:
            continue
        for n in _split_lengths(quota, amb_lo, amb_hi, rng, minimum=3):
            place(_Event(template, KIND_BURST, n, BinaryLabel.MALICIOUS), attack_ids)
        for n in _split_lengths(quota, 1, 2, rng, minimum=1):
            place(_Event(template, KIND_ISOLATED, n, BinaryLabel.BENIGN), quiet_ids)

    # plain attack templates: long bursts inside attack sessions plus short
    # scattered bursts amid quiet traffic (background scanning noise), so no
    # single byte/port bin doubles as a reliable session marker
    atk_lo, atk_hi = config.attack_burst_range
    sc_lo, sc_hi = config.scatter_burst_range
    if attack:
        for template, quota, scatter_quota in zip(
            attack,
            _share_counts(plan["attack_burst"], len(attack)),
            _share_counts(plan["scattered_burst"], len(attack)),
        ):
            for n in _split_lengths(quota, atk_lo, atk_hi, rng, minimum=3):
                place(_Event(template, KIND_BURST, n, BinaryLabel.MALICIOUS), attack_ids)
            for n in _split_lengths(scatter_quota, sc_lo, sc_hi, rng, minimum=3):
                place(_Event(template, KIND_BURST, n, BinaryLabel.MALICIOUS),
                      quiet_ids if quiet_ids else attack_ids)

    if filler:
        for template, quota in zip(filler, _share_counts(plan["attack_filler"], len(filler))):
            for n in _split_lengths(quota, 2, 3, rng, minimum=1):
                place(_Event(template, KIND_BACKGROUND, n, BinaryLabel.BENIGN), attack_ids)

    if benign:
        for template, quota in zip(benign, _share_counts(plan["quiet_background"], len(benign))):
            for n in _split_lengths(quota, 2, 3, rng, minimum=1):
                place(_Event(template, KIND_BACKGROUND, n, BinaryLabel.BENIGN), quiet_ids)

    records: list[RawFlowRecord] = []
    labels: list[int] = []
    kinds: list[str] = []
    names: list[str] = []
    ambiguous_flags: list[bool] = []
    for block in blocks:
        order = rng.permutation(len(block))
        for ei in order:
            event = block[ei]
            if event.label == BinaryLabel.MALICIOUS:
                cls_text = "suspicious" if event.template.ambiguous else "dos"
            else:
                cls_text = "normal"
            for _ in range(event.length):
                records.append(_sample_record(event.template, rng, config, cls_text))
                labels.append(int(event.label))
                kinds.append(event.kind)
                names.append(event.template.name)
                ambiguous_flags.append(event.template.ambiguous)

    corpus = SynthCorpus(
        config=config,
        records=records,
        labels=np.asarray(labels, dtype=np.int64),
        kinds=kinds,
        template_names=names,
        ambiguous=np.asarray(ambiguous_flags, dtype=bool),
    )
    _check_template_token_identity(corpus)
    return corpus


def _sample_record(template: PatternSpec, rng, config: SynthConfig, cls_text: str) -> RawFlowRecord:
    dur_lo, dur_hi = template.duration_range
    pk_lo, pk_hi = template.packets_range
    by_lo, by_hi = template.bytes_range
    src = int(rng.integers(template.src_port_range[0], template.src_port_range[1] + 1))
    src = max(0, int(round(src + config.port_offset)))
    dst = max(0, int(round(template.dst_port + config.port_offset)))
    nbytes = int(rng.integers(by_lo, by_hi + 1))
    nbytes = int(round(nbytes * config.byte_scale))
    return RawFlowRecord(
        duration=round(float(rng.uniform(dur_lo, dur_hi)), 4),
        proto=template.proto,
        src_pt=float(src),
        dst_pt=float(dst),
        packets=int(rng.integers(pk_lo, pk_hi + 1)),
        bytes=nbytes,
        flags=parse_flags(template.flags),
        label=cls_text,
    )


def _check_template_token_identity(corpus: SynthCorpus) -> None:
    """Every instance of a template must discretize to the same token tuple."""
    vocab = FeatureVocabulary()
    tokens = corpus.token_matrix(vocab)
    seen: dict[str, tuple] = {}
    for name, row in zip(corpus.template_names, tokens):
        key = tuple(int(t) for t in row)
        if name in seen and seen[name] != key:
            raise ConfigurationError(
                f"template {name} produced two distinct token tuples: {seen[name]} vs {key}; "
                "jitter or domain parameters cross a bin boundary"
            )
        seen.setdefault(name, key)


def shift_domain(corpus: SynthCorpus, shift: DomainShift) -> SynthCorpus:
    """Move marginal feature values across bins; context structure and labels stay."""
    clamped = 0
    shifted_records = []
    for rec in corpus.records:
        src = rec.src_pt + shift.port_offset
        dst = rec.dst_pt + shift.port_offset
        if src < 0 or dst < 0:
            clamped += int(src < 0) + int(dst < 0)
            src = max(0.0, src)
            dst = max(0.0, dst)
        shifted_records.append(replace(
            rec,
            src_pt=float(int(round(src))),
            dst_pt=float(int(round(dst))),
            bytes=int(round(rec.bytes * shift.byte_scale)),
        ))
    shifted = SynthCorpus(
        config=corpus.config,
        records=shifted_records,
        labels=corpus.labels.copy(),
        kinds=list(corpus.kinds),
        template_names=list(corpus.template_names),
        ambiguous=corpus.ambiguous.copy(),
        clamped_values=clamped,
    )
    _check_template_token_identity(shifted)
    return shifted
