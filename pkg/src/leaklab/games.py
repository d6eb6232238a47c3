"""Privacy games: generate labeled trace datasets for attack evaluation.

Two protocols.  The distinguishing game fixes two candidate secrets and
collects traces of the workload run on Sybil-controlled inputs plus one
of the two candidates (appended last, exact class balance).  The
fingerprinting game samples the secret from a public prior over a
bundled element universe and labels each trace with interest-set
membership and identity.

Every run gets its own machine (fresh page-number layout, fresh cipher
key), its own workload randomness and its own collector noise stream,
all derived from the dataset base seed, so nothing but the secret and
the declared config separates the classes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .machine import CollectorPolicy, SimMachine, run_collect
from .trace import Trace, parse_trace, write_trace
from .workloads import PRIME_LADDER, build_workload

__all__ = [
    "GameConfig",
    "DatasetEntry",
    "LabeledDataset",
    "PriorDistribution",
    "bundled_url_list",
    "interesting_subset",
    "build_sybil_inputs",
    "run_distinguishing_game",
    "run_fingerprinting_game",
    "derive_seed",
]

_MASK63 = 2**63 - 1


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of labels and integers."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & _MASK63


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorDistribution:
    """Finite distribution over hashable elements."""

    support: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ValueError("support and probs length mismatch")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support must be distinct")
        p = np.asarray(self.probs, dtype=np.float64)
        if (p < 0).any() or not np.isfinite(p).all() or p.sum() <= 0:
            raise ValueError("probabilities must be finite, non-negative, not all zero")
        p = p / p.sum()
        object.__setattr__(self, "probs", tuple(float(v) for v in p))

    @classmethod
    def uniform(cls, support) -> "PriorDistribution":
        support = tuple(support)
        return cls(support, tuple(1.0 / len(support) for _ in support))

    @classmethod
    def power_law(cls, support, exponent: float = 0.5) -> "PriorDistribution":
        """Rank-based decay: element at rank r gets weight (r+1)^-exponent."""
        support = tuple(support)
        w = [(r + 1.0) ** -exponent for r in range(len(support))]
        return cls(support, tuple(w))

    @classmethod
    def from_table(cls, table: dict) -> "PriorDistribution":
        items = list(table.items())
        return cls(tuple(k for k, _ in items), tuple(float(v) for _, v in items))

    def prob_of(self, element) -> float:
        try:
            return self.probs[self.support.index(element)]
        except ValueError:
            return 0.0

    def mass(self, subset) -> float:
        wanted = set(subset)
        return float(sum(p for e, p in zip(self.support, self.probs) if e in wanted))

    def sample(self, rng: np.random.Generator):
        return self.support[int(rng.choice(len(self.support), p=np.asarray(self.probs)))]

    def to_json(self) -> dict:
        return {"support": list(self.support), "probs": list(self.probs)}


# ---------------------------------------------------------------------------
# bundled element universe
# ---------------------------------------------------------------------------

_GENERIC_TLDS = (".com", ".org", ".net")

_ADJECTIVES = (
    "quiet", "amber", "brisk", "cedar", "dusty", "ember", "frost", "gentle",
    "hazel", "ivory", "jade", "keen", "lunar", "maple", "noble", "opal",
    "pine", "quartz", "rustic", "silver", "tidal", "umber", "velvet", "wild",
    "arc", "bright", "coral", "deep", "early", "fable", "glen", "harbor",
    "iron", "jolly", "kind", "loyal", "mellow", "north", "old", "prime",
)

_NOUNS = (
    "falcon", "meadow", "anchor", "beacon", "canyon", "delta", "ember2",
    "forge", "grove", "harbor2", "island", "junction", "kettle", "lantern",
    "mill", "nook", "orchard", "prairie", "quarry", "ridge", "spring",
    "trail", "union", "vale", "willow", "yard", "zephyr", "atlas", "basin",
    "cliff", "dune", "estuary", "fjord", "glacier", "heath", "inlet",
    "knoll", "lagoon", "mesa", "oasis",
)

_OTHER_TLDS = (
    ".io", ".dev", ".app", ".co.uk", ".de", ".fr", ".jp", ".ca", ".au",
    ".ch", ".se", ".nl", ".es", ".it", ".fi", ".no", ".pl", ".cz", ".gr",
    ".pt", ".ie", ".be", ".at", ".dk", ".nz", ".kr", ".mx", ".br", ".in",
    ".za",
)

_UNIVERSE_SIZE = 1000
_INTEREST_SIZE = 301


def bundled_url_list() -> list[str]:
    """Deterministic 1000-hostname universe; exactly 301 have a TLD
    outside {.com, .org, .net}."""
    rng = random.Random(0x1EAF)
    names = sorted({f"{adj}-{noun}" for adj in _ADJECTIVES for noun in _NOUNS})
    names = names[: _UNIVERSE_SIZE]
    rng.shuffle(names)
    special = set(rng.sample(range(_UNIVERSE_SIZE), _INTEREST_SIZE))
    urls = []
    for i, name in enumerate(names):
        if i in special:
            tld = _OTHER_TLDS[rng.randrange(len(_OTHER_TLDS))]
        else:
            tld = _GENERIC_TLDS[rng.randrange(len(_GENERIC_TLDS))]
        urls.append(f"{name}{tld}")
    return urls


def interesting_subset(urls, interest: dict | None = None) -> list[str]:
    """Apply an interest-set config ({"kind": "non_generic_tld"} default)."""
    interest = interest or {"kind": "non_generic_tld"}
    kind = interest.get("kind")
    if kind == "non_generic_tld":
        return [u for u in urls if not u.endswith(_GENERIC_TLDS)]
    if kind == "list":
        wanted = list(interest["values"])
        missing = [w for w in wanted if w not in set(urls)]
        if missing:
            raise ValueError(f"interest elements outside universe: {missing[:3]}")
        return wanted
    raise ValueError(f"unknown interest kind: {kind!r}")


def build_sybil_inputs(interesting: list[str], fill_stride: int = 2,
                       ladder: tuple = PRIME_LADDER) -> list[str]:
    """Sybil key sequence for the fingerprinting game.

    One copy of every interesting element, interleaved with
    ``fill_stride`` out-of-domain filler keys each, then padded with more
    fillers until the number of distinct keys equals a ladder rung.  The
    table then sits exactly at capacity: one more distinct key (a
    non-member secret) forces a growth pass, a member secret does not.
    """
    target = next(p for p in ladder if p >= len(interesting) * (1 + fill_stride))
    n_fillers = target - len(interesting)
    seq: list[str] = []
    fi = 0
    for u in interesting:
        seq.append(u)
        for _ in range(fill_stride):
            seq.append(f"sybil://{fi:05d}")
            fi += 1
    while fi < n_fillers:
        seq.append(f"sybil://{fi:05d}")
        fi += 1
    assert len(set(seq)) == target
    return seq


# ---------------------------------------------------------------------------
# config and dataset containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GameConfig:
    """Declarative description of one dataset-generating experiment."""

    game: str  # "distinguish" | "fingerprint"
    workload: dict
    policy: dict
    base_seed: int = 0
    # distinguishing game
    x0: object = None
    x1: object = None
    traces_per_class: int = 0
    sybil: dict = field(default_factory=dict)
    # fingerprinting game
    n_traces: int = 0
    prior: dict = field(default_factory=dict)
    interest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.game not in ("distinguish", "fingerprint"):
            raise ValueError(f"unknown game: {self.game!r}")
        if self.game == "distinguish":
            if self.x0 is None or self.x1 is None:
                raise ValueError("distinguishing game needs x0 and x1")
            if self.x0 == self.x1:
                raise ValueError("x0 and x1 must differ")
            if self.traces_per_class < 1:
                raise ValueError("traces_per_class must be >= 1")
        else:
            if self.n_traces < 1:
                raise ValueError("n_traces must be >= 1")

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GameConfig":
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - allowed
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class DatasetEntry:
    seed: int
    label: object
    trace: Trace | None = None
    path: Path | None = None

    def load(self) -> Trace:
        if self.trace is not None:
            return self.trace
        return parse_trace(self.path.read_text())


class LabeledDataset:
    """Streamable labeled trace collection, in memory or on disk."""

    def __init__(self, game: str, base_seed: int, entries: list[DatasetEntry],
                 metadata: dict | None = None, root: Path | None = None):
        self.game = game
        self.base_seed = base_seed
        self.entries = entries
        self.metadata = metadata or {}
        self.root = root

    def __len__(self) -> int:
        return len(self.entries)

    def iter_labeled(self):
        for e in self.entries:
            yield e.load(), e.label

    @property
    def s_c(self) -> float | None:
        return self.metadata.get("s_c")

    @property
    def s_f(self) -> float | None:
        return self.metadata.get("s_f")

    @classmethod
    def load(cls, directory) -> "LabeledDataset":
        root = Path(directory)
        meta = json.loads((root / "dataset.json").read_text())
        entries = []
        with open(root / "manifest.jsonl") as fh:
            for line in fh:
                row = json.loads(line)
                label = row["label"]
                if isinstance(label, list):
                    label = tuple(label)
                entries.append(DatasetEntry(
                    seed=row["seed"], label=label, path=root / row["path"]))
        return cls(meta["game"], meta["base_seed"], entries,
                   metadata=meta, root=root)


class _DatasetWriter:
    def __init__(self, game: str, out_dir):
        self.game = game
        self.root = Path(out_dir) if out_dir is not None else None
        self.entries: list[DatasetEntry] = []
        self._manifest = None
        if self.root is not None:
            (self.root / "traces").mkdir(parents=True, exist_ok=True)
            self._manifest = open(self.root / "manifest.jsonl", "w")

    def add(self, trace: Trace, label, seed: int) -> None:
        self._add_text(write_trace(trace) if self.root is not None else None,
                       trace, label, seed)

    def add_text(self, text: str, label, seed: int) -> None:
        self._add_text(text, None, label, seed)

    def _add_text(self, text: str | None, trace: Trace | None, label, seed: int) -> None:
        idx = len(self.entries)
        if self.root is None:
            if trace is None:
                trace = parse_trace(text)
            self.entries.append(DatasetEntry(seed=seed, label=label, trace=trace))
            return
        rel = f"traces/trace_{idx:05d}.txt"
        (self.root / rel).write_text(text)
        self.entries.append(DatasetEntry(seed=seed, label=label, path=self.root / rel))
        row = {"path": rel, "label": list(label) if isinstance(label, tuple) else label,
               "game": self.game, "seed": seed}
        self._manifest.write(json.dumps(row, sort_keys=True) + "\n")

    def finish(self, base_seed: int, metadata: dict) -> LabeledDataset:
        if self._manifest is not None:
            self._manifest.close()
            meta = dict(metadata)
            meta["game"] = self.game
            meta["base_seed"] = base_seed
            (self.root / "dataset.json").write_text(
                json.dumps(meta, sort_keys=True, indent=1) + "\n")
            metadata = meta
        else:
            metadata = dict(metadata)
            metadata["game"] = self.game
            metadata["base_seed"] = base_seed
        return LabeledDataset(self.game, base_seed, self.entries,
                              metadata=metadata, root=self.root)


# ---------------------------------------------------------------------------
# game runners
# ---------------------------------------------------------------------------

def _collect_one(cfg: GameConfig, inputs: list, run_seed: int):
    machine = SimMachine(
        cipher_seed=derive_seed(run_seed, "cipher"),
        alloc_seed=derive_seed(run_seed, "alloc"),
    )
    workload = build_workload(cfg.workload, inputs, derive_seed(run_seed, "workload"))
    policy = CollectorPolicy.from_json(cfg.policy)
    if policy.drop_prob or policy.flip_prob:
        policy = dataclasses.replace(policy, rng_seed=derive_seed(run_seed, "noise"))
    return run_collect(machine, workload, policy, trace_seed=run_seed)


def _sybil_list(sybil: dict) -> list:
    if not sybil:
        return []
    kind = sybil.get("kind")
    if kind == "copies":
        return [sybil["value"]] * int(sybil["count"])
    if kind == "list":
        return list(sybil["values"])
    raise ValueError(f"unknown sybil strategy: {kind!r}")


def _fingerprint_setup(cfg: GameConfig):
    prior_cfg = dict(cfg.prior) if cfg.prior else {"kind": "power_law", "exponent": 0.5}
    kind = prior_cfg.get("kind", "power_law")
    if kind == "power_law":
        universe = bundled_url_list()
        prior = PriorDistribution.power_law(universe, prior_cfg.get("exponent", 0.5))
    elif kind == "table":
        prior = PriorDistribution.from_table(prior_cfg["table"])
        universe = list(prior.support)
    else:
        raise ValueError(f"unknown prior kind: {kind!r}")
    interesting = interesting_subset(universe, cfg.interest or None)
    sybil_cfg = dict(cfg.sybil) if cfg.sybil else {}
    sybils = build_sybil_inputs(
        interesting, fill_stride=int(sybil_cfg.get("fill_stride", 2)))
    return prior, interesting, sybils


def _game_inputs(cfg: GameConfig, x) -> list:
    if cfg.game == "distinguish":
        return _sybil_list(cfg.sybil) + [x]
    _, _, sybils = _fingerprint_setup(cfg)
    return sybils + [x]


def _trace_text_job(args) -> str:
    """Worker for parallel generation: returns the canonical trace text."""
    cfg_json, x, run_seed = args
    cfg = GameConfig.from_json(cfg_json)
    trace, _ = _collect_one(cfg, _game_inputs(cfg, x), run_seed)
    return write_trace(trace)


def _run_plan(cfg: GameConfig, plan: list[tuple], writer: _DatasetWriter,
              jobs: int, progress) -> None:
    """Execute [(x, label, seed), ...] sequentially or across processes."""
    if jobs > 1 and writer.root is None:
        raise ValueError("parallel generation requires an output directory")
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        cfg_json = cfg.to_json()
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            texts = ex.map(_trace_text_job,
                           [(cfg_json, x, seed) for x, _, seed in plan],
                           chunksize=4)
            for (x, label, seed), text in zip(plan, texts):
                writer.add_text(text, label, seed)
                if progress is not None:
                    progress(len(writer.entries), len(plan))
        return
    inputs_cache = _sybil_list(cfg.sybil) if cfg.game == "distinguish" else None
    if inputs_cache is None:
        _, _, sybils = _fingerprint_setup(cfg)
        inputs_cache = sybils
    for x, label, seed in plan:
        trace, _ = _collect_one(cfg, inputs_cache + [x], seed)
        writer.add(trace, label, seed)
        if progress is not None:
            progress(len(writer.entries), len(plan))


def run_distinguishing_game(cfg: GameConfig, out_dir=None, jobs: int = 1,
                            progress=None) -> LabeledDataset:
    """Generate the two-secret dataset: label i%2 picks x0 or x1."""
    if cfg.game != "distinguish":
        raise ValueError("config is not a distinguishing game")
    writer = _DatasetWriter(cfg.game, out_dir)
    plan = []
    for i in range(2 * cfg.traces_per_class):
        label = i % 2
        plan.append((cfg.x1 if label else cfg.x0, label,
                     derive_seed(cfg.base_seed, "run", i)))
    _run_plan(cfg, plan, writer, jobs, progress)
    meta = {"config": cfg.to_json(), "config_hash": cfg.config_hash(),
            "n": len(plan), "labels": "binary"}
    return writer.finish(cfg.base_seed, meta)


def run_fingerprinting_game(cfg: GameConfig, out_dir=None, jobs: int = 1,
                            progress=None) -> LabeledDataset:
    """Generate the sampled-secret dataset with (membership, identity) labels."""
    if cfg.game != "fingerprint":
        raise ValueError("config is not a fingerprinting game")
    prior, interesting, sybils = _fingerprint_setup(cfg)
    member_set = set(interesting)
    index_of = {u: i for i, u in enumerate(interesting)}
    p_member = prior.mass(member_set)
    s_c = max(p_member, 1.0 - p_member)
    s_f = max(prior.prob_of(u) for u in interesting) / p_member

    writer = _DatasetWriter(cfg.game, out_dir)
    plan = []
    for i in range(cfg.n_traces):
        run_seed = derive_seed(cfg.base_seed, "run", i)
        rng = np.random.default_rng([run_seed, 0xF1D0])
        x = prior.sample(rng)
        label = (1, index_of[x]) if x in member_set else (0, -1)
        plan.append((x, label, run_seed))
    _run_plan(cfg, plan, writer, jobs, progress)
    meta = {"config": cfg.to_json(), "config_hash": cfg.config_hash(),
            "n": cfg.n_traces, "labels": "membership_identity",
            "s_c": s_c, "s_f": s_f,
            "interest_size": len(interesting),
            "sybil_distinct": len(set(sybils))}
    return writer.finish(cfg.base_seed, meta)
