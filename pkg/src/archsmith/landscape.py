"""Seeded synthetic fitness functions over the genotype space.

A landscape stands in for GAN training plus quality metrics: fitness is
minimized, deterministic given (seed, genotype), and built from a planted
elite pattern so tests and experiments know the ground truth.  Families of
landscapes share a master pattern and interaction structure (drawn from
``family_seed``); each problem seed flips a fraction of the pattern and
redraws the tables, so cross-problem data is coherent but not identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .genotype import (
    DepthKey,
    GanSpec,
    GenotypeConfig,
    LayerSpec,
    DnnSpec,
    ROLE_DISCRIMINATOR,
    ROLE_GENERATOR,
    flatten_joint,
    joint_schema,
    validate_gan,
)

LANDSCAPE_FORMAT = "land-v1"

# (section, layer, attr); layer is -1 for the global train-frequency slot.
Position = tuple[str, int, str]


@dataclass(frozen=True)
class LandscapeConfig:
    """Shape of a landscape family.

    margin is the guaranteed fitness gap between the planted value and any
    other value of a slot, so the planted pattern is the unique per-key
    argmin at sigma_noise = 0.  base_scale weights the depth-key penalty
    against the per-slot tables; flip_prob is the per-slot chance that a
    problem deviates from the family master pattern.
    """

    genotype: GenotypeConfig
    family_seed: int = 0
    sigma_noise: float = 0.05
    margin: float = 0.1
    base_scale: float = 50.0
    flip_prob: float = 0.2
    jitter: float = 0.05
    n_pairs: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.margin < 0.5:
            raise ValidationError("margin must lie in (0, 0.5)")
        if self.sigma_noise < 0:
            raise ValidationError("sigma_noise must be >= 0")
        if not 0 <= self.flip_prob <= 1:
            raise ValidationError("flip_prob must lie in [0, 1]")
        if self.base_scale < 0 or self.jitter < 0:
            raise ValidationError("base_scale and jitter must be >= 0")

    def to_json_obj(self) -> dict:
        return {
            "genotype": self.genotype.to_json_obj(),
            "family_seed": self.family_seed,
            "sigma_noise": self.sigma_noise,
            "margin": self.margin,
            "base_scale": self.base_scale,
            "flip_prob": self.flip_prob,
            "jitter": self.jitter,
            "n_pairs": self.n_pairs,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "LandscapeConfig":
        try:
            return cls(
                genotype=GenotypeConfig.from_json_obj(obj["genotype"]),
                family_seed=int(obj["family_seed"]),
                sigma_noise=float(obj["sigma_noise"]),
                margin=float(obj["margin"]),
                base_scale=float(obj["base_scale"]),
                flip_prob=float(obj["flip_prob"]),
                jitter=float(obj["jitter"]),
                n_pairs=None if obj["n_pairs"] is None else int(obj["n_pairs"]),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad landscape config: {exc}") from exc


def _max_key(config: GenotypeConfig) -> DepthKey:
    return DepthKey(config.generator_depth_max, config.discriminator_depth_max)


def _all_positions(config: GenotypeConfig) -> tuple[tuple[Position, int], ...]:
    """Every slot position at the deepest schema, with its cardinality."""
    schema = joint_schema(config, _max_key(config))
    return tuple(((s.section, s.layer, s.attr), s.cardinality)
                 for s in schema.slots)


def _position_str(pos: Position) -> str:
    return f"{pos[0]}:{pos[1]}:{pos[2]}"


def _position_from_str(text: str) -> Position:
    section, layer, attr = text.split(":")
    return (section, int(layer), attr)


class SurrogateLandscape:
    """Additive planted-pattern fitness: base(depth) + unary + pairwise + noise.

    Pure and immutable; evaluation may run concurrently.  Lower is better
    and fitness is always >= 0.
    """

    def __init__(self, seed: int, config: LandscapeConfig,
                 target_key: DepthKey, master: dict[Position, int],
                 planted: dict[Position, int],
                 unary: dict[Position, np.ndarray],
                 pairs: tuple[tuple[Position, Position], ...],
                 pairwise: dict[tuple[Position, Position], np.ndarray],
                 base: dict[DepthKey, float]):
        self.seed = int(seed)
        self.config = config
        self.target_key = target_key
        self._master = dict(master)
        self._planted = dict(planted)
        self._unary = {p: np.asarray(t, dtype=float) for p, t in unary.items()}
        self._pairs = tuple(pairs)
        self._pairwise = {p: np.asarray(t, dtype=float)
                          for p, t in pairwise.items()}
        self._base = dict(base)
        self._compiled: dict[DepthKey, tuple] = {}

    # -- structure accessors -------------------------------------------------

    @property
    def positions(self) -> tuple[Position, ...]:
        return tuple(self._unary)

    @property
    def pairs(self) -> tuple[tuple[Position, Position], ...]:
        return self._pairs

    def unary_table(self, pos: Position) -> np.ndarray:
        return self._unary[pos].copy()

    def pairwise_table(self, pair: tuple[Position, Position]) -> np.ndarray:
        return self._pairwise[pair].copy()

    def base_penalty(self, key: DepthKey) -> float:
        return self._base[DepthKey(*key)]

    def planted_value(self, pos: Position) -> int:
        return self._planted[pos]

    def master_value(self, pos: Position) -> int:
        return self._master[pos]

    def analytic_minimum(self, key: DepthKey) -> float:
        """Fitness of the planted pattern at ``key`` when sigma_noise = 0."""
        return self._base[DepthKey(*key)]

    def planted_values(self, key: DepthKey) -> np.ndarray:
        """Planted slot values aligned with the joint schema at ``key``."""
        schema = joint_schema(self.config.genotype, DepthKey(*key))
        return np.array([self._planted[(s.section, s.layer, s.attr)]
                         for s in schema.slots], dtype=np.int64)

    def planted_gan(self, key: DepthKey) -> GanSpec:
        key = DepthKey(*key)
        gc = self.config.genotype

        def build(role: str, section: str, depth: int) -> DnnSpec:
            kinds = gc.kinds(role)
            layers = []
            for layer in range(depth):
                val = lambda attr: self._planted[(section, layer, attr)]
                layers.append(LayerSpec(
                    kind=kinds[val("kind")],
                    activation=gc.activations[val("activation")],
                    weight_init=gc.weight_inits[val("weight_init")],
                    size_bin=val("size_bin")))
            return DnnSpec(role=role, layers=tuple(layers))

        return GanSpec(
            generator=build(ROLE_GENERATOR, "generator", key.d_g),
            discriminator=build(ROLE_DISCRIMINATOR, "discriminator", key.d_d),
            train_freq_bin=self._planted[("global", -1, "train_freq")])

    # -- evaluation ----------------------------------------------------------

    def _compile(self, key: DepthKey):
        cached = self._compiled.get(key)
        if cached is not None:
            return cached
        schema = joint_schema(self.config.genotype, key)
        pos_list = [(s.section, s.layer, s.attr) for s in schema.slots]
        index = {p: i for i, p in enumerate(pos_list)}
        unary = [self._unary[p] for p in pos_list]
        pair_terms = [(index[a], index[b], self._pairwise[(a, b)])
                      for a, b in self._pairs
                      if a in index and b in index]
        compiled = (self._base[key], unary, pair_terms)
        self._compiled[key] = compiled
        return compiled

    def _noise(self, key: DepthKey, row: Sequence[int]) -> float:
        if self.config.sigma_noise == 0:
            return 0.0
        text = (f"{self.config.family_seed}|{self.seed}|{key.d_g}|{key.d_d}|"
                + ",".join(str(int(v)) for v in row))
        digest = hashlib.sha256(text.encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2.0 ** 64
        return self.config.sigma_noise * u

    def evaluate_values(self, key: DepthKey,
                        values: np.ndarray) -> np.ndarray:
        """Fitness for a batch of slot-value rows at one depth key."""
        key = DepthKey(*key)
        if key not in self._base:
            raise ValidationError(f"unsupported depth key {tuple(key)}")
        values = np.asarray(values, dtype=np.int64)
        if values.ndim != 2 or values.shape[1] != len(
                joint_schema(self.config.genotype, key)):
            raise ValidationError("values shape does not match the schema")
        base, unary, pair_terms = self._compile(key)
        total = np.full(values.shape[0], base, dtype=float)
        for j, table in enumerate(unary):
            total += table[values[:, j]]
        for ia, ib, table in pair_terms:
            total += table[values[:, ia], values[:, ib]]
        if self.config.sigma_noise > 0:
            total += np.fromiter(
                (self._noise(key, row) for row in values),
                dtype=float, count=values.shape[0])
        return total

    def evaluate(self, gan: GanSpec) -> float:
        """Fitness of one genotype; raises on out-of-bounds depths."""
        validate_gan(gan, self.config.genotype)
        av = flatten_joint(gan, self.config.genotype)
        row = np.array([av.values], dtype=np.int64)
        return float(self.evaluate_values(DepthKey(*av.depth_key), row)[0])


def make_landscape(seed: int, config: LandscapeConfig) -> SurrogateLandscape:
    """Build the landscape for one problem seed within a family.

    Family-level draws (master pattern, target depth key, interaction pair
    locations) depend only on ``config.family_seed``; problem-level draws
    (flips, table contents, base jitter) depend on ``seed`` as well.
    """
    gc = config.genotype
    positions = _all_positions(gc)
    family_rng = np.random.default_rng([int(config.family_seed), 0x5EED])
    master = {pos: int(family_rng.integers(card))
              for pos, card in positions}
    lo_g = min(2, gc.generator_depth_max)
    lo_d = min(2, gc.discriminator_depth_max)
    target_key = DepthKey(
        int(family_rng.integers(lo_g, gc.generator_depth_max + 1)),
        int(family_rng.integers(lo_d, gc.discriminator_depth_max + 1)))
    all_pairs = [(positions[i][0], positions[j][0])
                 for i in range(len(positions))
                 for j in range(i + 1, len(positions))]
    n_pairs = (len(positions) // 2 if config.n_pairs is None
               else config.n_pairs)
    if not 0 <= n_pairs <= len(all_pairs):
        raise ValidationError(f"n_pairs must lie in [0, {len(all_pairs)}]")
    chosen = family_rng.choice(len(all_pairs), size=n_pairs, replace=False)
    pairs = tuple(all_pairs[i] for i in sorted(int(c) for c in chosen))

    problem_rng = np.random.default_rng(
        [int(seed), int(config.family_seed), 0xAB5])
    planted: dict[Position, int] = {}
    for pos, card in positions:
        value = master[pos]
        if card >= 2 and problem_rng.random() < config.flip_prob:
            shift = int(problem_rng.integers(1, card))
            value = (value + shift) % card
        planted[pos] = value
    unary: dict[Position, np.ndarray] = {}
    for pos, card in positions:
        table = problem_rng.uniform(config.margin, 1.0, size=card)
        table[planted[pos]] = 0.0
        if planted[pos] != master[pos]:
            # The abandoned family value stays nearly as good, giving
            # near-ties that reward systematic neighbourhood sweeps.
            table[master[pos]] = problem_rng.uniform(
                config.margin, 2 * config.margin)
        unary[pos] = table
    card_of = dict(positions)
    pairwise: dict[tuple[Position, Position], np.ndarray] = {}
    for a, b in pairs:
        table = problem_rng.uniform(config.margin, 1.0,
                                    size=(card_of[a], card_of[b]))
        table[planted[a], planted[b]] = 0.0
        pairwise[(a, b)] = table
    span_g = max(1, gc.generator_depth_max - 1)
    span_d = max(1, gc.discriminator_depth_max - 1)
    base: dict[DepthKey, float] = {}
    for key in gc.depth_keys():
        dist = 0.5 * (abs(key.d_g - target_key.d_g) / span_g
                      + abs(key.d_d - target_key.d_d) / span_d)
        wobble = problem_rng.uniform(0.0, config.jitter)
        base[key] = config.base_scale * (dist + wobble)
    return SurrogateLandscape(
        seed=seed, config=config, target_key=target_key, master=master,
        planted=planted, unary={p: unary[p] for p, _ in positions},
        pairs=pairs, pairwise=pairwise, base=base)


def landscape_to_json_obj(land: SurrogateLandscape) -> dict:
    return {
        "format": LANDSCAPE_FORMAT,
        "seed": land.seed,
        "config": land.config.to_json_obj(),
        "target_key": list(land.target_key),
        "master": {_position_str(p): v for p, v in land._master.items()},
        "planted": {_position_str(p): v for p, v in land._planted.items()},
        "unary": {_position_str(p): t.tolist()
                  for p, t in land._unary.items()},
        "pairs": [[_position_str(a), _position_str(b)]
                  for a, b in land.pairs],
        "pairwise": [land._pairwise[pair].tolist() for pair in land.pairs],
        "base": {f"{k.d_g},{k.d_d}": v for k, v in land._base.items()},
    }


def landscape_from_json_obj(obj: dict) -> SurrogateLandscape:
    if not isinstance(obj, dict) or obj.get("format") != LANDSCAPE_FORMAT:
        raise FormatError(f"expected a {LANDSCAPE_FORMAT} document")
    try:
        config = LandscapeConfig.from_json_obj(obj["config"])
        pairs = tuple((_position_from_str(a), _position_from_str(b))
                      for a, b in obj["pairs"])
        base = {}
        for text, value in obj["base"].items():
            d_g, d_d = text.split(",")
            base[DepthKey(int(d_g), int(d_d))] = float(value)
        return SurrogateLandscape(
            seed=int(obj["seed"]),
            config=config,
            target_key=DepthKey(*obj["target_key"]),
            master={_position_from_str(t): int(v)
                    for t, v in obj["master"].items()},
            planted={_position_from_str(t): int(v)
                     for t, v in obj["planted"].items()},
            unary={_position_from_str(t): np.array(v, dtype=float)
                   for t, v in obj["unary"].items()},
            pairs=pairs,
            pairwise={pair: np.array(table, dtype=float)
                      for pair, table in zip(pairs, obj["pairwise"])},
            base=base)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad {LANDSCAPE_FORMAT} document: {exc}") from exc


def save_landscape(land: SurrogateLandscape, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(landscape_to_json_obj(land), handle, sort_keys=True)
        handle.write("\n")


def load_landscape(path) -> SurrogateLandscape:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt landscape file: {exc}") from exc
    return landscape_from_json_obj(doc)
