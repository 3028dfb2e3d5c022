"""Two-level model over GAN genotypes.

A supermodel distributes mass over architecture depths and one Bayesian
network submodel per depth key (joint mode) or per role and depth
(per-network mode) models the remaining slots.  Learned from elite sets,
the metamodel scores genotypes, samples new ones and persists to a single
``mm-v1`` document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .archive import Individual
from .bayesnet import (
    BayesNet,
    Dag,
    aracne_skeleton,
    bn_from_json_obj,
    bn_to_json_obj,
    chow_liu,
    fit_cpts,
    log_likelihood_many,
    mi_matrix,
    orient,
    pls_sample_many,
    small_sample_correction,
)
from .errors import FormatError, ValidationError
from .genotype import (
    AttributeVector,
    DepthKey,
    GanSpec,
    GenotypeConfig,
    MODE_JOINT,
    ROLE_DISCRIMINATOR,
    ROLE_GENERATOR,
    Schema,
    flatten,
    flatten_joint,
    joint_schema,
    network_schema,
    unflatten_joint,
)

MM_FORMAT = "mm-v1"

STRUCTURE_ARACNE = "aracne"
STRUCTURE_CHOW_LIU = "chow_liu"
STRUCTURES = (STRUCTURE_ARACNE, STRUCTURE_CHOW_LIU)

METHOD_MARGINALS = "marginals"
METHOD_UNIFORM = "uniform"


@dataclass(frozen=True)
class LearnConfig:
    """Knobs for metamodel learning.

    Groups with fewer than min_samples rows fall back to independent
    smoothed marginals; MI estimates from fewer rows are noise.
    """

    genotype: GenotypeConfig
    structure: str = STRUCTURE_ARACNE
    min_samples: int = 10
    alpha: float = 1.0
    super_pseudocount: float = 1.0
    dpi_tolerance: float = 0.1
    mi_correction: bool = True

    def __post_init__(self) -> None:
        if self.structure not in STRUCTURES:
            raise ValidationError(f"unknown structure method {self.structure!r}")
        if self.min_samples < 1:
            raise ValidationError("min_samples must be >= 1")
        if self.alpha <= 0:
            raise ValidationError("alpha must be > 0")
        if self.super_pseudocount <= 0:
            raise ValidationError("super_pseudocount must be > 0")

    def to_json_obj(self) -> dict:
        return {
            "genotype": self.genotype.to_json_obj(),
            "structure": self.structure,
            "min_samples": self.min_samples,
            "alpha": self.alpha,
            "super_pseudocount": self.super_pseudocount,
            "dpi_tolerance": self.dpi_tolerance,
            "mi_correction": self.mi_correction,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "LearnConfig":
        try:
            return cls(
                genotype=GenotypeConfig.from_json_obj(obj["genotype"]),
                structure=obj["structure"],
                min_samples=int(obj["min_samples"]),
                alpha=float(obj["alpha"]),
                super_pseudocount=float(obj["super_pseudocount"]),
                dpi_tolerance=float(obj["dpi_tolerance"]),
                mi_correction=bool(obj["mi_correction"]),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad learn config: {exc}") from exc


@dataclass(frozen=True)
class Categorical:
    """Smoothed categorical over hashable keys; probabilities sum to one."""

    support: tuple
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.probs) or not self.support:
            raise ValidationError("support and probs must align and be non-empty")
        if any(p <= 0 for p in self.probs):
            raise ValidationError("probabilities must be positive")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValidationError("probabilities must sum to 1")

    def prob(self, key) -> float:
        try:
            return self.probs[self.support.index(key)]
        except ValueError:
            raise ValidationError(f"unsupported depth {key}") from None

    def log_prob(self, key) -> float:
        return float(np.log(self.prob(key)))

    def sample_indices(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.choice(len(self.support), size=count, p=np.asarray(self.probs))

    @classmethod
    def from_counts(cls, support: Sequence, counts: Sequence[float],
                    pseudocount: float) -> "Categorical":
        raw = np.asarray(counts, dtype=float) + pseudocount
        return cls(support=tuple(support), probs=tuple(raw / raw.sum()))


@dataclass(frozen=True)
class Submodel:
    """One depth group: its schema, fitted network and training count."""

    key: tuple
    schema: Schema
    bn: BayesNet
    n_train: int
    method: str

    def __post_init__(self) -> None:
        expected = tuple((s.name, s.cardinality) for s in self.schema.slots)
        if self.bn.dag.variables != expected:
            raise ValidationError("submodel variables do not match the schema")


@dataclass(frozen=True)
class ScoreBreakdown:
    """Joint log probability of a genotype, with its two factors.

    normalized divides by the number of modelled variables (depth choices
    plus slots) so candidates of different depths are comparable.
    """

    log_super: float
    log_sub: float
    depth_key: DepthKey
    n_variables: int

    @property
    def log_prob(self) -> float:
        return self.log_super + self.log_sub

    @property
    def normalized(self) -> float:
        return self.log_prob / self.n_variables


def _edgeless_bn(schema: Schema, rows: np.ndarray, alpha: float) -> BayesNet:
    variables = tuple((s.name, s.cardinality) for s in schema.slots)
    dag = Dag(variables=variables, parents=tuple(() for _ in variables))
    return fit_cpts(dag, rows, alpha=alpha)


def learn_submodel(schema: Schema, rows: np.ndarray,
                   config: LearnConfig) -> Submodel:
    """Fit one depth group: BN structure when the sample supports it.

    Pure; groups may be learned concurrently.
    """
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, len(schema))
    n = rows.shape[0]
    if n == 0:
        bn = _edgeless_bn(schema, rows, config.alpha)
        return Submodel(key=tuple(schema.key), schema=schema, bn=bn,
                        n_train=0, method=METHOD_UNIFORM)
    if n < config.min_samples:
        bn = _edgeless_bn(schema, rows, config.alpha)
        return Submodel(key=tuple(schema.key), schema=schema, bn=bn,
                        n_train=n, method=METHOD_MARGINALS)
    cards = schema.cardinalities
    mi = mi_matrix(rows, cards)
    if config.structure == STRUCTURE_ARACNE:
        correction = (small_sample_correction(cards, n)
                      if config.mi_correction else None)
        edges = aracne_skeleton(mi, dpi_tolerance=config.dpi_tolerance,
                                threshold_correction=correction)
    else:
        edges = chow_liu(mi)
    variables = tuple((s.name, s.cardinality) for s in schema.slots)
    dag = orient(edges, variables)
    bn = fit_cpts(dag, rows, alpha=config.alpha)
    return Submodel(key=tuple(schema.key), schema=schema, bn=bn,
                    n_train=n, method=config.structure)


class Metamodel:
    """Immutable two-level model; scoring and sampling are pure."""

    def __init__(self, learn_config: LearnConfig,
                 supermodels: dict[str, Categorical],
                 submodels: dict[tuple, Submodel],
                 provenance: dict | None = None):
        self.learn_config = learn_config
        self.config = learn_config.genotype
        self.mode = self.config.mode
        self.supermodels = dict(supermodels)
        self.submodels = dict(submodels)
        self.provenance = dict(provenance or {})
        self._validate()

    def _validate(self) -> None:
        gc = self.config
        if self.mode == MODE_JOINT:
            if set(self.supermodels) != {"joint"}:
                raise ValidationError("joint mode needs one supermodel")
            expected = {tuple(k) for k in gc.depth_keys()}
        else:
            if set(self.supermodels) != {ROLE_GENERATOR, ROLE_DISCRIMINATOR}:
                raise ValidationError("per-network mode needs two supermodels")
            expected = {(ROLE_GENERATOR, d)
                        for d in range(1, gc.generator_depth_max + 1)}
            expected |= {(ROLE_DISCRIMINATOR, d)
                         for d in range(1, gc.discriminator_depth_max + 1)}
        if set(self.submodels) != expected:
            raise ValidationError("every supported key needs a submodel")

    # -- scoring -------------------------------------------------------------

    def _joint_parts(self, key: DepthKey) -> tuple[float, list]:
        """Supermodel log mass and the submodel split plan for one key."""
        gc = self.config
        if self.mode == MODE_JOINT:
            log_super = self.supermodels["joint"].log_prob(DepthKey(*key))
            plan = [(self.submodels[tuple(key)], slice(None))]
            return log_super, plan
        split = len(network_schema(gc, ROLE_GENERATOR, key.d_g))
        log_super = (self.supermodels[ROLE_GENERATOR].log_prob(key.d_g)
                     + self.supermodels[ROLE_DISCRIMINATOR].log_prob(key.d_d))
        plan = [(self.submodels[(ROLE_GENERATOR, key.d_g)], slice(0, split)),
                (self.submodels[(ROLE_DISCRIMINATOR, key.d_d)],
                 slice(split, None))]
        return log_super, plan

    @property
    def n_depth_variables(self) -> int:
        return 1 if self.mode == MODE_JOINT else 2

    def score_values(self, key: DepthKey,
                     values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(log_prob, normalized) for a batch of joint vectors at one key."""
        key = DepthKey(*key)
        values = np.asarray(values, dtype=np.int64)
        schema = joint_schema(self.config, key)
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise ValidationError("values shape does not match the schema")
        log_super, plan = self._joint_parts(key)
        log_prob = np.full(values.shape[0], log_super, dtype=float)
        for submodel, cols in plan:
            log_prob += log_likelihood_many(submodel.bn, values[:, cols])
        normalized = log_prob / (self.n_depth_variables + len(schema))
        return log_prob, normalized

    def score(self, gan: GanSpec) -> ScoreBreakdown:
        """Log probability of one genotype under the metamodel."""
        av = flatten_joint(gan, self.config)
        key = DepthKey(*av.depth_key)
        log_super, plan = self._joint_parts(key)
        row = np.array([av.values], dtype=np.int64)
        log_sub = 0.0
        for submodel, cols in plan:
            log_sub += float(log_likelihood_many(submodel.bn, row[:, cols])[0])
        return ScoreBreakdown(log_super=log_super, log_sub=log_sub,
                              depth_key=key,
                              n_variables=self.n_depth_variables + len(av.values))

    # -- sampling ------------------------------------------------------------

    def _sample_joint(self, rng: np.random.Generator,
                      count: int) -> list[GanSpec]:
        super_ = self.supermodels["joint"]
        picks = super_.sample_indices(rng, count)
        out: list[GanSpec | None] = [None] * count
        for idx in range(len(super_.support)):
            where = np.flatnonzero(picks == idx)
            if where.size == 0:
                continue
            key = DepthKey(*super_.support[idx])
            submodel = self.submodels[tuple(key)]
            rows = pls_sample_many(submodel.bn, where.size, rng)
            schema = submodel.schema
            for slot, row in zip(where, rows):
                av_row = tuple(int(v) for v in row)
                vector = _attribute_vector(schema, key, av_row)
                out[slot] = unflatten_joint(vector, self.config)
        return [g for g in out if g is not None]

    def _sample_per_network(self, rng: np.random.Generator,
                            count: int) -> list[GanSpec]:
        gc = self.config
        halves: dict[str, list] = {}
        depth_draws: dict[str, np.ndarray] = {}
        for role in (ROLE_GENERATOR, ROLE_DISCRIMINATOR):
            super_ = self.supermodels[role]
            picks = super_.sample_indices(rng, count)
            depth_draws[role] = picks
            rows: list = [None] * count
            for idx in range(len(super_.support)):
                where = np.flatnonzero(picks == idx)
                if where.size == 0:
                    continue
                depth = super_.support[idx]
                submodel = self.submodels[(role, depth)]
                sampled = pls_sample_many(submodel.bn, where.size, rng)
                for slot, row in zip(where, sampled):
                    rows[slot] = tuple(int(v) for v in row)
            halves[role] = rows
        out = []
        for i in range(count):
            d_g = self.supermodels[ROLE_GENERATOR].support[
                depth_draws[ROLE_GENERATOR][i]]
            d_d = self.supermodels[ROLE_DISCRIMINATOR].support[
                depth_draws[ROLE_DISCRIMINATOR][i]]
            key = DepthKey(int(d_g), int(d_d))
            values = halves[ROLE_GENERATOR][i] + halves[ROLE_DISCRIMINATOR][i]
            vector = _attribute_vector(joint_schema(gc, key), key, values)
            out.append(unflatten_joint(vector, gc))
        return out

    def sample_many(self, rng: np.random.Generator,
                    count: int) -> list[GanSpec]:
        """Draw genotypes by ancestral sampling; deterministic given rng."""
        if count < 0:
            raise ValidationError("count must be >= 0")
        if count == 0:
            return []
        if self.mode == MODE_JOINT:
            return self._sample_joint(rng, count)
        return self._sample_per_network(rng, count)

    def sample(self, rng: np.random.Generator) -> GanSpec:
        return self.sample_many(rng, 1)[0]

    # -- constructors ----------------------------------------------------------

    @classmethod
    def uniform(cls, learn_config: LearnConfig) -> "Metamodel":
        """Uninformative metamodel: every genotype gets the same score.

        Submodels are uniform at every depth key.  The depth prior is
        calibrated so the per-variable normalized score is one constant
        across all depths: a count-uniform prior would not be neutral
        here, because the supermodel term amortizes over more variables
        at deeper keys and would systematically favour them.
        """
        gc = learn_config.genotype
        submodels: dict[tuple, Submodel] = {}
        parts: dict[str, tuple[tuple, np.ndarray, np.ndarray]] = {}
        if gc.mode == MODE_JOINT:
            keys = gc.depth_keys()
            schemas = [joint_schema(gc, key) for key in keys]
            for key, schema in zip(keys, schemas):
                submodels[tuple(key)] = learn_submodel(
                    schema, np.empty((0, len(schema)), dtype=np.int64),
                    learn_config)
            parts["joint"] = (tuple(keys), *_schema_volumes(schemas))
        else:
            for role, depth_max in ((ROLE_GENERATOR, gc.generator_depth_max),
                                    (ROLE_DISCRIMINATOR,
                                     gc.discriminator_depth_max)):
                depths = tuple(range(1, depth_max + 1))
                schemas = [network_schema(gc, role, depth) for depth in depths]
                for depth, schema in zip(depths, schemas):
                    submodels[(role, depth)] = learn_submodel(
                        schema, np.empty((0, len(schema)), dtype=np.int64),
                        learn_config)
                parts[role] = (depths, *_schema_volumes(schemas))
        return cls(learn_config=learn_config,
                   supermodels=_neutral_supermodels(parts),
                   submodels=submodels, provenance={"uniform": True})


def _schema_volumes(schemas: Sequence[Schema]) -> tuple[np.ndarray, np.ndarray]:
    """Per schema: supermodel-inclusive variable count and log volume."""
    counts = np.array([1 + len(schema) for schema in schemas], dtype=float)
    volumes = np.array([np.log(schema.cardinalities).sum()
                        for schema in schemas])
    return counts, volumes


def _neutral_supermodels(
        parts: dict[str, tuple[tuple, np.ndarray, np.ndarray]],
) -> dict[str, Categorical]:
    """Depth priors whose normalized score is constant across keys.

    Solves for the constant ``c`` with ``log p(key) = c * m + volume``
    summing to one jointly over all priors, so the normalized score of
    any genotype equals ``c`` exactly.
    """
    def gap(c: float) -> float:
        return float(sum(logsumexp(c * m + s) for _, m, s in parts.values()))

    lo, hi = -2.0, 2.0
    while gap(lo) > 0:
        lo *= 2.0
    while gap(hi) < 0:
        hi *= 2.0
    c = brentq(gap, lo, hi, xtol=1e-14)
    out: dict[str, Categorical] = {}
    for name, (support, m, s) in parts.items():
        weights = c * m + s
        probs = np.exp(weights - logsumexp(weights))
        out[name] = Categorical(support=support,
                                probs=tuple(probs / probs.sum()))
    return out


def _attribute_vector(schema: Schema, key, values) -> AttributeVector:
    return AttributeVector(depth_key=key, values=tuple(values), schema=schema)


def learn(individuals: Sequence[Individual], config: LearnConfig,
          provenance: dict | None = None) -> Metamodel:
    """Learn the metamodel from an elite set.

    Individuals are grouped by depth key (joint mode) or each half by role
    and depth (per-network mode); the supermodel smooths the group counts
    with the configured pseudocount, so every supported depth stays
    reachable when sampling.
    """
    if not individuals:
        raise ValidationError("cannot learn from an empty set")
    gc = config.genotype
    supermodels: dict[str, Categorical] = {}
    submodels: dict[tuple, Submodel] = {}
    if gc.mode == MODE_JOINT:
        keys = gc.depth_keys()
        rows_by_key: dict[tuple, list] = {tuple(k): [] for k in keys}
        for ind in individuals:
            av = flatten_joint(ind.gan, gc)
            rows_by_key[tuple(av.depth_key)].append(av.values)
        counts = [len(rows_by_key[tuple(k)]) for k in keys]
        supermodels["joint"] = Categorical.from_counts(
            keys, counts, config.super_pseudocount)
        for key in keys:
            schema = joint_schema(gc, key)
            rows = np.array(rows_by_key[tuple(key)],
                            dtype=np.int64).reshape(-1, len(schema))
            submodels[tuple(key)] = learn_submodel(schema, rows, config)
    else:
        role_rows: dict[tuple, list] = {}
        role_depths = {ROLE_GENERATOR: gc.generator_depth_max,
                       ROLE_DISCRIMINATOR: gc.discriminator_depth_max}
        for role, depth_max in role_depths.items():
            for depth in range(1, depth_max + 1):
                role_rows[(role, depth)] = []
        for ind in individuals:
            gen_av, disc_av = flatten(ind.gan, gc)
            role_rows[(ROLE_GENERATOR, ind.gan.generator.depth)].append(
                gen_av.values)
            role_rows[(ROLE_DISCRIMINATOR, ind.gan.discriminator.depth)].append(
                disc_av.values)
        for role, depth_max in role_depths.items():
            depths = tuple(range(1, depth_max + 1))
            counts = [len(role_rows[(role, d)]) for d in depths]
            supermodels[role] = Categorical.from_counts(
                depths, counts, config.super_pseudocount)
            for depth in depths:
                schema = network_schema(gc, role, depth)
                rows = np.array(role_rows[(role, depth)],
                                dtype=np.int64).reshape(-1, len(schema))
                submodels[(role, depth)] = learn_submodel(schema, rows, config)
    meta = dict(provenance or {})
    meta.update({
        "n_individuals": len(individuals),
        "structure": config.structure,
        "fallback_keys": sorted(
            str(list(k)) for k, s in submodels.items()
            if s.method == METHOD_MARGINALS),
        "uniform_keys": sorted(
            str(list(k)) for k, s in submodels.items()
            if s.method == METHOD_UNIFORM),
        "genotype_fingerprint": gc.fingerprint(),
    })
    return Metamodel(learn_config=config, supermodels=supermodels,
                     submodels=submodels, provenance=meta)


# ---------------------------------------------------------------------------
# Persistence


def _encode_key(key: tuple) -> list:
    return list(key)


def _decode_key(obj) -> tuple:
    if len(obj) == 2 and isinstance(obj[0], str):
        return (obj[0], int(obj[1]))
    return tuple(int(v) for v in obj)


def metamodel_to_json_obj(m: Metamodel) -> dict:
    supers = {}
    for name, cat in m.supermodels.items():
        keys = [list(k) if isinstance(k, tuple) else k for k in cat.support]
        supers[name] = {"keys": keys, "probs": list(cat.probs)}
    subs = []
    for key in sorted(m.submodels):
        sub = m.submodels[key]
        subs.append({"key": _encode_key(key), "n_train": sub.n_train,
                     "method": sub.method, "bn": bn_to_json_obj(sub.bn)})
    return {
        "format": MM_FORMAT,
        "learn": m.learn_config.to_json_obj(),
        "provenance": m.provenance,
        "supermodels": supers,
        "submodels": subs,
    }


def metamodel_from_json_obj(obj: dict) -> Metamodel:
    if not isinstance(obj, dict) or obj.get("format") != MM_FORMAT:
        raise FormatError(f"expected a {MM_FORMAT} document")
    try:
        learn_config = LearnConfig.from_json_obj(obj["learn"])
        gc = learn_config.genotype
        supermodels = {}
        for name, doc in obj["supermodels"].items():
            if name == "joint":
                support = tuple(DepthKey(*k) for k in doc["keys"])
            else:
                support = tuple(int(k) for k in doc["keys"])
            supermodels[name] = Categorical(support=support,
                                            probs=tuple(doc["probs"]))
        submodels = {}
        for entry in obj["submodels"]:
            key = _decode_key(entry["key"])
            if isinstance(key[0], str):
                schema = network_schema(gc, key[0], key[1])
            else:
                schema = joint_schema(gc, DepthKey(*key))
            submodels[key] = Submodel(key=key, schema=schema,
                                      bn=bn_from_json_obj(entry["bn"]),
                                      n_train=int(entry["n_train"]),
                                      method=entry["method"])
        return Metamodel(learn_config=learn_config, supermodels=supermodels,
                         submodels=submodels, provenance=obj["provenance"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad {MM_FORMAT} document: {exc}") from exc


def save_metamodel(m: Metamodel, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(metamodel_to_json_obj(m), handle, sort_keys=True)
        handle.write("\n")


def load_metamodel(path) -> Metamodel:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt metamodel file: {exc}") from exc
    return metamodel_from_json_obj(doc)


def provenance_mismatch(m: Metamodel, archive_hash: str | None = None,
                        genotype: GenotypeConfig | None = None) -> str | None:
    """Describe a provenance mismatch, or None when everything lines up."""
    problems = []
    if archive_hash is not None:
        recorded = m.provenance.get("archive_hash")
        if recorded is not None and recorded != archive_hash:
            problems.append("archive hash differs from the one learned from")
    if genotype is not None:
        recorded = m.provenance.get("genotype_fingerprint")
        if recorded is not None and recorded != genotype.fingerprint():
            problems.append("genotype configuration differs")
    return "; ".join(problems) or None
