"""Synthetic episode generator with planted cluster structure.

Each episode belongs to a latent cluster. The cluster shifts the admission
text (which drives the affinity graph), the note vocabulary, the series
levels, the demographics and the outcome labels, so graph neighbours tend to
share outcomes. A per-episode severity score adds individual signal to the
series and the labels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import (
    DD_CLASSES,
    NOTE_TYPES,
    TIMESERIES_VARIABLES,
    WINDOW_HOURS,
    Dataset,
    Episode,
    ModalitySchema,
    ADMISSION_ATTRIBUTES,
    DEMOGRAPHIC_ATTRIBUTES,
)
from .errors import InvalidConfig

ETHNICITIES = ("WHITE", "BLACK", "HISPANIC", "ASIAN", "OTHER")
GENDERS = ("F", "M")
INSURANCES = ("Medicare", "Medicaid", "Private", "Government", "Self Pay")
MARITAL = ("MARRIED", "SINGLE", "WIDOWED", "DIVORCED", "SEPARATED")
ADMISSION_TYPES = ("EMERGENCY", "ELECTIVE", "URGENT")
ADMISSION_LOCATIONS = (
    "EMERGENCY ROOM ADMIT",
    "PHYS REFERRAL/NORMAL DELI",
    "TRANSFER FROM HOSP/EXTRAM",
    "CLINIC REFERRAL/PREMATURE",
)


@dataclass(frozen=True)
class SyntheticConfig:
    n_episodes: int = 1000
    n_clusters: int = 4
    test_fraction: float = 0.2
    series_missing: float = 0.4
    notes_missing: float = 0.4
    categorical_missing: float = 0.4
    variables: tuple[str, ...] = TIMESERIES_VARIABLES
    note_types: tuple[str, ...] = NOTE_TYPES
    window: float = WINDOW_HOURS
    templates_per_cluster: int = 3
    # probability that an episode's admission text comes from another cluster
    text_noise: float = 0.1
    series_signal: float = 0.35
    severity_signal: float = 0.5
    topic_fraction: float = 0.3
    min_points: int = 6
    max_points: int = 30

    def validate(self) -> None:
        if self.n_episodes < 1:
            raise InvalidConfig("n_episodes must be positive")
        if self.n_clusters < 1:
            raise InvalidConfig("n_clusters must be positive")
        for name in ("series_missing", "notes_missing", "categorical_missing", "text_noise", "topic_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise InvalidConfig("test_fraction must lie in [0, 1)")
        if not self.variables:
            raise InvalidConfig("variable list is empty")
        if self.window <= 0:
            raise InvalidConfig("window must be positive")
        if not 1 <= self.min_points <= self.max_points:
            raise InvalidConfig("need 1 <= min_points <= max_points")
        if self.templates_per_cluster < 1:
            raise InvalidConfig("templates_per_cluster must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticConfig":
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        for key in ("variables", "note_types"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variables"] = list(self.variables)
        d["note_types"] = list(self.note_types)
        return d


def synthetic_schema(config: SyntheticConfig) -> tuple[ModalitySchema, ...]:
    schema = [ModalitySchema("timeseries", "numeric_group", config.variables)]
    schema += [ModalitySchema(nt, "bag_of_words", (nt,)) for nt in config.note_types]
    schema.append(ModalitySchema("demographics", "categorical_group", DEMOGRAPHIC_ATTRIBUTES))
    schema.append(ModalitySchema("admission", "categorical_group", ADMISSION_ATTRIBUTES))
    return tuple(schema)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(config: SyntheticConfig, seed: int) -> Dataset:
    return generate_with_clusters(config, seed)[0]


def generate_with_clusters(config: SyntheticConfig, seed: int) -> tuple[Dataset, np.ndarray]:
    """Like :func:`generate_synthetic` but also returns the latent cluster per episode."""
    config.validate()
    rng = np.random.default_rng(seed)
    n, k = config.n_episodes, config.n_clusters
    n_vars = len(config.variables)

    # cluster-level parameters
    var_base = rng.uniform(20.0, 120.0, size=n_vars)
    var_scale = rng.uniform(2.0, 15.0, size=n_vars)
    var_offset = rng.normal(0.0, 1.0, size=(k, n_vars)) * config.series_signal
    var_trend = rng.normal(0.0, 0.3, size=(k, n_vars))
    severity_vars = rng.choice(n_vars, size=max(1, n_vars // 3), replace=False)

    common_words = [f"w{j:03d}" for j in range(150)]
    common_p = 1.0 / np.arange(1, len(common_words) + 1)
    common_p /= common_p.sum()
    topic_words = [[f"c{c}t{j:02d}" for j in range(25)] for c in range(k)]
    stop_words = ["the", "patient", "and"]

    def tilted(size):
        p = rng.dirichlet(np.ones(size) * 2.0, size=k)
        return p

    eth_p, ins_p, mar_p = tilted(len(ETHNICITIES)), tilted(len(INSURANCES)), tilted(len(MARITAL))
    gender_p = rng.uniform(0.35, 0.65, size=k)
    age_mean = rng.uniform(40.0, 75.0, size=k)

    dx_words = [[f"c{c}dx{j}" for j in range(6)] for c in range(k)]
    templates = []
    for c in range(k):
        cluster_templates = []
        for _ in range(config.templates_per_cluster):
            words = rng.choice(dx_words[c], size=3, replace=False)
            cluster_templates.append(
                (
                    ADMISSION_TYPES[rng.integers(len(ADMISSION_TYPES))],
                    ADMISSION_LOCATIONS[rng.integers(len(ADMISSION_LOCATIONS))],
                    " ".join(words).upper(),
                )
            )
        templates.append(cluster_templates)

    mort_logit = np.linspace(-2.2, 0.8, k) if k > 1 else np.array([-1.0])
    los_log_mean = np.linspace(np.log(2.0), np.log(8.0), k) if k > 1 else np.array([np.log(4.0)])
    other_dd = DD_CLASSES[1:]
    dd_p = rng.dirichlet(np.ones(len(other_dd)) * 0.7, size=k)

    clusters = rng.permutation(np.arange(n) % k)
    ids = [f"ep{i:05d}" for i in range(n)]
    episodes = []
    for i in range(n):
        c = int(clusters[i])
        severity = rng.normal()

        series = {}
        missing_vars = rng.random(n_vars) < config.series_missing
        for j, name in enumerate(config.variables):
            n_pts = int(rng.integers(config.min_points, config.max_points + 1))
            times = np.sort(rng.uniform(0.0, config.window, size=n_pts))
            level = var_offset[c, j] + (config.severity_signal * severity if j in severity_vars else 0.0)
            z = level + var_trend[c, j] * times / config.window + rng.normal(size=n_pts)
            values = var_base[j] + var_scale[j] * z
            if missing_vars[j]:
                continue
            series[name] = tuple((round(float(t), 3), round(float(v), 4)) for t, v in zip(times, values))

        notes = {}
        missing_notes = rng.random(len(config.note_types)) < config.notes_missing
        for j, nt in enumerate(config.note_types):
            length = int(rng.integers(15, 50))
            from_topic = rng.random(length) < config.topic_fraction
            topic = rng.integers(len(topic_words[c]), size=length)
            common = rng.choice(len(common_words), size=length, p=common_p)
            toks = [topic_words[c][t] if ft else common_words[w] for ft, t, w in zip(from_topic, topic, common)]
            toks = stop_words + toks
            if not missing_notes[j]:
                notes[nt] = tuple(toks)

        cats = {
            "ethnicity": ETHNICITIES[rng.choice(len(ETHNICITIES), p=eth_p[c])],
            "gender": GENDERS[int(rng.random() < gender_p[c])],
            "age": str(int(np.clip(rng.normal(age_mean[c], 12.0), 18, 99))),
            "insurance": INSURANCES[rng.choice(len(INSURANCES), p=ins_p[c])],
            "marital_status": MARITAL[rng.choice(len(MARITAL), p=mar_p[c])],
        }
        missing_cats = rng.random(len(DEMOGRAPHIC_ATTRIBUTES)) < config.categorical_missing
        for j, name in enumerate(DEMOGRAPHIC_ATTRIBUTES):
            if missing_cats[j]:
                cats[name] = None
        source = c
        if k > 1 and rng.random() < config.text_noise:
            source = int((c + rng.integers(1, k)) % k)
        tmpl = templates[source][rng.integers(config.templates_per_cluster)]
        cats.update(zip(ADMISSION_ATTRIBUTES, tmpl))

        mort = int(rng.random() < _sigmoid(mort_logit[c] + config.severity_signal * severity))
        los = float(np.exp(los_log_mean[c] + 0.25 * severity + 0.4 * rng.normal()))
        dd = DD_CLASSES[0] if mort else other_dd[rng.choice(len(other_dd), p=dd_p[c])]
        labels = {"mort": mort, "los": round(los, 4), "dd": dd}

        episodes.append(Episode(ids[i], series, notes, cats, labels))

    n_test = int(round(config.test_fraction * n))
    if n - n_test < 1:
        raise InvalidConfig("configuration leaves no training episodes")
    order = rng.permutation(n)
    test = set(order[:n_test].tolist())
    split = {ids[i]: ("test" if i in test else "train") for i in range(n)}
    return Dataset(synthetic_schema(config), episodes, split, config.window), clusters
