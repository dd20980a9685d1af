"""Synthetic classification worlds, distribution shifts, and meta-set groups.

A world is a mixture of isotropic Gaussian classes together with the
Bayes-optimal affine classifier for it.  At overconfidence 1.0 the classifier
emits the true posterior log-odds, so its softmax outputs are calibrated by
construction; larger overconfidence multiplies the logits and miscalibrates
them upward without moving any decision boundary.

Shifts act on the data distribution only, never on the classifier.  Each
(kind, severity) pair maps to a fixed parameter through the tables below, so
a severity is meaningful across runs and seeds.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, LogitsTable, read_logits_file, write_logits_file
from ._util import atomic_write_text, child_seed

SHIFT_KINDS = ("feature-noise", "mean-drift", "rotation", "covariance-scale", "prior-shift")
N_SEVERITIES = 5

# per-kind parameter at severities 1..5; units are noise scales for the first
# two, degrees for rotation, a multiplier for covariance, and a log-prior
# tilt magnitude for prior-shift
SEVERITY_TABLES = {
    "feature-noise": (0.4, 0.8, 1.2, 1.6, 2.0),
    "mean-drift": (0.25, 0.5, 0.75, 1.0, 1.25),
    "rotation": (10.0, 20.0, 30.0, 40.0, 50.0),
    "covariance-scale": (1.15, 1.3, 1.5, 1.75, 2.0),
    "prior-shift": (0.3, 0.6, 0.9, 1.2, 1.5),
}

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class ShiftTransform:
    """One labeled distortion of the data distribution."""

    kind: str
    severity: int
    seed: int = 0  # drives any direction/plane/tilt draw the kind needs

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ConfigError(f"unknown shift kind {self.kind!r}; expected one of {SHIFT_KINDS}")
        if not 1 <= int(self.severity) <= N_SEVERITIES:
            raise ConfigError(f"severity must be in 1..{N_SEVERITIES}, got {self.severity}")

    @property
    def parameter(self) -> float:
        return SEVERITY_TABLES[self.kind][self.severity - 1]


@dataclass(frozen=True)
class SyntheticWorld:
    class_means: np.ndarray   # (C, d)
    noise_scale: float        # shared isotropic std
    priors: np.ndarray        # (C,)
    overconfidence: float     # logit multiplier, 1.0 = calibrated
    seed: int

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def n_features(self) -> int:
        return self.class_means.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Bayes classifier weight matrix (C, d) for the unshifted world."""
        return self.class_means / (self.noise_scale**2)

    @property
    def bias(self) -> np.ndarray:
        sq = np.sum(self.class_means**2, axis=1)
        return -sq / (2.0 * self.noise_scale**2) + np.log(self.priors)


def sample_world(
    n_classes: int = 10,
    n_features: int = 16,
    overconfidence: float = 2.5,
    noise_scale: float = 1.0,
    class_sep: float = 0.6,
    seed: int = 0,
) -> SyntheticWorld:
    """Draw class means i.i.d. Gaussian, rejecting layouts with crowded classes.

    Means are redrawn (same stream, so still deterministic in the seed) until
    every pairwise distance is at least one noise scale.
    """
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if overconfidence <= 0 or noise_scale <= 0 or class_sep <= 0:
        raise ConfigError("overconfidence, noise_scale and class_sep must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        means = rng.normal(0.0, class_sep * noise_scale, (n_classes, n_features))
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        dist[np.diag_indices(n_classes)] = np.inf
        if dist.min() >= noise_scale:
            break
    else:
        raise ConfigError(
            f"could not separate {n_classes} class means in {n_features} dims; "
            "raise class_sep or n_features"
        )
    priors = np.full(n_classes, 1.0 / n_classes)
    return SyntheticWorld(
        class_means=means,
        noise_scale=float(noise_scale),
        priors=priors,
        overconfidence=float(overconfidence),
        seed=int(seed),
    )


def _rotation_matrix(dim: int, angle_deg: float, seed: int) -> np.ndarray:
    """Rotation by angle_deg in one random 2-plane of feature space."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=dim)
    a /= np.linalg.norm(a)
    b = rng.normal(size=dim)
    b -= a * (a @ b)
    b /= np.linalg.norm(b)
    theta = np.deg2rad(angle_deg)
    outer_aa = np.outer(a, a)
    outer_bb = np.outer(b, b)
    outer_ab = np.outer(a, b)
    r = np.eye(dim)
    r += (np.cos(theta) - 1.0) * (outer_aa + outer_bb)
    r += np.sin(theta) * (outer_ab.T - outer_ab)
    return r


def _shifted_generator(world: SyntheticWorld, transforms):
    """Fold transforms into effective (means, noise std, priors)."""
    means = world.class_means
    sigma = world.noise_scale
    priors = world.priors
    extra_var = 0.0
    for tr in transforms:
        p = tr.parameter
        if tr.kind == "feature-noise":
            extra_var += (p * world.noise_scale) ** 2
        elif tr.kind == "mean-drift":
            # each class drifts in its own direction, so the class geometry
            # (not just the global frame) degrades with severity
            rng = np.random.default_rng(tr.seed)
            directions = rng.normal(size=(world.n_classes, world.n_features))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            means = means + directions * (p * world.noise_scale)
        elif tr.kind == "rotation":
            r = _rotation_matrix(world.n_features, p, tr.seed)
            means = means @ r.T
        elif tr.kind == "covariance-scale":
            sigma = sigma * p
        elif tr.kind == "prior-shift":
            rng = np.random.default_rng(tr.seed)
            tilt = rng.normal(size=world.n_classes)
            logp = np.log(priors) + p * tilt
            logp -= logp.max()
            priors = np.exp(logp)
            priors = priors / priors.sum()
    total_sigma = float(np.sqrt(sigma**2 + extra_var))
    return means, total_sigma, priors


def generate_split(
    world: SyntheticWorld,
    n: int,
    seed: int,
    transforms=(),
    name: str = "split",
) -> LogitsTable:
    """Sample n instances from the (possibly shifted) world, score them with
    the unshifted classifier, and return the logits table."""
    if n < 1:
        raise ConfigError(f"split size must be >= 1, got {n}")
    if isinstance(transforms, ShiftTransform):
        transforms = (transforms,)
    means, sigma, priors = _shifted_generator(world, transforms)
    rng = np.random.default_rng(seed)
    labels = rng.choice(world.n_classes, size=n, p=priors)
    x = means[labels] + sigma * rng.standard_normal((n, world.n_features))
    logits = (x @ world.weights.T + world.bias) * world.overconfidence
    return LogitsTable(logits, labels, name=name)


@dataclass(frozen=True)
class MetaSetCollection:
    """A family of shifted prediction sets used to fit the cascade."""

    members: tuple
    transforms: tuple  # ShiftTransform or None per member

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError(f"a meta-set collection needs >= 2 members, got {len(self.members)}")
        if len(self.transforms) != len(self.members):
            raise ConfigError("one transform tag per member required (None is allowed)")
        c = self.members[0].n_classes
        for m in self.members[1:]:
            if m.n_classes != c:
                raise ConfigError(
                    f"member {m.name!r} has {m.n_classes} classes, expected {c}"
                )
        names = [m.name for m in self.members]
        if len(set(names)) != len(names):
            raise ConfigError(f"member names must be unique, got {sorted(names)}")
        for m in self.members:
            if m.labels is None:
                raise ConfigError(f"meta-set member {m.name!r} is missing labels")

    @property
    def n_classes(self) -> int:
        return self.members[0].n_classes

    def pooled(self) -> LogitsTable:
        """All members concatenated; used by the -P baseline variants."""
        logits = np.concatenate([m.logits for m in self.members], axis=0)
        labels = np.concatenate([m.labels for m in self.members], axis=0)
        return LogitsTable(logits, labels, name="pooled")


DEFAULT_GRID_KINDS = ("feature-noise", "mean-drift", "covariance-scale", "rotation")
DEFAULT_GRID_SEVERITIES = (1, 2, 3)
DEFAULT_TEST_SHIFTS = (
    ("feature-noise", 4),
    ("feature-noise", 5),
    ("covariance-scale", 5),
    ("prior-shift", 3),
)


def default_grid():
    return tuple((k, s) for k in DEFAULT_GRID_KINDS for s in DEFAULT_GRID_SEVERITIES)


def build_metasets(
    world: SyntheticWorld,
    n_per_set: int,
    seed: int,
    grid=None,
    test_shifts=DEFAULT_TEST_SHIFTS,
) -> MetaSetCollection:
    """Generate one member per (kind, severity) grid point.

    The grid must not share any (kind, severity) pair with the held-out test
    shifts, otherwise evaluation would leak the training condition.
    """
    grid = default_grid() if grid is None else tuple(grid)
    if len(grid) != len(set(grid)):
        raise ConfigError("duplicate (kind, severity) pairs in the meta-set grid")
    overlap = sorted(set(grid) & set(tuple(t) for t in test_shifts))
    if overlap:
        raise ConfigError(f"meta-set grid overlaps held-out test shifts: {overlap}")
    members, transforms = [], []
    for i, (kind, severity) in enumerate(grid):
        tr = ShiftTransform(kind, severity, seed=child_seed(seed, i, 1))
        name = f"meta-{i:02d}-{kind}-s{severity}"
        members.append(
            generate_split(world, n_per_set, seed=child_seed(seed, i, 0), transforms=tr, name=name)
        )
        transforms.append(tr)
    return MetaSetCollection(members=tuple(members), transforms=tuple(transforms))


def build_test_sets(world: SyntheticWorld, n: int, seed: int, shifts=DEFAULT_TEST_SHIFTS):
    """Held-out shifted test tables, one per (kind, severity) pair."""
    out = []
    for i, (kind, severity) in enumerate(shifts):
        tr = ShiftTransform(kind, severity, seed=child_seed(seed, 7000 + i, 1))
        name = f"test-{kind}-s{severity}"
        out.append(
            generate_split(world, n, seed=child_seed(seed, 7000 + i, 0), transforms=tr, name=name)
        )
    return out


def save_metasets(collection: MetaSetCollection, out_dir) -> list:
    """Write members as LGTS files plus a manifest; returns the paths written."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    entries = []
    for member, tr in zip(collection.members, collection.transforms):
        fname = member.name + ".lgts"
        write_logits_file(member, os.path.join(out_dir, fname))
        paths.append(os.path.join(out_dir, fname))
        entries.append(
            {
                "file": fname,
                "kind": tr.kind if tr else None,
                "severity": tr.severity if tr else None,
                "seed": tr.seed if tr else None,
            }
        )
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    atomic_write_text(manifest_path, json.dumps(entries, indent=1) + "\n")
    paths.append(manifest_path)
    return paths


def load_metasets(in_dir) -> MetaSetCollection:
    """Read every .lgts file in a directory back into a collection.

    With a manifest present, its order and transform tags are honored;
    otherwise files load in sorted order with no tags.
    """
    in_dir = os.fspath(in_dir)
    manifest_path = os.path.join(in_dir, MANIFEST_NAME)
    members, transforms = [], []
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
        for e in entries:
            members.append(read_logits_file(os.path.join(in_dir, e["file"])))
            if e.get("kind") is not None:
                transforms.append(ShiftTransform(e["kind"], e["severity"], e.get("seed", 0)))
            else:
                transforms.append(None)
    else:
        files = sorted(f for f in os.listdir(in_dir) if f.endswith(".lgts"))
        for f in files:
            members.append(read_logits_file(os.path.join(in_dir, f)))
            transforms.append(None)
    return MetaSetCollection(members=tuple(members), transforms=tuple(transforms))


def world_to_dict(world: SyntheticWorld) -> dict:
    return {
        "class_means": world.class_means.tolist(),
        "noise_scale": world.noise_scale,
        "priors": world.priors.tolist(),
        "overconfidence": world.overconfidence,
        "seed": world.seed,
    }


def world_from_dict(d: dict) -> SyntheticWorld:
    return SyntheticWorld(
        class_means=np.asarray(d["class_means"], dtype=np.float64),
        noise_scale=float(d["noise_scale"]),
        priors=np.asarray(d["priors"], dtype=np.float64),
        overconfidence=float(d["overconfidence"]),
        seed=int(d["seed"]),
    )


def save_world(world: SyntheticWorld, path) -> None:
    atomic_write_text(path, json.dumps(world_to_dict(world), indent=1) + "\n")


def load_world(path) -> SyntheticWorld:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        return world_from_dict(json.load(fh))
