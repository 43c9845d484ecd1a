"""Synthetic tumor/normal read pileups with known ground truth.

A pair matrix stacks `depth` reads over a `width`-locus window, once for the
normal tissue and once for the tumor.  Examples are generated from three
hypotheses about the center locus:

  * somatic: tumor reads carry an alternate allele with probability vaf,
    the normal is clean reference plus sequencing error;
  * germline-het: both tissues carry the alternate with probability 0.5;
  * noise-artifact: tumor center substitutes at an elevated error rate.

Somatic is the positive class; the other two are confounders labeled 0.
The module also provides the fixed 3-channel base encoding, dataset
balancing/splitting/perturbation transforms, an exact Bayes oracle for the
generative model, and a binary file format for labeled datasets.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import (
    ConfigurationError,
    DegenerateDatasetError,
    EmptyInputError,
    FormatError,
    NumericError,
    RangeError,
    ShapeError,
)


class Base(enum.IntEnum):
    A = 0
    C = 1
    G = 2
    T = 3
    GAP = 4


N_BASES = 4  # real nucleotides; GAP is a padding symbol, never sequenced

# Fixed 3-channel palette. Any injective base -> vector map carries the same
# information; this one is frozen so encodings are bit-exact across runs.
PALETTE = np.array(
    [
        [1.0, 0.0, 0.0],  # A
        [0.0, 1.0, 0.0],  # C
        [0.0, 0.0, 1.0],  # G
        [1.0, 1.0, 0.0],  # T
        [0.0, 0.0, 0.0],  # GAP
    ],
    dtype=np.float64,
)


def center_column(width: int) -> int:
    """Index of the candidate-variant locus inside the window."""
    return width // 2


def _as_base_grid(name: str, grid) -> np.ndarray:
    arr = np.asarray(grid)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ShapeError(f"{name} must hold integer base codes, got dtype {arr.dtype}")
    if arr.min() < 0 or arr.max() > Base.GAP:
        raise RangeError(f"{name} contains base codes outside [0, {int(Base.GAP)}]")
    return arr.astype(np.uint8)


@dataclass(eq=False)
class PairMatrix:
    """Aligned normal and tumor read stacks over one genomic window."""

    normal: np.ndarray  # (depth, width) base codes
    tumor: np.ndarray  # (depth, width) base codes

    def __post_init__(self):
        self.normal = _as_base_grid("normal", self.normal)
        self.tumor = _as_base_grid("tumor", self.tumor)
        if self.normal.shape != self.tumor.shape:
            raise ShapeError(
                f"normal shape {self.normal.shape} != tumor shape {self.tumor.shape}"
            )

    @property
    def depth(self) -> int:
        return self.normal.shape[0]

    @property
    def width(self) -> int:
        return self.normal.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairMatrix):
            return NotImplemented
        return np.array_equal(self.normal, other.normal) and np.array_equal(
            self.tumor, other.tumor
        )


def _check_label(label) -> int:
    if label not in (0, 1):
        raise RangeError(f"label must be 0 or 1, got {label!r}")
    return int(label)


@dataclass(eq=False)
class LabeledExample:
    pair: PairMatrix
    label: int  # 1 = somatic, 0 = germline or artifact

    def __post_init__(self):
        self.label = _check_label(self.label)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledExample):
            return NotImplemented
        return self.label == other.label and self.pair == other.pair


@dataclass(eq=False)
class EncodedExample:
    """3-channel feature matrix (depth x 6*width) with its label."""

    features: np.ndarray
    label: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] % 6 != 0:
            raise ShapeError(
                f"features must be (depth, 6*width), got shape {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise NumericError("features contain non-finite values")
        self.label = _check_label(self.label)

    @property
    def depth(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1] // 6

    def __eq__(self, other) -> bool:
        if not isinstance(other, EncodedExample):
            return NotImplemented
        return self.label == other.label and np.array_equal(
            self.features, other.features
        )


@dataclass
class GeneratorConfig:
    depth: int = 100
    width: int = 10
    error_rate: float = 0.01
    artifact_error_rate: float = 0.05
    vaf: float = 0.2
    germline_fraction: float = 0.5
    class_balance: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.depth < 1 or self.width < 1:
            raise ConfigurationError(
                f"depth and width must be >= 1, got {self.depth}x{self.width}"
            )
        if not 0.0 <= self.error_rate <= self.artifact_error_rate < 1.0:
            raise ConfigurationError(
                "rates must satisfy 0 <= error_rate <= artifact_error_rate < 1, "
                f"got {self.error_rate} and {self.artifact_error_rate}"
            )
        if not 0.0 < self.vaf <= 1.0:
            raise ConfigurationError(f"vaf must be in (0, 1], got {self.vaf}")
        for name in ("germline_fraction", "class_balance"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {value}")


@dataclass(eq=False)
class Dataset:
    """Ordered examples of one shared shape, with optional generator provenance."""

    examples: list = field(default_factory=list)
    generator_config: GeneratorConfig | None = None

    def __post_init__(self):
        self.examples = list(self.examples)
        shapes = {(ex.depth if isinstance(ex, EncodedExample) else ex.pair.depth,
                   ex.width if isinstance(ex, EncodedExample) else ex.pair.width)
                  for ex in self.examples}
        if len(shapes) > 1:
            raise ShapeError(f"examples disagree on (depth, width): {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.examples == other.examples
            and self.generator_config == other.generator_config
        )

    @property
    def shape(self) -> tuple[int, int]:
        """(depth, width) of the examples; falls back to config for empty sets."""
        if self.examples:
            ex = self.examples[0]
            if isinstance(ex, EncodedExample):
                return ex.depth, ex.width
            return ex.pair.depth, ex.pair.width
        if self.generator_config is not None:
            return self.generator_config.depth, self.generator_config.width
        return 0, 0

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)


# Generative hypotheses for one example.
_SOMATIC, _GERMLINE, _ARTIFACT = 0, 1, 2


def _substituted(ref_row: np.ndarray, rate: float, shape, rng) -> np.ndarray:
    """Copy of the reference with i.i.d. substitutions, uniform over the 3 others."""
    grid = np.broadcast_to(ref_row, shape).copy()
    mask = rng.random(shape) < rate
    offsets = rng.integers(1, N_BASES, size=shape, dtype=np.uint8)
    grid[mask] = (grid[mask] + offsets[mask]) % N_BASES
    return grid


def _generate_pair(kind: int, cfg: GeneratorConfig, rng) -> PairMatrix:
    d, w = cfg.depth, cfg.width
    c = center_column(w)
    ref = rng.integers(0, N_BASES, size=w, dtype=np.uint8)
    alt = np.uint8((int(ref[c]) + int(rng.integers(1, N_BASES))) % N_BASES)

    normal = _substituted(ref, cfg.error_rate, (d, w), rng)
    if kind == _GERMLINE:
        het = rng.random(d) < 0.5
        normal[:, c] = np.where(het, alt, ref[c])

    tumor = _substituted(ref, cfg.error_rate, (d, w), rng)
    if kind == _SOMATIC:
        carries = rng.random(d) < cfg.vaf
        tumor[:, c] = np.where(carries, alt, ref[c])
    elif kind == _GERMLINE:
        het = rng.random(d) < 0.5
        tumor[:, c] = np.where(het, alt, ref[c])
    else:
        substitutes = rng.random(d) < cfg.artifact_error_rate
        offsets = rng.integers(1, N_BASES, size=d, dtype=np.uint8)
        tumor[:, c] = np.where(substitutes, (ref[c] + offsets) % N_BASES, ref[c])

    return PairMatrix(normal, tumor)


def generate_dataset(cfg: GeneratorConfig, count: int, seed: int) -> Dataset:
    """Draw `count` labeled examples; deterministic in (cfg, count, seed).

    Class counts are exact: round(count * class_balance) positives, negatives
    split by germline_fraction, hypothesis order shuffled once.  Each example
    is generated from its own derived stream, so generation order never
    changes content.
    """
    cfg.validate()
    if count < 1:
        raise EmptyInputError(f"count must be >= 1, got {count}")
    n_pos = round(count * cfg.class_balance)
    n_neg = count - n_pos
    n_germ = round(n_neg * cfg.germline_fraction)
    kinds = np.array(
        [_SOMATIC] * n_pos + [_GERMLINE] * n_germ + [_ARTIFACT] * (n_neg - n_germ),
        dtype=np.int64,
    )
    rngmod.stream(seed, rngmod.GENERATE).shuffle(kinds)
    examples = [
        LabeledExample(
            _generate_pair(int(kinds[i]), cfg, rngmod.stream(seed, rngmod.GENERATE, i)),
            1 if kinds[i] == _SOMATIC else 0,
        )
        for i in range(count)
    ]
    return Dataset(examples, generator_config=cfg)


def encode_pair(pair: PairMatrix, label: int = 0) -> EncodedExample:
    """Map each base to its 3-channel vector; normal columns first, then tumor.

    Row i of the output concatenates the palette vectors of the 2*width bases
    in read i, giving a (depth, 6*width) matrix.
    """
    codes = np.concatenate([pair.normal, pair.tumor], axis=1)
    features = PALETTE[codes].reshape(pair.depth, 6 * pair.width)
    return EncodedExample(features, label)


def encode_dataset(ds: Dataset) -> Dataset:
    encoded = [encode_pair(ex.pair, ex.label) for ex in ds]
    return Dataset(encoded, generator_config=ds.generator_config)


def features_matrix(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Flatten an encoded dataset into (n, depth*6*width) features and labels."""
    if len(ds) == 0:
        raise EmptyInputError("cannot build a feature matrix from an empty dataset")
    if not isinstance(ds[0], EncodedExample):
        raise ConfigurationError("dataset must be encoded first")
    x = np.stack([ex.features.reshape(-1) for ex in ds])
    return x, ds.labels()


def balance_undersample(ds: Dataset, seed: int) -> Dataset:
    """Subsample the majority class to the minority count, then reshuffle."""
    if len(ds) == 0:
        raise EmptyInputError("cannot balance an empty dataset")
    labels = ds.labels()
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateDatasetError(
            f"both classes required, got {len(pos)} positives and {len(neg)} negatives"
        )
    rng = rngmod.stream(seed, rngmod.BALANCE)
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    kept_majority = rng.choice(majority, size=len(minority), replace=False)
    kept = np.concatenate([minority, kept_majority])
    rng.shuffle(kept)
    return Dataset([ds[int(i)] for i in kept], generator_config=ds.generator_config)


def split_dataset(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then a floor(train_fraction * n) / remainder partition."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(
            f"train_fraction must be in (0, 1), got {train_fraction}"
        )
    order = rngmod.stream(seed, rngmod.SPLIT).permutation(len(ds))
    n_train = math.floor(train_fraction * len(ds))
    train = Dataset([ds[int(i)] for i in order[:n_train]], ds.generator_config)
    test = Dataset([ds[int(i)] for i in order[n_train:]], ds.generator_config)
    return train, test


def _perturb_with_rng(ex: EncodedExample, sigma: float, rng) -> EncodedExample:
    noise = rng.standard_normal(ex.features.shape)
    return EncodedExample(ex.features + sigma * noise, ex.label)


def perturb_gaussian(ex: EncodedExample, sigma: float, seed: int) -> EncodedExample:
    """Add i.i.d. Normal(0, sigma^2) noise to every feature; label unchanged."""
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return EncodedExample(ex.features.copy(), ex.label)
    return _perturb_with_rng(ex, sigma, rngmod.stream(seed, rngmod.PERTURB))


def perturb_dataset(ds: Dataset, sigma: float, seed: int) -> Dataset:
    """Perturb each example from a stream derived from (seed, index).

    Examples are independent given their streams, so they could be processed
    concurrently; the output preserves index order.
    """
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    out = []
    for i, ex in enumerate(ds):
        if sigma == 0:
            out.append(EncodedExample(ex.features.copy(), ex.label))
        else:
            out.append(_perturb_with_rng(ex, sigma, rngmod.stream(seed, rngmod.PERTURB, i)))
    return Dataset(out, generator_config=ds.generator_config)


def reduce_depth(pair: PairMatrix, new_depth: int, pad: bool = False) -> PairMatrix:
    """Keep the first new_depth reads; optionally pad back to full depth with GAPs."""
    if not 1 <= new_depth <= pair.depth:
        raise RangeError(
            f"new_depth must be in [1, {pair.depth}], got {new_depth}"
        )
    normal = pair.normal[:new_depth].copy()
    tumor = pair.tumor[:new_depth].copy()
    if pad and new_depth < pair.depth:
        gap_rows = np.full((pair.depth - new_depth, pair.width), Base.GAP, dtype=np.uint8)
        normal = np.concatenate([normal, gap_rows])
        tumor = np.concatenate([tumor, gap_rows])
    return PairMatrix(normal, tumor)


def reduce_dataset_depth(ds: Dataset, new_depth: int, pad: bool = False) -> Dataset:
    reduced = [
        LabeledExample(reduce_depth(ex.pair, new_depth, pad), ex.label) for ex in ds
    ]
    return Dataset(reduced, generator_config=ds.generator_config)


# ---------------------------------------------------------------------------
# Exact Bayes oracle
# ---------------------------------------------------------------------------

def _center_counts(grid: np.ndarray, width: int) -> np.ndarray:
    """Histogram of real bases in the center column; GAPs are missing data."""
    column = grid[:, center_column(width)]
    return np.bincount(column[column < N_BASES], minlength=N_BASES).astype(np.float64)


ALLELE_PAIRS = np.array(
    [(r, a) for r in range(N_BASES) for a in range(N_BASES) if a != r], dtype=np.int64
)


@functools.lru_cache(maxsize=16)
def _emission_log_tables(
    error_rate: float, artifact_error_rate: float, vaf: float
) -> tuple[np.ndarray, np.ndarray]:
    """Log emission probabilities at the center column.

    Returns (normal, tumor) arrays of shape (3 hypotheses, 12 allele pairs,
    4 bases); zero-probability bases come out as -inf.  Per hypothesis:
    somatic tumor reads carry the alternate with probability vaf and are
    otherwise clean reference, germline-het reads split evenly between the
    two alleles in both tissues, artifact tumor reads substitute at the
    elevated rate, and every other column is reference plus uniform error.
    """
    rows = np.arange(len(ALLELE_PAIRS))
    ref, alt = ALLELE_PAIRS[:, 0], ALLELE_PAIRS[:, 1]

    noisy_ref = np.full((len(rows), N_BASES), error_rate / 3.0)
    noisy_ref[rows, ref] = 1.0 - error_rate
    het = np.zeros((len(rows), N_BASES))
    het[rows, ref] = 0.5
    het[rows, alt] = 0.5
    somatic_tumor = np.zeros((len(rows), N_BASES))
    somatic_tumor[rows, alt] = vaf
    somatic_tumor[rows, ref] = 1.0 - vaf
    artifact_tumor = np.full((len(rows), N_BASES), artifact_error_rate / 3.0)
    artifact_tumor[rows, ref] = 1.0 - artifact_error_rate

    normal = np.stack([noisy_ref, het, noisy_ref])
    tumor = np.stack([somatic_tumor, het, artifact_tumor])
    with np.errstate(divide="ignore"):
        log_normal, log_tumor = np.log(normal), np.log(tumor)
    log_normal.flags.writeable = False
    log_tumor.flags.writeable = False
    return log_normal, log_tumor


def _log_likelihood(counts: np.ndarray, log_probs: np.ndarray) -> np.ndarray:
    """Sum of count * ln(prob) over the last axis, with 0 * ln(0) = 0."""
    # masking before the product keeps -inf * 0 from ever forming
    return (np.where(counts > 0.0, log_probs, 0.0) * counts).sum(axis=-1)


def _log_sum_exp(values: np.ndarray) -> float:
    m = np.max(values)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(values - m))))


def oracle_hypothesis_posteriors(pair: PairMatrix, cfg: GeneratorConfig) -> np.ndarray:
    """Exact P(somatic), P(germline), P(artifact) given the center columns.

    The reference and alternate alleles are latent; they are marginalized with
    the generator's priors (reference uniform over 4 bases, alternate uniform
    over the remaining 3).  Off-center columns have identical statistics under
    every hypothesis and cancel, so only center-column counts enter.
    """
    cfg.validate()
    if (cfg.depth, cfg.width) != (pair.depth, pair.width):
        raise ConfigurationError(
            f"config shape {(cfg.depth, cfg.width)} does not match "
            f"pair shape {(pair.depth, pair.width)}"
        )
    n_counts = _center_counts(pair.normal, pair.width)
    t_counts = _center_counts(pair.tumor, pair.width)

    priors = np.array(
        [
            cfg.class_balance,
            (1.0 - cfg.class_balance) * cfg.germline_fraction,
            (1.0 - cfg.class_balance) * (1.0 - cfg.germline_fraction),
        ]
    )
    log_normal, log_tumor = _emission_log_tables(
        cfg.error_rate, cfg.artifact_error_rate, cfg.vaf
    )
    # (3 hypotheses, 12 allele pairs); alleles carry a 1/4 * 1/3 prior
    log_lik = _log_likelihood(n_counts, log_normal) + _log_likelihood(t_counts, log_tumor)
    log_joint = np.full(3, -np.inf)
    for kind in (_SOMATIC, _GERMLINE, _ARTIFACT):
        if priors[kind] == 0.0:
            continue
        log_joint[kind] = (
            math.log(priors[kind]) - math.log(12.0) + _log_sum_exp(log_lik[kind])
        )

    total = _log_sum_exp(log_joint)
    if not np.isfinite(total):
        raise NumericError("observation has zero likelihood under every hypothesis")
    return np.exp(log_joint - total)


def oracle_posterior(pair: PairMatrix, cfg: GeneratorConfig) -> float:
    """Exact posterior probability that the example is somatic."""
    return float(oracle_hypothesis_posteriors(pair, cfg)[_SOMATIC])


# ---------------------------------------------------------------------------
# Binary dataset format
# ---------------------------------------------------------------------------

MAGIC = b"PMX1"
FORMAT_VERSION = 1
_HEADER_SIZE = 20  # magic + version + count + depth + width


def _u32(value: int) -> bytes:
    return int(value).to_bytes(4, "little")


def write_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    """Serialize labeled examples; provenance JSON trails when config is set."""
    for ex in ds:
        if not isinstance(ex, LabeledExample):
            raise ConfigurationError("only base-level (unencoded) datasets can be written")
    depth, width = ds.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_u32(FORMAT_VERSION))
        fh.write(_u32(len(ds)))
        fh.write(_u32(depth))
        fh.write(_u32(width))
        for ex in ds:
            fh.write(bytes([ex.label]))
            fh.write(ex.pair.normal.tobytes())
            fh.write(ex.pair.tumor.tobytes())
        if ds.generator_config is not None:
            blob = json.dumps(
                dataclasses.asdict(ds.generator_config), sort_keys=True
            ).encode("utf-8")
            fh.write(_u32(len(blob)))
            fh.write(blob)


def _read_exact(fh, n: int, offset: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}", offset + len(data))
    return data


def read_dataset(path: str | os.PathLike) -> Dataset:
    """Read a dataset file, validating structure byte by byte."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, 0, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
        version = int.from_bytes(_read_exact(fh, 4, 4, "format version"), "little")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", 4)
        count = int.from_bytes(_read_exact(fh, 4, 8, "example count"), "little")
        depth = int.from_bytes(_read_exact(fh, 4, 12, "depth"), "little")
        width = int.from_bytes(_read_exact(fh, 4, 16, "width"), "little")
        if count > 0 and (depth < 1 or width < 1):
            raise FormatError(f"invalid dimensions {depth}x{width}", 12)

        offset = _HEADER_SIZE
        grid_bytes = depth * width
        examples = []
        for index in range(count):
            label = _read_exact(fh, 1, offset, f"label of example {index}")[0]
            if label not in (0, 1):
                raise FormatError(f"label byte must be 0 or 1, got {label}", offset)
            offset += 1
            raw = _read_exact(fh, 2 * grid_bytes, offset, f"grids of example {index}")
            codes = np.frombuffer(raw, dtype=np.uint8)
            bad = np.flatnonzero(codes > Base.GAP)
            if bad.size:
                raise FormatError(
                    f"base code {codes[bad[0]]} out of range", offset + int(bad[0])
                )
            offset += 2 * grid_bytes
            normal = codes[:grid_bytes].reshape(depth, width)
            tumor = codes[grid_bytes:].reshape(depth, width)
            examples.append(LabeledExample(PairMatrix(normal, tumor), int(label)))

        cfg = None
        trailer = fh.read(4)
        if trailer:
            if len(trailer) != 4:
                raise FormatError("truncated provenance length", offset + len(trailer))
            blob_len = int.from_bytes(trailer, "little")
            offset += 4
            if blob_len:
                blob = _read_exact(fh, blob_len, offset, "provenance blob")
                try:
                    cfg = GeneratorConfig(**json.loads(blob.decode("utf-8")))
                except (ValueError, TypeError) as exc:
                    raise FormatError(f"bad provenance blob: {exc}", offset) from exc
                offset += blob_len
            extra = fh.read(1)
            if extra:
                raise FormatError("trailing bytes after provenance", offset)

    return Dataset(examples, generator_config=cfg)
