"""Ground-truth generators for tests: analytic MI, plug-in discrete MI, synthetic corpora.

Nothing here imports from the estimator code; the numbers produced are meant
to check that code from the outside.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Record
from .errors import DomainError, UsageError

CORPUS_KINDS = ("separable", "noisy", "taxonomy-pair", "regression", "xor")


def gaussian_mi(rho: float) -> float:
    """MI in nats between the two coordinates of a unit bivariate Gaussian with correlation rho."""
    if not abs(rho) < 1:
        raise DomainError(f"|rho| must be < 1, got {rho}")
    return -0.5 * math.log1p(-rho * rho)


def sample_correlated_gaussians(rho: float, n: int, seed: int = 0, dim: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Draw n pairs (x, z) with corr(x_k, z_k) = rho per coordinate; total MI is dim * gaussian_mi(rho)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    e = rng.standard_normal((n, dim))
    z = rho * x + math.sqrt(1 - rho * rho) * e
    return x, z


def discrete_mi_bruteforce(joint_counts) -> float:
    """Plug-in MI (nats) of an empirical joint count table, by enumerating every cell."""
    table = [[float(c) for c in row] for row in joint_counts]
    if any(c < 0 for row in table for c in row):
        raise UsageError("counts must be non-negative")
    total = sum(c for row in table for c in row)
    if total <= 0:
        raise UsageError("count table has zero total")
    n_cols = len(table[0])
    row_tot = [sum(row) for row in table]
    col_tot = [sum(table[i][j] for i in range(len(table))) for j in range(n_cols)]
    mi = 0.0
    for i, row in enumerate(table):
        for j, c in enumerate(row):
            if c == 0:
                continue
            p = c / total
            mi += p * math.log(p / ((row_tot[i] / total) * (col_tot[j] / total)))
    return max(mi, 0.0)


# --- synthetic corpora ------------------------------------------------------

@dataclass
class TaxonomyPair:
    source: Dataset
    target: Dataset
    label_map: dict[str, list[str]]   # source (coarse) label -> target (fine) labels


def _filler(rng: random.Random, lo: int = 6, hi: int = 14, vocab: int = 400) -> list[str]:
    return [f"w{rng.randrange(vocab)}" for _ in range(rng.randint(lo, hi))]


def _plant(rng: random.Random, words: list[str], planted: list[str]) -> str:
    for p in planted:
        words.insert(rng.randint(0, len(words)), p)
    return " ".join(words)


def _separable(rng, n_train, n_val, n_test):
    classes = ["a", "b", "c"]
    pools = {c: [f"key{c}{j}" for j in range(5)] for c in classes}

    def gen(n):
        out = []
        for _ in range(n):
            c = rng.choice(classes)
            out.append(Record(_plant(rng, _filler(rng), rng.sample(pools[c], 2)), c))
        return out

    return Dataset("synthetic-separable", "classification", gen(n_train), gen(n_val), gen(n_test),
                   label_set=classes)


NOISY_FLIP = 0.15        # train label noise
NOISY_TOPIC_MATCH = 0.5  # chance the train topic token names the true class


def _noisy(rng, n_train, n_val, n_test):
    # Signal keywords decide the label. Noise: flipped train labels, words shared
    # between class pairs, stray keywords from other classes, and a topic token
    # that leaks the label in train only.
    classes = ["neg", "neu", "pos"]
    pools = {c: [f"sig{c}{j}" for j in range(6)] for c in classes}
    shared = {("neg", "neu"): ["amb0", "amb1"], ("neu", "pos"): ["amb2", "amb3"], ("neg", "pos"): ["amb4", "amb5"]}
    topics = {c: f"topic{c}" for c in classes}

    def gen(n, train):
        out = []
        for _ in range(n):
            c = rng.choice(classes)
            planted = [rng.choice(pools[c])]
            if rng.random() < 0.35:
                other = rng.choice([o for o in classes if o != c])
                key = tuple(sorted((c, other), key=classes.index))
                planted.append(rng.choice(shared[key]))
            if rng.random() < 0.3:
                planted.append(rng.choice(pools[rng.choice(classes)]))
            if train and rng.random() < NOISY_TOPIC_MATCH:
                topic = topics[c]
            else:
                topic = topics[rng.choice(classes)]
            planted.append(topic)
            label = c
            if train and rng.random() < NOISY_FLIP:
                label = rng.choice([o for o in classes if o != c])
            out.append(Record(_plant(rng, _filler(rng), planted), label))
        return out

    return Dataset("synthetic-noisy", "classification", gen(n_train, True), gen(n_val, False),
                   gen(n_test, False), label_set=classes)


def _taxonomy_pair(rng, n_train, n_val, n_test):
    fine = [f"fine{j}" for j in range(6)]
    coarse_of = {f: f"coarse{j // 2}" for j, f in enumerate(fine)}
    pools = {f: [f"kw{f}{j}" for j in range(4)] for f in fine}
    coarse_words = {c: [f"kw{c}{j}" for j in range(2)] for c in set(coarse_of.values())}

    def gen(n, as_coarse):
        out = []
        for _ in range(n):
            f = rng.choice(fine)
            planted = [rng.choice(pools[f]), rng.choice(coarse_words[coarse_of[f]])]
            out.append(Record(_plant(rng, _filler(rng), planted), coarse_of[f] if as_coarse else f))
        return out

    coarse_labels = sorted(set(coarse_of.values()))
    source = Dataset("synthetic-taxonomy-coarse", "classification", gen(n_train, True), gen(n_val, True),
                     gen(n_test, True), label_set=coarse_labels)
    target = Dataset("synthetic-taxonomy-fine", "classification", gen(n_train, False), gen(n_val, False),
                     gen(n_test, False), label_set=fine)
    label_map = {c: [f for f in fine if coarse_of[f] == c] for c in coarse_labels}
    return TaxonomyPair(source, target, label_map)


def _regression(rng, n_train, n_val, n_test):
    pos = [f"good{j}" for j in range(5)]
    neg = [f"bad{j}" for j in range(5)]

    def gen(n):
        out = []
        for _ in range(n):
            k_pos, k_neg = rng.randint(0, 3), rng.randint(0, 3)
            planted = [rng.choice(pos) for _ in range(k_pos)] + [rng.choice(neg) for _ in range(k_neg)]
            score = 3.0 + 0.6 * (k_pos - k_neg) + rng.gauss(0.0, 0.25)
            out.append(Record(_plant(rng, _filler(rng), planted), (min(max(score, 1.0), 5.0),)))
        return out

    return Dataset("synthetic-regression", "regression", gen(n_train), gen(n_val), gen(n_test),
                   target_dim=1, metrics=["pearson", "spearman"])


def _xor(rng, n_train, n_val, n_test):
    def gen(n):
        out = []
        for _ in range(n):
            has_a, has_b = rng.random() < 0.5, rng.random() < 0.5
            planted = (["markera"] if has_a else []) + (["markerb"] if has_b else [])
            out.append(Record(_plant(rng, _filler(rng), planted), "1" if has_a != has_b else "0"))
        return out

    return Dataset("synthetic-xor", "classification", gen(n_train), gen(n_val), gen(n_test), label_set=["0", "1"])


_SIZES = {"separable": (600, 150, 150), "noisy": (900, 300, 300), "taxonomy-pair": (900, 200, 300),
          "regression": (600, 150, 150), "xor": (2000, 300, 400)}


def make_synthetic_corpus(kind: str, seed: int = 0, sizes: tuple[int, int, int] | None = None):
    """Build a desk-scale corpus with planted keyword structure.

    Returns a :class:`Dataset`, except for ``taxonomy-pair`` which returns a
    :class:`TaxonomyPair` (coarse source, fine target, coarse->fine map).
    """
    builders = {"separable": _separable, "noisy": _noisy, "taxonomy-pair": _taxonomy_pair,
                "regression": _regression, "xor": _xor}
    if kind not in builders:
        raise UsageError(f"unknown corpus kind {kind!r}; choose from {CORPUS_KINDS}")
    rng = random.Random(f"{kind}:{seed}")
    return builders[kind](rng, *(sizes or _SIZES[kind]))
