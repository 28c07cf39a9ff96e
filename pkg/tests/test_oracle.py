import math

import numpy as np
import pytest
import torch

from cifm.errors import DomainError
from cifm.oracle import discrete_mi_bruteforce, gaussian_mi, make_synthetic_corpus, sample_correlated_gaussians


def test_gaussian_mi_closed_form():
    assert gaussian_mi(0.0) == 0.0
    assert abs(gaussian_mi(0.8) - 0.5108256237659907) < 1e-12
    assert abs(gaussian_mi(0.99) - 1.9587) < 5e-4
    assert abs(gaussian_mi(0.99) + 0.5 * math.log(0.0199)) < 1e-12
    with pytest.raises(DomainError):
        gaussian_mi(1.0)


def test_gaussian_samples_have_requested_correlation():
    x, z = sample_correlated_gaussians(0.5, 20000, seed=0)
    assert abs(np.corrcoef(x[:, 0], z[:, 0])[0, 1] - 0.5) < 0.02


def test_discrete_mi_examples():
    assert abs(discrete_mi_bruteforce([[25, 25], [25, 25]])) < 1e-12
    assert abs(discrete_mi_bruteforce([[50, 0], [0, 50]]) - math.log(2)) < 1e-12
    expected = 2 * 0.4 * math.log(0.4 / 0.25) + 2 * 0.1 * math.log(0.1 / 0.25)
    assert abs(discrete_mi_bruteforce([[40, 10], [10, 40]]) - expected) < 1e-12


def test_discrete_mi_agrees_with_gaussian_binning():
    # quadrant counts of a correlated Gaussian: MI of the sign pair is analytic
    rho = 0.6
    x, z = sample_correlated_gaussians(rho, 200000, seed=1)
    counts = [[int(((x[:, 0] < 0) & (z[:, 0] < 0)).sum()), int(((x[:, 0] < 0) & (z[:, 0] >= 0)).sum())],
              [int(((x[:, 0] >= 0) & (z[:, 0] < 0)).sum()), int(((x[:, 0] >= 0) & (z[:, 0] >= 0)).sum())]]
    p_same = 0.5 + math.asin(rho) / math.pi
    analytic = p_same * math.log(2 * p_same) + (1 - p_same) * math.log(2 * (1 - p_same))
    assert abs(discrete_mi_bruteforce(counts) - analytic) < 0.005


@pytest.mark.parametrize("kind", ["separable", "noisy", "regression", "xor"])
def test_corpora_deterministic(kind):
    a = make_synthetic_corpus(kind, seed=3)
    b = make_synthetic_corpus(kind, seed=3)
    assert a.train == b.train and a.test == b.test
    assert make_synthetic_corpus(kind, seed=4).train != a.train


def test_taxonomy_coarse_is_merge_of_fine():
    pair = make_synthetic_corpus("taxonomy-pair", seed=0)
    for coarse, fines in pair.label_map.items():
        assert all(f in pair.target.label_set for f in fines)
    covered = [f for fs in pair.label_map.values() for f in fs]
    assert sorted(covered) == sorted(pair.target.label_set)


def test_separable_admits_linear_probe():
    from cifm.data import HashingTokenizer, encode_records

    ds = make_synthetic_corpus("separable", seed=0)
    tok = HashingTokenizer(vocab_size=2000)

    def bag(records):
        enc = encode_records(records, ds, tok)
        x = torch.zeros(len(records), 2000)
        x.scatter_add_(1, enc.token_ids, enc.attention_mask.float())
        return x, enc.labels

    xtr, ytr = bag(ds.train)
    xte, yte = bag(ds.test)
    torch.manual_seed(0)
    lin = torch.nn.Linear(2000, ds.num_outputs)
    opt = torch.optim.Adam(lin.parameters(), lr=0.05, weight_decay=1e-2)
    for _ in range(200):
        opt.zero_grad()
        torch.nn.functional.cross_entropy(lin(xtr), ytr).backward()
        opt.step()
    assert (lin(xte).argmax(1) == yte).float().mean() > 0.95
