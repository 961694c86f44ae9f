import numpy as np
import pytest

from tpmembed.cltree import ChowLiuTree, MixtureOfTrees
from tpmembed.spn import LeafNode, ProductNode, Spn, SumNode


def random_spn(n, seed, max_sum_children=3):
    """A random complete and decomposable SPN over variables 0..n-1."""
    rng = np.random.default_rng(seed)
    nodes = []

    def build(scope, sum_level):
        if len(scope) == 1:
            nodes.append(LeafNode.bernoulli(scope[0], rng.uniform(0.05, 0.95)))
            return len(nodes) - 1
        if sum_level:
            k = int(rng.integers(2, max_sum_children + 1))
            kids = [build(scope, False) for _ in range(k)]
            w = rng.dirichlet(np.ones(k))
            nodes.append(SumNode.from_weights(kids, w))
        else:
            perm = list(rng.permutation(scope))
            cut = int(rng.integers(1, len(scope)))
            parts = [sorted(perm[:cut]), sorted(perm[cut:])]
            kids = [build([int(v) for v in p], True) for p in parts]
            nodes.append(ProductNode(tuple(kids)))
        return len(nodes) - 1

    build(list(range(n)), True)
    return Spn(nodes)


def random_tree(n, rng):
    parent = np.full(n, -1)
    for v in range(1, n):
        parent[v] = int(rng.integers(0, v))
    p1 = rng.uniform(0.05, 0.95, size=(n, 2))
    p1[0, 1] = p1[0, 0]
    log_cpt = np.stack([np.log1p(-p1), np.log(p1)], axis=1)
    return ChowLiuTree(parent, log_cpt)


def random_mt(n, C, seed):
    rng = np.random.default_rng(seed)
    lam = rng.dirichlet(np.ones(C))
    return MixtureOfTrees([random_tree(n, rng) for _ in range(C)], np.log(lam))


def sample_mixture(m, n, seed, centers=3, flip=0.1):
    """Binary data from a mixture of noisy prototypes (known to be learnable)."""
    rng = np.random.default_rng(seed)
    protos = rng.random((centers, n)) < 0.5
    z = rng.integers(0, centers, size=m)
    return (protos[z] ^ (rng.random((m, n)) < flip)).astype(np.uint8)


@pytest.fixture
def hand_spn():
    # 0.3 * P(X0)P(X1) with p=(0.2, 0.6)  +  0.7 * with p=(0.9, 0.1)
    nodes = [
        LeafNode.bernoulli(0, 0.2), LeafNode.bernoulli(1, 0.6), ProductNode((0, 1)),
        LeafNode.bernoulli(0, 0.9), LeafNode.bernoulli(1, 0.1), ProductNode((3, 4)),
        SumNode.from_weights((2, 5), (0.3, 0.7)),
    ]
    return Spn(nodes)
