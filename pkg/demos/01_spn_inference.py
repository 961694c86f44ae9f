"""
Marginal inference in a small sum-product network
=================================================

Build a two-component mixture over two bits by hand, then ask it
questions with partial evidence. Unobserved variables are summed out
exactly, so the empty query always returns log 1 = 0.
"""
import math

import numpy as np

from tpmembed import LeafNode, ProductNode, Spn, SumNode, spn_log_marginal, validate_spn
from tpmembed.data import PartialEvidence

# Nodes are listed children-first; the last node is the root.
nodes = [
    LeafNode.bernoulli(0, 0.2), LeafNode.bernoulli(1, 0.6), ProductNode((0, 1)),
    LeafNode.bernoulli(0, 0.9), LeafNode.bernoulli(1, 0.1), ProductNode((3, 4)),
    SumNode.from_weights((2, 5), (0.3, 0.7)),
]
spn = Spn(nodes)
print(validate_spn(spn))

# P(X0 = 1) = 0.3 * 0.2 + 0.7 * 0.9
print("P(X0=1)      =", math.exp(spn_log_marginal(spn, PartialEvidence((0,), (1,)))))
print("P(X0=1,X1=0) =", math.exp(spn_log_marginal(spn, PartialEvidence((0, 1), (1, 0)))))
print("P()          =", math.exp(spn_log_marginal(spn, PartialEvidence())))

# Batched evaluation: one mask of observed variables, many rows.
X = np.array([[1, 0], [0, 1], [1, 1]])
print("log P(X0) per row:", spn.log_marginal_batch(X, [0]))

# Models round-trip through a line-oriented text format.
print(spn.to_text())
