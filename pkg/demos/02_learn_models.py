"""
Learning an SPN and a mixture of Chow-Liu trees
===============================================

Both learners read the same binary matrix. We compare held-out
log-likelihoods and check that each model sums to one over all 2^n states.
"""
import itertools

import numpy as np

from tpmembed import LearnSpnParams, fit_mixture_em, learn_spn_b

rng = np.random.default_rng(0)
n = 10
prototypes = rng.random((4, n)) < 0.5


def sample(m):
    z = rng.integers(0, 4, m)
    return (prototypes[z] ^ (rng.random((m, n)) < 0.1)).astype(np.uint8)


train, test = sample(3000), sample(1000)

spn = learn_spn_b(train, LearnSpnParams(m_min_instances=100, rho=20, alpha=0.1, seed=0))
print("SPN node counts:", spn.counts())

mt, history = fit_mixture_em(train, C=4, iters=50, seed=0)
print(f"EM ran {len(history) - 1} iterations, LL {history[0]:.1f} -> {history[-1]:.1f}")

for name, model in (("SPN", spn), ("MT", mt)):
    print(f"{name:3s} held-out mean log-likelihood: {model.log_joint(test).mean():.4f}")

# Exhaustive normalization check (1024 states).
states = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)
for name, model in (("SPN", spn), ("MT", mt)):
    print(f"{name:3s} sum over all states: {np.exp(model.log_joint(states)).sum():.12f}")
