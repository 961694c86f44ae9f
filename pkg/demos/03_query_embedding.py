"""
Random rectangular queries as features
======================================

Each feature is the log-probability a model assigns to the pixels of one
random rectangle of an image. We learn an SPN on synthetic 8x8 images
(wide outlines, tall outlines and noise), embed every split, and trace a
logistic-regression accuracy curve against the raw-pixel baseline.
"""
from tpmembed import (LearnSpnParams, feature_curve, gen_rect_queries, learn_spn_b,
                      make_rectangles_noise, rand_query_embedding, split_dataset)

data = make_rectangles_noise(3000, width=8, height=8, seed=0)
train, valid, test = split_dataset(data, (0.6, 0.2, 0.2), seed=0)
print(train.describe())

spn = learn_spn_b(train, LearnSpnParams(m_min_instances=50, rho=20, seed=0))
queries = gen_rect_queries(train.geometry, k=120, min_side=2, max_side=6, seed=1)

embeddings = [rand_query_embedding(spn, part, queries, workers=4).values
              for part in (train, valid, test)]
labels = [part.labels for part in (train, valid, test)]
raw = [part.samples for part in (train, valid, test)]

curve = feature_curve(embeddings, labels, step=40, raw=raw, workers=4)
print(curve.to_csv())
