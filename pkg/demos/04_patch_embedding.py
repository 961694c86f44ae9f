"""
Sliding-window patch features
=============================

Instead of querying a model over whole images, fit a small model on
random contiguous patches of length d. Every window of every image then
becomes one feature, namely the patch model's log joint for that window.
"""
from tpmembed import extract_random_patches, fit_mixture_em, make_rectangles_noise
from tpmembed.embed import n_windows, rand_patch_embedding

data = make_rectangles_noise(500, seed=3)
patches = extract_random_patches(data, s=5000, d=8, seed=0)
model, history = fit_mixture_em(patches, C=5, iters=40, seed=0)
print(f"patch model: {model.n_components} trees over {patches.n} variables")

E = rand_patch_embedding(model, data, d=8, stride=4)
print("windows per image:", n_windows(data.n, 8, 4), "embedding shape:", E.shape)
print("first image features:", E.values[0].round(2))
