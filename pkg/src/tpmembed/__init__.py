"""Embeddings from tractable probabilistic models via random query evaluation."""
from .cltree import (ChowLiuTree, MixtureOfTrees, fit_mixture_em, learn_chow_liu,
                     mt_log_marginal, tree_log_marginal, weighted_mutual_information)
from .data import (BinaryDataset, PartialEvidence, attach_geometry, load_binary_dataset,
                   make_rectangles_noise, split_dataset, write_binary_dataset)
from .embed import (EmbeddingMatrix, QuerySet, extract_random_patches, gen_rect_queries,
                    rand_patch_embedding, rand_query_embedding)
from .evaluate import (C_GRID, CurveResult, LogisticModel, OptimizerSettings, accuracy,
                       feature_curve, select_C, train_logreg_ovr)
from .learnspn import LearnSpnParams, cluster_rows, dependency_components, g_test, learn_spn_b
from .pipeline import ExperimentConfig, load_config, parse_config, run_experiment
from .spn import (LeafNode, ProductNode, Spn, SumNode, load_spn, parse_spn, spn_log_eval_batch,
                  spn_log_marginal, validate_spn)

__version__ = "0.1.0"
