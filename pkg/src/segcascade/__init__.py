"""Discriminative segmental cascades: lattices, pruning, hinge-loss training."""
from .lattice import (Alphabet, CycleError, Fst, LatticeError, NoPathError, Segment, SegmentPath,
                      build_hypothesis_space, read_lattice, topological_order, write_lattice)
from .inference import (best_path, density, edit_distance, error_rate, max_marginals,
                        oracle_error_rate, real_time_factor)
from .pruning import PruneParams, beam_prune, edge_prune, prune, vertex_prune
from .acoustics import FrameClassifier, PosteriorMatrix, read_posteriors, write_posteriors
from .features import FeatureTemplateSet, Model, estimate_bigram_lm, featurize, score
from .training import TrainConfig, Utterance, train_pass
from .cascade import CascadeConfig, run_cascade_decode, run_cascade_train
from .synthetic import GeneratorSpec, generate

__version__ = "0.1.0"
