"""Kernel-driven agglomerative hierarchical clustering and its evaluation."""

from .ahc import (LINKAGES, Dendrogram, FlatClustering, build_dendrogram, cut, extract_k,
                  linkage_value)
from .dataio import (DatasetError, LabeledDataset, ParseError, four_density_blobs,
                     gen_varied_density_blobs, load_csv, load_named, minmax_normalize)
from .evaluation import (EvaluationReport, Violation, check_separation_condition,
                         dendrogram_purity, dendrogram_purity_exact, dendrogram_purity_mc,
                         entanglements, evaluate, f1_flat)
from .kernels import (DISSIMILARITY, SIMILARITY, Measure, SimilarityMatrix,
                      adaptive_gaussian_similarity, build_ik_model, gaussian_similarity,
                      ik_similarity, read_matrix, similarity_matrix, to_dissimilarity,
                      write_matrix)
from .variants import GDLWarning, gdl_cluster, hdbscan_cluster, pha_cluster

__version__ = "0.1.0"

__all__ = [
    "LINKAGES", "Dendrogram", "FlatClustering", "build_dendrogram", "cut", "extract_k",
    "linkage_value", "DatasetError", "LabeledDataset", "ParseError", "four_density_blobs",
    "gen_varied_density_blobs", "load_csv", "load_named", "minmax_normalize",
    "EvaluationReport", "Violation", "check_separation_condition", "dendrogram_purity",
    "dendrogram_purity_exact", "dendrogram_purity_mc", "entanglements", "evaluate", "f1_flat",
    "DISSIMILARITY", "SIMILARITY", "Measure", "SimilarityMatrix",
    "adaptive_gaussian_similarity", "build_ik_model", "gaussian_similarity", "ik_similarity",
    "read_matrix", "similarity_matrix", "to_dissimilarity", "write_matrix", "GDLWarning",
    "gdl_cluster", "hdbscan_cluster", "pha_cluster",
]
