"""Graph/dataset model, on-disk format, splits and spectral features."""

from gcad.graphdata.graph import ABNORMAL, NORMAL, UNLABELED, Dataset, Graph
from gcad.graphdata.io import load_dataset, save_dataset
from gcad.graphdata.spectral import EigenFeatures, eigen_features, jacobi_eigh, normalized_laplacian
from gcad.graphdata.split import make_split

__all__ = [
    "ABNORMAL", "NORMAL", "UNLABELED", "Dataset", "EigenFeatures", "Graph", "eigen_features",
    "jacobi_eigh", "load_dataset", "make_split", "normalized_laplacian", "save_dataset",
]
