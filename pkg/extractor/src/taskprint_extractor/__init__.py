"""taskprint-extractor: image folders to FEATM1 feature matrices."""

from .extract import TaskManifest, extract_features, write_feature_matrix

__version__ = "0.1.0"
