"""Spatially aware self-explaining regression trees for geospatial tabular data."""

from .dataset import ColumnSchema, Dataset, SpatialWeights, kfold_indices, knn_weights, load_csv, zscore
from .errors import (ConfigError, DataError, DegenerateColumnError, DegenerateGeometryError,
                     FormatError, GeoTreeError, NumericError, ParameterError, SchemaError,
                     ShapeError, SingularFitError, ZeroVarianceError)
from .evaluation import (DispersionReport, MetricsReport, cross_validate, dispersion, r_squared,
                         rmse, run_experiment)
from .gwr import GwrCoefficients, fit_gwr, select_bandwidth
from .induction import GainBreakdown, TreeConfig, build_context, evaluate_gain, grow_tree
from .simnet import (CommunityPartition, SimilarityNetwork, consensus, maximize_modularity,
                     modularity_score)
from .spatial_stats import morans_i, residual_morans_i
from .tree import AxisSplit, GaussianSplit, GeoTree, ObliqueSplit, deserialize, route, serialize
from .treeshap import AttributionMatrix, shap_values

__version__ = "0.1.0"
