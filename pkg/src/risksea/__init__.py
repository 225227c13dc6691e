"""Risk scoring of blockchain addresses from transaction graphs.

Dynamic node2vec embeddings (with a one-hop propagation baseline), behavioral
transaction features and a random forest soft classifier.
"""

from risksea.errors import ConfigError, DataError, RiskSeaError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "RiskSeaError", "__version__"]
