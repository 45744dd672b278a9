"""Node-wise architecture search for graph neural networks on heterophilous graphs.

The package is organized around five pieces:

- autodiff: a small float64 reverse-mode engine (dense + CSR sparse)
- graphs: dataset model, homophily metrics, splits, a synthetic generator
- supernet: the seven-block layer framework, runnable with per-node fixed
  operation choices
- search: architecture predictors, relaxed mixed operations, gradient-descent
  search, and argmax discretization
- evaluation: retraining, accuracy, homophily-binned accuracy, the intra-class
  information ratio (h_iir), and operation-distribution summaries
"""

__version__ = "0.1.0"

from .autodiff import (
    Adam,
    NumericsError,
    ParameterError,
    ShapeError,
    SparseMatrix,
    Tape,
    TapeError,
    Tensor,
    backward_all,
    cross_entropy_mean,
    dense_matmul,
    grad_check,
    softmax_temperature,
    sparse_dense_matmul,
)
from .graphs import (
    DatasetError,
    DatasetWarning,
    Graph,
    HomophilyReport,
    Split,
    UndefinedMetricError,
    edge_homophily,
    load_dataset,
    make_splits,
    node_homophily,
    save_dataset,
    synth_heterophilous,
)
from .supernet import (
    BLOCK_CATALOG,
    NodeArchitecture,
    SupernetConfig,
    SupernetParams,
    forward_fixed,
    forward_weighted,
    realized_edges,
    slot_label,
    uniform_architecture,
)
from .search import (
    MixWeights,
    PredictorSet,
    SearchConfig,
    SearchDivergence,
    discretize,
    forward_mixed,
    predict_block_weights,
    search,
)
from .evaluation import (
    HiirReport,
    MetricsTable,
    TrainConfig,
    TrainedModel,
    TrainingDivergence,
    accuracy_by_homophily_bin,
    bare_architecture,
    compute_hiir,
    evaluate,
    op_distribution,
    train,
)
