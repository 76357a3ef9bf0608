from survcate.forest.forest import (
    Forest,
    ForestParams,
    InsufficientTreesError,
    fit_regression_forest,
    fit_survival_forest,
    kernel_weights,
    oob_predict_regression,
    oob_predict_survival,
    predict_regression_forest,
    predict_survival_forest,
    reference_forest_params,
)

__all__ = [
    "Forest",
    "ForestParams",
    "InsufficientTreesError",
    "fit_regression_forest",
    "fit_survival_forest",
    "kernel_weights",
    "oob_predict_regression",
    "oob_predict_survival",
    "predict_regression_forest",
    "predict_survival_forest",
    "reference_forest_params",
]
