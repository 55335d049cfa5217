//! Fixed per-dataset hyperparameters.
//!
//! Tolerances printed as 0.00 are taken as 1e-4. Only `subsample` is used as
//! the row fraction; bagging fraction, feature fraction and leaf count have no
//! counterpart in the depth-wise trainer.

use super::{GbdtConfig, LogisticConfig};

pub fn gbdt_preset(dataset: &str) -> Option<GbdtConfig> {
    let (lr, n, depth, min_child, subsample, colsample, early) = match dataset {
        "maternal_risk" => (0.27, 258, 4, 25, 0.76, 0.72, 72),
        "german_credit" => (0.10, 121, 4, 22, 0.65, 0.61, 132),
        "adult" => (0.14, 285, 6, 90, 0.60, 0.52, 78),
        "heloc" => (0.05, 187, 3, 100, 0.61, 0.89, 179),
        _ => return None,
    };
    Some(GbdtConfig {
        n_estimators: n,
        learning_rate: lr,
        max_depth: depth,
        min_child_samples: min_child,
        subsample,
        colsample_bytree: colsample,
        early_stopping_rounds: Some(early),
        lambda: 1.0,
        seed: 0,
    })
}

pub fn logistic_preset(dataset: &str) -> Option<LogisticConfig> {
    let (c, tol, max_iter, fit_intercept) = match dataset {
        "maternal_risk" => (0.13, 1e-4, 648, true),
        "german_credit" => (0.36, 0.01, 237, false),
        "adult" => (0.60, 1e-4, 374, true),
        "heloc" => (0.59, 1e-4, 102, true),
        _ => return None,
    };
    Some(LogisticConfig {
        c,
        tol,
        max_iter,
        balanced: true,
        fit_intercept,
    })
}
