use rand::Rng;
use rayon::prelude::*;

use super::tree::{build_tree, Criterion, Prepared, RowTargets};
use super::{require_both_classes, LearnerConfig, ModelKind, TreeEnsembleModel};
use crate::data::BinaryDataset;
use crate::error::Result;
use crate::seed;

/// Bagged Gini trees. Tree `t` draws its bootstrap and its split candidates
/// from stream `(seed, "forest-tree", t)`, so the model does not depend on
/// how trees are scheduled across threads.
pub fn train_random_forest(data: &BinaryDataset, config: &LearnerConfig) -> Result<TreeEnsembleModel> {
    config.validate()?;
    require_both_classes(data)?;
    let prepared = Prepared::new(data);
    let params = config.tree_params(Criterion::Gini, data.n_features());
    let n = data.n_rows();

    let trees = (0..config.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(config.seed, "forest-tree", t);
            let mut weights = vec![0.0; n];
            for _ in 0..n {
                weights[rng.gen_range(0..n)] += 1.0;
            }
            build_tree(
                &prepared,
                RowTargets::Weighted {
                    weights: &weights,
                    labels: data.labels(),
                },
                &params,
                Some(&mut rng),
            )
        })
        .collect();

    let mut hyperparams = config.clone();
    hyperparams.kind = ModelKind::RandomForest;
    TreeEnsembleModel::from_parts(
        ModelKind::RandomForest,
        trees,
        data.catalog().clone(),
        0.0,
        hyperparams,
    )
}
