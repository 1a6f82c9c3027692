use super::tree::{build_tree, Criterion, Prepared, RowTargets, TreeNode};
use super::{logistic, require_both_classes, LearnerConfig, ModelKind, TreeEnsembleModel};
use crate::data::BinaryDataset;
use crate::error::Result;

/// Boosted trees on the logistic loss, starting from the log-odds of the
/// class-1 rate.
pub fn train_gbdt(data: &BinaryDataset, config: &LearnerConfig) -> Result<TreeEnsembleModel> {
    train_gbdt_traced(data, config).map(|(m, _)| m)
}

/// Like [`train_gbdt`], also returning the mean training log-loss before
/// the first round and after every round (`n_trees + 1` values).
pub fn train_gbdt_traced(data: &BinaryDataset, config: &LearnerConfig) -> Result<(TreeEnsembleModel, Vec<f64>)> {
    config.validate()?;
    require_both_classes(data)?;
    let n = data.n_rows();
    let [_, positives] = data.class_counts();
    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();

    let prepared = Prepared::new(data);
    let params = config.tree_params(
        Criterion::Newton {
            learning_rate: config.learning_rate,
        },
        data.n_features(),
    );
    let labels = data.labels();
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut losses = Vec::with_capacity(config.n_trees + 1);
    losses.push(mean_log_loss(&margin, labels));

    for _ in 0..config.n_trees {
        for i in 0..n {
            let p = logistic(margin[i]);
            grad[i] = p - f64::from(labels[i]);
            hess[i] = p * (1.0 - p);
        }
        let mut tree = build_tree(
            &prepared,
            RowTargets::Gradients {
                grad: &grad,
                hess: &hess,
            },
            &params,
            None,
        );
        backtrack_leaves(&mut tree, data, &margin);
        for (m, row) in margin.iter_mut().zip(data.rows()) {
            *m += tree.predict(row);
        }
        losses.push(mean_log_loss(&margin, labels));
        trees.push(tree);
    }

    let mut hyperparams = config.clone();
    hyperparams.kind = ModelKind::Gbdt;
    let model = TreeEnsembleModel::from_parts(ModelKind::Gbdt, trees, data.catalog().clone(), base_score, hyperparams)?;
    Ok((model, losses))
}

fn leaf_count(node: &TreeNode) -> usize {
    match node {
        TreeNode::Leaf { .. } => 1,
        TreeNode::Internal { left, right, .. } => leaf_count(left) + leaf_count(right),
    }
}

/// Position of the leaf reached by `x` in left-to-right order.
fn leaf_slot(node: &TreeNode, x: &[u8]) -> usize {
    match node {
        TreeNode::Leaf { .. } => 0,
        TreeNode::Internal { feature, left, right } => {
            if x[*feature] == 0 {
                leaf_slot(left, x)
            } else {
                leaf_count(left) + leaf_slot(right, x)
            }
        }
    }
}

fn leaves_mut<'a>(node: &'a mut TreeNode, out: &mut Vec<&'a mut f64>) {
    match node {
        TreeNode::Leaf { value } => out.push(value),
        TreeNode::Internal { left, right, .. } => {
            leaves_mut(left, out);
            leaves_mut(right, out);
        }
    }
}

/// Halves each leaf's Newton step until it no longer raises the training
/// loss of the rows routed to it. Leaves partition the rows, so the round
/// as a whole cannot raise the loss either.
fn backtrack_leaves(tree: &mut TreeNode, data: &BinaryDataset, margin: &[f64]) {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); leaf_count(tree)];
    for (i, row) in data.rows().enumerate() {
        rows[leaf_slot(tree, row)].push(i);
    }
    let labels = data.labels();
    let loss = |members: &[usize], step: f64| -> f64 {
        members.iter().map(|&i| log_loss(margin[i] + step, labels[i])).sum()
    };
    let mut leaves = Vec::new();
    leaves_mut(tree, &mut leaves);
    for (value, members) in leaves.into_iter().zip(&rows) {
        let before = loss(members, 0.0);
        let mut step = *value;
        let mut halvings = 0;
        while loss(members, step) > before {
            step *= 0.5;
            halvings += 1;
            if halvings == 60 {
                step = 0.0;
                break;
            }
        }
        *value = step;
    }
}

fn log_loss(z: f64, y: u8) -> f64 {
    let s = if y == 1 { z } else { -z };
    if s > 0.0 {
        (-s).exp().ln_1p()
    } else {
        -s + s.exp().ln_1p()
    }
}

/// Numerically stable `log(1 + exp(-z))` form of the logistic loss.
fn mean_log_loss(margin: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = margin.iter().zip(labels).map(|(&z, &y)| log_loss(z, y)).sum();
    total / margin.len() as f64
}
