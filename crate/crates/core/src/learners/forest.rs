//! Random forest of weighted CART trees.
//!
//! Each tree grows on a bootstrap resample (subjects keep their weights) with
//! `mtry` candidate columns drawn without replacement at every split. Tree
//! seeds derive from the forest seed by index, and trees are collected in
//! index order, so the fit is bit-identical for a fixed seed regardless of
//! the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::derive_seed;

use super::tree::{grow_tree, TreeModel};
use super::RegressionProblem;

/// Bagged ensemble; prediction is the plain mean over trees.
#[derive(Debug, Clone)]
pub struct ForestModel<F> {
    trees: Vec<TreeModel<F>>,
}

impl<F: Scalar> ForestModel<F> {
    pub fn predict(&self, row: &[F]) -> F {
        let sum: F = self.trees.iter().map(|t| t.predict(row)).sum();
        sum / F::from_count(self.trees.len())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Draws `k` distinct values from `0..p` by partial Fisher-Yates.
fn sample_columns(rng: &mut ChaCha12Rng, pool: &mut [usize], k: usize) -> Vec<usize> {
    let p = pool.len();
    for j in 0..k {
        let pick = rng.random_range(j..p);
        pool.swap(j, pick);
    }
    pool[..k].to_vec()
}

pub fn fit_random_forest<F: Scalar>(
    problem: &RegressionProblem<F>,
    n_trees: usize,
    mtry: Option<usize>,
    min_leaf_weight_fraction: f64,
    bootstrap: bool,
    rng_seed: u64,
) -> Result<ForestModel<F>> {
    let n = problem.n();
    let p = problem.p();
    if n < 20 {
        return Err(Error::invalid(format!("forest fit needs n >= 20, got n={n}")));
    }
    if n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    let mtry = mtry.unwrap_or_else(|| p.div_ceil(3)).clamp(1, p);
    let trees: Vec<TreeModel<F>> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(rng_seed, t as u64));
            let items: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let total: F = items.iter().map(|&i| problem.weight()[i]).sum();
            let min_leaf_weight = F::cst(min_leaf_weight_fraction) * total;
            let mut pool: Vec<usize> = (0..p).collect();
            grow_tree(
                problem.features(),
                p,
                problem.response(),
                problem.weight(),
                &items,
                usize::MAX,
                min_leaf_weight,
                || sample_columns(&mut rng, &mut pool, mtry),
            )
        })
        .collect();
    Ok(ForestModel { trees })
}
