//! Root split of a one-tree, depth-1 model against exhaustive search.

mod common;

use common::oracles::{exhaustive_root_split, split_instance, Best};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treatrank_core::gbtree::{fit, GbtParams, TreeNode};

#[test]
fn root_split_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut splits = 0;
    for case in 0..500 {
        let (x, y) = split_instance(&mut rng);
        let lambda = [0.0, 1.0, 2.5][case % 3];
        let mlw = [1.0, 2.0, 3.0][case % 3];
        let names: Vec<String> = (0..x[0].len()).map(|i| format!("f{i}")).collect();
        let params = GbtParams {
            n_trees: 1,
            learning_rate: 1.0,
            max_depth: 1,
            min_leaf_weight: mlw,
            l2_lambda: lambda,
            colsample: 1.0,
            seed: 0,
        };
        let model = fit(&x, &y, &names, &params).unwrap();
        let got = match &model.trees()[0] {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                threshold,
                default_goes_left,
                ..
            } => Some(Best {
                feature: names.iter().position(|n| n == feature).unwrap(),
                threshold: *threshold,
                default_left: *default_goes_left,
            }),
        };
        splits += got.is_some() as usize;
        assert_eq!(
            got,
            exhaustive_root_split(&x, &y, lambda, mlw),
            "case {case}: x={x:?} y={y:?}"
        );
    }
    assert!(splits > 250);
}
