//! Antichain weights on irregular trees. The dynamic program finds the
//! antichain minimizing sum over members of lambda^(-depth), the
//! quantity that decides whether a growth rate lambda is sustainable.

use treecast::tree::{
    cutset_sum, good_antichain_sequence, min_antichain_sum, subtree_sums_bounded,
    validate_antichain, Tree, TreeSpec,
};

fn main() {
    // binary depth-4 tree with one depth-2 subtree removed
    let full = Tree::build(&TreeSpec::BAry { arity: 2, depth: 4 }).unwrap();
    let keep: Vec<usize> = (0..full.node_count()).filter(|&x| !in_pruned(&full, x, 4)).collect();
    let mut remap = vec![usize::MAX; full.node_count()];
    for (i, &x) in keep.iter().enumerate() {
        remap[x] = i;
    }
    let parents: Vec<Option<usize>> = keep
        .iter()
        .map(|&x| full.parent_of(x).map(|p| remap[p]))
        .collect();
    let tree = Tree::build(&TreeSpec::Explicit { parents }).unwrap();
    println!(
        "pruned tree: {} nodes, max degree {}, depth {}",
        tree.node_count(),
        tree.max_degree(),
        tree.max_depth()
    );

    // at lambda below the surviving growth the best antichain is deep
    for lambda in [1.5, 2.0, 4.0, 6.0] {
        let (sum, antichain) = min_antichain_sum(&tree, lambda);
        println!(
            "lambda = {lambda}: min cutset sum = {:.6} over {} members at depths {:?}",
            sum,
            antichain.members().len(),
            depth_profile(&tree, antichain.members())
        );
    }

    // every subtree of the chosen antichain obeys the same bound
    let g = 6.0;
    let (_, best) = min_antichain_sum(&tree, g);
    println!("subtree sums bounded at g = {g}: {}", subtree_sums_bounded(&tree, &best, g));

    // explicit antichain for comparison: all nodes at depth 2
    let level2 = validate_antichain(&tree, tree.level(2)).unwrap();
    println!(
        "depth-2 antichain: cutset sum = {:.6} (dp best {:.6})",
        cutset_sum(&tree, &level2, g),
        cutset_sum(&tree, &best, g)
    );

    // on the regular family the sequence below any target exists at
    // every sufficiently large truncation depth
    let seq = good_antichain_sequence(&TreeSpec::BAry { arity: 2, depth: 12 }, 6.0, 0.05, 12).unwrap();
    println!(
        "regular binary family, target 0.05 at growth 6: {} truncations qualify",
        seq.len()
    );
}

fn in_pruned(full: &Tree, x: usize, root_of_pruned: usize) -> bool {
    let mut cur = x;
    loop {
        if cur == root_of_pruned {
            return true;
        }
        match full.parent_of(cur) {
            Some(p) => cur = p,
            None => return false,
        }
    }
}

fn depth_profile(tree: &Tree, members: &[usize]) -> Vec<usize> {
    let mut depths: Vec<usize> = members.iter().map(|&x| tree.depth_of(x)).collect();
    depths.sort_unstable();
    depths.dedup();
    depths
}
