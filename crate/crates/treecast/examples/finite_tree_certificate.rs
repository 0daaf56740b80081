//! Certificate on a concrete irregular tree: an antichain chosen by the
//! dynamic program, a growth bound g with g lambda2^2 below one, and a
//! per-node discrepancy inequality checked exactly.

use treecast::certify::{certify_finite_tree, Certificate, CertifyOptions, NoiseRequest};
use treecast::channel::Channel;
use treecast::exact::DEFAULT_ATOM_BUDGET;
use treecast::tree::{Tree, TreeSpec};

fn main() {
    // binary depth-4 tree with the subtree of one depth-2 node removed
    let full = Tree::build(&TreeSpec::BAry { arity: 2, depth: 4 }).unwrap();
    let keep: Vec<usize> = (0..full.node_count()).filter(|&x| !under(&full, x, 4)).collect();
    let mut remap = vec![usize::MAX; full.node_count()];
    for (i, &x) in keep.iter().enumerate() {
        remap[x] = i;
    }
    let parents: Vec<Option<usize>> = keep
        .iter()
        .map(|&x| full.parent_of(x).map(|p| remap[p]))
        .collect();
    let tree = Tree::build(&TreeSpec::Explicit { parents }).unwrap();

    let channel = Channel::bsc(0.3).unwrap();
    let cert = certify_finite_tree(
        &tree,
        &channel,
        &NoiseRequest::ExtraSteps { k: None },
        6.0,
        &CertifyOptions::default(),
    )
    .unwrap();

    println!("growth g = 6, g lambda2^2 = {:.4}", cert.threshold_value);
    println!("delta = {:.8}, noise = {:?}", cert.delta, cert.noise);
    if let treecast::certify::CertTree::Explicit { members, cutset_sum, .. } = &cert.tree {
        println!("antichain: {} members, cutset sum = {:.6}", members.len(), cutset_sum);
    }
    println!("member checks (discrepancy at each antichain node):");
    for (node, d) in cert.member_checks.iter().take(4) {
        println!("  node {node}: d = {:.3e}", d);
    }
    println!("  ... {} in total", cert.member_checks.len());
    println!("node checks (value vs allowed children sum):");
    for nc in cert.node_checks.iter().take(4) {
        println!("  node {}: d = {:.3e} <= {:.3e}", nc.node, nc.d, nc.children_sum);
    }
    println!("  ... {} in total", cert.node_checks.len());

    let text = cert.to_text();
    let back = Certificate::from_text(&text).unwrap();
    back.verify(DEFAULT_ATOM_BUDGET).unwrap();
    println!("serialized certificate re-verified ({} bytes)", text.len());
}

fn under(full: &Tree, x: usize, top: usize) -> bool {
    let mut cur = x;
    loop {
        if cur == top {
            return true;
        }
        match full.parent_of(cur) {
            Some(p) => cur = p,
            None => return false,
        }
    }
}
