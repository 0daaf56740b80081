//! Monte-Carlo estimators next to their exact counterparts. Every
//! estimator is a deterministic function of (seed, samples, streams),
//! so reruns agree to the bit.

use treecast::channel::{Channel, NoiseChannel};
use treecast::discrepancy::{discrepancy_of_atoms, ContractionNorm};
use treecast::exact::{level_atoms, DEFAULT_ATOM_BUDGET};
use treecast::inference::{
    census_separation, discrepancy_mc, exact_reconstruction_error, reconstruction_error_mc,
    tv_mc, McConfig,
};
use treecast::exact::subtree_atoms;
use treecast::tree::{validate_antichain, Tree, TreeSpec};

fn main() {
    let channel = Channel::bsc(0.3).unwrap();
    let noise = NoiseChannel::extra_steps(&channel, 1);
    let depth = 3usize;
    let tree = Tree::build(&TreeSpec::BAry { arity: 2, depth }).unwrap();
    let antichain = validate_antichain(&tree, tree.level(depth)).unwrap();
    let cfg = McConfig { samples: 100_000, seed: 42, streams: 16 };

    let exact_set = level_atoms(&channel, &noise, 2, depth, DEFAULT_ATOM_BUDGET).unwrap();

    let tv = tv_mc(&tree, &antichain, &channel, &noise, 0, 1, &cfg).unwrap();
    println!(
        "tv(0,1): mc = {:.6} +- {:.6}, exact = {:.6}",
        tv.mean,
        tv.stderr,
        exact_set.tv(0, 1)
    );

    let sub = subtree_atoms(&tree, &antichain, &channel, &noise, DEFAULT_ATOM_BUDGET).unwrap();
    let recon = reconstruction_error_mc(&tree, &antichain, &channel, &noise, &cfg).unwrap();
    println!(
        "reconstruction error: mc = {:.6} +- {:.6}, exact = {:.6}",
        recon.mean,
        recon.stderr,
        exact_reconstruction_error(&sub, channel.stationary().unwrap().as_slice())
    );

    let norm = ContractionNorm::build(&channel, 0.5).unwrap();
    let disc = discrepancy_mc(&tree, &antichain, &channel, &noise, &norm, &cfg).unwrap();
    println!(
        "discrepancy: mc = {:.6} +- {:.6}, exact = {:.6}",
        disc.mean,
        disc.stderr,
        discrepancy_of_atoms(&norm, &exact_set)
    );

    // census statistic: projects leaf counts on the second eigenvector
    let z = census_separation(&tree, &antichain, &channel, &noise, 0, 1, &cfg).unwrap();
    println!(
        "census: mean under root 0 = {:.4}, under root 1 = {:.4}, z = {:.2}",
        z.mean_i, z.mean_j, z.z
    );

    let again = tv_mc(&tree, &antichain, &channel, &noise, 0, 1, &cfg).unwrap();
    println!(
        "rerun bit identical = {}",
        again.mean.to_bits() == tv.mean.to_bits() && again.stderr.to_bits() == tv.stderr.to_bits()
    );
}
