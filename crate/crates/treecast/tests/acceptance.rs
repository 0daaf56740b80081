//! Acceptance gate: one test per criterion, each ending in a single
//! pass line with its runtime. Tolerances are the ones the library
//! documents; budgets are asserted, not just reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use treecast::certify::{certify_bary, certify_finite_tree, CertNoise, CertTree, Certificate, CertifyOptions, NoiseRequest};
use treecast::channel::{Channel, NoiseChannel};
use treecast::discrepancy::{discrepancy_of_atoms, pairwise_moment, tensorization_delta, ContractionNorm};
use treecast::exact::{
    enumerate_oracle, level_atoms, per_state_tv, recursion_step, Atom, AtomSet, ExactError,
    DEFAULT_ATOM_BUDGET, SIGMA_ENUM_CAP,
};
use treecast::inference::{census_separation, tv_mc, McConfig, McEstimate};
use treecast::tree::{
    cutset_sum, min_antichain_sum, subtree_sums_bounded, validate_antichain, Tree, TreeSpec,
};

fn done(criterion: u32, budget_secs: f64, t0: Instant, detail: &str) {
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        dt < budget_secs,
        "[FAIL] criterion {criterion}: {dt:.1}s over the {budget_secs:.0}s budget"
    );
    println!("[PASS] criterion {criterion}: {detail} ({dt:.1}s)");
}

fn random_channel(rng: &mut ChaCha8Rng, q: usize) -> Channel {
    let rows: Vec<Vec<f64>> = (0..q)
        .map(|_| {
            let raw: Vec<f64> = (0..q).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    Channel::from_rows(&rows).unwrap()
}

fn random_positive(rng: &mut ChaCha8Rng, q: usize) -> Vec<f64> {
    (0..q).map(|_| rng.random_range(0.1..2.0)).collect()
}

/// Random observation family: columns of a random row-stochastic
/// q x outcomes matrix, one atom per outcome with unit multiplicity.
fn random_atoms(rng: &mut ChaCha8Rng, q: usize, outcomes: usize) -> AtomSet {
    let rows: Vec<Vec<f64>> = (0..q)
        .map(|_| {
            let raw: Vec<f64> = (0..outcomes).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let atoms = (0..outcomes)
        .map(|t| Atom {
            g: (0..q).map(|i| rows[i][t]).collect(),
            w: 1.0,
        })
        .collect();
    AtomSet::new(q, atoms)
}

fn norm_for(channel: &Channel) -> ContractionNorm {
    let alpha = 0.5 * (channel.second_eigenvalue().abs() + 1.0);
    ContractionNorm::build(channel, alpha).unwrap()
}

fn mat_vec(channel: &Channel, b: &[f64]) -> Vec<f64> {
    let m = channel.matrix();
    (0..b.len())
        .map(|i| b.iter().enumerate().map(|(j, x)| m[(i, j)] * x).sum())
        .collect()
}

#[test]
fn criterion_1_inequality_suite() {
    let t0 = Instant::now();
    let n = 1000usize;

    // weighted harmonic means never grow under averaging by M
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..n {
        let q = 2 + i % 4;
        let c = random_channel(&mut rng, q);
        let v = c.stationary().unwrap();
        let b = random_positive(&mut rng, q);
        let mb = mat_vec(&c, &b);
        let lhs: f64 = v.iter().zip(&mb).map(|(vi, x)| vi / x).sum();
        let rhs: f64 = v.iter().zip(&b).map(|(vi, x)| vi / x).sum();
        assert!(lhs <= rhs + 1e-12, "instance {i}: {lhs} > {rhs}");
    }

    // the built norm certifies its contraction factor
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for i in 0..n {
        let q = 2 + i % 4;
        let c = random_channel(&mut rng, q);
        let norm = norm_for(&c);
        let b = norm.project_q(&random_positive(&mut rng, q));
        let lhs = norm.q_norm_sq(&mat_vec(&c, &b)).sqrt();
        let rhs = norm.alpha() * norm.q_norm_sq(&b).sqrt();
        assert!(lhs <= rhs + 1e-9, "instance {i}: {lhs} > {rhs}");
    }

    // the discrepancy value does not depend on how callers split an
    // atom into direction times weight
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for i in 0..n {
        let q = 2 + i % 4;
        let c = random_channel(&mut rng, q);
        let norm = norm_for(&c);
        let set = random_atoms(&mut rng, q, 2 + i % 5);
        let uniform: Vec<Atom> = set
            .atoms()
            .iter()
            .map(|a| {
                let mean = a.g.iter().sum::<f64>() / q as f64;
                Atom {
                    g: a.g.iter().map(|x| x / mean).collect(),
                    w: a.w * mean,
                }
            })
            .collect();
        let other = AtomSet::new(q, uniform);
        let d1 = discrepancy_of_atoms(&norm, &set);
        let d2 = discrepancy_of_atoms(&norm, &other);
        assert!(
            (d1 - d2).abs() <= 1e-9 * d1.abs().max(d2.abs()).max(1.0),
            "instance {i}: {d1} vs {d2}"
        );
    }

    // one broadcast step contracts the discrepancy by alpha squared
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for i in 0..n {
        let q = 2 + i % 4;
        let c = random_channel(&mut rng, q);
        let norm = norm_for(&c);
        let set = random_atoms(&mut rng, q, 2 + i % 5);
        let stepped = treecast::exact::apply_channel(&set, &c);
        let lhs = discrepancy_of_atoms(&norm, &stepped);
        let rhs = norm.alpha().powi(2) * discrepancy_of_atoms(&norm, &set);
        assert!(lhs <= rhs + 1e-12, "instance {i}: {lhs} > {rhs}");
    }

    // cross moments stay within C times the discrepancy of one
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for i in 0..n {
        let q = 2 + i % 4;
        let c = random_channel(&mut rng, q);
        let norm = norm_for(&c);
        let cc = norm.constants().c;
        let set = random_atoms(&mut rng, q, 2 + i % 5);
        let d = discrepancy_of_atoms(&norm, &set);
        assert!(d.is_finite());
        for a in 0..q {
            for b in 0..q {
                for k in 0..q {
                    let m = pairwise_moment(&set, a, b, k);
                    assert!(
                        (m - 1.0).abs() <= cc * d + 1e-10,
                        "instance {i} ({a},{b},{k}): |{m} - 1| > C D = {}",
                        cc * d
                    );
                }
            }
        }
    }

    // products of small-discrepancy families stay nearly additive
    let identity2 = Channel::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let identity = |q: usize| -> Channel {
        if q == 2 {
            return identity2.clone();
        }
        let rows: Vec<Vec<f64>> = (0..q)
            .map(|i| (0..q).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        Channel::from_rows(&rows).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for i in 0..n {
        let q = 2 + i % 4;
        let b = 2 + i % 2;
        let eps = rng.random_range(0.05..1.0);
        let c = random_channel(&mut rng, q);
        let norm = norm_for(&c);
        let delta = tensorization_delta(&norm.constants(), b, eps);
        let parts: Vec<AtomSet> = (0..b)
            .map(|_| {
                let raw = random_atoms(&mut rng, q, 2 + i % 4);
                shrink_to_delta(&norm, raw, delta)
            })
            .collect();
        let refs: Vec<&AtomSet> = parts.iter().collect();
        let product = recursion_step(&refs, &identity(q), DEFAULT_ATOM_BUDGET).unwrap();
        let lhs = discrepancy_of_atoms(&norm, &product);
        let sum: f64 = parts.iter().map(|p| discrepancy_of_atoms(&norm, p)).sum();
        assert!(
            lhs <= (1.0 + eps) * sum + 1e-10,
            "instance {i}: {lhs} > (1+{eps}) {sum}"
        );
    }

    // total variation is dominated by the square root of C times D
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for i in 0..n {
        let q = 2 + i % 4;
        let c = random_channel(&mut rng, q);
        let norm = norm_for(&c);
        let cc = norm.constants().c;
        let set = random_atoms(&mut rng, q, 2 + i % 5);
        let d = discrepancy_of_atoms(&norm, &set);
        for a in 0..q {
            for b in (a + 1)..q {
                let tv = set.tv(a, b);
                assert!(
                    2.0 * tv <= (cc * d).sqrt() + 1e-10,
                    "instance {i} ({a},{b}): 2 {tv} > sqrt({})",
                    cc * d
                );
            }
        }
    }

    // M commutes with the projection away from the stationary direction
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for i in 0..n {
        let q = 2 + i % 4;
        let c = random_channel(&mut rng, q);
        let norm = norm_for(&c);
        let b = random_positive(&mut rng, q);
        let mq = mat_vec(&c, &norm.project_q(&b));
        let qm = norm.project_q(&mat_vec(&c, &b));
        let gap = mq
            .iter()
            .zip(&qm)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(gap <= 1e-12, "instance {i}: max entry {gap}");
    }

    done(1, 60.0, t0, "eight inequality suites, 1000 instances each, q in 2..=5");
}

/// Blend atoms toward their reference mass until D fits under delta.
fn shrink_to_delta(norm: &ContractionNorm, set: AtomSet, delta: f64) -> AtomSet {
    let v = norm.v().clone();
    let q = set.q();
    let mut scale = 1.0f64;
    let mut current = set.clone();
    for _ in 0..60 {
        let d = discrepancy_of_atoms(norm, &current);
        if d <= delta {
            return current;
        }
        scale *= 0.9 * (delta / d).sqrt().min(0.9);
        let atoms: Vec<Atom> = set
            .atoms()
            .iter()
            .map(|a| {
                let mass: f64 = v.iter().zip(&a.g).map(|(vi, gi)| vi * gi).sum();
                Atom {
                    g: a.g.iter().map(|gi| mass + scale * (gi - mass)).collect(),
                    w: a.w,
                }
            })
            .collect();
        current = AtomSet::new(q, atoms);
    }
    current
}

#[test]
fn criterion_2_oracle_equivalence() {
    let t0 = Instant::now();
    let mut compared = 0usize;
    let mut capped = 0usize;
    for q in [2usize, 3] {
        let channel = if q == 2 {
            Channel::bsc(0.3).unwrap()
        } else {
            Channel::qsym(3, 0.2).unwrap()
        };
        let alpha = 0.5 * (channel.second_eigenvalue().abs() + 1.0);
        let norm = ContractionNorm::build(&channel, alpha).unwrap();
        let nu = vec![1.0 / q as f64; q];
        let noises = [
            NoiseChannel::extra_steps(&channel, 1),
            NoiseChannel::mix(q, &nu, 0.3).unwrap(),
            NoiseChannel::erasure(q, 0.25).unwrap(),
        ];
        for arity in [2usize, 3] {
            for depth in 0..=3usize {
                let tree = Tree::build(&TreeSpec::BAry { arity, depth }).unwrap();
                let antichain = validate_antichain(&tree, tree.level(depth)).unwrap();
                for noise in &noises {
                    let oracle =
                        match enumerate_oracle(&tree, &antichain, &channel, noise, SIGMA_ENUM_CAP)
                        {
                            Ok(o) => o,
                            Err(ExactError::CapExceeded { .. }) => {
                                capped += 1;
                                continue;
                            }
                            Err(e) => panic!("oracle failed: {e}"),
                        };
                    let engine =
                        level_atoms(&channel, noise, arity, depth, DEFAULT_ATOM_BUDGET).unwrap();
                    for (state, tv) in per_state_tv(&engine, &oracle).into_iter().enumerate() {
                        assert!(
                            tv <= 1e-10,
                            "q={q} arity={arity} depth={depth} {:?}: state {state} tv {tv}",
                            noise.kind()
                        );
                    }
                    let de = discrepancy_of_atoms(&norm, &engine);
                    let os = discrepancy_of_atoms(&norm, &oracle);
                    let both_infinite = de.is_infinite() && os.is_infinite();
                    assert!(
                        both_infinite
                            || (de - os).abs() <= 1e-9 * de.abs().max(os.abs()).max(1e-30),
                        "q={q} arity={arity} depth={depth}: D {de} vs {os}"
                    );
                    compared += 1;
                }
            }
        }
    }
    assert!(compared >= 40, "only {compared} comparisons ran");
    done(
        2,
        120.0,
        t0,
        &format!("engine matches enumeration on {compared} instances ({capped} over the string cap)"),
    );
}

#[test]
fn criterion_3_binary_bsc_certificates() {
    let t0 = Instant::now();
    let channel = Channel::bsc(0.3).unwrap();
    let opts = CertifyOptions::default();

    let cert = certify_bary(&channel, 2, &NoiseRequest::ExtraSteps { k: None }, &opts).unwrap();
    let CertNoise::ExtraSteps { kstar, applied_k } = cert.noise else {
        panic!("extra-steps certificate expected");
    };
    assert_eq!(kstar, 4);
    assert_eq!(applied_k, 4);
    assert_eq!(cert.decay_start, 0);
    assert_eq!(cert.decay.len(), 5);
    let ratio_bound = 1.0 - cert.eps_slack;
    assert!((ratio_bound - (1.0 - 17.0 / 66.0)).abs() < 1e-12);
    for w in cert.decay.windows(2) {
        assert!(w[1] < w[0], "decay not strictly decreasing: {:?}", cert.decay);
        assert!(w[1] / w[0] <= ratio_bound + 1e-10);
    }
    cert.verify(DEFAULT_ATOM_BUDGET).unwrap();

    let mix = certify_bary(
        &channel,
        2,
        &NoiseRequest::Mix { nu: vec![0.5, 0.5], eps: None },
        &opts,
    )
    .unwrap();
    let CertNoise::Mix { epsstar, .. } = mix.noise else {
        panic!("mix certificate expected");
    };
    assert!(epsstar < 1.0);

    let era = certify_bary(&channel, 2, &NoiseRequest::Erasure { eps: None }, &opts).unwrap();
    let CertNoise::Erasure { epsstar, .. } = era.noise else {
        panic!("erasure certificate expected");
    };
    assert!(epsstar < 1.0);

    // root separation halves (at least) between the first and the last
    // logged level
    let noise = NoiseChannel::extra_steps(&channel, kstar);
    let tv0 = level_atoms(&channel, &noise, 2, 0, DEFAULT_ATOM_BUDGET).unwrap().tv(0, 1);
    let tv4 = level_atoms(&channel, &noise, 2, 4, DEFAULT_ATOM_BUDGET).unwrap().tv(0, 1);
    assert!((tv0 - 0.4f64.powi(4)).abs() < 1e-12);
    assert!(tv4 <= tv0 / 2.0, "tv4 {tv4} vs tv0 {tv0}");

    done(
        3,
        300.0,
        t0,
        &format!("k*=4, eps*<1 both regimes, decay ratios <= {ratio_bound:.4}, tv {tv0:.4} -> {tv4:.5}"),
    );
}

#[test]
fn criterion_4_monotone_in_noise() {
    let t0 = Instant::now();
    let channel = Channel::bsc(0.3).unwrap();
    let depth = 3usize;
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];

    let tv_at = |noise: &NoiseChannel| {
        level_atoms(&channel, noise, 2, depth, DEFAULT_ATOM_BUDGET)
            .unwrap()
            .tv(0, 1)
    };

    let steps: Vec<f64> = (0..=4u32)
        .map(|k| tv_at(&NoiseChannel::extra_steps(&channel, k)))
        .collect();
    let mixes: Vec<f64> = grid
        .iter()
        .map(|&e| tv_at(&NoiseChannel::mix(2, &[0.5, 0.5], e).unwrap()))
        .collect();
    let erasures: Vec<f64> = grid
        .iter()
        .map(|&e| tv_at(&NoiseChannel::erasure(2, e).unwrap()))
        .collect();
    for (name, series) in [("k", &steps), ("mix", &mixes), ("erasure", &erasures)] {
        for w in series.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-10,
                "{name} series not monotone: {series:?}"
            );
        }
    }
    done(
        4,
        120.0,
        t0,
        "depth-3 separation nonincreasing along all three noise grids",
    );
}

fn contrast_estimates() -> (McEstimate, f64, McEstimate) {
    let depth = 8usize;
    let tree = Tree::build(&TreeSpec::BAry { arity: 2, depth }).unwrap();
    let antichain = validate_antichain(&tree, tree.level(depth)).unwrap();
    let cfg = McConfig { samples: 100_000, seed: 20_240_817, streams: 16 };

    let hot = Channel::bsc(0.05).unwrap();
    let hot_noise = NoiseChannel::mix(2, &[0.5, 0.5], 0.5).unwrap();
    let hot_tv = tv_mc(&tree, &antichain, &hot, &hot_noise, 0, 1, &cfg).unwrap();
    let census = census_separation(&tree, &antichain, &hot, &hot_noise, 0, 1, &cfg).unwrap();

    let cold = Channel::bsc(0.3).unwrap();
    let cold_noise = NoiseChannel::extra_steps(&cold, 4);
    let cold_tv = tv_mc(&tree, &antichain, &cold, &cold_noise, 0, 1, &cfg).unwrap();
    (hot_tv, census.z, cold_tv)
}

#[test]
fn criterion_5_contrast_across_threshold() {
    let t0 = Instant::now();
    let (hot_tv, z, cold_tv) = contrast_estimates();
    assert!(z > 2.0, "census z = {z}");
    assert!(
        hot_tv.mean - 3.0 * hot_tv.stderr >= 0.05,
        "above threshold tv = {} +- {}",
        hot_tv.mean,
        hot_tv.stderr
    );
    assert!(
        cold_tv.mean <= 0.02 + 3.0 * cold_tv.stderr,
        "below threshold tv = {} +- {}",
        cold_tv.mean,
        cold_tv.stderr
    );
    done(
        5,
        300.0,
        t0,
        &format!(
            "depth-8 mc: above-threshold tv {:.3} (z {:.0}), below-threshold tv {:.4}",
            hot_tv.mean, z, cold_tv.mean
        ),
    );
}

/// Binary depth-4 tree with the subtree of one depth-2 node removed.
fn pruned_tree() -> Tree {
    let full = Tree::build(&TreeSpec::BAry { arity: 2, depth: 4 }).unwrap();
    let under = |mut x: usize| loop {
        if x == 4 {
            return true;
        }
        match full.parent_of(x) {
            Some(p) => x = p,
            None => return false,
        }
    };
    let keep: Vec<usize> = (0..full.node_count()).filter(|&x| !under(x)).collect();
    let mut remap = vec![usize::MAX; full.node_count()];
    for (i, &x) in keep.iter().enumerate() {
        remap[x] = i;
    }
    let parents: Vec<Option<usize>> = keep
        .iter()
        .map(|&x| full.parent_of(x).map(|p| remap[p]))
        .collect();
    Tree::build(&TreeSpec::Explicit { parents }).unwrap()
}

#[test]
fn criterion_6_finite_tree_certificate() {
    let t0 = Instant::now();
    let tree = pruned_tree();
    assert_eq!(tree.node_count(), 24);

    let channel = Channel::bsc(0.3).unwrap();
    // growth bound: 1/lambda2^2 = 6.25 minus a margin
    let g = 6.0;
    let (sum, antichain) = min_antichain_sum(&tree, g);
    assert_eq!(antichain.members().len(), 12);
    assert!((sum - 12.0 / 1296.0).abs() < 1e-15);
    assert!(sum <= 0.2);
    assert!(subtree_sums_bounded(&tree, &antichain, g));
    assert!((cutset_sum(&tree, &antichain, g) - sum).abs() < 1e-15);

    let cert = certify_finite_tree(
        &tree,
        &channel,
        &NoiseRequest::ExtraSteps { k: None },
        g,
        &CertifyOptions::default(),
    )
    .unwrap();
    assert!((cert.threshold_value - 0.96).abs() < 1e-12);
    let CertNoise::ExtraSteps { kstar, .. } = cert.noise else {
        panic!("extra-steps certificate expected");
    };
    assert_eq!(kstar, 5);
    let CertTree::Explicit { ref members, .. } = cert.tree else {
        panic!("explicit tree expected");
    };
    assert_eq!(members, antichain.members());
    assert_eq!(cert.member_checks.len(), 12);
    assert_eq!(cert.node_checks.len(), 12);

    let text = cert.to_text();
    let back = Certificate::from_text(&text).unwrap();
    back.verify(DEFAULT_ATOM_BUDGET).unwrap();

    done(
        6,
        300.0,
        t0,
        &format!("24-node tree, g=6: 12-member antichain (sum {sum:.6}), k*=5, certificate re-verified"),
    );
}

#[test]
fn criterion_7_mc_determinism() {
    let t0 = Instant::now();
    let (a_hot, a_z, a_cold) = contrast_estimates();
    let (b_hot, b_z, b_cold) = contrast_estimates();
    assert_eq!(a_hot.mean.to_bits(), b_hot.mean.to_bits());
    assert_eq!(a_hot.stderr.to_bits(), b_hot.stderr.to_bits());
    assert_eq!(a_z.to_bits(), b_z.to_bits());
    assert_eq!(a_cold.mean.to_bits(), b_cold.mean.to_bits());
    assert_eq!(a_cold.stderr.to_bits(), b_cold.stderr.to_bits());
    done(7, 300.0, t0, "criterion-5 estimates rerun bit-identically");
}
