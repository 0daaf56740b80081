//! Subcommand implementations behind the command-line driver. Each
//! returns the full output text, so callers decide where it goes and
//! tests can compare bytes.

use crate::certify::{
    certify_bary, certify_finite_tree, threshold_parameters, Certificate, CertifyError,
    CertifyOptions, NoiseRequest,
};
use crate::channel::{Channel, ChannelError, NoiseChannel};
use crate::config::{
    ConfigError, Estimator, ExperimentConfig, RegimeConfig, TreeChoice,
};
use crate::discrepancy::{discrepancy_of_atoms, ContractionNorm};
use crate::exact::{level_atoms, subtree_atoms, AtomSet, ExactError};
use crate::inference::{
    census_separation, instance_hash, reconstruction_error_mc, tv_mc, InferenceError,
    McConfig,
};
use crate::numfmt::f17;
use crate::tree::{
    cutset_sum, min_antichain_sum, validate_antichain, Antichain, Tree, TreeError,
    TreeSpec,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

impl RunError {
    /// 2 for malformed input, 1 for failed mathematics.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Usage(_) => 2,
            RunError::Certify(CertifyError::Parse { .. }) => 2,
            _ => 1,
        }
    }
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub streams: Option<u64>,
    pub out: Option<std::path::PathBuf>,
    pub no_timestamp: bool,
    pub budget: Option<usize>,
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, ov: &Overrides) {
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(s) = ov.streams {
        cfg.streams = s.max(1);
    }
    if let Some(p) = &ov.out {
        cfg.out_path = Some(p.clone());
    }
    if ov.no_timestamp {
        cfg.timestamp = false;
    }
    if let Some(b) = ov.budget {
        cfg.atom_budget = b;
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn header(kind: &str, cfg: &ExperimentConfig, with_mc: bool) -> String {
    let mut s = format!(
        "# treecast {kind}\n# config = {}\n# rng = {}\n",
        cfg.config_hash,
        crate::broadcast::RNG_NAME
    );
    if with_mc {
        s.push_str(&format!("# seed = {}\n# streams = {}\n", cfg.seed, cfg.streams));
    }
    if cfg.timestamp {
        s.push_str(&format!("# generated_unix = {}\n", now_unix()));
    }
    s
}

fn build_tree(cfg: &ExperimentConfig, depth: usize) -> Result<Tree, RunError> {
    let spec = match &cfg.tree {
        TreeChoice::Bary { arity } => TreeSpec::BAry {
            arity: *arity,
            depth,
        },
        TreeChoice::Explicit { parents } => TreeSpec::Explicit {
            parents: parents.clone(),
        },
        TreeChoice::Spherical { levels } => TreeSpec::SphericallySymmetric {
            children_per_level: levels[..depth.min(levels.len())].to_vec(),
        },
    };
    Ok(Tree::build(&spec)?)
}

fn pick_antichain(cfg: &ExperimentConfig, tree: &Tree) -> Result<Antichain, RunError> {
    let set = match &cfg.antichain {
        Some(s) => s.clone(),
        None => match &cfg.tree {
            TreeChoice::Explicit { .. } => tree.leaves(),
            _ => tree.level(tree.max_depth()).to_vec(),
        },
    };
    Ok(validate_antichain(tree, &set)?)
}

/// Concrete noise for sampling and exact tables; absent levels mean no
/// perturbation.
fn build_noise(cfg: &ExperimentConfig, channel: &Channel) -> Result<NoiseChannel, RunError> {
    let q = channel.q();
    Ok(match &cfg.regime {
        RegimeConfig::ExtraSteps { k } => NoiseChannel::extra_steps(channel, k.unwrap_or(0)),
        RegimeConfig::Mix { nu, eps } => {
            let nu = nu.clone().unwrap_or(vec![1.0 / q as f64; q]);
            NoiseChannel::mix(q, &nu, eps.unwrap_or(0.0))?
        }
        RegimeConfig::Erasure { eps } => NoiseChannel::erasure(q, eps.unwrap_or(0.0))?,
    })
}

fn noise_request(cfg: &ExperimentConfig, q: usize) -> NoiseRequest {
    match &cfg.regime {
        RegimeConfig::ExtraSteps { k } => NoiseRequest::ExtraSteps { k: *k },
        RegimeConfig::Mix { nu, eps } => NoiseRequest::Mix {
            nu: nu.clone().unwrap_or(vec![1.0 / q as f64; q]),
            eps: *eps,
        },
        RegimeConfig::Erasure { eps } => NoiseRequest::Erasure { eps: *eps },
    }
}

fn certify_options(cfg: &ExperimentConfig) -> CertifyOptions {
    CertifyOptions {
        decay_levels: cfg.decay_levels,
        kstar_cap: cfg.kstar_cap,
        atom_budget: cfg.atom_budget,
        cutset_bound: cfg.cutset_bound,
    }
}

/// Certificate text, prefixed by the standard file header.
pub fn certify_text(cfg: &ExperimentConfig) -> Result<String, RunError> {
    let request = noise_request(cfg, cfg.channel.q());
    let opts = certify_options(cfg);
    let mut cert = match &cfg.tree {
        TreeChoice::Bary { arity } => certify_bary(&cfg.channel, *arity, &request, &opts)?,
        _ => {
            let tree = build_tree(cfg, cfg.depth)?;
            let growth = cfg.growth.ok_or_else(|| {
                RunError::Usage(
                    "finite-tree certificates need growth in the [tree] section".into(),
                )
            })?;
            certify_finite_tree(&tree, &cfg.channel, &request, growth, &opts)?
        }
    };
    cert.generated_unix = cfg.timestamp.then(now_unix);
    let mut out = format!(
        "# treecast certify\n# config = {}\n",
        cfg.config_hash
    );
    out.push_str(&cert.to_text());
    Ok(out)
}

/// Re-check a certificate file; the summary names the regime and the
/// headline numbers.
pub fn verify_text(cert_text: &str, budget: usize) -> Result<String, RunError> {
    let cert = Certificate::from_text(cert_text)?;
    cert.verify(budget)?;
    let regime = match &cert.noise {
        crate::certify::CertNoise::ExtraSteps { applied_k, .. } => {
            format!("extra_steps k={applied_k}")
        }
        crate::certify::CertNoise::Mix { applied_eps, .. } => {
            format!("mix eps={applied_eps:.6}")
        }
        crate::certify::CertNoise::Erasure { applied_eps, .. } => {
            format!("erasure eps={applied_eps:.6}")
        }
    };
    Ok(format!(
        "certificate verified: {regime}, threshold {:.6}, delta {:.6e}, tv bound {:.6e}\n",
        cert.threshold_value, cert.delta, cert.tv_bound
    ))
}

/// Contraction norm at the canonical rate, when the instance is below
/// threshold; above it the discrepancy column is left as nan.
fn norm_for(channel: &Channel, branching: f64) -> Option<ContractionNorm> {
    let lambda2 = channel.second_eigenvalue();
    let (_, _, alpha) = threshold_parameters(lambda2, branching).ok()?;
    ContractionNorm::build(channel, alpha).ok()
}

fn tv_max(set: &AtomSet) -> f64 {
    let q = set.q();
    let mut best = 0.0f64;
    for i in 0..q {
        for j in (i + 1)..q {
            best = best.max(set.tv(i, j));
        }
    }
    best
}

fn exact_row(set: &AtomSet, norm: Option<&ContractionNorm>) -> (usize, String, String) {
    let d = norm.map(|n| f17(discrepancy_of_atoms(n, set)));
    (
        set.len(),
        d.unwrap_or_else(|| "nan".to_string()),
        f17(tv_max(set)),
    )
}

/// Depth-indexed table of exact atom counts, discrepancy, and the
/// largest pairwise TV distance.
pub fn exact_csv(cfg: &ExperimentConfig) -> Result<String, RunError> {
    let noise = build_noise(cfg, &cfg.channel)?;
    let mut out = header("exact", cfg, false);
    out.push_str("depth,atoms,discrepancy,tv_max\n");
    match &cfg.tree {
        TreeChoice::Bary { arity } => {
            let norm = norm_for(&cfg.channel, *arity as f64);
            for d in 0..=cfg.depth {
                let set = level_atoms(&cfg.channel, &noise, *arity, d, cfg.atom_budget)?;
                let (atoms, disc, tv) = exact_row(&set, norm.as_ref());
                out.push_str(&format!("{d},{atoms},{disc},{tv}\n"));
            }
        }
        TreeChoice::Spherical { levels } => {
            let norm = norm_for(
                &cfg.channel,
                levels.iter().copied().max().unwrap_or(1) as f64,
            );
            for d in 0..=cfg.depth.min(levels.len()) {
                let tree = build_tree(cfg, d)?;
                let antichain = validate_antichain(&tree, tree.level(d))?;
                let set =
                    subtree_atoms(&tree, &antichain, &cfg.channel, &noise, cfg.atom_budget)?;
                let (atoms, disc, tv) = exact_row(&set, norm.as_ref());
                out.push_str(&format!("{d},{atoms},{disc},{tv}\n"));
            }
        }
        TreeChoice::Explicit { .. } => {
            let tree = build_tree(cfg, cfg.depth)?;
            let antichain = pick_antichain(cfg, &tree)?;
            let norm = norm_for(&cfg.channel, tree.max_degree().max(1) as f64);
            let set = subtree_atoms(&tree, &antichain, &cfg.channel, &noise, cfg.atom_budget)?;
            let depth = antichain
                .members()
                .iter()
                .map(|&x| tree.depth_of(x))
                .max()
                .unwrap_or(0);
            let (atoms, disc, tv) = exact_row(&set, norm.as_ref());
            out.push_str(&format!("{depth},{atoms},{disc},{tv}\n"));
        }
    }
    Ok(out)
}

/// Monte Carlo estimates for the configured estimators.
pub fn simulate_csv(cfg: &ExperimentConfig) -> Result<String, RunError> {
    let noise = build_noise(cfg, &cfg.channel)?;
    let tree = build_tree(cfg, cfg.depth)?;
    let antichain = pick_antichain(cfg, &tree)?;
    let mc = McConfig {
        samples: cfg.samples,
        seed: cfg.seed,
        streams: cfg.streams,
    };
    let instance = instance_hash(&cfg.channel, &noise, &tree, &antichain);
    let (i, j) = cfg.root_pair;
    let mut out = header("simulate", cfg, true);
    out.push_str("estimator,instance,n_samples,mean,stderr,seed,streams\n");
    let mut push = |name: &str, mean: f64, stderr: f64, n: u64| {
        out.push_str(&format!(
            "{name},{instance},{n},{},{},{},{}\n",
            f17(mean),
            f17(stderr),
            cfg.seed,
            cfg.streams
        ));
    };
    for estimator in &cfg.estimators {
        match estimator {
            Estimator::Tv => {
                let e = tv_mc(&tree, &antichain, &cfg.channel, &noise, i, j, &mc)?;
                push(&format!("tv_{i}_{j}"), e.mean, e.stderr, e.n);
            }
            Estimator::Recon => {
                let e = reconstruction_error_mc(&tree, &antichain, &cfg.channel, &noise, &mc)?;
                push("recon", e.mean, e.stderr, e.n);
            }
            Estimator::Census => {
                let z = census_separation(&tree, &antichain, &cfg.channel, &noise, i, j, &mc)?;
                let pooled = (0.5 * (z.se_i * z.se_i + z.se_j * z.se_j)).sqrt();
                let name = if z.eig_converged {
                    format!("census_z_{i}_{j}")
                } else {
                    format!("census_z_{i}_{j}_unconverged")
                };
                push(&name, z.z, pooled, mc.samples);
            }
        }
    }
    Ok(out)
}

/// Exact tables over the configured parameter grids.
pub fn sweep_csv(cfg: &ExperimentConfig) -> Result<String, RunError> {
    let deltas: Vec<Option<f64>> = if cfg.delta_grid.is_empty() {
        vec![cfg.preset.as_ref().map(|p| p.delta())]
    } else {
        cfg.delta_grid.iter().map(|d| Some(*d)).collect()
    };
    let depths = if cfg.depth_grid.is_empty() {
        vec![cfg.depth]
    } else {
        cfg.depth_grid.clone()
    };
    let (regime_name, ks, epss): (&str, Vec<u32>, Vec<f64>) = match &cfg.regime {
        RegimeConfig::ExtraSteps { k } => (
            "extra_steps",
            if cfg.k_grid.is_empty() {
                vec![k.unwrap_or(0)]
            } else {
                cfg.k_grid.clone()
            },
            vec![0.0],
        ),
        RegimeConfig::Mix { eps, .. } => (
            "mix",
            vec![0],
            if cfg.eps_grid.is_empty() {
                vec![eps.unwrap_or(0.0)]
            } else {
                cfg.eps_grid.clone()
            },
        ),
        RegimeConfig::Erasure { eps } => (
            "erasure",
            vec![0],
            if cfg.eps_grid.is_empty() {
                vec![eps.unwrap_or(0.0)]
            } else {
                cfg.eps_grid.clone()
            },
        ),
    };
    let arity = match &cfg.tree {
        TreeChoice::Bary { arity } => *arity,
        _ => {
            return Err(RunError::Usage(
                "sweep runs on regular trees; set kind = bary".into(),
            ))
        }
    };
    let mut out = header("sweep", cfg, false);
    out.push_str("delta,regime,k,eps,depth,atoms,discrepancy,tv_max,status\n");
    for delta in &deltas {
        let channel = match (delta, &cfg.preset) {
            (Some(d), Some(p)) => p.build(*d)?,
            _ => cfg.channel.clone(),
        };
        let norm = norm_for(&channel, arity as f64);
        let delta_col = delta.map(f17).unwrap_or_default();
        for k in &ks {
            for eps in &epss {
                let q = channel.q();
                let noise = match &cfg.regime {
                    RegimeConfig::ExtraSteps { .. } => NoiseChannel::extra_steps(&channel, *k),
                    RegimeConfig::Mix { nu, .. } => {
                        let nu = nu.clone().unwrap_or(vec![1.0 / q as f64; q]);
                        NoiseChannel::mix(q, &nu, *eps)?
                    }
                    RegimeConfig::Erasure { .. } => NoiseChannel::erasure(q, *eps)?,
                };
                for depth in &depths {
                    match level_atoms(&channel, &noise, arity, *depth, cfg.atom_budget) {
                        Ok(set) => {
                            let (atoms, disc, tv) = exact_row(&set, norm.as_ref());
                            out.push_str(&format!(
                                "{delta_col},{regime_name},{k},{},{depth},{atoms},{disc},{tv},ok\n",
                                f17(*eps)
                            ));
                        }
                        Err(ExactError::AtomBudgetExceeded { .. }) => {
                            out.push_str(&format!(
                                "{delta_col},{regime_name},{k},{},{depth},,,,budget\n",
                                f17(*eps)
                            ));
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Minimizing antichain of the weight dynamic program, plus the check
/// of any antichain given in the config.
pub fn antichain_csv(cfg: &ExperimentConfig) -> Result<String, RunError> {
    let tree = build_tree(cfg, cfg.depth)?;
    let lambda = cfg
        .growth
        .unwrap_or_else(|| tree.max_degree().max(1) as f64);
    if !(lambda > 0.0) {
        return Err(RunError::Usage("growth must be positive".into()));
    }
    let mut out = header("antichain", cfg, false);
    out.push_str("source,lambda,size,sum,members\n");
    let mut push = |source: &str, antichain: &Antichain, sum: f64| {
        let mut members = antichain.members().to_vec();
        members.sort_unstable();
        let joined: Vec<String> = members.iter().map(|x| x.to_string()).collect();
        out.push_str(&format!(
            "{source},{},{},{},{}\n",
            f17(lambda),
            members.len(),
            f17(sum),
            joined.join(" ")
        ));
    };
    let (sum, best) = min_antichain_sum(&tree, lambda);
    push("dp", &best, sum);
    if let Some(set) = &cfg.antichain {
        let given = validate_antichain(&tree, set)?;
        let s = cutset_sum(&tree, &given, lambda);
        push("given", &given, s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    const BASE: &str = "[channel]\npreset = bsc(0.3)\n[tree]\ndepth = 2\n[mc]\nsamples = 400\nseed = 5\nstreams = 4\n[output]\ntimestamp = false\n";

    #[test]
    fn certify_then_verify_round_trip() {
        let text = certify_text(&cfg(BASE)).unwrap();
        let summary = verify_text(&text, crate::exact::DEFAULT_ATOM_BUDGET).unwrap();
        assert!(summary.contains("certificate verified"), "{summary}");
        assert!(summary.contains("extra_steps k=4"), "{summary}");
    }

    #[test]
    fn exact_table_has_rows_per_depth() {
        let out = exact_csv(&cfg(BASE)).unwrap();
        let rows: Vec<&str> = out
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect();
        assert_eq!(rows[0], "depth,atoms,discrepancy,tv_max");
        assert_eq!(rows.len(), 1 + 3);
        assert!(rows[1].starts_with("0,2,"));
    }

    #[test]
    fn simulate_is_reproducible_without_timestamp() {
        let a = simulate_csv(&cfg(BASE)).unwrap();
        let b = simulate_csv(&cfg(BASE)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("tv_0_1"));
        assert!(a.contains("recon"));
    }

    #[test]
    fn sweep_covers_the_grid() {
        let text = "[channel]\npreset = bsc(0.3)\ndelta_grid = 0.2 0.3\n[tree]\ndepth_grid = 1 2\n[noise]\nregime = extra_steps\nk_grid = 0 1\n[output]\ntimestamp = false\n";
        let out = sweep_csv(&cfg(text)).unwrap();
        let rows = out
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("delta"))
            .count();
        assert_eq!(rows, 2 * 2 * 2);
        assert!(out.lines().all(|l| !l.contains(",budget")));
    }

    #[test]
    fn antichain_rows_include_given_set() {
        let text = "[channel]\npreset = bsc(0.3)\n[tree]\nkind = bary\narity = 2\ndepth = 3\nantichain = 1 5 6\ngrowth = 3.0\n[output]\ntimestamp = false\n";
        let out = antichain_csv(&cfg(text)).unwrap();
        assert!(out.contains("dp,"), "{out}");
        assert!(out.contains("given,"), "{out}");
        // dp at lambda=3 on the depth-3 binary tree picks the deepest level
        let dp_line = out.lines().find(|l| l.starts_with("dp,")).unwrap();
        assert!(dp_line.contains(",8,"), "{dp_line}");
    }

    #[test]
    fn missing_growth_for_finite_certificate_is_usage_error() {
        let text = "[channel]\npreset = bsc(0.3)\n[tree]\nkind = explicit\nparents = - 0 0\n";
        let err = certify_text(&cfg(text)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
