//! Machine-checkable certificates of vanishing root information.
//!
//! A certificate packages, for one channel and one tree shape, the
//! contraction norm, the derived constants, a noise level at which the
//! discrepancy falls below the tensorization threshold, and a log of
//! exact discrepancy values whose decay witnesses the conclusion. All
//! quantities in the text form are 17-digit floats, so `verify`
//! reconstructs the exact inputs, recomputes every claim from scratch,
//! and fails on the first number or inequality that does not hold.
//!
//! Regular trees log the per-level discrepancy of the level measures;
//! finite trees carry one check per interior node of the chosen
//! antichain, each asserting that the node's discrepancy is bounded by
//! (1 + eps) alpha^2 times the sum over its children.

use crate::channel::{Channel, ChannelError, NoiseChannel};
use crate::discrepancy::{
    discrepancy_of_atoms, tensorization_delta, ContractionNorm, NormError,
};
use crate::exact::{
    apply_channel, leaf_atoms, recursion_step, subtree_atoms_map, AtomSet, ExactError,
};
use crate::numfmt::f17;
use crate::tree::{
    min_antichain_sum, subtree_sums_bounded, validate_antichain, Tree, TreeError, TreeSpec,
};
use thiserror::Error;

pub const CERT_HEADER: &str = "treecast certificate v1";
/// Slack on recomputed-versus-stated float comparisons.
const MATCH_RTOL: f64 = 1e-9;
/// Slack on inequality checks between exact quantities.
const INEQ_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("effective branching times lambda2^2 is {value}, not below one")]
    AboveThreshold { value: f64 },
    #[error("no k up to {cap} brings the stepped measure below threshold")]
    KstarNotFound { cap: u32 },
    #[error("mix distribution entry {index} is zero")]
    DegenerateNu { index: usize },
    #[error("channel entry ({row},{col}) is zero, erasure threshold needs full support")]
    ZeroEntry { row: usize, col: usize },
    #[error("antichain member {node} has no children to shift the erasure to")]
    MissingChildren { node: usize },
    #[error("antichain weight {sum} exceeds the bound {bound}")]
    CutsetTooLarge { sum: f64, bound: f64 },
    #[error("subtree weight condition fails at node {node}")]
    SubtreeSumViolation { node: usize },
    #[error("decay ratio {ratio} at step {index} exceeds {bound}")]
    RatioViolation { index: usize, ratio: f64, bound: f64 },
    #[error("{what} is {value}, required at most {bound}")]
    BoundViolation {
        what: &'static str,
        value: f64,
        bound: f64,
    },
    #[error("{field}: stated {stated}, recomputed {computed}")]
    Mismatch {
        field: String,
        stated: f64,
        computed: f64,
    },
    #[error("certificate line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    /// Number of decay-log entries for regular trees.
    pub decay_levels: usize,
    /// Largest extra-steps count searched.
    pub kstar_cap: u32,
    pub atom_budget: usize,
    /// Bound the chosen antichain weight must meet on finite trees.
    pub cutset_bound: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            decay_levels: 5,
            kstar_cap: 64,
            atom_budget: crate::exact::DEFAULT_ATOM_BUDGET,
            cutset_bound: 0.2,
        }
    }
}

/// Noise regime to certify; `None` levels mean "use the computed
/// threshold level itself".
#[derive(Debug, Clone)]
pub enum NoiseRequest {
    ExtraSteps { k: Option<u32> },
    Mix { nu: Vec<f64>, eps: Option<f64> },
    Erasure { eps: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertTree {
    Bary {
        arity: usize,
    },
    Explicit {
        parents: Vec<Option<usize>>,
        members: Vec<usize>,
        growth: f64,
        cutset_sum: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertNoise {
    ExtraSteps { kstar: u32, applied_k: u32 },
    Mix { nu: Vec<f64>, epsstar: f64, applied_eps: f64 },
    Erasure { epsstar: f64, applied_eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCheck {
    pub node: usize,
    pub d: f64,
    pub children_sum: f64,
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub channel_rows: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
    pub lambda2: f64,
    pub tree: CertTree,
    pub alpha: f64,
    pub gram: Vec<Vec<f64>>,
    pub sum_abs_t: f64,
    /// Effective branching times lambda2 squared.
    pub threshold_value: f64,
    pub eps_max: f64,
    pub eps_slack: f64,
    pub c: f64,
    pub c_tilde: f64,
    pub delta: f64,
    /// Level actually required of the base measure (shrunk for the
    /// erasure regime, where the raw leaf measure is degenerate).
    pub delta_base: f64,
    /// Total-variation bound implied by the last logged discrepancy.
    pub tv_bound: f64,
    pub noise: CertNoise,
    pub base_discrepancy: f64,
    pub decay_start: usize,
    pub decay: Vec<f64>,
    pub member_checks: Vec<(usize, f64)>,
    pub node_checks: Vec<NodeCheck>,
    pub generated_unix: Option<u64>,
}

/// eps_max, its applied half, and the inflated contraction rate for a
/// channel below the threshold branching * lambda2^2 < 1.
pub fn threshold_parameters(
    lambda2: f64,
    branching: f64,
) -> Result<(f64, f64, f64), CertifyError> {
    let value = branching * lambda2 * lambda2;
    if !(value < 1.0) {
        return Err(CertifyError::AboveThreshold { value });
    }
    let eps_max = (1.0 - value) / (1.0 + value);
    let eps = eps_max / 2.0;
    let alpha = (lambda2.abs() * (1.0 + eps / 4.0)).max(1e-6);
    Ok((eps_max, eps, alpha))
}

/// Smallest k >= 1 whose k-step leaf measure has discrepancy at most
/// delta; returns the discrepancy too.
pub fn kstar(
    channel: &Channel,
    norm: &ContractionNorm,
    delta: f64,
    cap: u32,
) -> Result<(u32, f64), CertifyError> {
    for k in 1..=cap {
        let d = discrepancy_of_atoms(norm, &leaf_atoms(&NoiseChannel::extra_steps(channel, k)));
        if d <= delta {
            return Ok((k, d));
        }
    }
    Err(CertifyError::KstarNotFound { cap })
}

/// Closed-form sufficient mixing level: the smaller root of
/// a^2 e^2 + (2a/m - c) e + 1/m^2 with a = 1 - 1/m, c = delta/sum|t| + 1
/// and m the smallest mix weight, clamped to [0, 1].
pub fn epsstar_mix(nu: &[f64], sum_abs_t: f64, delta: f64) -> Result<f64, CertifyError> {
    let (index, &m) = nu
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty distribution");
    if m <= 0.0 {
        return Err(CertifyError::DegenerateNu { index });
    }
    let a = 1.0 - 1.0 / m;
    let c = delta / sum_abs_t + 1.0;
    let qa = a * a;
    let qb = 2.0 * a / m - c;
    let qc = 1.0 / (m * m);
    if qa == 0.0 {
        // single-state mix distribution cannot happen for q >= 2
        return Ok(1.0);
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Ok(1.0);
    }
    let root = (-qb - disc.sqrt()) / (2.0 * qa);
    Ok(root.clamp(0.0, 1.0))
}

/// Closed-form sufficient erasure level
/// 1 - delta / (sum|t| (q^2/m - 1)) with m the smallest channel entry;
/// requires a strictly positive channel.
pub fn epsstar_erasure(
    channel: &Channel,
    sum_abs_t: f64,
    delta: f64,
) -> Result<f64, CertifyError> {
    let q = channel.q();
    let m = channel.matrix();
    let mut min = f64::INFINITY;
    for i in 0..q {
        for j in 0..q {
            if m[(i, j)] <= 0.0 {
                return Err(CertifyError::ZeroEntry { row: i, col: j });
            }
            min = min.min(m[(i, j)]);
        }
    }
    let val = 1.0 - delta / (sum_abs_t * (q as f64 * q as f64 / min - 1.0));
    Ok(val.clamp(0.0, 1.0))
}

/// Successive ratios of the decay log must stay below the bound.
pub fn verify_decay(levels: &[f64], ratio_bound: f64) -> Result<(), CertifyError> {
    for (i, pair) in levels.windows(2).enumerate() {
        if !(pair[0] > 0.0) {
            // a level at exactly zero ends the decay; nothing to check
            continue;
        }
        let ratio = pair[1] / pair[0];
        if ratio > ratio_bound + INEQ_TOL {
            return Err(CertifyError::RatioViolation {
                index: i,
                ratio,
                bound: ratio_bound,
            });
        }
    }
    Ok(())
}

fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(1.0)
}

fn check_match(field: &str, stated: f64, computed: f64) -> Result<(), CertifyError> {
    if rel_close(stated, computed, MATCH_RTOL) {
        Ok(())
    } else {
        Err(CertifyError::Mismatch {
            field: field.to_string(),
            stated,
            computed,
        })
    }
}

/// Find a valid level by shrinking toward one when the closed form is
/// not quite enough; keeps the invariant that the returned level's
/// exact discrepancy is at most delta.
fn refine_eps(
    mut lo: f64,
    delta: f64,
    eval: impl Fn(f64) -> Result<f64, CertifyError>,
) -> Result<f64, CertifyError> {
    if eval(lo)? <= delta {
        return Ok(lo);
    }
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 {
            break;
        }
    }
    Ok(hi)
}

/// Exact decay replay for one candidate noise channel; true when every
/// logged ratio stays within the bound. Budget exhaustion counts as a
/// failure because nothing was verified.
fn replay_contracts(
    channel: &Channel,
    arity: usize,
    noise: &NoiseChannel,
    norm: &ContractionNorm,
    ratio_bound: f64,
    erasure: bool,
    opts: &CertifyOptions,
) -> bool {
    let mut set = leaf_atoms(noise);
    if erasure {
        let children: Vec<&AtomSet> = std::iter::repeat_n(&set, arity).collect();
        match recursion_step(&children, channel, opts.atom_budget) {
            Ok(next) => set = next,
            Err(_) => return false,
        }
    }
    let mut decay = vec![discrepancy_of_atoms(norm, &set)];
    if !decay[0].is_finite() {
        return false;
    }
    while decay.len() < opts.decay_levels.max(2) {
        let children: Vec<&AtomSet> = std::iter::repeat_n(&set, arity).collect();
        match recursion_step(&children, channel, opts.atom_budget) {
            Ok(next) => {
                set = next;
                decay.push(discrepancy_of_atoms(norm, &set));
            }
            Err(_) => return false,
        }
    }
    verify_decay(&decay, ratio_bound).is_ok()
}

/// Smallest step count whose exact decay replay contracts at the
/// certified ratio. Evidence only: the search skips the sufficient
/// bound that `kstar` relies on, so the result never enters a
/// certificate.
pub fn empirical_kstar(
    channel: &Channel,
    arity: usize,
    opts: &CertifyOptions,
) -> Result<u32, CertifyError> {
    let der = derive(channel, arity as f64, arity)?;
    for k in 0..=opts.kstar_cap {
        let noise = NoiseChannel::extra_steps(channel, k);
        if replay_contracts(channel, arity, &noise, &der.norm, 1.0 - der.eps, false, opts) {
            return Ok(k);
        }
    }
    Err(CertifyError::KstarNotFound {
        cap: opts.kstar_cap,
    })
}

/// Smallest mix weight (to bisection resolution) whose exact decay
/// replay contracts at the certified ratio. Evidence only, same caveat
/// as `empirical_kstar`.
pub fn empirical_epsstar_mix(
    channel: &Channel,
    nu: &[f64],
    arity: usize,
    opts: &CertifyOptions,
) -> Result<f64, CertifyError> {
    let der = derive(channel, arity as f64, arity)?;
    epsstar_mix(nu, der.norm.sum_abs_t(), der.delta)?;
    let q = channel.q();
    bisect_smallest(|e| {
        let noise = NoiseChannel::mix(q, nu, e)?;
        Ok(replay_contracts(
            channel,
            arity,
            &noise,
            &der.norm,
            1.0 - der.eps,
            false,
            opts,
        ))
    })
}

/// Smallest erasure probability (to bisection resolution) whose exact
/// decay replay contracts at the certified ratio. Evidence only.
pub fn empirical_epsstar_erasure(
    channel: &Channel,
    arity: usize,
    opts: &CertifyOptions,
) -> Result<f64, CertifyError> {
    let der = derive(channel, arity as f64, arity)?;
    epsstar_erasure(channel, der.norm.sum_abs_t(), der.delta)?;
    let q = channel.q();
    bisect_smallest(|e| {
        let noise = NoiseChannel::erasure(q, e)?;
        Ok(replay_contracts(
            channel,
            arity,
            &noise,
            &der.norm,
            1.0 - der.eps,
            true,
            opts,
        ))
    })
}

/// Smallest passing level in [0, 1] under the working assumption that
/// passing is upward closed; one is returned when nothing below passes.
fn bisect_smallest(pass: impl Fn(f64) -> Result<bool, CertifyError>) -> Result<f64, CertifyError> {
    if pass(0.0)? {
        return Ok(0.0);
    }
    if !pass(1.0)? {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if pass(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

struct Derived {
    stationary: Vec<f64>,
    lambda2: f64,
    alpha: f64,
    eps_max: f64,
    eps: f64,
    threshold_value: f64,
    norm: ContractionNorm,
    c: f64,
    c_tilde: f64,
    delta: f64,
}

fn derive(channel: &Channel, branching: f64, arity: usize) -> Result<Derived, CertifyError> {
    let lambda2 = channel.second_eigenvalue();
    let (eps_max, eps, alpha) = threshold_parameters(lambda2, branching)?;
    let norm = ContractionNorm::build(channel, alpha)?;
    let consts = norm.constants();
    let delta = tensorization_delta(&consts, arity, eps);
    Ok(Derived {
        stationary: channel.stationary()?.iter().copied().collect(),
        lambda2,
        alpha,
        eps_max,
        eps,
        threshold_value: branching * lambda2 * lambda2,
        c: consts.c,
        c_tilde: consts.c_tilde,
        delta,
        norm,
    })
}

/// Resolve the request into a certified noise level whose base-measure
/// discrepancy provably sits below delta_base.
fn resolve_noise(
    channel: &Channel,
    norm: &ContractionNorm,
    request: &NoiseRequest,
    delta_base: f64,
    opts: &CertifyOptions,
) -> Result<(CertNoise, NoiseChannel, f64), CertifyError> {
    match request {
        NoiseRequest::ExtraSteps { k } => {
            let (ks, _) = kstar(channel, norm, delta_base, opts.kstar_cap)?;
            let applied = k.unwrap_or(ks);
            let noise = NoiseChannel::extra_steps(channel, applied);
            let d = discrepancy_of_atoms(norm, &leaf_atoms(&noise));
            if d > delta_base {
                return Err(CertifyError::BoundViolation {
                    what: "discrepancy at the requested step count",
                    value: d,
                    bound: delta_base,
                });
            }
            Ok((
                CertNoise::ExtraSteps {
                    kstar: ks,
                    applied_k: applied,
                },
                noise,
                d,
            ))
        }
        NoiseRequest::Mix { nu, eps } => {
            let formula = epsstar_mix(nu, norm.sum_abs_t(), delta_base)?;
            let q = channel.q();
            let eval = |e: f64| -> Result<f64, CertifyError> {
                Ok(discrepancy_of_atoms(
                    norm,
                    &leaf_atoms(&NoiseChannel::mix(q, nu, e)?),
                ))
            };
            let applied = match eps {
                Some(e) => {
                    let d = eval(*e)?;
                    if d > delta_base {
                        return Err(CertifyError::BoundViolation {
                            what: "discrepancy at the requested mix level",
                            value: d,
                            bound: delta_base,
                        });
                    }
                    *e
                }
                None => refine_eps(formula, delta_base, eval)?,
            };
            let noise = NoiseChannel::mix(q, nu, applied)?;
            let d = discrepancy_of_atoms(norm, &leaf_atoms(&noise));
            Ok((
                CertNoise::Mix {
                    nu: nu.clone(),
                    epsstar: formula,
                    applied_eps: applied,
                },
                noise,
                d,
            ))
        }
        NoiseRequest::Erasure { eps } => {
            let formula = epsstar_erasure(channel, norm.sum_abs_t(), delta_base)?;
            let q = channel.q();
            // the raw erased leaf is degenerate; the certified quantity
            // is the one-step smoothed measure
            let eval = |e: f64| -> Result<f64, CertifyError> {
                let atoms = leaf_atoms(&NoiseChannel::erasure(q, e)?);
                Ok(discrepancy_of_atoms(norm, &apply_channel(&atoms, channel)))
            };
            let applied = match eps {
                Some(e) => {
                    let d = eval(*e)?;
                    if d > delta_base {
                        return Err(CertifyError::BoundViolation {
                            what: "discrepancy at the requested erasure level",
                            value: d,
                            bound: delta_base,
                        });
                    }
                    *e
                }
                None => refine_eps(formula, delta_base, eval)?,
            };
            let noise = NoiseChannel::erasure(q, applied)?;
            let d = eval(applied)?;
            Ok((
                CertNoise::Erasure {
                    epsstar: formula,
                    applied_eps: applied,
                },
                noise,
                d,
            ))
        }
    }
}

fn channel_rows(channel: &Channel) -> Vec<Vec<f64>> {
    let q = channel.q();
    let m = channel.matrix();
    (0..q)
        .map(|i| (0..q).map(|j| m[(i, j)]).collect())
        .collect()
}

fn gram_rows(norm: &ContractionNorm) -> Vec<Vec<f64>> {
    let g = norm.gram();
    (0..g.nrows())
        .map(|i| (0..g.ncols()).map(|j| g[(i, j)]).collect())
        .collect()
}

/// Certificate for the infinite regular tree with the given arity.
pub fn certify_bary(
    channel: &Channel,
    arity: usize,
    request: &NoiseRequest,
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let der = derive(channel, arity as f64, arity)?;
    let erasure = matches!(request, NoiseRequest::Erasure { .. });
    let delta_base = if erasure {
        der.delta / (arity as f64 * (1.0 + der.eps))
    } else {
        der.delta
    };
    let (cert_noise, noise, base_d) =
        resolve_noise(channel, &der.norm, request, delta_base, opts)?;

    // decay log: exact level measures, erasure starts one level up
    let decay_start = usize::from(erasure);
    let mut set = leaf_atoms(&noise);
    let mut decay = Vec::new();
    if erasure {
        let children: Vec<&AtomSet> = std::iter::repeat_n(&set, arity).collect();
        set = recursion_step(&children, channel, opts.atom_budget)?;
    }
    decay.push(discrepancy_of_atoms(&der.norm, &set));
    while decay.len() < opts.decay_levels.max(2) {
        let children: Vec<&AtomSet> = std::iter::repeat_n(&set, arity).collect();
        match recursion_step(&children, channel, opts.atom_budget) {
            Ok(next) => {
                set = next;
                decay.push(discrepancy_of_atoms(&der.norm, &set));
            }
            Err(ExactError::AtomBudgetExceeded { .. }) if decay.len() >= 2 => break,
            Err(e) => return Err(e.into()),
        }
    }
    if decay[0] > der.delta + INEQ_TOL {
        return Err(CertifyError::BoundViolation {
            what: "first logged discrepancy",
            value: decay[0],
            bound: der.delta,
        });
    }
    verify_decay(&decay, 1.0 - der.eps)?;
    let d_last = *decay.last().expect("at least two entries");

    Ok(Certificate {
        channel_rows: channel_rows(channel),
        stationary: der.stationary,
        lambda2: der.lambda2,
        tree: CertTree::Bary { arity },
        alpha: der.alpha,
        gram: gram_rows(&der.norm),
        sum_abs_t: der.norm.sum_abs_t(),
        threshold_value: der.threshold_value,
        eps_max: der.eps_max,
        eps_slack: der.eps,
        c: der.c,
        c_tilde: der.c_tilde,
        delta: der.delta,
        delta_base,
        tv_bound: 0.5 * (der.c * d_last).sqrt(),
        noise: cert_noise,
        base_discrepancy: base_d,
        decay_start,
        decay,
        member_checks: Vec::new(),
        node_checks: Vec::new(),
        generated_unix: None,
    })
}

/// Certificate for a concrete finite tree: growth parameter, antichain
/// weight checks, and one discrepancy inequality per interior node.
pub fn certify_finite_tree(
    tree: &Tree,
    channel: &Channel,
    request: &NoiseRequest,
    growth: f64,
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let arity = tree.max_degree().max(1);
    let der = derive(channel, growth, arity)?;
    let erasure = matches!(request, NoiseRequest::Erasure { .. });
    let delta_base = if erasure {
        der.delta / (arity as f64 * (1.0 + der.eps))
    } else {
        der.delta
    };
    let (cert_noise, noise, base_d) =
        resolve_noise(channel, &der.norm, request, delta_base, opts)?;

    let (sum, antichain) = min_antichain_sum(tree, growth);
    if sum > opts.cutset_bound {
        return Err(CertifyError::CutsetTooLarge {
            sum,
            bound: opts.cutset_bound,
        });
    }
    if !subtree_sums_bounded(tree, &antichain, growth) {
        return Err(CertifyError::SubtreeSumViolation { node: 0 });
    }

    // erasure shifts the observed set one generation down so the
    // member measures are channel-smoothed
    let eval_antichain = if erasure {
        let mut shifted = Vec::new();
        for &x in antichain.members() {
            let kids = tree.children_of(x);
            if kids.is_empty() {
                return Err(CertifyError::MissingChildren { node: x });
            }
            shifted.extend_from_slice(kids);
        }
        validate_antichain(tree, &shifted)?
    } else {
        antichain.clone()
    };
    let map = subtree_atoms_map(tree, &eval_antichain, channel, &noise, opts.atom_budget)?;
    let d_of = |x: usize| -> f64 {
        discrepancy_of_atoms(&der.norm, map[x].as_ref().expect("resolved node"))
    };

    let mut member_checks = Vec::new();
    for &x in antichain.members() {
        let d = d_of(x);
        if d > der.delta + INEQ_TOL {
            return Err(CertifyError::BoundViolation {
                what: "member discrepancy",
                value: d,
                bound: der.delta,
            });
        }
        member_checks.push((x, d));
    }
    let factor = (1.0 + der.eps) * der.alpha * der.alpha;
    let mut node_checks = Vec::new();
    let member_set: std::collections::HashSet<usize> =
        antichain.members().iter().copied().collect();
    let mut inside = antichain.inside().to_vec();
    inside.sort_unstable();
    for &x in &inside {
        if member_set.contains(&x) {
            continue;
        }
        let d = d_of(x);
        let children_sum: f64 = tree.children_of(x).iter().map(|&c| d_of(c)).sum();
        if d > factor * children_sum + INEQ_TOL {
            return Err(CertifyError::BoundViolation {
                what: "interior node discrepancy",
                value: d,
                bound: factor * children_sum,
            });
        }
        if d > der.delta + INEQ_TOL {
            return Err(CertifyError::BoundViolation {
                what: "interior node discrepancy against delta",
                value: d,
                bound: der.delta,
            });
        }
        node_checks.push(NodeCheck {
            node: x,
            d,
            children_sum,
        });
    }
    let d_root = d_of(0);
    let base_max = member_checks
        .iter()
        .map(|&(_, d)| d)
        .fold(base_d, f64::max);

    Ok(Certificate {
        channel_rows: channel_rows(channel),
        stationary: der.stationary,
        lambda2: der.lambda2,
        tree: CertTree::Explicit {
            parents: (0..tree.node_count()).map(|x| tree.parent_of(x)).collect(),
            members: antichain.members().to_vec(),
            growth,
            cutset_sum: sum,
        },
        alpha: der.alpha,
        gram: gram_rows(&der.norm),
        sum_abs_t: der.norm.sum_abs_t(),
        threshold_value: der.threshold_value,
        eps_max: der.eps_max,
        eps_slack: der.eps,
        c: der.c,
        c_tilde: der.c_tilde,
        delta: der.delta,
        delta_base,
        tv_bound: 0.5 * (der.c * d_root).sqrt(),
        noise: cert_noise,
        base_discrepancy: base_max,
        decay_start: 0,
        decay: Vec::new(),
        member_checks,
        node_checks,
        generated_unix: None,
    })
}

impl Certificate {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(CERT_HEADER);
        s.push_str("\n\n[channel]\n");
        s.push_str(&format!("q = {}\n", self.channel_rows.len()));
        for (i, row) in self.channel_rows.iter().enumerate() {
            s.push_str(&format!("row_{i} = {}\n", join17(row)));
        }
        s.push_str(&format!("stationary = {}\n", join17(&self.stationary)));
        s.push_str(&format!("lambda2 = {}\n", f17(self.lambda2)));
        s.push_str("\n[tree]\n");
        match &self.tree {
            CertTree::Bary { arity } => {
                s.push_str("kind = bary\n");
                s.push_str(&format!("arity = {arity}\n"));
            }
            CertTree::Explicit {
                parents,
                members,
                growth,
                cutset_sum,
            } => {
                s.push_str("kind = explicit\n");
                let ps: Vec<String> = parents
                    .iter()
                    .map(|p| p.map_or("-".to_string(), |x| x.to_string()))
                    .collect();
                s.push_str(&format!("parents = {}\n", ps.join(" ")));
                let ms: Vec<String> = members.iter().map(|x| x.to_string()).collect();
                s.push_str(&format!("antichain = {}\n", ms.join(" ")));
                s.push_str(&format!("growth = {}\n", f17(*growth)));
                s.push_str(&format!("cutset_sum = {}\n", f17(*cutset_sum)));
            }
        }
        s.push_str("\n[norm]\n");
        s.push_str(&format!("alpha = {}\n", f17(self.alpha)));
        for (i, row) in self.gram.iter().enumerate() {
            s.push_str(&format!("gram_{i} = {}\n", join17(row)));
        }
        s.push_str(&format!("sum_abs_t = {}\n", f17(self.sum_abs_t)));
        s.push_str("\n[constants]\n");
        s.push_str(&format!("threshold = {}\n", f17(self.threshold_value)));
        s.push_str(&format!("eps_max = {}\n", f17(self.eps_max)));
        s.push_str(&format!("eps_slack = {}\n", f17(self.eps_slack)));
        s.push_str(&format!("c = {}\n", f17(self.c)));
        s.push_str(&format!("c_tilde = {}\n", f17(self.c_tilde)));
        s.push_str(&format!("delta = {}\n", f17(self.delta)));
        s.push_str(&format!("delta_base = {}\n", f17(self.delta_base)));
        s.push_str(&format!("tv_bound = {}\n", f17(self.tv_bound)));
        s.push_str("\n[threshold]\n");
        match &self.noise {
            CertNoise::ExtraSteps { kstar, applied_k } => {
                s.push_str("regime = extra_steps\n");
                s.push_str(&format!("kstar = {kstar}\n"));
                s.push_str(&format!("applied_k = {applied_k}\n"));
            }
            CertNoise::Mix {
                nu,
                epsstar,
                applied_eps,
            } => {
                s.push_str("regime = mix\n");
                s.push_str(&format!("nu = {}\n", join17(nu)));
                s.push_str(&format!("epsstar = {}\n", f17(*epsstar)));
                s.push_str(&format!("applied_eps = {}\n", f17(*applied_eps)));
            }
            CertNoise::Erasure {
                epsstar,
                applied_eps,
            } => {
                s.push_str("regime = erasure\n");
                s.push_str(&format!("epsstar = {}\n", f17(*epsstar)));
                s.push_str(&format!("applied_eps = {}\n", f17(*applied_eps)));
            }
        }
        s.push_str(&format!(
            "base_discrepancy = {}\n",
            f17(self.base_discrepancy)
        ));
        if !self.decay.is_empty() {
            s.push_str("\n[decay-log]\n");
            s.push_str(&format!("start = {}\n", self.decay_start));
            for (i, d) in self.decay.iter().enumerate() {
                s.push_str(&format!("d_{} = {}\n", self.decay_start + i, f17(*d)));
            }
        }
        if !self.member_checks.is_empty() || !self.node_checks.is_empty() {
            s.push_str("\n[checks]\n");
            for (x, d) in &self.member_checks {
                s.push_str(&format!("member_{x} = {}\n", f17(*d)));
            }
            for nc in &self.node_checks {
                s.push_str(&format!(
                    "node_{} = {} {}\n",
                    nc.node,
                    f17(nc.d),
                    f17(nc.children_sum)
                ));
            }
        }
        s.push_str("\n[meta]\n");
        s.push_str(&format!("rng = {}\n", crate::broadcast::RNG_NAME));
        if let Some(t) = self.generated_unix {
            s.push_str(&format!("generated_unix = {t}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Certificate, CertifyError> {
        let parse = |line: usize, message: &str| CertifyError::Parse {
            line,
            message: message.to_string(),
        };
        // leading comment lines (emitted file headers) are ignored
        let mut lines = text
            .lines()
            .enumerate()
            .skip_while(|(_, l)| l.trim().is_empty() || l.trim_start().starts_with('#'));
        match lines.next() {
            Some((_, l)) if l.trim() == CERT_HEADER => {}
            _ => return Err(parse(1, "missing certificate header")),
        }
        // section -> ordered (key, value, line)
        type Fields = Vec<(String, String, usize)>;
        let mut sections: Vec<(String, Fields)> = Vec::new();
        for (idx, raw) in lines {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse(lineno, "unterminated section header"))?;
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse(lineno, "expected key = value"))?;
            let section = sections
                .last_mut()
                .ok_or_else(|| parse(lineno, "key before any section"))?;
            section
                .1
                .push((k.trim().to_string(), v.trim().to_string(), lineno));
        }
        let get_section = |name: &str| -> Option<&Fields> {
            sections.iter().find(|(n, _)| n == name).map(|(_, kv)| kv)
        };
        let want = |name: &str| -> Result<&Vec<(String, String, usize)>, CertifyError> {
            get_section(name).ok_or_else(|| parse(0, &format!("missing [{name}] section")))
        };
        let field = |kv: &Vec<(String, String, usize)>,
                     key: &str|
         -> Result<(String, usize), CertifyError> {
            kv.iter()
                .find(|(k, _, _)| k == key)
                .map(|(_, v, l)| (v.clone(), *l))
                .ok_or_else(|| parse(0, &format!("missing key {key}")))
        };
        let f64_field = |kv: &Vec<(String, String, usize)>, key: &str| -> Result<f64, CertifyError> {
            let (v, l) = field(kv, key)?;
            v.parse::<f64>()
                .map_err(|_| parse(l, &format!("bad float for {key}")))
        };
        let floats = |v: &str, l: usize| -> Result<Vec<f64>, CertifyError> {
            v.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse(l, "bad float list")))
                .collect()
        };

        let ch = want("channel")?;
        let (qv, ql) = field(ch, "q")?;
        let q: usize = qv.parse().map_err(|_| parse(ql, "bad q"))?;
        if q < 2 {
            return Err(parse(ql, "q must be at least 2"));
        }
        let mut channel_rows = Vec::with_capacity(q);
        for i in 0..q {
            let (v, l) = field(ch, &format!("row_{i}"))?;
            let row = floats(&v, l)?;
            if row.len() != q {
                return Err(parse(l, "row length does not match q"));
            }
            channel_rows.push(row);
        }
        let (sv, sl) = field(ch, "stationary")?;
        let stationary = floats(&sv, sl)?;
        let lambda2 = f64_field(ch, "lambda2")?;

        let tr = want("tree")?;
        let (kind, _) = field(tr, "kind")?;
        let tree = match kind.as_str() {
            "bary" => {
                let (av, al) = field(tr, "arity")?;
                CertTree::Bary {
                    arity: av.parse().map_err(|_| parse(al, "bad arity"))?,
                }
            }
            "explicit" => {
                let (pv, pl) = field(tr, "parents")?;
                let parents = pv
                    .split_whitespace()
                    .map(|t| {
                        if t == "-" {
                            Ok(None)
                        } else {
                            t.parse::<usize>().map(Some).map_err(|_| parse(pl, "bad parent"))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (mv, ml) = field(tr, "antichain")?;
                let members = mv
                    .split_whitespace()
                    .map(|t| t.parse::<usize>().map_err(|_| parse(ml, "bad member")))
                    .collect::<Result<Vec<_>, _>>()?;
                CertTree::Explicit {
                    parents,
                    members,
                    growth: f64_field(tr, "growth")?,
                    cutset_sum: f64_field(tr, "cutset_sum")?,
                }
            }
            other => return Err(parse(0, &format!("unknown tree kind {other}"))),
        };

        let nm = want("norm")?;
        let alpha = f64_field(nm, "alpha")?;
        let mut gram = Vec::new();
        let r = q - 1;
        for i in 0..r {
            let (v, l) = field(nm, &format!("gram_{i}"))?;
            let row = floats(&v, l)?;
            if row.len() != r {
                return Err(parse(l, "gram row length"));
            }
            gram.push(row);
        }
        let sum_abs_t = f64_field(nm, "sum_abs_t")?;

        let co = want("constants")?;
        let no = want("threshold")?;
        let (regime, _) = field(no, "regime")?;
        let noise = match regime.as_str() {
            "extra_steps" => {
                let (kv, kl) = field(no, "kstar")?;
                let (av, al) = field(no, "applied_k")?;
                CertNoise::ExtraSteps {
                    kstar: kv.parse().map_err(|_| parse(kl, "bad kstar"))?,
                    applied_k: av.parse().map_err(|_| parse(al, "bad applied_k"))?,
                }
            }
            "mix" => {
                let (nv, nl) = field(no, "nu")?;
                CertNoise::Mix {
                    nu: floats(&nv, nl)?,
                    epsstar: f64_field(no, "epsstar")?,
                    applied_eps: f64_field(no, "applied_eps")?,
                }
            }
            "erasure" => CertNoise::Erasure {
                epsstar: f64_field(no, "epsstar")?,
                applied_eps: f64_field(no, "applied_eps")?,
            },
            other => return Err(parse(0, &format!("unknown regime {other}"))),
        };

        let mut decay = Vec::new();
        let mut decay_start = 0usize;
        if let Some(de) = get_section("decay-log") {
            let (st, stl) = field(de, "start")?;
            decay_start = st.parse().map_err(|_| parse(stl, "bad start"))?;
            let mut i = decay_start;
            while let Ok((v, l)) = field(de, &format!("d_{i}")) {
                decay.push(
                    v.parse::<f64>()
                        .map_err(|_| parse(l, "bad decay value"))?,
                );
                i += 1;
            }
            if decay.is_empty() {
                return Err(parse(stl, "decay section has no entries"));
            }
        }
        let mut member_checks = Vec::new();
        let mut node_checks = Vec::new();
        if let Some(cks) = get_section("checks") {
            for (k, v, l) in cks {
                if let Some(id) = k.strip_prefix("member_") {
                    let node = id.parse().map_err(|_| parse(*l, "bad member id"))?;
                    let d = v.parse().map_err(|_| parse(*l, "bad member value"))?;
                    member_checks.push((node, d));
                } else if let Some(id) = k.strip_prefix("node_") {
                    let node = id.parse().map_err(|_| parse(*l, "bad node id"))?;
                    let vals = floats(v, *l)?;
                    if vals.len() != 2 {
                        return Err(parse(*l, "node check needs two values"));
                    }
                    node_checks.push(NodeCheck {
                        node,
                        d: vals[0],
                        children_sum: vals[1],
                    });
                } else {
                    return Err(parse(*l, "unknown check key"));
                }
            }
        }
        let mut generated_unix = None;
        if let Some(me) = get_section("meta") {
            if let Some((_, v, l)) = me.iter().find(|(k, _, _)| k == "generated_unix") {
                generated_unix =
                    Some(v.parse().map_err(|_| parse(*l, "bad generated_unix"))?);
            }
        }

        Ok(Certificate {
            channel_rows,
            stationary,
            lambda2,
            tree,
            alpha,
            gram,
            sum_abs_t,
            threshold_value: f64_field(co, "threshold")?,
            eps_max: f64_field(co, "eps_max")?,
            eps_slack: f64_field(co, "eps_slack")?,
            c: f64_field(co, "c")?,
            c_tilde: f64_field(co, "c_tilde")?,
            delta: f64_field(co, "delta")?,
            delta_base: f64_field(co, "delta_base")?,
            tv_bound: f64_field(co, "tv_bound")?,
            noise,
            base_discrepancy: f64_field(no, "base_discrepancy")?,
            decay_start,
            decay,
            member_checks,
            node_checks,
            generated_unix,
        })
    }

    /// Recompute every stated quantity from the stated inputs and check
    /// every inequality the certificate claims.
    pub fn verify(&self, atom_budget: usize) -> Result<(), CertifyError> {
        let channel = Channel::from_rows(&self.channel_rows)?;
        let v = channel.stationary()?;
        for (i, (a, b)) in self.stationary.iter().zip(v.iter()).enumerate() {
            if !rel_close(*a, *b, MATCH_RTOL) {
                return Err(CertifyError::Mismatch {
                    field: format!("stationary[{i}]"),
                    stated: *a,
                    computed: *b,
                });
            }
        }
        check_match("lambda2", self.lambda2, channel.second_eigenvalue())?;

        let (tree, branching, arity) = match &self.tree {
            CertTree::Bary { arity } => (None, *arity as f64, *arity),
            CertTree::Explicit {
                parents, growth, ..
            } => {
                let t = Tree::build(&TreeSpec::Explicit {
                    parents: parents.clone(),
                })?;
                let k = t.max_degree().max(1);
                (Some(t), *growth, k)
            }
        };
        let der = derive(&channel, branching, arity)?;
        check_match("threshold", self.threshold_value, der.threshold_value)?;
        check_match("eps_max", self.eps_max, der.eps_max)?;
        check_match("eps_slack", self.eps_slack, der.eps)?;
        check_match("alpha", self.alpha, der.alpha)?;
        let g = der.norm.gram();
        for (i, row) in self.gram.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                if !rel_close(*x, g[(i, j)], 1e-7) {
                    return Err(CertifyError::Mismatch {
                        field: format!("gram[{i},{j}]"),
                        stated: *x,
                        computed: g[(i, j)],
                    });
                }
            }
        }
        check_match("sum_abs_t", self.sum_abs_t, der.norm.sum_abs_t())?;
        check_match("c", self.c, der.c)?;
        check_match("c_tilde", self.c_tilde, der.c_tilde)?;
        check_match("delta", self.delta, der.delta)?;
        let erasure = matches!(self.noise, CertNoise::Erasure { .. });
        let delta_base = if erasure {
            der.delta / (arity as f64 * (1.0 + der.eps))
        } else {
            der.delta
        };
        check_match("delta_base", self.delta_base, delta_base)?;

        // noise level: thresholds recompute, applied level passes
        let noise = match &self.noise {
            CertNoise::ExtraSteps { kstar: ks, applied_k } => {
                let (k_re, _) = kstar(&channel, &der.norm, delta_base, (*ks).max(1) + 8)?;
                if k_re != *ks {
                    return Err(CertifyError::Mismatch {
                        field: "kstar".to_string(),
                        stated: *ks as f64,
                        computed: k_re as f64,
                    });
                }
                NoiseChannel::extra_steps(&channel, *applied_k)
            }
            CertNoise::Mix {
                nu,
                epsstar,
                applied_eps,
            } => {
                let formula = epsstar_mix(nu, der.norm.sum_abs_t(), delta_base)?;
                check_match("epsstar", *epsstar, formula)?;
                NoiseChannel::mix(channel.q(), nu, *applied_eps)?
            }
            CertNoise::Erasure {
                epsstar,
                applied_eps,
            } => {
                let formula = epsstar_erasure(&channel, der.norm.sum_abs_t(), delta_base)?;
                check_match("epsstar", *epsstar, formula)?;
                NoiseChannel::erasure(channel.q(), *applied_eps)?
            }
        };
        let base_atoms = leaf_atoms(&noise);
        let base_d = if erasure {
            discrepancy_of_atoms(&der.norm, &apply_channel(&base_atoms, &channel))
        } else {
            discrepancy_of_atoms(&der.norm, &base_atoms)
        };

        match tree {
            None => {
                check_match("base_discrepancy", self.base_discrepancy, base_d)?;
                if base_d > delta_base + INEQ_TOL {
                    return Err(CertifyError::BoundViolation {
                        what: "base discrepancy",
                        value: base_d,
                        bound: delta_base,
                    });
                }
                // replay the decay log
                let mut set = leaf_atoms(&noise);
                if self.decay_start > 0 {
                    for _ in 0..self.decay_start {
                        let children: Vec<&AtomSet> =
                            std::iter::repeat_n(&set, arity).collect();
                        set = recursion_step(&children, &channel, atom_budget)?;
                    }
                }
                let mut computed = vec![discrepancy_of_atoms(&der.norm, &set)];
                while computed.len() < self.decay.len() {
                    let children: Vec<&AtomSet> = std::iter::repeat_n(&set, arity).collect();
                    set = recursion_step(&children, &channel, atom_budget)?;
                    computed.push(discrepancy_of_atoms(&der.norm, &set));
                }
                for (i, (a, b)) in self.decay.iter().zip(&computed).enumerate() {
                    if !rel_close(*a, *b, MATCH_RTOL) {
                        return Err(CertifyError::Mismatch {
                            field: format!("d_{}", self.decay_start + i),
                            stated: *a,
                            computed: *b,
                        });
                    }
                }
                if self.decay[0] > der.delta + INEQ_TOL {
                    return Err(CertifyError::BoundViolation {
                        what: "first logged discrepancy",
                        value: self.decay[0],
                        bound: der.delta,
                    });
                }
                verify_decay(&self.decay, 1.0 - der.eps)?;
                let d_last = *self.decay.last().expect("nonempty decay");
                check_match("tv_bound", self.tv_bound, 0.5 * (der.c * d_last).sqrt())?;
            }
            Some(t) => {
                let members = match &self.tree {
                    CertTree::Explicit { members, .. } => members.clone(),
                    _ => unreachable!(),
                };
                let antichain = validate_antichain(&t, &members)?;
                let (sum_re, best) = min_antichain_sum(&t, branching);
                match &self.tree {
                    CertTree::Explicit { cutset_sum, .. } => {
                        check_match("cutset_sum", *cutset_sum, sum_re)?
                    }
                    _ => unreachable!(),
                }
                if best.members() != antichain.members() {
                    return Err(CertifyError::Mismatch {
                        field: "antichain".to_string(),
                        stated: antichain.members().len() as f64,
                        computed: best.members().len() as f64,
                    });
                }
                if !subtree_sums_bounded(&t, &antichain, branching) {
                    return Err(CertifyError::SubtreeSumViolation { node: 0 });
                }
                let eval_antichain = if erasure {
                    let mut shifted = Vec::new();
                    for &x in antichain.members() {
                        let kids = t.children_of(x);
                        if kids.is_empty() {
                            return Err(CertifyError::MissingChildren { node: x });
                        }
                        shifted.extend_from_slice(kids);
                    }
                    validate_antichain(&t, &shifted)?
                } else {
                    antichain.clone()
                };
                let map = subtree_atoms_map(&t, &eval_antichain, &channel, &noise, atom_budget)?;
                let d_of = |x: usize| -> f64 {
                    discrepancy_of_atoms(&der.norm, map[x].as_ref().expect("resolved"))
                };
                let mut member_max = base_d;
                for (x, stated) in &self.member_checks {
                    let d = d_of(*x);
                    check_match(&format!("member_{x}"), *stated, d)?;
                    if d > der.delta + INEQ_TOL {
                        return Err(CertifyError::BoundViolation {
                            what: "member discrepancy",
                            value: d,
                            bound: der.delta,
                        });
                    }
                    member_max = member_max.max(d);
                }
                check_match("base_discrepancy", self.base_discrepancy, member_max)?;
                if base_d > delta_base + INEQ_TOL {
                    return Err(CertifyError::BoundViolation {
                        what: "base discrepancy",
                        value: base_d,
                        bound: delta_base,
                    });
                }
                let factor = (1.0 + der.eps) * der.alpha * der.alpha;
                for nc in &self.node_checks {
                    let d = d_of(nc.node);
                    check_match(&format!("node_{}", nc.node), nc.d, d)?;
                    let cs: f64 = t.children_of(nc.node).iter().map(|&c| d_of(c)).sum();
                    check_match(&format!("node_{}_children", nc.node), nc.children_sum, cs)?;
                    if d > factor * cs + INEQ_TOL {
                        return Err(CertifyError::BoundViolation {
                            what: "interior node discrepancy",
                            value: d,
                            bound: factor * cs,
                        });
                    }
                }
                // no check line may be silently dropped
                let listed: std::collections::HashSet<usize> =
                    self.member_checks.iter().map(|&(x, _)| x).collect();
                for &x in antichain.members() {
                    if !listed.contains(&x) {
                        return Err(CertifyError::Mismatch {
                            field: format!("member_{x} missing from checks"),
                            stated: f64::NAN,
                            computed: d_of(x),
                        });
                    }
                }
                let checked: std::collections::HashSet<usize> =
                    self.node_checks.iter().map(|nc| nc.node).collect();
                let member_set: std::collections::HashSet<usize> =
                    antichain.members().iter().copied().collect();
                for &x in antichain.inside() {
                    if !member_set.contains(&x) && !checked.contains(&x) {
                        return Err(CertifyError::Mismatch {
                            field: format!("node_{x} missing from checks"),
                            stated: f64::NAN,
                            computed: d_of(x),
                        });
                    }
                }
                check_match("tv_bound", self.tv_bound, 0.5 * (der.c * d_of(0)).sqrt())?;
            }
        }
        Ok(())
    }
}

fn join17(xs: &[f64]) -> String {
    xs.iter().map(|x| f17(*x)).collect::<Vec<_>>().join(" ")
}
