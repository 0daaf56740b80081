//! Inference from noisy antichain observations and Monte-Carlo
//! estimation on top of the forward sampler.
//!
//! Likelihood vectors are computed by the standard leaf-to-root sweep
//! with per-node rescaling, so deep trees stay in range. Monte-Carlo
//! runs split the sample range into `streams` contiguous blocks that
//! are processed in parallel and reduced in block order; together with
//! counter-addressed draws this makes every estimate bit-reproducible
//! for a fixed (seed, samples, streams) triple, whatever the thread
//! count.

use crate::broadcast::{draw_rng, inverse_cdf, sample_observation, sample_states, RootDraw};
use crate::channel::{Channel, ChannelError, NoiseChannel};
use crate::discrepancy::ContractionNorm;
use crate::exact::AtomSet;
use crate::tree::{Antichain, Tree};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("observation has likelihood zero under every root state")]
    ZeroLikelihood,
    #[error("observation symbol {symbol} out of range, alphabet size {alphabet}")]
    BadObservation { symbol: usize, alphabet: usize },
    #[error("observation length {got} does not match antichain size {want}")]
    BadObservationLength { got: usize, want: usize },
    #[error("state {state} out of range for {q} states")]
    BadState { state: usize, q: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Likelihood of the observation under each root state, as a
/// normalized direction plus a log scale:
/// P(obs | root = i) = exp(log_scale) * direction[i].
pub fn scaled_likelihood(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    obs: &[usize],
) -> Result<(Vec<f64>, f64), InferenceError> {
    let q = channel.q();
    let b = noise.b();
    let members = antichain.members();
    if obs.len() != members.len() {
        return Err(InferenceError::BadObservationLength {
            got: obs.len(),
            want: members.len(),
        });
    }
    let nmat = noise.matrix();
    let m = channel.matrix();
    let mut vecs: Vec<Option<(Vec<f64>, f64)>> = vec![None; tree.node_count()];
    for (&x, &tau) in members.iter().zip(obs) {
        if tau >= b {
            return Err(InferenceError::BadObservation {
                symbol: tau,
                alphabet: b,
            });
        }
        let g: Vec<f64> = (0..q).map(|i| nmat[(i, tau)]).collect();
        vecs[x] = Some(normalize(g)?);
    }
    let mut inside = antichain.inside().to_vec();
    inside.sort_unstable_by_key(|&x| std::cmp::Reverse(tree.depth_of(x)));
    for &x in &inside {
        let mut g = vec![1.0f64; q];
        let mut log = 0.0f64;
        for &c in tree.children_of(x) {
            let (cg, clog) = vecs[c].as_ref().expect("child below antichain resolved");
            for i in 0..q {
                let mut s = 0.0;
                for (j, cgj) in cg.iter().enumerate() {
                    s += m[(i, j)] * cgj;
                }
                g[i] *= s;
            }
            log += clog;
        }
        let (g, extra) = normalize(g)?;
        vecs[x] = Some((g, log + extra));
    }
    let (g, log) = vecs[0].take().expect("root resolved");
    Ok((g, log))
}

fn normalize(g: Vec<f64>) -> Result<(Vec<f64>, f64), InferenceError> {
    let s: f64 = g.iter().sum();
    if !(s > 0.0) {
        return Err(InferenceError::ZeroLikelihood);
    }
    Ok((g.iter().map(|x| x / s).collect(), s.ln()))
}

/// Unscaled likelihood vector; underflows only on very deep trees.
pub fn likelihood_vector(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    obs: &[usize],
) -> Result<Vec<f64>, InferenceError> {
    let (g, log) = scaled_likelihood(tree, antichain, channel, noise, obs)?;
    let scale = log.exp();
    Ok(g.into_iter().map(|x| x * scale).collect())
}

/// Posterior over root states from a likelihood vector and a prior.
pub fn root_posterior(likelihood: &[f64], prior: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let p: Vec<f64> = likelihood
        .iter()
        .zip(prior)
        .map(|(g, v)| g * v)
        .collect();
    let s: f64 = p.iter().sum();
    if !(s > 0.0) {
        return Err(InferenceError::ZeroLikelihood);
    }
    Ok(p.into_iter().map(|x| x / s).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    /// Contiguous reduction blocks; fixed block boundaries keep the
    /// result independent of scheduling.
    pub streams: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

/// Average f(sample index) over the configured range. The index is the
/// only source of randomness handed to f.
pub fn mc_run(cfg: &McConfig, f: impl Fn(u64) -> f64 + Sync) -> McEstimate {
    let n = cfg.samples.max(1);
    let blocks = cfg.streams.clamp(1, n);
    let partials: Vec<(f64, f64, u64)> = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let lo = k * n / blocks;
            let hi = (k + 1) * n / blocks;
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for s in lo..hi {
                let x = f(s);
                sum += x;
                sumsq += x * x;
            }
            (sum, sumsq, hi - lo)
        })
        .collect();
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for (a, b, _) in &partials {
        sum += a;
        sumsq += b;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        stderr: (var / nf).sqrt(),
        n,
    }
}

/// Monte-Carlo total variation between the observation measures under
/// root states i and j: sample from root i and average the positive
/// part of 1 - g_j / g_i.
pub fn tv_mc(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    i: usize,
    j: usize,
    cfg: &McConfig,
) -> Result<McEstimate, InferenceError> {
    let q = channel.q();
    for s in [i, j] {
        if s >= q {
            return Err(InferenceError::BadState { state: s, q });
        }
    }
    let members = antichain.members();
    Ok(mc_run(cfg, |sample| {
        let states = sample_states(tree, channel, RootDraw::Fixed(i), cfg.seed, sample)
            .expect("fixed root draw cannot fail");
        let obs = sample_observation(&states, noise, members, cfg.seed, sample);
        let (g, _) = scaled_likelihood(tree, antichain, channel, noise, &obs)
            .expect("sampled observation has positive likelihood");
        (1.0 - g[j] / g[i]).max(0.0)
    }))
}

/// Monte-Carlo estimate of the discrepancy of the observation family
/// at the antichain. The root is drawn from the norm's reference
/// weights, so each sampled observation lands on one atom of the exact
/// family and contributes the string statistic of its weight-normalized
/// likelihood vector.
pub fn discrepancy_mc(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    norm: &ContractionNorm,
    cfg: &McConfig,
) -> Result<McEstimate, InferenceError> {
    let q = channel.q();
    if norm.v().len() != q {
        return Err(InferenceError::BadState {
            state: norm.v().len(),
            q,
        });
    }
    let v: Vec<f64> = norm.v().iter().copied().collect();
    let members = antichain.members();
    Ok(mc_run(cfg, |sample| {
        let u: f64 = draw_rng(cfg.seed, 0, sample).random();
        let root = inverse_cdf(v.iter().copied(), u);
        let states = sample_states(tree, channel, RootDraw::Fixed(root), cfg.seed, sample)
            .expect("reference weight index is a valid state");
        let obs = sample_observation(&states, noise, members, cfg.seed, sample);
        let (g, _) = scaled_likelihood(tree, antichain, channel, noise, &obs)
            .expect("sampled observation has positive likelihood");
        let vg: f64 = v.iter().zip(&g).map(|(vi, gi)| vi * gi).sum();
        let f: Vec<f64> = g.iter().map(|gi| gi / vg).collect();
        norm.string_statistic(&f)
    }))
}

/// Probability that the maximum-posterior guess misses the true root,
/// root drawn from the stationary distribution. Ties resolve to the
/// lowest state index.
pub fn reconstruction_error_mc(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    cfg: &McConfig,
) -> Result<McEstimate, InferenceError> {
    let v = channel.stationary()?.clone();
    let members = antichain.members();
    Ok(mc_run(cfg, |sample| {
        let states = sample_states(tree, channel, RootDraw::Stationary, cfg.seed, sample)
            .expect("stationary draw checked above");
        let obs = sample_observation(&states, noise, members, cfg.seed, sample);
        let (g, _) = scaled_likelihood(tree, antichain, channel, noise, &obs)
            .expect("sampled observation has positive likelihood");
        let mut best = 0usize;
        for k in 1..g.len() {
            if v[k] * g[k] > v[best] * g[best] {
                best = k;
            }
        }
        (best != states[0]) as u64 as f64
    }))
}

/// Exact counterpart of `reconstruction_error_mc` from an atom family:
/// 1 - sum_atoms w max_i v_i g_i.
pub fn exact_reconstruction_error(set: &AtomSet, prior: &[f64]) -> f64 {
    let mut hit = 0.0f64;
    for a in set.atoms() {
        let m = a
            .g
            .iter()
            .zip(prior)
            .map(|(g, v)| g * v)
            .fold(f64::NEG_INFINITY, f64::max);
        hit += a.w * m;
    }
    1.0 - hit
}

/// Second left eigenvector of the channel (the direction that survives
/// after the stationary part is projected out), by power iteration.
/// The flag reports convergence; without it the last iterate is still
/// returned.
pub fn second_left_eigvec(channel: &Channel) -> Result<(DVector<f64>, bool), InferenceError> {
    let v = channel.stationary()?;
    let q = channel.q();
    let ones = DVector::from_element(q, 1.0);
    let a2 = channel.matrix().transpose() - v * ones.transpose();
    let mut rng = draw_rng(0x5eed, 0, 0);
    let mut x = DVector::from_fn(q, |_, _| rng.random::<f64>() - 0.5);
    x /= x.norm();
    let mut converged = false;
    for _ in 0..1000 {
        let mut y = &a2 * &x;
        let n = y.norm();
        if n <= 1e-300 {
            // channel has no second direction at all (rank one)
            return Ok((x, true));
        }
        y /= n;
        let d = (&y - &x).norm().min((&y + &x).norm());
        x = y;
        if d <= 1e-12 {
            converged = true;
            break;
        }
    }
    Ok((x, converged))
}

#[derive(Debug, Clone, Copy)]
pub struct CensusZ {
    pub mean_i: f64,
    pub mean_j: f64,
    pub se_i: f64,
    pub se_j: f64,
    /// |mean gap| over the pooled standard error.
    pub z: f64,
    pub eig_converged: bool,
}

/// Separation test for the census statistic sum_x h(obs_x), where h is
/// the noise pullback of the second left eigenvector. Both root
/// conditions reuse the same sample indices, so the gap is a paired
/// comparison.
pub fn census_separation(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    i: usize,
    j: usize,
    cfg: &McConfig,
) -> Result<CensusZ, InferenceError> {
    let q = channel.q();
    for s in [i, j] {
        if s >= q {
            return Err(InferenceError::BadState { state: s, q });
        }
    }
    let (u, eig_converged) = second_left_eigvec(channel)?;
    let pinv = DMatrix::from_fn(q, noise.b(), |r, c| noise.matrix()[(r, c)])
        .pseudo_inverse(1e-12)
        .expect("noise matrix pseudo-inverse");
    let h = pinv * &u;
    let members = antichain.members();
    let stat = |root: usize, sample: u64| -> f64 {
        let states = sample_states(tree, channel, RootDraw::Fixed(root), cfg.seed, sample)
            .expect("fixed root draw cannot fail");
        let obs = sample_observation(&states, noise, members, cfg.seed, sample);
        obs.iter().map(|&o| h[o]).sum()
    };
    let ei = mc_run(cfg, |s| stat(i, s));
    let ej = mc_run(cfg, |s| stat(j, s));
    let pooled = ((ei.stderr * ei.stderr + ej.stderr * ej.stderr) / 2.0).sqrt();
    let z = if pooled > 0.0 {
        (ei.mean - ej.mean).abs() / pooled
    } else if ei.mean == ej.mean {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CensusZ {
        mean_i: ei.mean,
        mean_j: ej.mean,
        se_i: ei.stderr,
        se_j: ej.stderr,
        z,
        eig_converged,
    })
}

/// Stable short identifier for a (channel, noise, tree, antichain)
/// instance, for tagging output rows.
pub fn instance_hash(
    channel: &Channel,
    noise: &NoiseChannel,
    tree: &Tree,
    antichain: &Antichain,
) -> String {
    let mut text = channel.canonical_string();
    text.push('\n');
    text.push_str(&noise.canonical_string());
    text.push('\n');
    text.push_str(&tree.canonical_string());
    text.push_str("\nantichain:");
    for x in antichain.members() {
        text.push_str(&format!(" {x}"));
    }
    crate::numfmt::short_hash(&text)
}
