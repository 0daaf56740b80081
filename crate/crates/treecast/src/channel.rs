//! Finite-state channels and leaf-noise models.
//!
//! A channel is a q x q row-stochastic matrix M (row = source state). On
//! construction we compute the stationary row vector v (vM = v, sum 1),
//! the second eigenvalue lambda2 = max |eig| of M restricted to the
//! invariant subspace v-perp = { b : v.b = 0 }, and an ergodicity flag
//! (support digraph strongly connected and aperiodic). Non-ergodic
//! channels are flagged, not rejected; operations that need a unique
//! stationary vector return `NonErgodic`.
//!
//! Noise models turn a hidden state into an observed symbol:
//! - extra steps: N = M^k, same alphabet;
//! - mixing: N = (1-eps) I + eps * (every row = nu);
//! - erasure: q x (q+1), state i kept with probability 1-eps, otherwise
//!   mapped to the extra erasure symbol (index q).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Absolute tolerance for row sums of stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("need at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("row {row} sums to {sum:.17}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("negative entry {value:.17} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("channel is not ergodic")]
    NonErgodic,
    #[error("distribution has {len} entries, expected {expected}")]
    BadDistributionLength { len: usize, expected: usize },
    #[error("distribution sums to {0:.17}, expected 1")]
    BadDistributionSum(f64),
    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Row-stochastic transition matrix with cached spectral data.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    m: DMatrix<f64>,
    v: DVector<f64>,
    lambda2: f64,
    ergodic: bool,
}

impl Channel {
    /// Validates row-stochasticity and computes v, lambda2 and the
    /// ergodicity flag. Non-ergodic inputs are accepted and flagged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ChannelError> {
        let q = rows.len();
        if q < 2 {
            return Err(ChannelError::TooFewStates(q));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != q {
                return Err(ChannelError::NotSquare {
                    rows: q,
                    cols: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                if x < 0.0 || !x.is_finite() {
                    return Err(ChannelError::NegativeEntry {
                        row: i,
                        col: j,
                        value: x,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ChannelError::RowSum { row: i, sum });
            }
        }
        let m = DMatrix::from_row_iterator(q, q, rows.iter().flatten().copied());
        Ok(Self::from_matrix_unchecked(m))
    }

    fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        let ergodic = support_is_ergodic(&m);
        let v = stationary_solve(&m);
        let lambda2 = second_eigenvalue_given(&m, &v);
        Channel {
            m,
            v,
            lambda2,
            ergodic,
        }
    }

    /// Binary symmetric channel: off-diagonal mass `delta`.
    pub fn bsc(delta: f64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(ChannelError::OutOfRange {
                name: "delta",
                value: delta,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Self::from_rows(&[vec![1.0 - delta, delta], vec![delta, 1.0 - delta]])
    }

    /// q-state symmetric channel: stay with probability 1-delta, move to a
    /// uniformly random other state with total probability delta.
    pub fn qsym(q: usize, delta: f64) -> Result<Self, ChannelError> {
        if q < 2 {
            return Err(ChannelError::TooFewStates(q));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(ChannelError::OutOfRange {
                name: "delta",
                value: delta,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let off = delta / (q - 1) as f64;
        let rows: Vec<Vec<f64>> = (0..q)
            .map(|i| {
                (0..q)
                    .map(|j| if i == j { 1.0 - delta } else { off })
                    .collect()
            })
            .collect();
        Self::from_rows(&rows)
    }

    pub fn q(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Unique stationary row vector; requires an ergodic channel.
    pub fn stationary(&self) -> Result<&DVector<f64>, ChannelError> {
        if self.ergodic {
            Ok(&self.v)
        } else {
            Err(ChannelError::NonErgodic)
        }
    }

    /// Modulus of the largest eigenvalue of M on v-perp.
    pub fn second_eigenvalue(&self) -> f64 {
        self.lambda2
    }

    pub fn is_ergodic(&self) -> bool {
        self.ergodic
    }

    /// M^k (k = 0 gives the identity).
    pub fn matrix_power(&self, k: u32) -> DMatrix<f64> {
        let q = self.q();
        let mut out = DMatrix::identity(q, q);
        for _ in 0..k {
            out *= &self.m;
        }
        out
    }

    /// Canonical text form used for hashing: q then rows, 17 digits.
    pub fn canonical_string(&self) -> String {
        let mut s = format!("channel q={}", self.q());
        for i in 0..self.q() {
            s.push('\n');
            let row: Vec<String> = (0..self.q())
                .map(|j| crate::numfmt::f17(self.m[(i, j)]))
                .collect();
            s.push_str(&row.join(" "));
        }
        s
    }
}

/// Observation model: q x b row-stochastic map from hidden states to
/// observed symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChannel {
    kind: NoiseKind,
    n: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// N = M^k on the same alphabet.
    ExtraSteps { k: u32 },
    /// N = (1-eps) I + eps * (every row = nu). `nondegenerate` records
    /// whether every nu entry is positive.
    Mix {
        eps: f64,
        nu: Vec<f64>,
        nondegenerate: bool,
    },
    /// q x (q+1): symbol kept with probability 1-eps, erased otherwise.
    Erasure { eps: f64 },
    Custom,
}

impl NoiseChannel {
    pub fn extra_steps(channel: &Channel, k: u32) -> Self {
        NoiseChannel {
            kind: NoiseKind::ExtraSteps { k },
            n: channel.matrix_power(k),
        }
    }

    pub fn mix(q: usize, nu: &[f64], eps: f64) -> Result<Self, ChannelError> {
        if nu.len() != q {
            return Err(ChannelError::BadDistributionLength {
                len: nu.len(),
                expected: q,
            });
        }
        for (j, &x) in nu.iter().enumerate() {
            if x < 0.0 || !x.is_finite() {
                return Err(ChannelError::NegativeEntry {
                    row: 0,
                    col: j,
                    value: x,
                });
            }
        }
        let sum: f64 = nu.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ChannelError::BadDistributionSum(sum));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(ChannelError::OutOfRange {
                name: "eps",
                value: eps,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let mut n = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in 0..q {
                n[(i, j)] = eps * nu[j] + if i == j { 1.0 - eps } else { 0.0 };
            }
        }
        let nondegenerate = nu.iter().all(|&x| x > 0.0);
        Ok(NoiseChannel {
            kind: NoiseKind::Mix {
                eps,
                nu: nu.to_vec(),
                nondegenerate,
            },
            n,
        })
    }

    pub fn erasure(q: usize, eps: f64) -> Result<Self, ChannelError> {
        if q < 2 {
            return Err(ChannelError::TooFewStates(q));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(ChannelError::OutOfRange {
                name: "eps",
                value: eps,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let mut n = DMatrix::zeros(q, q + 1);
        for i in 0..q {
            n[(i, i)] = 1.0 - eps;
            n[(i, q)] = eps;
        }
        Ok(NoiseChannel {
            kind: NoiseKind::Erasure { eps },
            n,
        })
    }

    /// Arbitrary q x b row-stochastic observation matrix.
    pub fn custom(rows: &[Vec<f64>]) -> Result<Self, ChannelError> {
        let q = rows.len();
        if q < 2 {
            return Err(ChannelError::TooFewStates(q));
        }
        let b = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != b {
                return Err(ChannelError::NotSquare {
                    rows: b,
                    cols: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                if x < 0.0 || !x.is_finite() {
                    return Err(ChannelError::NegativeEntry {
                        row: i,
                        col: j,
                        value: x,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ChannelError::RowSum { row: i, sum });
            }
        }
        Ok(NoiseChannel {
            kind: NoiseKind::Custom,
            n: DMatrix::from_row_iterator(q, b, rows.iter().flatten().copied()),
        })
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.n
    }

    /// Hidden-state count.
    pub fn q(&self) -> usize {
        self.n.nrows()
    }

    /// Observed-symbol count.
    pub fn b(&self) -> usize {
        self.n.ncols()
    }

    pub fn canonical_string(&self) -> String {
        let mut s = format!("noise q={} b={}", self.q(), self.b());
        for i in 0..self.q() {
            s.push('\n');
            let row: Vec<String> = (0..self.b())
                .map(|j| crate::numfmt::f17(self.n[(i, j)]))
                .collect();
            s.push_str(&row.join(" "));
        }
        s
    }
}

/// Orthonormal basis (columns) of { b : v.b = 0 }, via the Householder
/// reflector taking v/|v| to a signed first basis vector.
pub(crate) fn perp_basis(v: &DVector<f64>) -> DMatrix<f64> {
    let q = v.len();
    let mut w = v / v.norm();
    if w[0] >= 0.0 {
        w[0] += 1.0;
    } else {
        w[0] -= 1.0;
    }
    let ww = w.dot(&w);
    // H = I - 2 w w^T / (w.w); columns 1..q are orthonormal and
    // orthogonal to v.
    let mut u = DMatrix::zeros(q, q - 1);
    for c in 1..q {
        for r in 0..q {
            let id = if r == c { 1.0 } else { 0.0 };
            u[(r, c - 1)] = id - 2.0 * w[r] * w[c] / ww;
        }
    }
    u
}

/// Least-squares solve of vM = v with sum(v) = 1, robust to multiplicity.
fn stationary_solve(m: &DMatrix<f64>) -> DVector<f64> {
    let q = m.nrows();
    let mut a = DMatrix::zeros(q + 1, q);
    for i in 0..q {
        for j in 0..q {
            a[(i, j)] = m[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..q {
        a[(q, j)] = 1.0;
    }
    let mut b = DVector::zeros(q + 1);
    b[q] = 1.0;
    let svd = a.svd(true, true);
    let mut v = svd
        .solve(&b, 1e-14)
        .unwrap_or_else(|_| DVector::from_element(q, 1.0 / q as f64));
    let s: f64 = v.sum();
    if !s.is_finite() || s.abs() < 1e-9 {
        v = DVector::from_element(q, 1.0 / q as f64);
    } else {
        v /= s;
    }
    v
}

fn second_eigenvalue_given(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let u = perp_basis(v);
    let a = u.transpose() * m * &u;
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Ergodic = support digraph strongly connected and aperiodic (gcd of
/// d(u)+1-d(v) over support edges equals 1, d = BFS depth from state 0).
fn support_is_ergodic(m: &DMatrix<f64>) -> bool {
    let q = m.nrows();
    let fwd: Vec<Vec<usize>> = (0..q)
        .map(|i| (0..q).filter(|&j| m[(i, j)] > 0.0).collect())
        .collect();
    let bwd: Vec<Vec<usize>> = (0..q)
        .map(|j| (0..q).filter(|&i| m[(i, j)] > 0.0).collect())
        .collect();
    let reach = |adj: &Vec<Vec<usize>>| -> Option<Vec<usize>> {
        let mut depth = vec![usize::MAX; q];
        depth[0] = 0;
        let mut queue = vec![0usize];
        let mut head = 0;
        while head < queue.len() {
            let x = queue[head];
            head += 1;
            for &y in &adj[x] {
                if depth[y] == usize::MAX {
                    depth[y] = depth[x] + 1;
                    queue.push(y);
                }
            }
        }
        if depth.iter().all(|&d| d != usize::MAX) {
            Some(depth)
        } else {
            None
        }
    };
    let Some(depth) = reach(&fwd) else {
        return false;
    };
    if reach(&bwd).is_none() {
        return false;
    }
    let mut g: u64 = 0;
    for (u, nbrs) in fwd.iter().enumerate() {
        for &w in nbrs {
            let diff = (depth[u] as i64 + 1 - depth[w] as i64).unsigned_abs();
            g = gcd(g, diff);
        }
    }
    g == 1
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
