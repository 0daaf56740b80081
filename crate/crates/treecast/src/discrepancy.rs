//! Quadratic discrepancy of a measure family and the contraction norm
//! behind it.
//!
//! For a family of root-state measures given as atoms (g, w), the
//! discrepancy is
//!
//!   D = sum_atoms w * |Q g|_P^2 * sum_k v_k / g_k
//!
//! where v is the stationary distribution, Q b = b - (v.b) 1 projects
//! onto the mean-zero part, and |.|_P is a norm on the subspace
//! { x : v.x = 0 } chosen so the channel contracts it by a factor
//! alpha. The value does not depend on a reference measure: rewriting
//! the same family with different atom weights leaves D unchanged.
//!
//! The norm is represented by a basis U of the subspace and a Gram
//! matrix P in basis coordinates, with P solving the fixed point
//! P = I + A' P A / alpha^2 for A = U^+ M U. That fixed point exists
//! exactly when the spectral radius of A is below alpha.

use crate::channel::{perp_basis, Channel};
use crate::exact::AtomSet;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// |Q g|^2 below this is treated as exactly zero when g has zero
/// entries (the atom carries no root signal).
const ZERO_SIGNAL_TOL: f64 = 1e-28;

#[derive(Debug, Error)]
pub enum NormError {
    #[error("restriction has spectral radius {rho}, not below alpha {alpha}")]
    DivergentSeries { rho: f64, alpha: f64 },
    #[error("gram matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("alpha {0} must be positive")]
    BadAlpha(f64),
    #[error("channel has no unique stationary distribution")]
    NonErgodic,
    #[error("basis and gram shapes do not match")]
    ShapeMismatch,
}

/// Norm on the v-orthogonal subspace under which the channel is an
/// alpha-contraction, plus the derived coefficient matrix t with
/// |Q b|^2 = b' t b.
#[derive(Debug, Clone)]
pub struct ContractionNorm {
    v: DVector<f64>,
    basis: DMatrix<f64>,
    basis_pinv: DMatrix<f64>,
    gram: DMatrix<f64>,
    alpha: f64,
    t: DMatrix<f64>,
    sum_abs_t: f64,
}

/// Constants controlling how discrepancy bounds total variation and
/// tensorizes across independent coordinates.
#[derive(Debug, Clone)]
pub struct DiscrepancyConstants {
    /// c_pairs[(i, j)] bounds |b_i - b_j| / |Q b|_P.
    pub c_pairs: DMatrix<f64>,
    /// max c_pairs^2 over the smallest stationary weight.
    pub c: f64,
    /// c times sum |t|.
    pub c_tilde: f64,
}

impl ContractionNorm {
    /// Solve for the Gram matrix of the given channel at contraction
    /// rate alpha. Fails if alpha does not dominate the spectral radius
    /// of the restricted channel.
    pub fn build(channel: &Channel, alpha: f64) -> Result<Self, NormError> {
        if !(alpha > 0.0) {
            return Err(NormError::BadAlpha(alpha));
        }
        let v = channel.stationary().map_err(|_| NormError::NonErgodic)?.clone();
        let basis = perp_basis(&v);
        let a = basis.transpose() * channel.matrix() * &basis;
        let rho = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        // strict margin: at rho == alpha the fixed point blows up
        if rho >= alpha * (1.0 - 1e-12) {
            return Err(NormError::DivergentSeries { rho, alpha });
        }
        let r = a.nrows();
        // vec(A' P A) = (A' kron A') vec(P); solve (I - kron/alpha^2) vec(P) = vec(I)
        let at = a.transpose();
        let mut sys = DMatrix::<f64>::identity(r * r, r * r);
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    for l in 0..r {
                        // vec index: column-major, P[k,l] at l*r + k
                        sys[(j * r + i, l * r + k)] -= at[(i, k)] * at[(j, l)].to_owned() / (alpha * alpha);
                    }
                }
            }
        }
        let rhs = DVector::<f64>::from_fn(r * r, |idx, _| {
            let (i, j) = (idx % r, idx / r);
            if i == j {
                1.0
            } else {
                0.0
            }
        });
        let sol = sys
            .lu()
            .solve(&rhs)
            .ok_or(NormError::NotPositiveDefinite)?;
        let mut gram = DMatrix::<f64>::from_fn(r, r, |i, j| sol[j * r + i]);
        gram = (&gram + gram.transpose()) * 0.5;
        // fixed point identity must hold to close tolerance
        let resid = &at * &gram * &a - (alpha * alpha) * (&gram - DMatrix::identity(r, r));
        let scale = 1.0 + gram.amax();
        if resid.amax() > 1e-12 * scale * (alpha * alpha).max(1.0) {
            return Err(NormError::NotPositiveDefinite);
        }
        Self::from_parts(v, basis, gram, alpha)
    }

    /// Assemble a norm from explicit parts. The basis need not be
    /// orthonormal; coordinates are taken with its pseudo-inverse.
    pub fn from_parts(
        v: DVector<f64>,
        basis: DMatrix<f64>,
        gram: DMatrix<f64>,
        alpha: f64,
    ) -> Result<Self, NormError> {
        if !(alpha > 0.0) {
            return Err(NormError::BadAlpha(alpha));
        }
        let q = v.len();
        let r = basis.ncols();
        if basis.nrows() != q || gram.nrows() != r || gram.ncols() != r {
            return Err(NormError::ShapeMismatch);
        }
        if gram.clone().cholesky().is_none() {
            return Err(NormError::NotPositiveDefinite);
        }
        let basis_pinv = basis
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|_| NormError::ShapeMismatch)?;
        let qmat = DMatrix::<f64>::identity(q, q)
            - DVector::from_element(q, 1.0) * v.transpose();
        let t = qmat.transpose() * basis_pinv.transpose() * &gram * &basis_pinv * &qmat;
        let t = (&t + t.transpose()) * 0.5;
        let sum_abs_t = t.iter().map(|x| x.abs()).sum();
        Ok(ContractionNorm {
            v,
            basis,
            basis_pinv,
            gram,
            alpha,
            t,
            sum_abs_t,
        })
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Coefficients t with |Q b|^2 = b' t b.
    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn sum_abs_t(&self) -> f64 {
        self.sum_abs_t
    }

    /// b - (v.b) 1.
    pub fn project_q(&self, b: &[f64]) -> Vec<f64> {
        let mean: f64 = self.v.iter().zip(b).map(|(vi, bi)| vi * bi).sum();
        b.iter().map(|bi| bi - mean).collect()
    }

    /// |Q b|_P^2, computed through basis coordinates so that constant
    /// vectors give exactly zero up to projection roundoff.
    pub fn q_norm_sq(&self, b: &[f64]) -> f64 {
        let y = DVector::from_iterator(b.len(), self.project_q(b));
        let c = &self.basis_pinv * y;
        (c.transpose() * &self.gram * &c)[(0, 0)]
    }

    /// Per-observation discrepancy statistic |Q g|^2 sum_k v_k / g_k.
    /// Atoms with a vanished state contribute zero when they carry no
    /// signal and infinity otherwise.
    pub fn string_statistic(&self, g: &[f64]) -> f64 {
        let qn = self.q_norm_sq(g);
        if g.iter().any(|&x| x <= 0.0) {
            return if qn.abs() <= ZERO_SIGNAL_TOL {
                0.0
            } else {
                f64::INFINITY
            };
        }
        qn * self
            .v
            .iter()
            .zip(g)
            .map(|(vi, gi)| vi / gi)
            .sum::<f64>()
    }

    /// Pair constants and their aggregates.
    pub fn constants(&self) -> DiscrepancyConstants {
        let q = self.v.len();
        let p_inv = self
            .gram
            .clone()
            .try_inverse()
            .expect("gram is positive definite");
        let mut c_pairs = DMatrix::<f64>::zeros(q, q);
        for i in 0..q {
            for j in 0..q {
                if i == j {
                    continue;
                }
                let mut d = DVector::<f64>::zeros(q);
                d[i] = 1.0;
                d[j] = -1.0;
                let coeff = self.basis.transpose() * d;
                c_pairs[(i, j)] = (coeff.transpose() * &p_inv * &coeff)[(0, 0)].sqrt();
            }
        }
        let v_min = self.v.iter().copied().fold(f64::INFINITY, f64::min);
        let c_max = c_pairs.iter().copied().fold(0.0f64, f64::max);
        let c = c_max * c_max / v_min;
        DiscrepancyConstants {
            c_pairs,
            c,
            c_tilde: c * self.sum_abs_t,
        }
    }
}

/// D of an atom family under the norm.
pub fn discrepancy_of_atoms(norm: &ContractionNorm, set: &AtomSet) -> f64 {
    let mut total = 0.0f64;
    for a in set.atoms() {
        let s = norm.string_statistic(&a.g);
        if s.is_infinite() {
            return f64::INFINITY;
        }
        total += a.w * s;
    }
    total
}

/// Cross moment sum_atoms w g_i g_j / g_k; near one when the family is
/// nearly degenerate. Infinite when state k vanishes on an atom that
/// states i, j still charge.
pub fn pairwise_moment(set: &AtomSet, i: usize, j: usize, k: usize) -> f64 {
    let mut total = 0.0f64;
    for a in set.atoms() {
        let num = a.w * a.g[i] * a.g[j];
        if a.g[k] <= 0.0 {
            if num > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        total += num / a.g[k];
    }
    total
}

/// Largest per-coordinate perturbation eta with
/// (1 + eta)^(b-1) <= 1 + eps / c_tilde, capped at one. With a single
/// coordinate any eta works, so the cap is returned.
pub fn tensorization_eta(c_tilde: f64, b: usize, eps: f64) -> f64 {
    if b <= 1 {
        return 1.0;
    }
    let x = (1.0 + eps / c_tilde).powf(1.0 / (b as f64 - 1.0)) - 1.0;
    x.min(1.0)
}

/// Per-coordinate discrepancy level under which a b-fold product stays
/// within a (1 + eps) factor of the sum of coordinate discrepancies.
pub fn tensorization_delta(constants: &DiscrepancyConstants, b: usize, eps: f64) -> f64 {
    tensorization_eta(constants.c_tilde, b, eps) / constants.c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{leaf_atoms, tensor_power, Atom, AtomSet, DEFAULT_ATOM_BUDGET};
    use crate::channel::NoiseChannel;
    use approx::assert_abs_diff_eq;

    fn hand_norm(scale: f64) -> ContractionNorm {
        // two states, uniform v, basis (1, -1), gram [scale]
        ContractionNorm::from_parts(
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_vec(2, 1, vec![1.0, -1.0]),
            DMatrix::from_vec(1, 1, vec![scale]),
            0.5,
        )
        .unwrap()
    }

    fn two_point_set() -> AtomSet {
        AtomSet::new(
            2,
            vec![
                Atom {
                    g: vec![0.6, 0.4],
                    w: 1.0,
                },
                Atom {
                    g: vec![0.4, 0.6],
                    w: 1.0,
                },
            ],
        )
    }

    #[test]
    fn unscaled_hand_norm_coefficients() {
        let n = hand_norm(1.0);
        let t = n.t();
        assert_abs_diff_eq!(t[(0, 0)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(t[(0, 1)], -0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(n.sum_abs_t(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(n.q_norm_sq(&[1.0, 0.0]), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn scaled_hand_norm_matches_difference_square() {
        let n = hand_norm(4.0);
        assert_abs_diff_eq!(n.q_norm_sq(&[1.0, 0.0]), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(n.q_norm_sq(&[0.6, 0.4]), 0.04, epsilon = 1e-14);
        assert_abs_diff_eq!(n.sum_abs_t(), 4.0, epsilon = 1e-13);
        let consts = n.constants();
        assert_abs_diff_eq!(consts.c_pairs[(0, 1)], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(consts.c, 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(consts.c_tilde, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_discrepancy_is_one_sixth() {
        let n = hand_norm(4.0);
        let d = discrepancy_of_atoms(&n, &two_point_set());
        assert_abs_diff_eq!(d, 1.0 / 6.0, epsilon = 1e-13);
    }

    #[test]
    fn channel_step_contracts_discrepancy() {
        let n = hand_norm(4.0);
        let c = crate::channel::Channel::bsc(0.3).unwrap();
        let stepped = crate::exact::apply_channel(&two_point_set(), &c);
        let d = discrepancy_of_atoms(&n, &stepped);
        assert_abs_diff_eq!(d, 0.025764895330112716, epsilon = 1e-12);
        // alpha = 0.4 works for the hand norm on this channel
        assert!(d <= 0.16 * (1.0 / 6.0) + 1e-13);
    }

    #[test]
    fn moment_example_seven_sixths() {
        let m = pairwise_moment(&two_point_set(), 0, 0, 1);
        assert_abs_diff_eq!(m, 7.0 / 6.0, epsilon = 1e-13);
    }

    #[test]
    fn moments_handle_zero_states() {
        let set = AtomSet::new(
            2,
            vec![
                Atom {
                    g: vec![0.5, 0.0],
                    w: 1.0,
                },
                Atom {
                    g: vec![0.5, 1.0],
                    w: 1.0,
                },
            ],
        );
        assert!(pairwise_moment(&set, 0, 0, 1).is_infinite());
        assert_abs_diff_eq!(pairwise_moment(&set, 1, 1, 0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_entry_conventions() {
        let n = hand_norm(4.0);
        // signal with a vanished state: infinite discrepancy
        let set = AtomSet::new(
            2,
            vec![
                Atom {
                    g: vec![1.0, 0.0],
                    w: 1.0,
                },
                Atom {
                    g: vec![0.0, 1.0],
                    w: 1.0,
                },
            ],
        );
        assert!(discrepancy_of_atoms(&n, &set).is_infinite());
        // total erasure: zero entries impossible, fully mixed atom is free
        let erased = leaf_atoms(&NoiseChannel::erasure(2, 1.0).unwrap());
        assert_abs_diff_eq!(discrepancy_of_atoms(&n, &erased), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn built_norm_solves_fixed_point() {
        let c = crate::channel::Channel::bsc(0.3).unwrap();
        let alpha = 0.4 * (1.0 + (17.0 / 66.0) / 4.0);
        let n = ContractionNorm::build(&c, alpha).unwrap();
        let lam_ratio = 0.4 / alpha;
        let expect_p = 1.0 / (1.0 - lam_ratio * lam_ratio);
        assert_abs_diff_eq!(n.gram()[(0, 0)], expect_p, epsilon = 1e-9);
        assert_abs_diff_eq!(n.sum_abs_t(), 2.0 * expect_p, epsilon = 1e-9);
        let consts = n.constants();
        assert_abs_diff_eq!(consts.c, 4.0 / expect_p, epsilon = 1e-9);
        assert_abs_diff_eq!(consts.c_tilde, 8.0, epsilon = 1e-9);
        let delta = tensorization_delta(&consts, 2, 17.0 / 66.0);
        assert_abs_diff_eq!(delta, (17.0 / 528.0) / (4.0 / expect_p), epsilon = 1e-9);
    }

    #[test]
    fn built_norm_contracts_atoms() {
        let c = crate::channel::Channel::qsym(3, 0.2).unwrap();
        let alpha = c.second_eigenvalue() * 1.05;
        let n = ContractionNorm::build(&c, alpha).unwrap();
        let set = AtomSet::new(
            3,
            vec![
                Atom {
                    g: vec![0.5, 0.3, 0.2],
                    w: 1.0,
                },
                Atom {
                    g: vec![0.2, 0.3, 0.5],
                    w: 1.0,
                },
                Atom {
                    g: vec![0.3, 0.4, 0.3],
                    w: 1.0,
                },
            ],
        );
        let before = discrepancy_of_atoms(&n, &set);
        let after = discrepancy_of_atoms(&n, &crate::exact::apply_channel(&set, &c));
        assert!(before.is_finite() && before > 0.0);
        assert!(after <= alpha * alpha * before + 1e-12);
    }

    #[test]
    fn alpha_below_spectrum_is_rejected() {
        let c = crate::channel::Channel::bsc(0.3).unwrap();
        assert!(matches!(
            ContractionNorm::build(&c, 0.39),
            Err(NormError::DivergentSeries { .. })
        ));
        assert!(matches!(
            ContractionNorm::build(&c, 0.4),
            Err(NormError::DivergentSeries { .. })
        ));
    }

    #[test]
    fn tensorization_delta_examples() {
        let n = hand_norm(4.0);
        let consts = n.constants();
        let delta = tensorization_delta(&consts, 2, 0.1);
        assert_abs_diff_eq!(delta, 0.00625, epsilon = 1e-15);
        // single coordinate: eta capped at one
        assert_abs_diff_eq!(tensorization_delta(&consts, 1, 0.1), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tensor_product_respects_delta() {
        let n = hand_norm(4.0);
        let consts = n.constants();
        let eps = 0.1;
        let delta = tensorization_delta(&consts, 2, eps);
        let set = AtomSet::new(
            2,
            vec![
                Atom {
                    g: vec![0.51, 0.49],
                    w: 1.0,
                },
                Atom {
                    g: vec![0.49, 0.51],
                    w: 1.0,
                },
            ],
        );
        let d1 = discrepancy_of_atoms(&n, &set);
        assert!(d1 <= delta, "test instance must sit below delta");
        let pair = tensor_power(&set, 2, DEFAULT_ATOM_BUDGET).unwrap();
        let d2 = discrepancy_of_atoms(&n, &pair);
        assert!(d2 <= (1.0 + eps) * 2.0 * d1 + 1e-12);
    }

    #[test]
    fn reference_independence() {
        // same family, rewritten with unequal class weights
        let n = hand_norm(4.0);
        let a = two_point_set();
        let b = AtomSet::new(
            2,
            vec![
                Atom {
                    g: vec![0.3, 0.2],
                    w: 2.0,
                },
                Atom {
                    g: vec![0.4, 0.6],
                    w: 1.0,
                },
            ],
        );
        let da = discrepancy_of_atoms(&n, &a);
        let db = discrepancy_of_atoms(&n, &b);
        assert_abs_diff_eq!(da, db, epsilon = 1e-13);
    }
}
