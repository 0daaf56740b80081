//! Exact conditional leaf measures as weighted likelihood atoms.
//!
//! An `AtomSet` represents the family of observation measures (one per
//! root state) on an antichain: each atom is a likelihood vector
//! g in R^q (g_i = probability of the observation class given root state
//! i) together with the class weight w (number of raw observation
//! strings in the class). Normalization sum_atoms w * g_i = 1 holds for
//! every i and is preserved by the recursion.
//!
//! The recursion mirrors the broadcast structure: a parent's measure is
//! the product over children of the child measure pushed through the
//! channel, g_parent,i = prod_s (M g_child_s)_i. Children carrying
//! identical atom sets are enumerated as multisets with multinomial
//! weights, which keeps regular trees polynomial-sized after merging.
//!
//! `enumerate_oracle` recomputes the same measures by literally summing
//! over every hidden configuration, with no tree recursion; it is the
//! independent reference the engine is tested against.

use crate::channel::{Channel, NoiseChannel};
use crate::tree::{Antichain, Tree};
use thiserror::Error;

/// Default cap on atoms produced by a single recursion step.
pub const DEFAULT_ATOM_BUDGET: usize = 1_000_000;
/// Atoms whose likelihood vectors agree within this relative tolerance
/// are the same class.
pub const MERGE_REL_TOL: f64 = 1e-12;
/// Hard cap on hidden configurations enumerated by the oracle.
pub const SIGMA_ENUM_CAP: usize = 30_000_000;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("step needs {needed} atoms, budget is {budget}")]
    AtomBudgetExceeded { needed: usize, budget: usize },
    #[error("oracle needs {states} states, cap is {cap}")]
    CapExceeded { states: f64, cap: usize },
    #[error("atom sets mix state counts {a} and {b}")]
    StateCountMismatch { a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// Likelihood of the class under each root state.
    pub g: Vec<f64>,
    /// Number of raw observation strings in the class.
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSet {
    q: usize,
    atoms: Vec<Atom>,
}

fn cmp_g(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c != std::cmp::Ordering::Equal {
            return c;
        }
    }
    std::cmp::Ordering::Equal
}

// purely relative: likelihood entries shrink geometrically with depth,
// so any absolute floor would swallow whole classes on deep trees
fn g_close(a: &[f64], b: &[f64], rel: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()))
}

/// Recursive coordinate-wise clustering; each fully-grouped run folds
/// into a single atom. Emits classes in sorted coordinate order.
fn cluster_merge(mut atoms: Vec<Atom>, coord: usize, rel: f64, out: &mut Vec<Atom>) {
    if atoms.is_empty() {
        return;
    }
    let q = atoms[0].g.len();
    if coord == q {
        let mut w = 0.0f64;
        let mut g = vec![0.0f64; q];
        for a in &atoms {
            w += a.w;
            for (x, &y) in g.iter_mut().zip(&a.g) {
                *x += a.w * y;
            }
        }
        for x in &mut g {
            *x /= w;
        }
        out.push(Atom { g, w });
        return;
    }
    atoms.sort_unstable_by(|a, b| a.g[coord].total_cmp(&b.g[coord]));
    let mut run: Vec<Atom> = Vec::new();
    let mut start = 0.0f64;
    for a in atoms {
        let x = a.g[coord];
        // bound the cluster diameter, not the neighbor gap: a chain of
        // sub-tolerance gaps must not fuse separated classes
        let wide = (x - start).abs() > rel * x.abs().max(start.abs());
        if !run.is_empty() && wide {
            cluster_merge(std::mem::take(&mut run), coord + 1, rel, out);
        }
        if run.is_empty() {
            start = x;
        }
        run.push(a);
    }
    cluster_merge(run, coord + 1, rel, out);
}

impl AtomSet {
    pub fn new(q: usize, atoms: Vec<Atom>) -> Self {
        let mut s = AtomSet { q, atoms };
        s.canonicalize(MERGE_REL_TOL);
        s
    }

    /// Keeps every nonzero atom as its own class (oracle output).
    pub fn new_unmerged(q: usize, atoms: Vec<Atom>) -> Self {
        let mut s = AtomSet { q, atoms };
        s.atoms.retain(|a| a.g.iter().any(|&x| x > 0.0));
        s.atoms.sort_unstable_by(|a, b| cmp_g(&a.g, &b.g));
        s
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Drop zero atoms, cluster equal likelihood vectors, merge each
    /// class into one atom. Merging averages g with weights, which
    /// preserves sum w*g exactly.
    ///
    /// Clustering is hierarchical by coordinate: sort on one entry,
    /// split into runs of bounded diameter, recurse on the next entry
    /// within each run. A flat lexicographic sort would let
    /// sub-tolerance jitter in an early coordinate reorder atoms and
    /// separate members of one class.
    fn canonicalize(&mut self, rel: f64) {
        self.atoms.retain(|a| a.g.iter().any(|&x| x > 0.0));
        let atoms = std::mem::take(&mut self.atoms);
        cluster_merge(atoms, 0, rel, &mut self.atoms);
    }

    /// Re-merge with a chosen tolerance (used when comparing engines).
    pub fn merged(&self, rel: f64) -> AtomSet {
        let mut s = self.clone();
        s.canonicalize(rel);
        s
    }

    /// sum_atoms w * g_i for each state; 1 for a probability family.
    pub fn normalization(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.q];
        for a in &self.atoms {
            for (o, &g) in out.iter_mut().zip(&a.g) {
                *o += a.w * g;
            }
        }
        out
    }

    /// Total variation between the root-state measures i and j, with the
    /// factor one-half convention.
    pub fn tv(&self, i: usize, j: usize) -> f64 {
        0.5 * self
            .atoms
            .iter()
            .map(|a| a.w * (a.g[i] - a.g[j]).abs())
            .sum::<f64>()
    }

    /// CSV with header w,g_1,...,g_q and 17-digit values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("w");
        for i in 1..=self.q {
            s.push_str(&format!(",g_{i}"));
        }
        s.push('\n');
        for a in &self.atoms {
            s.push_str(&crate::numfmt::f17(a.w));
            for &g in &a.g {
                s.push(',');
                s.push_str(&crate::numfmt::f17(g));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Option<AtomSet> {
        let mut lines = text.lines();
        let header = lines.next()?;
        let q = header.split(',').count().checked_sub(1)?;
        if q == 0 {
            return None;
        }
        let mut atoms = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != q + 1 {
                return None;
            }
            let w = fields[0].parse().ok()?;
            let g = fields[1..]
                .iter()
                .map(|f| f.parse().ok())
                .collect::<Option<Vec<f64>>>()?;
            atoms.push(Atom { g, w });
        }
        // keep file order so write-read round trips are bit exact
        atoms.retain(|a| a.g.iter().any(|&x| x > 0.0));
        Some(AtomSet { q, atoms })
    }
}

/// One atom per noise column: g_i = N[i, tau]. Zero columns vanish and
/// identical columns merge (total erasure keeps a single class).
pub fn leaf_atoms(noise: &NoiseChannel) -> AtomSet {
    let n = noise.matrix();
    let atoms = (0..noise.b())
        .map(|j| Atom {
            g: (0..noise.q()).map(|i| n[(i, j)]).collect(),
            w: 1.0,
        })
        .collect();
    AtomSet::new(noise.q(), atoms)
}

/// Push every atom through the channel: g -> M g.
pub fn apply_channel(set: &AtomSet, channel: &Channel) -> AtomSet {
    let m = channel.matrix();
    let q = channel.q();
    let atoms = set
        .atoms()
        .iter()
        .map(|a| Atom {
            g: (0..q).map(|i| (0..q).map(|j| m[(i, j)] * a.g[j]).sum()).collect(),
            w: a.w,
        })
        .collect();
    AtomSet::new(q, atoms)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binom_with_repetition(a: usize, b: usize) -> f64 {
    // C(a + b - 1, b) as f64; only used as a budget estimate.
    let mut out = 1.0f64;
    for k in 0..b {
        out *= (a + k) as f64 / (k + 1) as f64;
    }
    out
}

/// B-fold product of one atom set with itself, enumerating unordered
/// multisets and weighting each by the multinomial coefficient.
pub fn tensor_power(set: &AtomSet, b: usize, budget: usize) -> Result<AtomSet, ExactError> {
    if b == 0 {
        return Ok(AtomSet::new(
            set.q(),
            vec![Atom {
                g: vec![1.0; set.q()],
                w: 1.0,
            }],
        ));
    }
    let predicted = binom_with_repetition(set.len(), b);
    if predicted > budget as f64 {
        return Err(ExactError::AtomBudgetExceeded {
            needed: predicted as usize,
            budget,
        });
    }
    let q = set.q();
    let atoms = set.atoms();
    let b_fact = factorial(b);
    let mut out = Vec::with_capacity(predicted as usize);
    // counts[k] = multiplicity of atom index choice k in the multiset
    let mut choice: Vec<(usize, usize)> = Vec::new(); // (atom idx, count)
    fn rec(
        atoms: &[Atom],
        q: usize,
        b_fact: f64,
        start: usize,
        remaining: usize,
        choice: &mut Vec<(usize, usize)>,
        out: &mut Vec<Atom>,
    ) {
        if remaining == 0 {
            let mut g = vec![1.0f64; q];
            let mut w = b_fact;
            for &(idx, m) in choice.iter() {
                let a = &atoms[idx];
                w *= a.w.powi(m as i32) / factorial(m);
                for (gi, &ai) in g.iter_mut().zip(&a.g) {
                    *gi *= ai.powi(m as i32);
                }
            }
            out.push(Atom { g, w });
            return;
        }
        if start >= atoms.len() {
            return;
        }
        // multiplicity of atoms[start] from remaining..0; the tail uses
        // strictly larger indices
        for m in (0..=remaining).rev() {
            if m > 0 {
                choice.push((start, m));
            }
            if m == remaining {
                rec(atoms, q, b_fact, atoms.len(), 0, choice, out);
            } else {
                rec(atoms, q, b_fact, start + 1, remaining - m, choice, out);
            }
            if m > 0 {
                choice.pop();
            }
        }
    }
    rec(atoms, q, b_fact, 0, b, &mut choice, &mut out);
    Ok(AtomSet::new(q, out))
}

/// Full product over distinct child sets.
pub fn tensor_product(sets: &[&AtomSet], budget: usize) -> Result<AtomSet, ExactError> {
    let q = sets.first().map_or(0, |s| s.q());
    for s in sets {
        if s.q() != q {
            return Err(ExactError::StateCountMismatch { a: q, b: s.q() });
        }
    }
    let mut predicted = 1.0f64;
    for s in sets {
        predicted *= s.len() as f64;
    }
    if predicted > budget as f64 {
        return Err(ExactError::AtomBudgetExceeded {
            needed: predicted as usize,
            budget,
        });
    }
    let mut out = vec![Atom {
        g: vec![1.0; q],
        w: 1.0,
    }];
    for s in sets {
        let mut next = Vec::with_capacity(out.len() * s.len());
        for acc in &out {
            for a in s.atoms() {
                let mut g = acc.g.clone();
                for (gi, &ai) in g.iter_mut().zip(&a.g) {
                    *gi *= ai;
                }
                next.push(Atom {
                    g,
                    w: acc.w * a.w,
                });
            }
        }
        out = next;
    }
    Ok(AtomSet::new(q, out))
}

/// Parent measure from child measures: push each child through the
/// channel, then take the product. Identical children (isomorphic
/// subtrees with the same noise) go through the multiset shortcut.
pub fn recursion_step(
    children: &[&AtomSet],
    channel: &Channel,
    budget: usize,
) -> Result<AtomSet, ExactError> {
    let stepped: Vec<AtomSet> = children
        .iter()
        .map(|s| apply_channel(s, channel))
        .collect();
    let all_same = stepped.windows(2).all(|w| w[0] == w[1]);
    if all_same {
        tensor_power(&stepped[0], stepped.len(), budget)
    } else {
        let refs: Vec<&AtomSet> = stepped.iter().collect();
        tensor_product(&refs, budget)
    }
}

/// Level-n measure of the regular tree: start from the single-node
/// observation and apply the recursion n times with `arity` children.
pub fn level_atoms(
    channel: &Channel,
    noise: &NoiseChannel,
    arity: usize,
    depth: usize,
    budget: usize,
) -> Result<AtomSet, ExactError> {
    let mut set = leaf_atoms(noise);
    for _ in 0..depth {
        let children: Vec<&AtomSet> = std::iter::repeat_n(&set, arity).collect();
        set = recursion_step(&children, channel, budget)?;
    }
    Ok(set)
}

/// Exact measures at every node of Ins(S) and S (observation on the
/// antichain, noise applied at the antichain). Index = node id; nodes
/// outside Ins(S) u S stay None.
pub fn subtree_atoms_map(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    budget: usize,
) -> Result<Vec<Option<AtomSet>>, ExactError> {
    let mut map: Vec<Option<AtomSet>> = vec![None; tree.node_count()];
    for &x in antichain.members() {
        map[x] = Some(leaf_atoms(noise));
    }
    let mut inside = antichain.inside().to_vec();
    inside.sort_unstable_by_key(|&x| std::cmp::Reverse(tree.depth_of(x)));
    for &x in &inside {
        let children: Vec<&AtomSet> = tree
            .children_of(x)
            .iter()
            .map(|&c| map[c].as_ref().expect("child of inside node is resolved"))
            .collect();
        let set = recursion_step(&children, channel, budget)?;
        map[x] = Some(set);
    }
    Ok(map)
}

/// Root measure on the antichain observation.
pub fn subtree_atoms(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    budget: usize,
) -> Result<AtomSet, ExactError> {
    let map = subtree_atoms_map(tree, antichain, channel, noise, budget)?;
    Ok(map[0].clone().expect("root is inside or a member"))
}

/// Brute-force reference: enumerate every hidden configuration on
/// Ins(S) u S, accumulate the joint leaf-state law per root state, then
/// apply the leaf noise one antichain member at a time. One atom per raw
/// observation string, no merging.
pub fn enumerate_oracle(
    tree: &Tree,
    antichain: &Antichain,
    channel: &Channel,
    noise: &NoiseChannel,
    string_cap: usize,
) -> Result<AtomSet, ExactError> {
    let q = channel.q();
    let b = noise.b();
    let members = antichain.members();
    let s_len = members.len();
    let tau_count = (b as f64).powi(s_len as i32);
    if tau_count > string_cap as f64 {
        return Err(ExactError::CapExceeded {
            states: tau_count,
            cap: string_cap,
        });
    }
    let mut nodes: Vec<usize> = antichain
        .inside()
        .iter()
        .chain(members.iter())
        .copied()
        .collect();
    nodes.sort_unstable();
    let sigma_count = (q as f64).powi(nodes.len() as i32);
    if sigma_count > SIGMA_ENUM_CAP as f64 {
        return Err(ExactError::CapExceeded {
            states: sigma_count,
            cap: SIGMA_ENUM_CAP,
        });
    }
    let pos: std::collections::HashMap<usize, usize> =
        nodes.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    // every non-root node of Ins u S has its parent inside, so the
    // edge set is recoverable from parent pointers alone
    let edges: Vec<(usize, usize)> = nodes
        .iter()
        .filter(|&&x| x != 0)
        .map(|&x| {
            let p = tree.parent_of(x).expect("non-root node has a parent");
            (pos[&p], pos[&x])
        })
        .collect();
    let member_pos: Vec<usize> = members.iter().map(|x| pos[x]).collect();
    let root_pos = pos[&0];
    let m = channel.matrix();

    // Leaf-state marginal per root state: table[s-index][root state].
    let s_count = q.checked_pow(s_len as u32).expect("bounded by sigma cap");
    let mut leaf_law = vec![0.0f64; s_count * q];
    let mut sigma = vec![0usize; nodes.len()];
    loop {
        let mut p = 1.0f64;
        for &(x, y) in &edges {
            p *= m[(sigma[x], sigma[y])];
            if p == 0.0 {
                break;
            }
        }
        if p > 0.0 {
            let mut s_index = 0usize;
            for &mp in &member_pos {
                s_index = s_index * q + sigma[mp];
            }
            leaf_law[s_index * q + sigma[root_pos]] += p;
        }
        // odometer
        let mut k = 0;
        loop {
            if k == sigma.len() {
                break;
            }
            sigma[k] += 1;
            if sigma[k] < q {
                break;
            }
            sigma[k] = 0;
            k += 1;
        }
        if k == sigma.len() {
            break;
        }
    }

    // Apply the noise axis by axis: contract state axis t into symbol
    // axis, per root state.
    let nmat = noise.matrix();
    let tau_total = b.checked_pow(s_len as u32).expect("bounded by cap");
    let mut out_atoms: Vec<Atom> = (0..tau_total)
        .map(|_| Atom {
            g: vec![0.0; q],
            w: 1.0,
        })
        .collect();
    for ell in 0..q {
        let mut table: Vec<f64> = (0..s_count).map(|s| leaf_law[s * q + ell]).collect();
        let mut dims: Vec<usize> = vec![q; s_len];
        for axis in 0..s_len {
            // stride layout: first member is the most significant axis
            let lead: usize = dims[..axis].iter().product();
            let trail: usize = dims[axis + 1..].iter().product();
            let old = dims[axis];
            let mut next = vec![0.0f64; lead * b * trail];
            for l in 0..lead {
                for t in 0..old {
                    for r in 0..trail {
                        let val = table[(l * old + t) * trail + r];
                        if val == 0.0 {
                            continue;
                        }
                        for obs in 0..b {
                            let nv = nmat[(t, obs)];
                            if nv != 0.0 {
                                next[(l * b + obs) * trail + r] += val * nv;
                            }
                        }
                    }
                }
            }
            table = next;
            dims[axis] = b;
        }
        for (tau, &val) in table.iter().enumerate() {
            out_atoms[tau].g[ell] = val;
        }
    }
    Ok(AtomSet::new_unmerged(q, out_atoms))
}

/// Per-root-state total variation between two atom families over the
/// same observation space. Classes are aligned by likelihood vector.
pub fn per_state_tv(a: &AtomSet, b: &AtomSet) -> Vec<f64> {
    let q = a.q();
    let am = a.merged(MERGE_REL_TOL);
    let bm = b.merged(MERGE_REL_TOL);
    let mut out = vec![0.0f64; q];
    let (mut i, mut j) = (0usize, 0usize);
    let match_tol = 1e-9;
    while i < am.len() || j < bm.len() {
        let take_a = if i < am.len() && j < bm.len() {
            if g_close(&am.atoms()[i].g, &bm.atoms()[j].g, match_tol) {
                let (x, y) = (&am.atoms()[i], &bm.atoms()[j]);
                for (o, (gx, gy)) in out.iter_mut().zip(x.g.iter().zip(&y.g)) {
                    *o += 0.5 * (x.w * gx - y.w * gy).abs();
                }
                i += 1;
                j += 1;
                continue;
            }
            cmp_g(&am.atoms()[i].g, &bm.atoms()[j].g) == std::cmp::Ordering::Less
        } else {
            i < am.len()
        };
        if take_a {
            let x = &am.atoms()[i];
            for (o, gx) in out.iter_mut().zip(&x.g) {
                *o += 0.5 * x.w * gx;
            }
            i += 1;
        } else {
            let y = &bm.atoms()[j];
            for (o, gy) in out.iter_mut().zip(&y.g) {
                *o += 0.5 * y.w * gy;
            }
            j += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{validate_antichain, TreeSpec};
    use approx::assert_abs_diff_eq;

    fn bsc3() -> Channel {
        Channel::bsc(0.3).unwrap()
    }

    fn identity_noise(c: &Channel) -> NoiseChannel {
        NoiseChannel::extra_steps(c, 0)
    }

    #[test]
    fn leaf_atoms_identity_are_point_masses() {
        let c = bsc3();
        let set = leaf_atoms(&identity_noise(&c));
        assert_eq!(set.len(), 2);
        assert_eq!(set.atoms()[0].g, vec![0.0, 1.0]);
        assert_eq!(set.atoms()[1].g, vec![1.0, 0.0]);
        let n = set.normalization();
        assert_abs_diff_eq!(n[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn depth_one_binary_bsc_atoms() {
        let c = bsc3();
        let set = level_atoms(&c, &identity_noise(&c), 2, 1, DEFAULT_ATOM_BUDGET).unwrap();
        assert_eq!(set.len(), 3);
        // canonical order sorts by g
        let a = set.atoms();
        assert_abs_diff_eq!(a[0].g[0], 0.09, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0].g[1], 0.49, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0].w, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1].g[0], 0.21, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1].g[1], 0.21, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1].w, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[2].g[0], 0.49, epsilon = 1e-12);
        assert_abs_diff_eq!(a[2].g[1], 0.09, epsilon = 1e-12);
        assert_abs_diff_eq!(set.tv(0, 1), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn erasure_and_mix_leaf_degeneracies() {
        let full_erase = NoiseChannel::erasure(2, 1.0).unwrap();
        let set = leaf_atoms(&full_erase);
        assert_eq!(set.len(), 1);
        assert_eq!(set.atoms()[0].g, vec![1.0, 1.0]);

        let full_mix = NoiseChannel::mix(2, &[0.5, 0.5], 1.0).unwrap();
        let set = leaf_atoms(&full_mix);
        assert_eq!(set.len(), 1);
        assert_abs_diff_eq!(set.atoms()[0].w, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(set.atoms()[0].g[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn budget_is_enforced() {
        let c = bsc3();
        let set = level_atoms(&c, &identity_noise(&c), 2, 1, DEFAULT_ATOM_BUDGET).unwrap();
        match tensor_power(&set, 2, 3) {
            Err(ExactError::AtomBudgetExceeded { needed, budget: 3 }) => assert!(needed > 3),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn atom_counts_follow_pair_recurrence() {
        // Before value collisions the binary merge gives A(A+1)/2.
        let c = bsc3();
        let mut expect = 2usize;
        for depth in 0..=4usize {
            let set =
                level_atoms(&c, &identity_noise(&c), 2, depth, DEFAULT_ATOM_BUDGET).unwrap();
            assert!(set.len() <= expect, "depth {depth}: {} atoms", set.len());
            if depth < 4 {
                expect = expect * (expect + 1) / 2;
            }
            let n = set.normalization();
            assert_abs_diff_eq!(n[0], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(n[1], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn tv_nonincreasing_in_depth_below_threshold() {
        let c = bsc3();
        for noise in [
            NoiseChannel::extra_steps(&c, 2),
            NoiseChannel::mix(2, &[0.5, 0.5], 0.5).unwrap(),
            NoiseChannel::erasure(2, 0.4).unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            for depth in 0..=3usize {
                let set = level_atoms(&c, &noise, 2, depth, DEFAULT_ATOM_BUDGET).unwrap();
                let tv = set.tv(0, 1);
                assert!(tv <= prev + 1e-12, "depth {depth}: {tv} > {prev}");
                prev = tv;
            }
        }
    }

    #[test]
    fn oracle_matches_engine_small() {
        let c = bsc3();
        let tree = Tree::build(&TreeSpec::BAry { arity: 2, depth: 2 }).unwrap();
        let ac = validate_antichain(&tree, tree.level(2)).unwrap();
        for noise in [
            identity_noise(&c),
            NoiseChannel::mix(2, &[0.5, 0.5], 0.3).unwrap(),
            NoiseChannel::erasure(2, 0.25).unwrap(),
        ] {
            let engine = subtree_atoms(&tree, &ac, &c, &noise, DEFAULT_ATOM_BUDGET).unwrap();
            let oracle = enumerate_oracle(&tree, &ac, &c, &noise, 1_000_000).unwrap();
            for (i, tv) in per_state_tv(&engine, &oracle).iter().enumerate() {
                assert!(tv.abs() <= 1e-10, "state {i}: tv {tv}");
            }
        }
    }

    #[test]
    fn oracle_matches_engine_on_irregular_antichain() {
        let c = bsc3();
        // explicit tree: root -> {1, 2}; 1 -> {3, 4}; antichain {3, 4, 2}
        let tree = Tree::build(&TreeSpec::Explicit {
            parents: vec![None, Some(0), Some(0), Some(1), Some(1)],
        })
        .unwrap();
        let ac = validate_antichain(&tree, &[3, 4, 2]).unwrap();
        let noise = NoiseChannel::mix(2, &[0.25, 0.75], 0.4).unwrap();
        let engine = subtree_atoms(&tree, &ac, &c, &noise, DEFAULT_ATOM_BUDGET).unwrap();
        let oracle = enumerate_oracle(&tree, &ac, &c, &noise, 1_000_000).unwrap();
        for tv in per_state_tv(&engine, &oracle) {
            assert!(tv.abs() <= 1e-10);
        }
    }

    #[test]
    fn oracle_cap_errors() {
        let c = bsc3();
        let tree = Tree::build(&TreeSpec::BAry { arity: 3, depth: 3 }).unwrap();
        let ac = validate_antichain(&tree, tree.level(3)).unwrap();
        assert!(matches!(
            enumerate_oracle(&tree, &ac, &c, &identity_noise(&c), 1_000_000),
            Err(ExactError::CapExceeded { .. })
        ));
    }

    #[test]
    fn oracle_total_erasure_single_string() {
        let c = bsc3();
        let tree = Tree::build(&TreeSpec::BAry { arity: 2, depth: 1 }).unwrap();
        let ac = validate_antichain(&tree, tree.level(1)).unwrap();
        let noise = NoiseChannel::erasure(2, 1.0).unwrap();
        let oracle = enumerate_oracle(&tree, &ac, &c, &noise, 1_000_000).unwrap();
        assert_eq!(oracle.len(), 1);
        assert_abs_diff_eq!(oracle.atoms()[0].g[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle.atoms()[0].g[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let c = bsc3();
        let set = level_atoms(&c, &identity_noise(&c), 2, 2, DEFAULT_ATOM_BUDGET).unwrap();
        let text = set.to_csv();
        let back = AtomSet::from_csv(&text).unwrap();
        assert_eq!(back.len(), set.len());
        for (a, b) in set.atoms().iter().zip(back.atoms()) {
            assert_eq!(a.w.to_bits(), b.w.to_bits());
            for (x, y) in a.g.iter().zip(&b.g) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
