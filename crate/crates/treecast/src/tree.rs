//! Finite rooted trees, antichains, and cutset sums.
//!
//! Nodes are indexed 0..n with node 0 the root; parents always have
//! smaller depth. An antichain here is a minimal cutset: a set S meeting
//! every root-to-leaf path, no member an ancestor of another. Ins(S) is
//! the component of the root in T minus S; the inside edges are the edges
//! leaving Ins(S) nodes (their endpoints lie in Ins(S) or S).
//!
//! `min_antichain_sum` minimizes sum over S of lambda^(-depth) by the
//! bottom-up recursion value(x) = min(lambda^(-|x|), sum over children),
//! ties broken toward the shallower cut. For a level-regular tree the
//! minimizer at lambda below the growth rate is the deepest level.

use thiserror::Error;

/// Default cap on constructed node counts.
pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("parent list has a cycle through node {node}")]
    Cycle { node: usize },
    #[error("node {node} must have a parent (only node 0 is the root)")]
    ExtraRoot { node: usize },
    #[error("node {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("tree would have {nodes} nodes, cap is {cap}")]
    CapExceeded { nodes: usize, cap: usize },
    #[error("antichain is empty")]
    EmptySet,
    #[error("set misses the root-to-leaf path ending at node {leaf}")]
    NotACutset { leaf: usize },
    #[error("set is not minimal: node {node} lies below another member")]
    NotMinimal { node: usize },
    #[error("no antichain with cutset sum <= {target} within depth cap {cap}; best {best}")]
    NotFoundWithinCap { target: f64, cap: usize, best: f64 },
    #[error("bad tree line {line:?}")]
    BadLine { line: String },
    #[error("arity must be at least 1")]
    BadArity,
}

/// Shape description; `Tree::build` turns it into an explicit tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeSpec {
    /// Every node at depth < depth has `arity` children.
    BAry { arity: usize, depth: usize },
    /// parents[0] = None (root), parents[x] = Some(parent index).
    Explicit { parents: Vec<Option<usize>> },
    /// All nodes at depth d have children_per_level[d] children; the tree
    /// ends after the listed levels.
    SphericallySymmetric { children_per_level: Vec<usize> },
}

impl TreeSpec {
    /// Truncation of the shape family at `depth`, for deepening searches.
    /// Spherically symmetric families repeat the last listed level count;
    /// explicit trees are a constant family.
    pub fn truncate(&self, depth: usize) -> TreeSpec {
        match self {
            TreeSpec::BAry { arity, .. } => TreeSpec::BAry {
                arity: *arity,
                depth,
            },
            TreeSpec::Explicit { .. } => self.clone(),
            TreeSpec::SphericallySymmetric { children_per_level } => {
                let mut levels = children_per_level.clone();
                let last = *levels.last().unwrap_or(&0);
                levels.resize(depth, last);
                levels.truncate(depth);
                TreeSpec::SphericallySymmetric {
                    children_per_level: levels,
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    levels: Vec<Vec<usize>>,
    max_degree: usize,
    depth_offset: usize,
}

impl Tree {
    pub fn build(spec: &TreeSpec) -> Result<Self, TreeError> {
        Self::build_with_cap(spec, DEFAULT_NODE_CAP)
    }

    pub fn build_with_cap(spec: &TreeSpec, cap: usize) -> Result<Self, TreeError> {
        match spec {
            TreeSpec::BAry { arity, depth } => {
                if *arity == 0 {
                    return Err(TreeError::BadArity);
                }
                let mut count: usize = 1;
                let mut level = 1usize;
                for _ in 0..*depth {
                    level = level.saturating_mul(*arity);
                    count = count.saturating_add(level);
                    if count > cap {
                        return Err(TreeError::CapExceeded { nodes: count, cap });
                    }
                }
                let mut parents: Vec<Option<usize>> = vec![None];
                let mut prev_level: Vec<usize> = vec![0];
                let mut next = 1usize;
                for _ in 0..*depth {
                    let mut this_level = Vec::with_capacity(prev_level.len() * arity);
                    for &p in &prev_level {
                        for _ in 0..*arity {
                            parents.push(Some(p));
                            this_level.push(next);
                            next += 1;
                        }
                    }
                    prev_level = this_level;
                }
                Self::from_parents(&parents, cap)
            }
            TreeSpec::Explicit { parents } => Self::from_parents(parents, cap),
            TreeSpec::SphericallySymmetric { children_per_level } => {
                let mut count: usize = 1;
                let mut width: usize = 1;
                for &c in children_per_level {
                    width = width.saturating_mul(c);
                    count = count.saturating_add(width);
                    if count > cap {
                        return Err(TreeError::CapExceeded { nodes: count, cap });
                    }
                }
                let mut parents: Vec<Option<usize>> = vec![None];
                let mut prev_level: Vec<usize> = vec![0];
                let mut next = 1usize;
                for &c in children_per_level {
                    let mut this_level = Vec::with_capacity(prev_level.len() * c);
                    for &p in &prev_level {
                        for _ in 0..c {
                            parents.push(Some(p));
                            this_level.push(next);
                            next += 1;
                        }
                    }
                    prev_level = this_level;
                }
                Self::from_parents(&parents, cap)
            }
        }
    }

    fn from_parents(parents: &[Option<usize>], cap: usize) -> Result<Self, TreeError> {
        let n = parents.len();
        if n > cap {
            return Err(TreeError::CapExceeded { nodes: n, cap });
        }
        if n == 0 || parents[0].is_some() {
            return Err(TreeError::ExtraRoot { node: 0 });
        }
        for (x, p) in parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(TreeError::ExtraRoot { node: x }),
                Some(p) if *p >= n => {
                    return Err(TreeError::NodeOutOfRange { node: *p, nodes: n })
                }
                _ => {}
            }
        }
        // Depths by pointer chasing with memoization; a walk longer than n
        // must have revisited a node.
        let mut depth = vec![usize::MAX; n];
        depth[0] = 0;
        for start in 1..n {
            if depth[start] != usize::MAX {
                continue;
            }
            let mut path = vec![start];
            let mut x = start;
            loop {
                let p = parents[x].expect("non-root checked above");
                if depth[p] != usize::MAX {
                    break;
                }
                if path.len() > n {
                    return Err(TreeError::Cycle { node: start });
                }
                path.push(p);
                x = p;
            }
            let base = depth[parents[x].unwrap()];
            for (i, &node) in path.iter().rev().enumerate() {
                depth[node] = base + 1 + i;
            }
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (x, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(x);
            }
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        let mut levels: Vec<Vec<usize>> = vec![Vec::new(); max_depth + 1];
        for (x, &d) in depth.iter().enumerate() {
            levels[d].push(x);
        }
        let max_degree = children.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Tree {
            parent: parents.to_vec(),
            children,
            depth,
            levels,
            max_degree,
            depth_offset: 0,
        })
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn parent_of(&self, x: usize) -> Option<usize> {
        self.parent[x]
    }

    pub fn children_of(&self, x: usize) -> &[usize] {
        &self.children[x]
    }

    /// Depth within this tree (offset excluded).
    pub fn depth_of(&self, x: usize) -> usize {
        self.depth[x]
    }

    pub fn max_depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Nodes at the given depth.
    pub fn level(&self, d: usize) -> &[usize] {
        &self.levels[d]
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&x| self.children[x].is_empty())
            .collect()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Depth of this tree's root inside the tree it was cut from.
    pub fn depth_offset(&self) -> usize {
        self.depth_offset
    }

    /// Subtree rooted at y, reindexed in BFS order, offset recorded.
    pub fn subtree(&self, y: usize) -> Result<Tree, TreeError> {
        if y >= self.node_count() {
            return Err(TreeError::NodeOutOfRange {
                node: y,
                nodes: self.node_count(),
            });
        }
        let mut order = vec![y];
        let mut new_index = std::collections::HashMap::new();
        new_index.insert(y, 0usize);
        let mut head = 0;
        while head < order.len() {
            let x = order[head];
            head += 1;
            for &c in &self.children[x] {
                new_index.insert(c, order.len());
                order.push(c);
            }
        }
        let parents: Vec<Option<usize>> = order
            .iter()
            .map(|&x| {
                if x == y {
                    None
                } else {
                    Some(new_index[&self.parent[x].unwrap()])
                }
            })
            .collect();
        let mut t = Tree::from_parents(&parents, usize::MAX)?;
        t.depth_offset = self.depth_offset + self.depth[y];
        Ok(t)
    }

    /// Parse "child parent" edge lines; node 0 is the root. Lines starting
    /// with '#' and blank lines are skipped.
    pub fn from_edge_lines(text: &str) -> Result<Tree, TreeError> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut max_node = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(c), Some(p), None) = (it.next(), it.next(), it.next()) else {
                return Err(TreeError::BadLine { line: line.into() });
            };
            let (Ok(c), Ok(p)) = (c.parse::<usize>(), p.parse::<usize>()) else {
                return Err(TreeError::BadLine { line: line.into() });
            };
            max_node = max_node.max(c).max(p);
            pairs.push((c, p));
        }
        let n = max_node + 1;
        let mut parents: Vec<Option<usize>> = vec![None; n];
        for &(c, p) in &pairs {
            if c == 0 {
                return Err(TreeError::BadLine {
                    line: format!("{c} {p}"),
                });
            }
            parents[c] = Some(p);
        }
        for (x, p) in parents.iter().enumerate().skip(1) {
            if p.is_none() {
                return Err(TreeError::ExtraRoot { node: x });
            }
        }
        Tree::from_parents(&parents, DEFAULT_NODE_CAP)
    }

    /// Inverse of `from_edge_lines`.
    pub fn to_edge_lines(&self) -> String {
        let mut s = String::new();
        for x in 1..self.node_count() {
            s.push_str(&format!("{} {}\n", x, self.parent[x].unwrap()));
        }
        s
    }

    pub fn canonical_string(&self) -> String {
        let mut s = format!("tree n={}", self.node_count());
        for x in 1..self.node_count() {
            s.push_str(&format!(" {}", self.parent[x].unwrap()));
        }
        s
    }
}

/// Validated minimal cutset with its inside region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Antichain {
    members: Vec<usize>,
    inside: Vec<usize>,
    inside_edges: Vec<(usize, usize)>,
}

impl Antichain {
    /// Sorted member nodes.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Ins(S): nodes of the root component of T minus S, sorted.
    pub fn inside(&self) -> &[usize] {
        &self.inside
    }

    /// Edges (x, child) with x inside; the child lies inside or in S.
    pub fn inside_edges(&self) -> &[(usize, usize)] {
        &self.inside_edges
    }
}

/// Checks that `set` is a cutset (every root-to-leaf path meets it) and
/// minimal (no member below another), and computes the inside region.
pub fn validate_antichain(tree: &Tree, set: &[usize]) -> Result<Antichain, TreeError> {
    if set.is_empty() {
        return Err(TreeError::EmptySet);
    }
    let n = tree.node_count();
    let mut members: Vec<usize> = set.to_vec();
    members.sort_unstable();
    members.dedup();
    if let Some(&bad) = members.iter().find(|&&x| x >= n) {
        return Err(TreeError::NodeOutOfRange { node: bad, nodes: n });
    }
    let mut in_set = vec![false; n];
    for &x in &members {
        in_set[x] = true;
    }
    // Cutset: walk down from the root, stopping at members; reaching a
    // leaf means a path escaped.
    let mut inside = Vec::new();
    let mut stack = Vec::new();
    if !in_set[0] {
        stack.push(0usize);
    }
    let mut seen_inside = vec![false; n];
    while let Some(x) = stack.pop() {
        if seen_inside[x] {
            continue;
        }
        seen_inside[x] = true;
        inside.push(x);
        if tree.children_of(x).is_empty() {
            return Err(TreeError::NotACutset { leaf: x });
        }
        for &c in tree.children_of(x) {
            if !in_set[c] {
                stack.push(c);
            }
        }
    }
    // Minimality: no member may have an ancestor in the set.
    for &x in &members {
        let mut a = tree.parent_of(x);
        while let Some(p) = a {
            if in_set[p] {
                return Err(TreeError::NotMinimal { node: x });
            }
            a = tree.parent_of(p);
        }
    }
    inside.sort_unstable();
    let mut inside_edges = Vec::new();
    for &x in &inside {
        for &c in tree.children_of(x) {
            inside_edges.push((x, c));
        }
    }
    Ok(Antichain {
        members,
        inside,
        inside_edges,
    })
}

/// Sum over members of lambda^(-depth), depth offset included.
pub fn cutset_sum(tree: &Tree, antichain: &Antichain, lambda: f64) -> f64 {
    antichain
        .members()
        .iter()
        .map(|&x| lambda.powi(-((tree.depth_of(x) + tree.depth_offset()) as i32)))
        .sum()
}

/// Minimal cutset sum at weight lambda and its minimizing antichain.
/// Ties prefer the shallower cut.
pub fn min_antichain_sum(tree: &Tree, lambda: f64) -> (f64, Antichain) {
    let n = tree.node_count();
    let mut value = vec![0.0f64; n];
    let mut cut_here = vec![false; n];
    for d in (0..=tree.max_depth()).rev() {
        for &x in tree.level(d) {
            let own = lambda.powi(-((d + tree.depth_offset()) as i32));
            if tree.children_of(x).is_empty() {
                value[x] = own;
                cut_here[x] = true;
            } else {
                let below: f64 = tree.children_of(x).iter().map(|&c| value[c]).sum();
                if own <= below {
                    value[x] = own;
                    cut_here[x] = true;
                } else {
                    value[x] = below;
                }
            }
        }
    }
    let mut members = Vec::new();
    let mut stack = vec![0usize];
    while let Some(x) = stack.pop() {
        if cut_here[x] {
            members.push(x);
        } else {
            stack.extend(tree.children_of(x).iter().copied());
        }
    }
    let antichain = validate_antichain(tree, &members).expect("DP cut is a minimal cutset");
    (value[0], antichain)
}

/// Per-node condition: for every y inside or in S, the subtree members
/// satisfy sum over x in S below y of g^-(|x|-|y|) <= 1 (+1e-12).
pub fn subtree_sums_bounded(tree: &Tree, antichain: &Antichain, g: f64) -> bool {
    let n = tree.node_count();
    let mut in_set = vec![false; n];
    for &x in antichain.members() {
        in_set[x] = true;
    }
    let mut sub = vec![0.0f64; n];
    let mut relevant = vec![false; n];
    for &x in antichain.members() {
        relevant[x] = true;
    }
    for &x in antichain.inside() {
        relevant[x] = true;
    }
    for d in (0..=tree.max_depth()).rev() {
        for &x in tree.level(d) {
            if !relevant[x] {
                continue;
            }
            sub[x] = if in_set[x] {
                g.powi(-(d as i32))
            } else {
                tree.children_of(x).iter().map(|&c| sub[c]).sum()
            };
            if sub[x] * g.powi(d as i32) > 1.0 + 1e-12 {
                return false;
            }
        }
    }
    true
}

/// Deepens truncations of the shape family until the DP antichain has
/// cutset sum <= eps, then keeps collecting one antichain per qualifying
/// depth up to the cap. Node indices are consistent across truncations
/// (BFS numbering), so members refer to any deeper truncation as well.
pub fn good_antichain_sequence(
    family: &TreeSpec,
    g: f64,
    eps: f64,
    depth_cap: usize,
) -> Result<Vec<Antichain>, TreeError> {
    let mut found = Vec::new();
    let mut best = f64::INFINITY;
    let mut last_tree_sig = None;
    for d in 1..=depth_cap {
        let spec = family.truncate(d);
        let tree = Tree::build(&spec)?;
        let sig = tree.node_count();
        if last_tree_sig == Some(sig) {
            break; // constant family (explicit tree): one shot
        }
        last_tree_sig = Some(sig);
        let (sum, antichain) = min_antichain_sum(&tree, g);
        best = best.min(sum);
        if sum <= eps {
            debug_assert!(subtree_sums_bounded(&tree, &antichain, g));
            found.push(antichain);
        }
    }
    if found.is_empty() {
        Err(TreeError::NotFoundWithinCap {
            target: eps,
            cap: depth_cap,
            best,
        })
    } else {
        Ok(found)
    }
}
