//! Binary regression trees and their leaf-indicator design.
//!
//! A tree with `b` leaves maps the `n` observations onto the columns of an
//! n×b indicator matrix D (one 1 per row), so that the tree's step function
//! is `D μ`. The design is stored sparsely as a per-observation leaf index
//! plus the index set Ω_j of every leaf. Leaves are numbered in depth-first
//! (left before right) order, which keeps sibling leaves adjacent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub var: usize,
    /// Observations with `x[var] < cut` go left.
    pub cut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { mean: f64 },
    Split { rule: SplitRule, left: NodeId, right: NodeId },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Slot {
    node: Node,
    parent: Option<NodeId>,
    depth: usize,
}

/// Arena-allocated binary tree; slot 0 is the root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    slots: Vec<Option<Slot>>,
    #[serde(skip)]
    free: Vec<NodeId>,
}

impl PartialEq for Tree {
    /// Structural equality: same rules and leaf means in the same shape,
    /// regardless of arena layout.
    fn eq(&self, other: &Self) -> bool {
        fn same(a: &Tree, na: NodeId, b: &Tree, nb: NodeId) -> bool {
            match (a.node(na), b.node(nb)) {
                (Node::Leaf { mean: ma }, Node::Leaf { mean: mb }) => ma.to_bits() == mb.to_bits(),
                (
                    Node::Split { rule: ra, left: la, right: rga },
                    Node::Split { rule: rb, left: lb, right: rgb },
                ) => ra.var == rb.var && ra.cut.to_bits() == rb.cut.to_bits() && same(a, *la, b, *lb) && same(a, *rga, b, *rgb),
                _ => false,
            }
        }
        same(self, 0, other, 0)
    }
}

impl Tree {
    /// Single-leaf tree.
    pub fn root(mean: f64) -> Self {
        Self {
            slots: vec![Some(Slot {
                node: Node::Leaf { mean },
                parent: None,
                depth: 0,
            })],
            free: Vec::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.slot(id).node
    }

    fn slot(&self, id: NodeId) -> &Slot {
        self.slots[id].as_ref().expect("dangling node id")
    }

    fn slot_mut(&mut self, id: NodeId) -> &mut Slot {
        self.slots[id].as_mut().expect("dangling node id")
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.slot(id).depth
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.slot(id).parent
    }

    fn alloc(&mut self, slot: Slot) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.slots[id] = Some(slot);
            id
        } else {
            self.slots.push(Some(slot));
            self.slots.len() - 1
        }
    }

    fn release(&mut self, id: NodeId) {
        self.slots[id] = None;
        if id + 1 == self.slots.len() {
            self.slots.pop();
            // drop trailing holes too
            while matches!(self.slots.last(), Some(None)) {
                self.slots.pop();
            }
            let len = self.slots.len();
            self.free.retain(|&f| f < len);
        } else {
            self.free.push(id);
        }
    }

    /// Leaf node ids in depth-first order.
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            match self.node(id) {
                Node::Leaf { .. } => out.push(id),
                Node::Split { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_ids().len()
    }

    /// Internal nodes whose two children are both leaves.
    pub fn nog_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            if let Node::Split { left, right, .. } = self.node(id) {
                let (l, r) = (*left, *right);
                if self.is_leaf(l) && self.is_leaf(r) {
                    out.push(id);
                }
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.node(id), Node::Leaf { .. })
    }

    /// Leaf means in depth-first leaf order.
    pub fn leaf_means(&self) -> Vec<f64> {
        self.leaf_ids()
            .into_iter()
            .map(|id| match self.node(id) {
                Node::Leaf { mean } => *mean,
                Node::Split { .. } => unreachable!(),
            })
            .collect()
    }

    pub fn set_leaf_means(&mut self, leaves: &[NodeId], means: &[f64]) {
        debug_assert_eq!(leaves.len(), means.len());
        for (&id, &m) in leaves.iter().zip(means) {
            match &mut self.slot_mut(id).node {
                Node::Leaf { mean } => *mean = m,
                Node::Split { .. } => panic!("node {id} is not a leaf"),
            }
        }
    }

    /// Leaf reached by a covariate row.
    #[inline]
    pub fn route(&self, row: &[f64]) -> NodeId {
        let mut id = 0;
        loop {
            match self.node(id) {
                Node::Leaf { .. } => return id,
                Node::Split { rule, left, right } => {
                    id = if row[rule.var] < rule.cut { *left } else { *right };
                }
            }
        }
    }

    /// g(x; T, M) for one row.
    pub fn eval_row(&self, row: &[f64]) -> f64 {
        match self.node(self.route(row)) {
            Node::Leaf { mean } => *mean,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        self.slots
            .iter()
            .flatten()
            .filter_map(|s| match &s.node {
                Node::Split { rule, .. } => Some(rule.var),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    /// Replace leaf `leaf` by a split with two fresh children.
    pub fn split_leaf(&mut self, leaf: NodeId, rule: SplitRule, left_mean: f64, right_mean: f64) -> (NodeId, NodeId) {
        assert!(self.is_leaf(leaf), "node {leaf} is not a leaf");
        let depth = self.depth(leaf) + 1;
        let left = self.alloc(Slot {
            node: Node::Leaf { mean: left_mean },
            parent: Some(leaf),
            depth,
        });
        let right = self.alloc(Slot {
            node: Node::Leaf { mean: right_mean },
            parent: Some(leaf),
            depth,
        });
        self.slot_mut(leaf).node = Node::Split { rule, left, right };
        (left, right)
    }

    /// Collapse a node whose children are both leaves back into a leaf.
    pub fn prune(&mut self, node: NodeId, mean: f64) -> SplitRule {
        let (rule, left, right) = match self.node(node) {
            Node::Split { rule, left, right } => (*rule, *left, *right),
            Node::Leaf { .. } => panic!("node {node} is a leaf"),
        };
        assert!(self.is_leaf(left) && self.is_leaf(right), "node {node} is not a nog");
        self.slot_mut(node).node = Node::Leaf { mean };
        // release the higher id first so a freshly grown pair pops cleanly
        let (a, b) = if left > right { (left, right) } else { (right, left) };
        self.release(a);
        self.release(b);
        rule
    }

    /// Apply an accepted proposal. New leaves get mean 0 until redrawn.
    pub fn apply(&mut self, proposal: &Proposal) {
        match proposal.kind {
            ProposalKind::Birth { rule } => {
                self.split_leaf(proposal.node, rule, 0.0, 0.0);
            }
            ProposalKind::Death => {
                self.prune(proposal.node, 0.0);
            }
        }
    }
}

/// Sparse form of the indicator matrix D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummyDesign {
    /// Leaf index of every observation.
    pub assignment: Vec<usize>,
    /// Ω_j, each sorted ascending.
    pub omega: Vec<Vec<usize>>,
    /// Tree node of each leaf index.
    pub leaf_nodes: Vec<NodeId>,
}

impl DummyDesign {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn b(&self) -> usize {
        self.omega.len()
    }

    /// Dense D (n×b) for oracles and small examples.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n(), self.b(), |i, j| if self.assignment[i] == j { 1.0 } else { 0.0 })
    }

    /// D μ.
    pub fn apply_means(&self, means: &[f64]) -> Vec<f64> {
        self.assignment.iter().map(|&j| means[j]).collect()
    }

    /// Per-leaf sums Dᵀv.
    pub fn leaf_sums(&self, v: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.b()];
        for (&j, &x) in self.assignment.iter().zip(v) {
            s[j] += x;
        }
        s
    }

    fn from_assignment(assignment: Vec<usize>, leaf_nodes: Vec<NodeId>) -> Self {
        let mut omega = vec![Vec::new(); leaf_nodes.len()];
        for (i, &j) in assignment.iter().enumerate() {
            omega[j].push(i);
        }
        Self {
            assignment,
            omega,
            leaf_nodes,
        }
    }
}

/// Route every row of `x` through the tree.
pub fn build_dummy(tree: &Tree, x: &Covariates) -> DummyDesign {
    let leaf_nodes = tree.leaf_ids();
    let mut index_of = vec![usize::MAX; tree.slots.len()];
    for (j, &id) in leaf_nodes.iter().enumerate() {
        index_of[id] = j;
    }
    let assignment = (0..x.n()).map(|i| index_of[tree.route(x.row(i))]).collect();
    DummyDesign::from_assignment(assignment, leaf_nodes)
}

/// Leaf-contiguous reordering: `D = P D_P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reordering {
    /// `perm[k]` is the original observation placed at position k, i.e.
    /// P has a 1 at (perm[k], k).
    pub perm: Vec<usize>,
    /// The block-form design D_P.
    pub design: DummyDesign,
}

impl Reordering {
    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(k, &i)| k == i)
    }

    /// Dense permutation matrix P.
    pub fn permutation_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.perm.len();
        let mut p = nalgebra::DMatrix::zeros(n, n);
        for (k, &i) in self.perm.iter().enumerate() {
            p[(i, k)] = 1.0;
        }
        p
    }

    /// Pᵀ v: the vector in reordered positions.
    pub fn permute_vec(&self, v: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&i| v[i]).collect()
    }
}

/// Stable leaf-contiguous ordering (within a leaf, original order is kept).
pub fn reorder(design: &DummyDesign) -> Reordering {
    let perm: Vec<usize> = design.omega.iter().flatten().copied().collect();
    let assignment = perm.iter().map(|&i| design.assignment[i]).collect();
    Reordering {
        perm,
        design: DummyDesign::from_assignment(assignment, design.leaf_nodes.clone()),
    }
}

/// Candidate cutpoints per covariate: midpoints between sorted unique values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutGrid {
    cuts: Vec<Vec<f64>>,
}

impl CutGrid {
    pub fn from_covariates(x: &Covariates) -> Self {
        let cuts = (0..x.p())
            .map(|v| {
                let mut col = x.column(v);
                col.sort_by(f64::total_cmp);
                col.dedup();
                col.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            })
            .collect();
        Self { cuts }
    }

    pub fn p(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, var: usize) -> &[f64] {
        &self.cuts[var]
    }

    /// Index range of cuts strictly inside (lo, hi).
    fn available(&self, var: usize, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let c = &self.cuts[var];
        let start = c.partition_point(|&v| v <= lo);
        let end = c.partition_point(|&v| v < hi);
        start..end.max(start)
    }
}

/// Depth prior: a node at depth d is internal with probability α(1+d)^{-β}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TreePrior {
    fn default() -> Self {
        Self { alpha: 0.95, beta: 2.0 }
    }
}

impl TreePrior {
    pub fn split_prob(&self, depth: usize) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }

    /// log of α(1+d)^{-β}(1-α(2+d)^{-β})² / (1-α(1+d)^{-β}): the depth
    /// part of p(T*)/p(T) when a leaf at depth d is split.
    pub fn log_birth_depth_ratio(&self, depth: usize) -> f64 {
        let ps = self.split_prob(depth);
        let pc = self.split_prob(depth + 1);
        ps.ln() + 2.0 * (1.0 - pc).ln() - (1.0 - ps).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalKind {
    Birth { rule: SplitRule },
    Death,
}

/// A birth or death move together with its Metropolis–Hastings terms.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: ProposalKind,
    /// Birth: the leaf being split. Death: the parent being collapsed.
    pub node: NodeId,
    /// Birth: index of the split leaf in the current design (its children
    /// take indices `leaf_index` and `leaf_index + 1` in the new design).
    /// Death: index of the left child (the right child is `leaf_index + 1`),
    /// which is also the merged leaf's index in the new design.
    pub leaf_index: usize,
    pub new_design: DummyDesign,
    /// log q(T*, T) - log q(T, T*).
    pub log_kernel_ratio: f64,
    /// log p(T*) - log p(T), including the uniform split-rule prior.
    pub log_prior_ratio: f64,
    /// log of the split-rule probability 1/(#vars · #cuts) of the rule
    /// being added or removed.
    pub log_rule_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig {
    /// Probability of proposing a birth when the tree has ≥ 2 leaves.
    pub birth_prob: f64,
    pub prior: TreePrior,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            birth_prob: 0.5,
            prior: TreePrior::default(),
        }
    }
}

impl ProposalConfig {
    fn p_birth(&self, n_leaves: usize) -> f64 {
        if n_leaves <= 1 {
            1.0
        } else {
            self.birth_prob
        }
    }
}

/// Per-leaf (min, max) of every covariate.
fn leaf_ranges(design: &DummyDesign, x: &Covariates) -> Vec<Vec<(f64, f64)>> {
    let mut ranges = vec![vec![(f64::INFINITY, f64::NEG_INFINITY); x.p()]; design.b()];
    for (i, &j) in design.assignment.iter().enumerate() {
        for (v, r) in x.row(i).iter().zip(ranges[j].iter_mut()) {
            r.0 = r.0.min(*v);
            r.1 = r.1.max(*v);
        }
    }
    ranges
}

/// Cut counts per variable for a leaf with the given ranges.
fn cut_counts(grid: &CutGrid, ranges: &[(f64, f64)]) -> Vec<usize> {
    ranges
        .iter()
        .enumerate()
        .map(|(v, &(lo, hi))| if lo < hi { grid.available(v, lo, hi).len() } else { 0 })
        .collect()
}

fn range_of(x: &Covariates, members: &[usize]) -> Vec<(f64, f64)> {
    let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); x.p()];
    for &i in members {
        for (v, rr) in x.row(i).iter().zip(r.iter_mut()) {
            rr.0 = rr.0.min(*v);
            rr.1 = rr.1.max(*v);
        }
    }
    r
}

/// Draw a birth or death proposal for `tree` with current `design`.
///
/// A birth chooses uniformly among leaves that admit at least one split
/// leaving both children non-empty, then a variable uniformly among those
/// with an available cut, then a cut uniformly among the available ones.
/// Returns [`Error::NoValidSplit`] when a birth was chosen but no leaf can
/// be split; the caller treats that as a rejected move.
pub fn propose<R: Rng + ?Sized>(
    tree: &Tree,
    design: &DummyDesign,
    x: &Covariates,
    grid: &CutGrid,
    config: &ProposalConfig,
    rng: &mut R,
) -> Result<Proposal> {
    let b = design.b();
    let p_birth = config.p_birth(b);
    if rng.random::<f64>() < p_birth {
        propose_birth(tree, design, x, grid, config, p_birth, rng)
    } else {
        propose_death(tree, design, x, grid, config, rng)
    }
}

fn propose_birth<R: Rng + ?Sized>(
    tree: &Tree,
    design: &DummyDesign,
    x: &Covariates,
    grid: &CutGrid,
    config: &ProposalConfig,
    p_birth: f64,
    rng: &mut R,
) -> Result<Proposal> {
    let ranges = leaf_ranges(design, x);
    let counts: Vec<Vec<usize>> = ranges.iter().map(|r| cut_counts(grid, r)).collect();
    let splittable: Vec<usize> = (0..design.b()).filter(|&j| counts[j].iter().any(|&c| c > 0)).collect();
    if splittable.is_empty() {
        return Err(Error::NoValidSplit);
    }
    let leaf_index = splittable[rng.random_range(0..splittable.len())];
    let vars: Vec<usize> = (0..x.p()).filter(|&v| counts[leaf_index][v] > 0).collect();
    let var = vars[rng.random_range(0..vars.len())];
    let (lo, hi) = ranges[leaf_index][var];
    let avail = grid.available(var, lo, hi);
    let cut = grid.cuts(var)[rng.random_range(avail.clone())];
    let rule = SplitRule { var, cut };
    birth_with_rule(tree, design, x, config, leaf_index, rule, p_birth, splittable.len(), vars.len(), avail.len())
}

#[allow(clippy::too_many_arguments)]
fn birth_with_rule(
    tree: &Tree,
    design: &DummyDesign,
    x: &Covariates,
    config: &ProposalConfig,
    leaf_index: usize,
    rule: SplitRule,
    p_birth: f64,
    n_splittable: usize,
    n_vars: usize,
    n_cuts: usize,
) -> Result<Proposal> {
    let node = design.leaf_nodes[leaf_index];
    let b = design.b();

    // New design: children take indices leaf_index and leaf_index + 1.
    let assignment: Vec<usize> = design
        .assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            if j < leaf_index {
                j
            } else if j > leaf_index {
                j + 1
            } else if x.get(i, rule.var) < rule.cut {
                leaf_index
            } else {
                leaf_index + 1
            }
        })
        .collect();
    // node ids of the children are not known until applied; record the parent
    let mut leaf_nodes = design.leaf_nodes.clone();
    leaf_nodes.insert(leaf_index + 1, node);
    let new_design = DummyDesign::from_assignment(assignment, leaf_nodes);
    if new_design.omega[leaf_index].is_empty() || new_design.omega[leaf_index + 1].is_empty() {
        return Err(Error::NoValidSplit);
    }

    let log_rule_prob = -((n_vars * n_cuts) as f64).ln();
    let log_forward = p_birth.ln() - (n_splittable as f64).ln() + log_rule_prob;

    // Reverse: death in T*, which has b+1 leaves.
    let mut nogs = tree.nog_ids().len() + 1;
    if let Some(parent) = tree.parent(node) {
        if let Node::Split { left, right, .. } = tree.node(parent) {
            let sibling = if *left == node { *right } else { *left };
            if tree.is_leaf(sibling) {
                // parent was a nog and no longer is
                nogs -= 1;
            }
        }
    }
    let p_death_rev = 1.0 - config.p_birth(b + 1);
    let log_reverse = p_death_rev.ln() - (nogs as f64).ln();

    let depth = tree.depth(node);
    Ok(Proposal {
        kind: ProposalKind::Birth { rule },
        node,
        leaf_index,
        new_design,
        log_kernel_ratio: log_reverse - log_forward,
        log_prior_ratio: config.prior.log_birth_depth_ratio(depth) + log_rule_prob,
        log_rule_prob,
    })
}

fn propose_death<R: Rng + ?Sized>(
    tree: &Tree,
    design: &DummyDesign,
    x: &Covariates,
    grid: &CutGrid,
    config: &ProposalConfig,
    rng: &mut R,
) -> Result<Proposal> {
    let nogs = tree.nog_ids();
    if nogs.is_empty() {
        return Err(Error::InvalidParameter("death proposed on a root-only tree".into()));
    }
    let node = nogs[rng.random_range(0..nogs.len())];
    death_at(tree, design, x, grid, config, node, nogs.len())
}

fn death_at(
    tree: &Tree,
    design: &DummyDesign,
    x: &Covariates,
    grid: &CutGrid,
    config: &ProposalConfig,
    node: NodeId,
    n_nogs: usize,
) -> Result<Proposal> {
    let b = design.b();
    let (rule, left) = match tree.node(node) {
        Node::Split { rule, left, .. } => (*rule, *left),
        Node::Leaf { .. } => return Err(Error::InvalidParameter("death target is a leaf".into())),
    };
    let leaf_index = design
        .leaf_nodes
        .iter()
        .position(|&id| id == left)
        .ok_or_else(|| Error::DimensionMismatch("design does not match tree".into()))?;

    let assignment: Vec<usize> = design
        .assignment
        .iter()
        .map(|&j| if j <= leaf_index { j } else { j - 1 })
        .collect();
    let mut leaf_nodes = design.leaf_nodes.clone();
    leaf_nodes.remove(leaf_index + 1);
    leaf_nodes[leaf_index] = node;
    let new_design = DummyDesign::from_assignment(assignment, leaf_nodes);

    // Reverse birth from T* (b-1 leaves) re-creating exactly this rule.
    let ranges_cur = leaf_ranges(design, x);
    let splittable_cur: Vec<bool> = ranges_cur.iter().map(|r| cut_counts(grid, r).iter().any(|&c| c > 0)).collect();
    let merged_range = range_of(x, &new_design.omega[leaf_index]);
    let merged_counts = cut_counts(grid, &merged_range);
    let n_vars = merged_counts.iter().filter(|&&c| c > 0).count();
    let n_cuts = merged_counts[rule.var];
    debug_assert!(n_cuts > 0);
    let n_splittable = splittable_cur.iter().filter(|&&s| s).count()
        - usize::from(splittable_cur[leaf_index])
        - usize::from(splittable_cur[leaf_index + 1])
        + 1;
    let log_rule_prob = -((n_vars * n_cuts) as f64).ln();
    let log_reverse = config.p_birth(b - 1).ln() - (n_splittable as f64).ln() + log_rule_prob;
    let log_forward = (1.0 - config.p_birth(b)).ln() - (n_nogs as f64).ln();

    let depth = tree.depth(node);
    Ok(Proposal {
        kind: ProposalKind::Death,
        node,
        leaf_index,
        new_design,
        log_kernel_ratio: log_reverse - log_forward,
        log_prior_ratio: -(config.prior.log_birth_depth_ratio(depth) + log_rule_prob),
        log_rule_prob,
    })
}

/// Death proposal at a specific nog node (used to pair a birth with its
/// reverse move).
pub fn propose_death_at(
    tree: &Tree,
    design: &DummyDesign,
    x: &Covariates,
    grid: &CutGrid,
    config: &ProposalConfig,
    node: NodeId,
) -> Result<Proposal> {
    let n_nogs = tree.nog_ids().len();
    if !tree.nog_ids().contains(&node) {
        return Err(Error::InvalidParameter(format!("node {node} is not a nog")));
    }
    death_at(tree, design, x, grid, config, node, n_nogs)
}

/// Apply a proposal to both the tree and its design, fixing up the leaf
/// node ids of freshly born children.
pub fn apply_proposal(tree: &mut Tree, design: &mut DummyDesign, proposal: Proposal) {
    let Proposal {
        kind,
        node,
        leaf_index,
        mut new_design,
        ..
    } = proposal;
    match kind {
        ProposalKind::Birth { rule } => {
            let (l, r) = tree.split_leaf(node, rule, 0.0, 0.0);
            new_design.leaf_nodes[leaf_index] = l;
            new_design.leaf_nodes[leaf_index + 1] = r;
        }
        ProposalKind::Death => {
            tree.prune(node, 0.0);
        }
    }
    *design = new_design;
}
