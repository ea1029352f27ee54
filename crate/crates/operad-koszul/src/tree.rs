//! Colored rooted trees with labeled leaves and orientation bookkeeping.
//!
//! Trees are the combinatorial substrate for free operads and cobar
//! complexes.  A tree has internal vertices with at least two inputs, leaves
//! labeled bijectively by 1..n, a color on every edge, and either a colored
//! output edge or no output at all (the 0/1 case, where the root vertex is
//! an inner-product vertex).
//!
//! Orientation bookkeeping: the edge set of a tree (root edge excluded) is
//! in bijection with its non-root nodes, and the reference orientation of a
//! stored tree is its depth-first pre-order.  Canonical form sorts children
//! by the minimal leaf priority of their subtree.  Every operation that
//! reorders edges reports the parity of the induced edge permutation; this
//! is exactly the Det twist that makes the cobar differential square to
//! zero.

use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Sentinel decoration marking the vertex produced by an edge contraction.
const MERGE_MARK: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    Full,
    Dashed,
}

impl Color {
    pub fn letter(self) -> char {
        match self {
            Color::Full => 'f',
            Color::Dashed => 'd',
        }
    }
}

/// Output of an operation: a color, or no output at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutColor {
    Full,
    Dashed,
    None,
}

impl OutColor {
    pub fn letter(self) -> char {
        match self {
            OutColor::Full => 'f',
            OutColor::Dashed => 'd',
            OutColor::None => 'o',
        }
    }

    pub fn as_color(self) -> Option<Color> {
        match self {
            OutColor::Full => Some(Color::Full),
            OutColor::Dashed => Some(Color::Dashed),
            OutColor::None => None,
        }
    }
}

impl From<Color> for OutColor {
    fn from(c: Color) -> Self {
        match c {
            Color::Full => OutColor::Full,
            Color::Dashed => OutColor::Dashed,
        }
    }
}

/// Input colors plus output kind of an operation or vertex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature {
    pub inputs: Vec<Color>,
    pub output: OutColor,
}

impl Signature {
    pub fn new(inputs: Vec<Color>, output: OutColor) -> Self {
        Signature { inputs, output }
    }

    pub fn all_full(n: usize) -> Self {
        Signature { inputs: vec![Color::Full; n], output: OutColor::Full }
    }

    pub fn arity(&self) -> usize {
        self.inputs.len()
    }

    /// Signature after the leaf relabeling l ↦ σ(l): new input σ(l) is old
    /// input l.
    pub fn permuted(&self, sigma: &Perm) -> Signature {
        let mut inputs = vec![Color::Full; self.inputs.len()];
        for (l0, &c) in self.inputs.iter().enumerate() {
            inputs[sigma.apply(l0 + 1) - 1] = c;
        }
        Signature { inputs, output: self.output }
    }

    /// Signature of the ∘ᵢ composite: slot replaced by the inner inputs.
    pub fn composed_at(&self, slot: usize, inner: &Signature) -> Signature {
        let mut inputs = Vec::with_capacity(self.inputs.len() + inner.inputs.len() - 1);
        inputs.extend_from_slice(&self.inputs[..slot - 1]);
        inputs.extend_from_slice(&inner.inputs);
        inputs.extend_from_slice(&self.inputs[slot..]);
        Signature { inputs, output: self.output }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ins: String = self.inputs.iter().map(|c| c.letter()).collect();
        write!(f, "({};{})", ins, self.output.letter())
    }
}

/// Permutation of {1..n} in one-line notation: `images[i]` = σ(i+1).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Perm {
    images: Vec<usize>,
}

impl Perm {
    pub fn identity(n: usize) -> Self {
        Perm { images: (1..=n).collect() }
    }

    pub fn from_images(images: Vec<usize>) -> Self {
        let mut seen = vec![false; images.len()];
        for &v in &images {
            assert!(v >= 1 && v <= images.len() && !seen[v - 1], "not a permutation");
            seen[v - 1] = true;
        }
        Perm { images }
    }

    /// Transposition (i j) in S_n, 1-based.
    pub fn transposition(n: usize, i: usize, j: usize) -> Self {
        let mut images: Vec<usize> = (1..=n).collect();
        images.swap(i - 1, j - 1);
        Perm { images }
    }

    /// The cycle (1 2 ... n).
    pub fn cycle(n: usize) -> Self {
        if n == 0 {
            return Perm { images: vec![] };
        }
        let mut images: Vec<usize> = (2..=n).collect();
        images.push(1);
        Perm { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.images[i - 1]
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn inverse(&self) -> Perm {
        let mut images = vec![0; self.images.len()];
        for (i, &v) in self.images.iter().enumerate() {
            images[v - 1] = i + 1;
        }
        Perm { images }
    }

    /// Group product: (self ∘ other)(i) = self(other(i)).
    pub fn compose(&self, other: &Perm) -> Perm {
        assert_eq!(self.len(), other.len());
        Perm { images: (1..=self.len()).map(|i| self.apply(other.apply(i))).collect() }
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &v)| v == i + 1)
    }

    pub fn sign(&self) -> i32 {
        perm_parity(&self.images.iter().map(|&v| v - 1).collect::<Vec<_>>())
    }

    /// All n! permutations in lexicographic one-line order.
    pub fn all(n: usize) -> Vec<Perm> {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (1..=n).collect();
        loop {
            out.push(Perm { images: cur.clone() });
            if !next_permutation(&mut cur) {
                break;
            }
        }
        out
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Parity (+1/−1) of a sequence that is a permutation of 0..len-1.
pub fn perm_parity(seq: &[usize]) -> i32 {
    let mut inv = 0usize;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            if seq[i] > seq[j] {
                inv += 1;
            }
        }
    }
    if inv % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Leaf ordering convention: children are sorted by the minimal priority of
/// the leaf labels below them.  The default priority is the label itself;
/// scrambled seeds exist to demonstrate that homology ranks do not depend on
/// this convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafOrder {
    seed: u64,
}

impl LeafOrder {
    pub fn identity() -> Self {
        LeafOrder { seed: 0 }
    }

    pub fn scrambled(seed: u64) -> Self {
        LeafOrder { seed }
    }

    /// Priority of a label; a bijection of 1..=n for every fixed n when the
    /// seed is nonzero, the identity when it is zero.
    pub fn priority_of(&self, label: usize) -> u64 {
        if self.seed == 0 {
            return label as u64;
        }
        // Splitmix-style hash: injective on u64, so distinct labels always
        // get distinct priorities.
        let mut z = (label as u64).wrapping_add(self.seed).wrapping_mul(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("malformed tree: {0}")]
    Malformed(String),
    #[error("color mismatch: {0}")]
    ColorMismatch(String),
    #[error("invalid edge selection: {0}")]
    BadEdge(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Leaf { label: usize },
    Vertex { dec: Option<usize>, children: Vec<(Color, Node)> },
}

impl Node {
    fn node_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Vertex { children, .. } => {
                1 + children.iter().map(|(_, c)| c.node_count()).sum::<usize>()
            }
        }
    }

    fn vertex_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Vertex { children, .. } => {
                1 + children.iter().map(|(_, c)| c.vertex_count()).sum::<usize>()
            }
        }
    }

    fn min_priority(&self, ord: &LeafOrder) -> u64 {
        match self {
            Node::Leaf { label } => ord.priority_of(*label),
            Node::Vertex { children, .. } => {
                children.iter().map(|(_, c)| c.min_priority(ord)).min().unwrap()
            }
        }
    }
}

/// Canonicalization output: the canonical tree, the parity of the induced
/// edge permutation, and for every internal vertex (canonical pre-order) the
/// map sending new child positions to old ones.
#[derive(Debug, Clone)]
pub struct CanonResult {
    pub tree: LabeledTree,
    pub edge_sign: i32,
    pub vertex_perms: Vec<Vec<usize>>,
}

/// Data needed to compose decorations after contracting an internal edge.
#[derive(Debug, Clone)]
pub struct CrunchResult {
    pub canon: CanonResult,
    /// Canonical pre-order index of the vertex produced by the merge.
    pub merged_vertex: usize,
    /// 1-based input slot of the lower vertex that carried the edge.
    pub slot: usize,
    pub lower_dec: Option<usize>,
    pub upper_dec: Option<usize>,
    /// Signature of the lower vertex before the merge (stored child order).
    pub lower_sig: Signature,
    /// Signature of the upper vertex before the merge (stored child order).
    pub upper_sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledTree {
    pub root: Node,
    pub output: OutColor,
}

impl LabeledTree {
    /// The unit tree: a bare leaf labeled 1, no internal vertex.
    pub fn unit(color: Color) -> Self {
        LabeledTree { root: Node::Leaf { label: 1 }, output: color.into() }
    }

    /// A single vertex with leaves 1..n in order.
    pub fn corolla(sig: &Signature, dec: Option<usize>) -> Self {
        assert!(sig.arity() >= 2, "corolla needs at least two inputs");
        let children = sig
            .inputs
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, Node::Leaf { label: i + 1 }))
            .collect();
        LabeledTree { root: Node::Vertex { dec, children }, output: sig.output }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self.root, Node::Leaf { .. })
    }

    pub fn arity(&self) -> usize {
        fn leaves(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Vertex { children, .. } => children.iter().map(|(_, c)| leaves(c)).sum(),
            }
        }
        leaves(&self.root)
    }

    pub fn vertex_count(&self) -> usize {
        self.root.vertex_count()
    }

    /// Number of internal edges = number of internal vertices − 1.
    pub fn internal_edges(&self) -> usize {
        self.vertex_count().saturating_sub(1)
    }

    pub fn signature(&self) -> Result<Signature, TreeError> {
        let mut leaves: Vec<(usize, Color)> = Vec::new();
        fn collect(n: &Node, edge: Option<Color>, out: &mut Vec<(usize, Color)>) -> Result<(), TreeError> {
            match n {
                Node::Leaf { label } => {
                    let c = edge.ok_or_else(|| {
                        TreeError::Malformed("root leaf needs an output color".into())
                    })?;
                    out.push((*label, c));
                    Ok(())
                }
                Node::Vertex { children, .. } => {
                    for (c, ch) in children {
                        collect(ch, Some(*c), out)?;
                    }
                    Ok(())
                }
            }
        }
        collect(&self.root, self.output.as_color(), &mut leaves)?;
        let n = leaves.len();
        let mut inputs: Vec<Option<Color>> = vec![None; n];
        for (label, c) in leaves {
            if label == 0 || label > n {
                return Err(TreeError::Malformed(format!("leaf label {} out of range", label)));
            }
            if inputs[label - 1].is_some() {
                return Err(TreeError::Malformed(format!("duplicate leaf label {}", label)));
            }
            inputs[label - 1] = Some(c);
        }
        Ok(Signature {
            inputs: inputs.into_iter().map(|c| c.unwrap()).collect(),
            output: self.output,
        })
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        fn walk(n: &Node) -> Result<(), TreeError> {
            if let Node::Vertex { children, .. } = n {
                if children.len() < 2 {
                    return Err(TreeError::Malformed(
                        "internal vertex with fewer than two inputs".into(),
                    ));
                }
                for (_, c) in children {
                    walk(c)?;
                }
            }
            Ok(())
        }
        walk(&self.root)?;
        if self.output == OutColor::None && self.is_unit() {
            return Err(TreeError::Malformed("unit tree cannot lack an output".into()));
        }
        self.signature().map(|_| ())
    }

    /// Signatures and decorations of internal vertices in stored pre-order.
    pub fn vertices(&self) -> Vec<(Signature, Option<usize>)> {
        let mut out = Vec::new();
        fn walk(n: &Node, out_color: OutColor, acc: &mut Vec<(Signature, Option<usize>)>) {
            if let Node::Vertex { dec, children } = n {
                let sig = Signature {
                    inputs: children.iter().map(|(c, _)| *c).collect(),
                    output: out_color,
                };
                acc.push((sig, *dec));
                for (c, child) in children {
                    walk(child, (*c).into(), acc);
                }
            }
        }
        walk(&self.root, self.output, &mut out);
        out
    }

    /// Replace the decorations of internal vertices in stored pre-order.
    pub fn with_decorations(&self, decs: &[Option<usize>]) -> LabeledTree {
        fn walk(n: &Node, decs: &[Option<usize>], idx: &mut usize) -> Node {
            match n {
                Node::Leaf { label } => Node::Leaf { label: *label },
                Node::Vertex { children, .. } => {
                    let dec = decs[*idx];
                    *idx += 1;
                    let children = children.iter().map(|(c, ch)| (*c, walk(ch, decs, idx))).collect();
                    Node::Vertex { dec, children }
                }
            }
        }
        let mut idx = 0;
        let root = walk(&self.root, decs, &mut idx);
        assert_eq!(idx, decs.len(), "decoration count mismatch");
        LabeledTree { root, output: self.output }
    }

    /// Strip all decorations, keeping only the shape and labels.
    pub fn shape(&self) -> LabeledTree {
        self.with_decorations(&vec![None; self.vertex_count()])
    }

    /// Canonical form: children of every vertex sorted by minimal leaf
    /// priority.
    pub fn canonicalize(&self, ord: &LeafOrder) -> CanonResult {
        // Pass 1: rebuild sorted, emitting original edge ids (pre-order
        // positions) in the new pre-order.
        fn rec(node: &Node, my_id: Option<usize>, first_child_id: usize, ord: &LeafOrder) -> (Node, u64, Vec<usize>) {
            match node {
                Node::Leaf { label } => {
                    (Node::Leaf { label: *label }, ord.priority_of(*label), my_id.into_iter().collect())
                }
                Node::Vertex { dec, children } => {
                    let mut base = first_child_id;
                    let mut built: Vec<(u64, Color, Node, Vec<usize>)> = Vec::new();
                    for (color, child) in children {
                        let sz = child.node_count();
                        let (n2, minp, ids) = rec(child, Some(base), base + 1, ord);
                        built.push((minp, *color, n2, ids));
                        base += sz;
                    }
                    built.sort_by_key(|(minp, _, _, _)| *minp);
                    let minp = built.first().map(|(m, _, _, _)| *m).unwrap();
                    let mut ids: Vec<usize> = my_id.into_iter().collect();
                    let mut new_children = Vec::with_capacity(built.len());
                    for (_, c, n2, cids) in built {
                        ids.extend(cids);
                        new_children.push((c, n2));
                    }
                    (Node::Vertex { dec: *dec, children: new_children }, minp, ids)
                }
            }
        }
        let (root, _, ids) = rec(&self.root, None, 0, ord);
        let tree = LabeledTree { root, output: self.output };
        let edge_sign = perm_parity(&ids);
        // Pass 2: per-vertex child permutations in canonical pre-order.
        let mut perms = Vec::new();
        fn walk(orig: &Node, ord: &LeafOrder, perms: &mut Vec<Vec<usize>>) {
            if let Node::Vertex { children, .. } = orig {
                let mut keyed: Vec<(u64, usize)> = children
                    .iter()
                    .enumerate()
                    .map(|(i, (_, ch))| (ch.min_priority(ord), i))
                    .collect();
                keyed.sort();
                perms.push(keyed.iter().map(|&(_, i)| i).collect());
                for &(_, old_pos) in &keyed {
                    walk(&children[old_pos].1, ord, perms);
                }
            }
        }
        walk(&self.root, ord, &mut perms);
        CanonResult { tree, edge_sign, vertex_perms: perms }
    }

    pub fn is_canonical(&self, ord: &LeafOrder) -> bool {
        let c = self.canonicalize(ord);
        c.tree == *self
    }

    /// Apply a relabeling l ↦ f(l) to the leaves without re-sorting.
    pub fn relabel(&self, f: &dyn Fn(usize) -> usize) -> LabeledTree {
        fn walk(n: &Node, f: &dyn Fn(usize) -> usize) -> Node {
            match n {
                Node::Leaf { label } => Node::Leaf { label: f(*label) },
                Node::Vertex { dec, children } => Node::Vertex {
                    dec: *dec,
                    children: children.iter().map(|(c, ch)| (*c, walk(ch, f))).collect(),
                },
            }
        }
        LabeledTree { root: walk(&self.root, f), output: self.output }
    }

    /// Leaf relabeling through σ followed by canonicalization.
    pub fn act_permutation(&self, sigma: &Perm, ord: &LeafOrder) -> Result<CanonResult, TreeError> {
        let n = self.arity();
        if sigma.len() != n {
            return Err(TreeError::ColorMismatch(format!(
                "permutation degree {} does not match arity {}",
                sigma.len(),
                n
            )));
        }
        Ok(self.relabel(&|l| sigma.apply(l)).canonicalize(ord))
    }

    /// Graft `other` into leaf `slot` (1-based) of `self`, renumbering leaf
    /// labels by the operadic ∘ᵢ convention.
    ///
    /// Reference orientation of the result: (edges of self minus the grafted
    /// leaf edge, in self order) ++ (edges of other, in other order) ++ (the
    /// new internal edge).  The returned sign converts this reference to the
    /// canonical orientation.
    pub fn graft(&self, slot: usize, other: &LabeledTree, ord: &LeafOrder) -> Result<CanonResult, TreeError> {
        let n1 = self.arity();
        let n2 = other.arity();
        if slot == 0 || slot > n1 {
            return Err(TreeError::BadEdge(format!("slot {} out of range", slot)));
        }
        let sig1 = self.signature()?;
        let oc = other
            .output
            .as_color()
            .ok_or_else(|| TreeError::ColorMismatch("cannot graft a tree without output".into()))?;
        if sig1.inputs[slot - 1] != oc {
            return Err(TreeError::ColorMismatch(format!(
                "input {} has color {}, grafted output has color {}",
                slot,
                sig1.inputs[slot - 1].letter(),
                oc.letter()
            )));
        }
        if other.is_unit() {
            let canon = self.canonicalize(ord);
            return Ok(canon);
        }
        if self.is_unit() {
            return Ok(other.canonicalize(ord));
        }

        let m1 = self.root.node_count() - 1;
        let m2 = other.root.node_count() - 1;
        // Reference positions: self edges except the grafted leaf edge get
        // 0..m1-1 (compacted), other edges m1-1..m1-1+m2-1, new edge last.
        let grafted_leaf_id = find_leaf_edge_id(&self.root, slot)
            .ok_or_else(|| TreeError::BadEdge(format!("leaf {} not found", slot)))?;
        let mut ref_of_self = vec![0usize; m1];
        {
            let mut p = 0;
            for (id, slot_ref) in ref_of_self.iter_mut().enumerate() {
                if id != grafted_leaf_id {
                    *slot_ref = p;
                    p += 1;
                }
            }
        }
        let other_base = m1 - 1;
        let new_edge_pos = m1 - 1 + m2;

        let renumbered_other = other.relabel(&|l| l + slot - 1);
        let self_relabel = |l: usize| {
            if l < slot {
                l
            } else if l > slot {
                l + n2 - 1
            } else {
                l
            }
        };

        // Build grafted tree while emitting reference positions in the new
        // stored pre-order.
        struct St<'a> {
            other: &'a Node,
            slot: usize,
            next_self: usize,
            next_other: usize,
            order: Vec<usize>,
        }
        fn emit_other(n: &Node, st: &mut St<'_>, other_base: usize) -> Node {
            match n {
                Node::Leaf { label } => Node::Leaf { label: *label },
                Node::Vertex { dec, children } => {
                    let mut out = Vec::with_capacity(children.len());
                    for (c, ch) in children {
                        st.order.push(other_base + st.next_other);
                        st.next_other += 1;
                        out.push((*c, emit_other(ch, st, other_base)));
                    }
                    Node::Vertex { dec: *dec, children: out }
                }
            }
        }
        fn build(
            n: &Node,
            relabel: &dyn Fn(usize) -> usize,
            st: &mut St<'_>,
            ref_of_self: &[usize],
            other_base: usize,
            new_edge_pos: usize,
        ) -> Node {
            match n {
                Node::Leaf { label } => Node::Leaf { label: relabel(*label) },
                Node::Vertex { dec, children } => {
                    let mut out = Vec::with_capacity(children.len());
                    for (c, ch) in children {
                        let my_id = st.next_self;
                        st.next_self += 1;
                        let is_target = matches!(ch, Node::Leaf { label } if *label == st.slot);
                        if is_target {
                            st.order.push(new_edge_pos);
                            let other_root = st.other.clone();
                            let sub = match &other_root {
                                Node::Vertex { .. } => {
                                    emit_other(&other_root, st, other_base)
                                }
                                Node::Leaf { .. } => unreachable!("unit grafts handled above"),
                            };
                            out.push((*c, sub));
                        } else {
                            st.order.push(ref_of_self[my_id]);
                            out.push((*c, build(ch, relabel, st, ref_of_self, other_base, new_edge_pos)));
                        }
                        // Descendants of a non-target child were emitted in
                        // the recursive call; adjust the self counter.
                        if !is_target {
                            if let Node::Vertex { .. } = ch {
                                // ids consumed inside the recursion
                            }
                        }
                    }
                    Node::Vertex { dec: *dec, children: out }
                }
            }
        }
        let mut st = St { other: &renumbered_other.root, slot, next_self: 0, next_other: 0, order: Vec::new() };
        let root = build(&self.root, &self_relabel, &mut st, &ref_of_self, other_base, new_edge_pos);
        debug_assert_eq!(st.order.len(), m1 + m2);
        let grafted = LabeledTree { root, output: self.output };
        let pre_sign = perm_parity(&st.order);
        let canon = grafted.canonicalize(ord);
        Ok(CanonResult {
            tree: canon.tree,
            edge_sign: pre_sign * canon.edge_sign,
            vertex_perms: canon.vertex_perms,
        })
    }

    /// Contract the internal edge below the internal vertex with the given
    /// stored pre-order index (root = 0 is rejected: it has no output edge
    /// inside the tree).
    ///
    /// The sign moves the contracted edge to the front of the orientation
    /// before deleting it, then accounts for re-canonicalization.
    pub fn crunch_edge(&self, upper_vertex: usize, ord: &LeafOrder) -> Result<CrunchResult, TreeError> {
        if upper_vertex == 0 {
            return Err(TreeError::BadEdge("cannot crunch the root vertex's output edge".into()));
        }
        if upper_vertex >= self.vertex_count() {
            return Err(TreeError::BadEdge(format!("no internal vertex {}", upper_vertex)));
        }
        // Find the path (child positions from the root) to the target vertex.
        fn find_path(n: &Node, target: usize, idx: &mut usize, path: &mut Vec<usize>) -> bool {
            if let Node::Vertex { children, .. } = n {
                if *idx == target {
                    return true;
                }
                *idx += 1;
                for (pos, (_, ch)) in children.iter().enumerate() {
                    if matches!(ch, Node::Vertex { .. }) {
                        path.push(pos);
                        if find_path(ch, target, idx, path) {
                            return true;
                        }
                        path.pop();
                    }
                }
            }
            false
        }
        let mut idx = 0;
        let mut path = Vec::new();
        if !find_path(&self.root, upper_vertex, &mut idx, &mut path) {
            return Err(TreeError::BadEdge(format!("no internal vertex {}", upper_vertex)));
        }
        debug_assert!(!path.is_empty());

        // Edge id of the target vertex's output edge in stored pre-order.
        let eid = edge_id_at_path(&self.root, &path);

        // Signatures and decorations around the merge.
        let (parent_path, child_pos) = (&path[..path.len() - 1], path[path.len() - 1]);
        let parent = node_at_path(&self.root, parent_path);
        let parent_out = out_color_at_path(self, parent_path);
        let (lower_sig, lower_dec, upper_sig, upper_dec, merged_node) = match parent {
            Node::Vertex { dec, children } => {
                let lower_sig = Signature {
                    inputs: children.iter().map(|(c, _)| *c).collect(),
                    output: parent_out,
                };
                let (ccol, child) = &children[child_pos];
                let (upper_sig, upper_dec, upper_children) = match child {
                    Node::Vertex { dec: ud, children: uc } => (
                        Signature {
                            inputs: uc.iter().map(|(c, _)| *c).collect(),
                            output: (*ccol).into(),
                        },
                        *ud,
                        uc.clone(),
                    ),
                    _ => unreachable!(),
                };
                let mut merged_children = Vec::with_capacity(children.len() + upper_children.len() - 1);
                for (pos, (c, ch)) in children.iter().enumerate() {
                    if pos == child_pos {
                        merged_children.extend(upper_children.iter().cloned());
                    } else {
                        merged_children.push((*c, ch.clone()));
                    }
                }
                let merged = Node::Vertex { dec: Some(MERGE_MARK), children: merged_children };
                (lower_sig, *dec, upper_sig, upper_dec, merged)
            }
            _ => unreachable!(),
        };

        let merged_root = replace_at_path(&self.root, parent_path, &merged_node);
        let merged_tree = LabeledTree { root: merged_root, output: self.output };
        let front_sign = if eid % 2 == 0 { 1 } else { -1 };
        let canon = merged_tree.canonicalize(ord);

        // Locate the merge sentinel in canonical pre-order, then clear it.
        let mut merged_vertex = None;
        for (i, (_, dec)) in canon.tree.vertices().iter().enumerate() {
            if *dec == Some(MERGE_MARK) {
                merged_vertex = Some(i);
            }
        }
        let merged_vertex = merged_vertex.expect("merge sentinel present");
        let mut decs: Vec<Option<usize>> =
            canon.tree.vertices().iter().map(|(_, d)| *d).collect();
        decs[merged_vertex] = None;
        let tree = canon.tree.with_decorations(&decs);

        Ok(CrunchResult {
            canon: CanonResult {
                tree,
                edge_sign: front_sign * canon.edge_sign,
                vertex_perms: canon.vertex_perms,
            },
            merged_vertex,
            slot: child_pos + 1,
            lower_dec,
            upper_dec,
            lower_sig,
            upper_sig,
        })
    }
}

/// Pre-order edge id (over non-root nodes) of the leaf with the given label.
fn find_leaf_edge_id(root: &Node, target: usize) -> Option<usize> {
    fn rec(n: &Node, target: usize, next: &mut usize) -> Option<usize> {
        if let Node::Vertex { children, .. } = n {
            for (_, ch) in children {
                let my_id = *next;
                *next += 1;
                if let Node::Leaf { label } = ch {
                    if *label == target {
                        return Some(my_id);
                    }
                } else if let Some(found) = rec(ch, target, next) {
                    return Some(found);
                }
            }
        }
        None
    }
    let mut next = 0;
    rec(root, target, &mut next)
}

/// Pre-order edge id of the node reached by the given child-position path.
fn edge_id_at_path(root: &Node, path: &[usize]) -> usize {
    fn edges_in(n: &Node) -> usize {
        n.node_count()
    }
    let mut node = root;
    let mut id = 0usize;
    for (depth, &p) in path.iter().enumerate() {
        let children = match node {
            Node::Vertex { children, .. } => children,
            _ => unreachable!(),
        };
        for (q, (_, ch)) in children.iter().enumerate() {
            if q == p {
                if depth == path.len() - 1 {
                    return id;
                }
                id += 1; // this child's own edge
                node = ch;
                break;
            }
            id += edges_in(ch);
        }
    }
    unreachable!()
}

fn node_at_path<'a>(root: &'a Node, path: &[usize]) -> &'a Node {
    let mut cur = root;
    for &p in path {
        match cur {
            Node::Vertex { children, .. } => cur = &children[p].1,
            _ => unreachable!(),
        }
    }
    cur
}

fn out_color_at_path(tree: &LabeledTree, path: &[usize]) -> OutColor {
    if path.is_empty() {
        return tree.output;
    }
    let parent = node_at_path(&tree.root, &path[..path.len() - 1]);
    match parent {
        Node::Vertex { children, .. } => children[path[path.len() - 1]].0.into(),
        _ => unreachable!(),
    }
}

fn replace_at_path(root: &Node, path: &[usize], replacement: &Node) -> Node {
    if path.is_empty() {
        return replacement.clone();
    }
    match root {
        Node::Vertex { dec, children } => {
            let mut out = Vec::with_capacity(children.len());
            for (pos, (c, ch)) in children.iter().enumerate() {
                if pos == path[0] {
                    out.push((*c, replace_at_path(ch, &path[1..], replacement)));
                } else {
                    out.push((*c, ch.clone()));
                }
            }
            Node::Vertex { dec: *dec, children: out }
        }
        _ => unreachable!(),
    }
}

impl fmt::Display for LabeledTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match n {
                Node::Leaf { label } => write!(f, "{}", label),
                Node::Vertex { dec, children } => {
                    write!(f, "(")?;
                    for (i, (c, ch)) in children.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{}:", c.letter())?;
                        walk(ch, f)?;
                    }
                    write!(f, ")")?;
                    if let Some(d) = dec {
                        write!(f, "@{}", d)?;
                    }
                    Ok(())
                }
            }
        }
        walk(&self.root, f)?;
        write!(f, "->{}", self.output.letter())
    }
}

/// All isomorphism classes of trees of the given type with exactly
/// `internal_edges` internal edges and every vertex signature accepted by
/// `vertex_ok`.  Deterministic order; decorations unset.
pub fn enumerate_trees(
    sig: &Signature,
    internal_edges: usize,
    vertex_ok: &dyn Fn(&Signature) -> bool,
) -> Vec<LabeledTree> {
    let n = sig.arity();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        if internal_edges == 0 {
            if let Some(c) = sig.output.as_color() {
                if sig.inputs[0] == c {
                    return vec![LabeledTree::unit(c)];
                }
            }
        }
        return Vec::new();
    }
    let labels: Vec<usize> = (1..=n).collect();
    build_subtrees(&labels, sig, internal_edges + 1, sig.output, vertex_ok)
        .into_iter()
        .map(|node| LabeledTree { root: node, output: sig.output })
        .collect()
}

/// Enumerate restricted to a finite set of allowed vertex signatures.
pub fn enumerate_trees_in(
    sig: &Signature,
    internal_edges: usize,
    vertex_types: &BTreeSet<Signature>,
) -> Vec<LabeledTree> {
    enumerate_trees(sig, internal_edges, &|s| vertex_types.contains(s))
}

enum ChildSpec<'a> {
    Leaf(usize),
    Sub(&'a [usize], usize, Color),
}

/// Trees over the given leaf label multiset with exactly `vertices` internal
/// vertices, rooted at a vertex with output kind `out`.
fn build_subtrees(
    labels: &[usize],
    sig: &Signature,
    vertices: usize,
    out: OutColor,
    vertex_ok: &dyn Fn(&Signature) -> bool,
) -> Vec<Node> {
    let mut results = Vec::new();
    if labels.len() < 2 || vertices == 0 {
        return results;
    }
    for r in 2..=labels.len() {
        for partition in partitions_sorted(labels, r) {
            let sub_blocks: Vec<usize> = (0..r).filter(|&i| partition[i].len() >= 2).collect();
            if vertices < 1 + sub_blocks.len() && !sub_blocks.is_empty() {
                continue;
            }
            for dist in compositions(vertices - 1, sub_blocks.len()) {
                for colors in color_assignments(sub_blocks.len()) {
                    let mut specs: Vec<ChildSpec<'_>> = Vec::with_capacity(r);
                    let mut si = 0;
                    for block in &partition {
                        if block.len() == 1 {
                            specs.push(ChildSpec::Leaf(block[0]));
                        } else {
                            specs.push(ChildSpec::Sub(block, dist[si], colors[si]));
                            si += 1;
                        }
                    }
                    let vsig = Signature {
                        inputs: specs
                            .iter()
                            .map(|s| match s {
                                ChildSpec::Leaf(l) => sig.inputs[*l - 1],
                                ChildSpec::Sub(_, _, c) => *c,
                            })
                            .collect(),
                        output: out,
                    };
                    if !vertex_ok(&vsig) {
                        continue;
                    }
                    expand_children(&specs, sig, 0, &mut Vec::new(), &mut results, vertex_ok);
                }
            }
        }
    }
    results
}

fn expand_children(
    specs: &[ChildSpec<'_>],
    sig: &Signature,
    idx: usize,
    acc: &mut Vec<(Color, Node)>,
    results: &mut Vec<Node>,
    vertex_ok: &dyn Fn(&Signature) -> bool,
) {
    if idx == specs.len() {
        results.push(Node::Vertex { dec: None, children: acc.clone() });
        return;
    }
    match &specs[idx] {
        ChildSpec::Leaf(label) => {
            acc.push((sig.inputs[*label - 1], Node::Leaf { label: *label }));
            expand_children(specs, sig, idx + 1, acc, results, vertex_ok);
            acc.pop();
        }
        ChildSpec::Sub(block, vcount, color) => {
            for sub in build_subtrees(block, sig, *vcount, (*color).into(), vertex_ok) {
                acc.push((*color, sub));
                expand_children(specs, sig, idx + 1, acc, results, vertex_ok);
                acc.pop();
            }
        }
    }
}

/// Partitions of the sorted label slice into `r` nonempty blocks, each block
/// sorted, blocks ordered by minimum.
fn partitions_sorted(labels: &[usize], r: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    fn rec(labels: &[usize], idx: usize, r: usize, blocks: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if idx == labels.len() {
            if blocks.len() == r {
                out.push(blocks.clone());
            }
            return;
        }
        let remaining = labels.len() - idx;
        if blocks.len() > r || remaining < r.saturating_sub(blocks.len()) {
            return;
        }
        let label = labels[idx];
        for b in 0..blocks.len() {
            blocks[b].push(label);
            rec(labels, idx + 1, r, blocks, out);
            blocks[b].pop();
        }
        if blocks.len() < r {
            blocks.push(vec![label]);
            rec(labels, idx + 1, r, blocks, out);
            blocks.pop();
        }
    }
    rec(labels, 0, r, &mut Vec::new(), &mut out);
    out
}

/// Compositions of n into k parts, each part ≥ 1.
fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return if n == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    fn rec(n: usize, k: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            if n >= 1 {
                acc.push(n);
                out.push(acc.clone());
                acc.pop();
            }
            return;
        }
        if n < k {
            return;
        }
        for first in 1..=(n - (k - 1)) {
            acc.push(first);
            rec(n - first, k - 1, acc, out);
            acc.pop();
        }
    }
    rec(n, k, &mut Vec::new(), &mut out);
    out
}

fn color_assignments(k: usize) -> Vec<Vec<Color>> {
    (0..(1usize << k))
        .map(|bits| {
            (0..k)
                .map(|i| if bits & (1 << i) == 0 { Color::Full } else { Color::Dashed })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn full_binary() -> impl Fn(&Signature) -> bool {
        |s: &Signature| {
            s.arity() == 2
                && s.inputs.iter().all(|&c| c == Color::Full)
                && s.output == OutColor::Full
        }
    }

    fn ord() -> LeafOrder {
        LeafOrder::identity()
    }

    #[test]
    fn corolla_is_unique_tree_without_internal_edges() {
        let sig = Signature::all_full(3);
        let ts = enumerate_trees(&sig, 0, &|_| true);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0], LabeledTree::corolla(&sig, None));
    }

    #[test]
    fn binary_tree_counts_are_double_factorials() {
        // (2n−3)!! binary shapes with n labeled leaves
        let expect = [(2usize, 1usize), (3, 3), (4, 15), (5, 105), (6, 945)];
        for (n, count) in expect {
            let sig = Signature::all_full(n);
            let ts = enumerate_trees(&sig, n - 2, &full_binary());
            assert_eq!(ts.len(), count, "n = {}", n);
            for t in &ts {
                assert!(t.is_canonical(&ord()), "enumerated tree not canonical: {}", t);
                assert_eq!(t.signature().unwrap(), sig);
            }
        }
    }

    #[test]
    fn three_leaf_one_edge_trees() {
        let sig = Signature::all_full(3);
        let ts = enumerate_trees(&sig, 1, &full_binary());
        assert_eq!(ts.len(), 3);
    }

    #[test]
    fn canonicalize_idempotent() {
        let sig = Signature::all_full(4);
        for t in enumerate_trees(&sig, 2, &full_binary()) {
            let c = t.canonicalize(&ord());
            assert_eq!(c.tree, t);
            assert_eq!(c.edge_sign, 1);
        }
    }

    #[test]
    fn canonicalize_swapped_children_sign() {
        // Root with children (leaf 3, vertex(1,2)): canonical form moves the
        // vertex first.  Edge ids in stored order: leaf3 = 0, vertex = 1,
        // leaf1 = 2, leaf2 = 3; new order = (1,2,3,0), three inversions.
        let inner = Node::Vertex {
            dec: None,
            children: vec![
                (Color::Full, Node::Leaf { label: 1 }),
                (Color::Full, Node::Leaf { label: 2 }),
            ],
        };
        let t = LabeledTree {
            root: Node::Vertex {
                dec: None,
                children: vec![(Color::Full, Node::Leaf { label: 3 }), (Color::Full, inner)],
            },
            output: OutColor::Full,
        };
        let c = t.canonicalize(&ord());
        assert_eq!(c.edge_sign, -1);
        assert!(c.tree.is_canonical(&ord()));
        assert_eq!(c.vertex_perms[0], vec![1, 0]);
    }

    #[test]
    fn action_composes_with_multiplied_signs() {
        for n in 2..=4 {
            let sig = Signature::all_full(n);
            let trees = enumerate_trees(&sig, n - 2, &full_binary());
            for t in trees.iter().take(4) {
                for s in Perm::all(n) {
                    for u in Perm::all(n) {
                        let tu = t.act_permutation(&u, &ord()).unwrap();
                        let ts_u = tu.tree.act_permutation(&s, &ord()).unwrap();
                        let su = s.compose(&u);
                        let t_su = t.act_permutation(&su, &ord()).unwrap();
                        assert_eq!(ts_u.tree, t_su.tree);
                        assert_eq!(tu.edge_sign * ts_u.edge_sign, t_su.edge_sign);
                    }
                }
            }
        }
    }

    #[test]
    fn graft_unit_is_identity() {
        let sig = Signature::all_full(2);
        let c = LabeledTree::corolla(&sig, Some(0));
        let r = c.graft(1, &LabeledTree::unit(Color::Full), &ord()).unwrap();
        assert_eq!(r.tree, c);
        assert_eq!(r.edge_sign, 1);
        let r = LabeledTree::unit(Color::Full).graft(1, &c, &ord()).unwrap();
        assert_eq!(r.tree, c);
        assert_eq!(r.edge_sign, 1);
    }

    #[test]
    fn graft_corollas_gives_left_comb() {
        let sig = Signature::all_full(2);
        let c = LabeledTree::corolla(&sig, None);
        let r = c.graft(1, &c, &ord()).unwrap();
        // left comb: ((1,2),3)
        let expected = LabeledTree {
            root: Node::Vertex {
                dec: None,
                children: vec![
                    (
                        Color::Full,
                        Node::Vertex {
                            dec: None,
                            children: vec![
                                (Color::Full, Node::Leaf { label: 1 }),
                                (Color::Full, Node::Leaf { label: 2 }),
                            ],
                        },
                    ),
                    (Color::Full, Node::Leaf { label: 3 }),
                ],
            },
            output: OutColor::Full,
        };
        assert_eq!(r.tree, expected);
        assert_eq!(r.tree.arity(), 3);
    }

    #[test]
    fn graft_color_mismatch_rejected() {
        let dashed_in = Signature::new(vec![Color::Dashed, Color::Full], OutColor::Full);
        let t1 = LabeledTree::corolla(&dashed_in, None);
        let full_out = LabeledTree::corolla(&Signature::all_full(2), None);
        assert!(t1.graft(1, &full_out, &ord()).is_err());
        assert!(t1.graft(2, &full_out, &ord()).is_ok());
    }

    #[test]
    fn crunch_three_leaf_tree_to_corolla() {
        let sig = Signature::all_full(2);
        let c = LabeledTree::corolla(&sig, None);
        let comb = c.graft(1, &c, &ord()).unwrap().tree;
        let r = comb.crunch_edge(1, &ord()).unwrap();
        assert_eq!(r.canon.tree.shape(), LabeledTree::corolla(&Signature::all_full(3), None));
        assert_eq!(r.slot, 1);
        assert_eq!(r.canon.edge_sign, 1);
    }

    #[test]
    fn double_contractions_cancel() {
        // For every tree with ≥ 2 internal edges, the signed sum of double
        // contractions over ordered pairs of distinct edges vanishes.
        for n in [4usize, 5] {
            let sig = Signature::all_full(n);
            for t in enumerate_trees(&sig, n - 2, &full_binary()) {
                let mut acc: BTreeMap<LabeledTree, i32> = BTreeMap::new();
                let vcount = t.vertex_count();
                for v1 in 1..vcount {
                    let r1 = t.crunch_edge(v1, &ord()).unwrap();
                    let t1 = &r1.canon.tree;
                    for v2 in 1..t1.vertex_count() {
                        let r2 = t1.crunch_edge(v2, &ord()).unwrap();
                        let sign = r1.canon.edge_sign * r2.canon.edge_sign;
                        *acc.entry(r2.canon.tree.shape()).or_insert(0) += sign;
                    }
                }
                for (tree, total) in acc {
                    assert_eq!(total, 0, "uncancelled double contraction at {}", tree);
                }
            }
        }
    }

    #[test]
    fn crunch_preserves_type() {
        let sig = Signature::new(
            vec![Color::Dashed, Color::Full, Color::Full, Color::Dashed],
            OutColor::None,
        );
        for t in enumerate_trees(&sig, 1, &|_| true) {
            for v in 1..t.vertex_count() {
                let r = t.crunch_edge(v, &ord()).unwrap();
                assert_eq!(r.canon.tree.signature().unwrap(), sig);
            }
        }
    }

    #[test]
    fn scrambled_leaf_order_still_canonicalizes_consistently() {
        let alt = LeafOrder::scrambled(7);
        let sig = Signature::all_full(4);
        for t in enumerate_trees(&sig, 2, &full_binary()) {
            let c = t.canonicalize(&alt);
            // idempotence under the alternative order
            let c2 = c.tree.canonicalize(&alt);
            assert_eq!(c2.tree, c.tree);
            assert_eq!(c2.edge_sign, 1);
        }
    }

    #[test]
    fn unit_tree_signature() {
        let u = LabeledTree::unit(Color::Dashed);
        let s = u.signature().unwrap();
        assert_eq!(s.inputs, vec![Color::Dashed]);
        assert_eq!(s.output, OutColor::Dashed);
    }
}
