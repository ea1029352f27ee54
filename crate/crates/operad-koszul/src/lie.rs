//! Free graded Lie algebras on a finite graded generator set, realized
//! inside the tensor algebra.
//!
//! Elements are sparse tensors keyed by generator words; the graded bracket
//! is the graded commutator.  Monomial-degree components L_k carry a
//! Lyndon-word basis (standard bracketings of Lyndon words, plus squares of
//! odd-degree Lyndon words, the characteristic-0 super refinement), which is
//! cross-checked against brute-force bracket spanning.

use crate::linalg::{ExactMatrix, Rat, SparseVec};
use num::traits::{One, Zero};
use std::collections::BTreeMap;

/// Sparse element of the tensor algebra: word → coefficient.
pub type TensorElt = BTreeMap<Vec<usize>, Rat>;

pub fn tensor_add(dst: &mut TensorElt, src: &TensorElt, scale: &Rat) {
    for (w, c) in src {
        let e = dst.entry(w.clone()).or_insert_with(Rat::zero);
        *e += c * scale;
        if e.is_zero() {
            dst.remove(w);
        }
    }
}

pub fn tensor_is_zero(t: &TensorElt) -> bool {
    t.is_empty()
}

/// Free graded Lie algebra on generators with the given (suspended)
/// degrees, truncated at monomial degree `max_word`.
#[derive(Debug, Clone)]
pub struct FreeLie {
    pub degrees: Vec<i64>,
    pub max_word: usize,
}

impl FreeLie {
    pub fn new(degrees: Vec<i64>, max_word: usize) -> Self {
        FreeLie { degrees, max_word }
    }

    pub fn word_degree(&self, w: &[usize]) -> i64 {
        w.iter().map(|&g| self.degrees[g]).sum()
    }

    fn elt_degree(&self, t: &TensorElt) -> Option<i64> {
        let mut deg = None;
        for w in t.keys() {
            let d = self.word_degree(w);
            match deg {
                None => deg = Some(d),
                Some(e) => assert_eq!(e, d, "inhomogeneous tensor element"),
            }
        }
        deg
    }

    /// Graded commutator [x, y] = x⊗y − (−1)^{|x||y|} y⊗x.
    pub fn bracket(&self, x: &TensorElt, y: &TensorElt) -> TensorElt {
        let mut out = TensorElt::new();
        let dx = match self.elt_degree(x) {
            Some(d) => d,
            None => return out,
        };
        let dy = match self.elt_degree(y) {
            Some(d) => d,
            None => return out,
        };
        let sign = if (dx * dy) % 2 != 0 { -1i64 } else { 1 };
        for (wx, cx) in x {
            for (wy, cy) in y {
                let mut fwd = wx.clone();
                fwd.extend_from_slice(wy);
                let e = out.entry(fwd).or_insert_with(Rat::zero);
                *e += cx * cy;
                let mut bwd = wy.clone();
                bwd.extend_from_slice(wx);
                let e = out.entry(bwd).or_insert_with(Rat::zero);
                *e -= cx * cy * Rat::from_integer(sign.into());
            }
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    /// Lyndon words of the given length over the allowed generator subset
    /// (ascending order), in lexicographic order.
    pub fn lyndon_words(&self, gens: &[usize], len: usize) -> Vec<Vec<usize>> {
        // Duval's algorithm restricted to the subset alphabet.
        let k = gens.len();
        if k == 0 || len == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut w = vec![0usize];
        loop {
            if w.len() == len {
                out.push(w.iter().map(|&i| gens[i]).collect());
            }
            // extend periodically to length `len`
            let base = w.clone();
            while w.len() < len {
                w.push(base[(w.len()) % base.len()]);
            }
            // backtrack
            while let Some(&last) = w.last() {
                if last == k - 1 {
                    w.pop();
                } else {
                    break;
                }
            }
            match w.last_mut() {
                None => break,
                Some(last) => *last += 1,
            }
        }
        out
    }

    /// Standard (right) Lyndon bracketing of a Lyndon word.
    pub fn lyndon_bracketing(&self, word: &[usize]) -> TensorElt {
        if word.len() == 1 {
            let mut t = TensorElt::new();
            t.insert(word.to_vec(), Rat::one());
            return t;
        }
        // standard factorization w = u·v with v the longest proper Lyndon
        // suffix
        let n = word.len();
        let mut split = n - 1;
        for s in 1..n {
            if is_lyndon(&word[s..]) {
                split = s;
                break;
            }
        }
        let left = self.lyndon_bracketing(&word[..split]);
        let right = self.lyndon_bracketing(&word[split..]);
        self.bracket(&left, &right)
    }

    /// Basis of L_len over the generator subset: bracketed Lyndon words plus
    /// squares [b(w), b(w)] of odd-degree Lyndon words of half the length.
    pub fn basis(&self, gens: &[usize], len: usize) -> Vec<TensorElt> {
        let mut out: Vec<TensorElt> = self
            .lyndon_words(gens, len)
            .into_iter()
            .map(|w| self.lyndon_bracketing(&w))
            .collect();
        if len % 2 == 0 {
            for w in self.lyndon_words(gens, len / 2) {
                if self.word_degree(&w) % 2 != 0 {
                    let b = self.lyndon_bracketing(&w);
                    out.push(self.bracket(&b, &b));
                }
            }
        }
        out
    }

    /// Index of tensor words of the given length over a generator subset.
    pub fn word_index(&self, gens: &[usize], len: usize) -> (Vec<Vec<usize>>, BTreeMap<Vec<usize>, usize>) {
        let mut words = Vec::new();
        let mut cur = vec![0usize; len];
        if len == 0 || gens.is_empty() {
            return (words, BTreeMap::new());
        }
        loop {
            words.push(cur.iter().map(|&i| gens[i]).collect::<Vec<usize>>());
            let mut k = len;
            loop {
                if k == 0 {
                    let index = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
                    return (words, index);
                }
                k -= 1;
                cur[k] += 1;
                if cur[k] < gens.len() {
                    break;
                }
                cur[k] = 0;
            }
        }
    }

    /// Sparse coordinates of a tensor element in a word index.
    pub fn coords(&self, t: &TensorElt, index: &BTreeMap<Vec<usize>, usize>) -> SparseVec {
        let mut v = SparseVec::new();
        for (w, c) in t {
            let i = *index.get(w).expect("word in index");
            v.add_to(i, c.clone());
        }
        v
    }

    /// Matrix whose columns are the L_len-basis vectors in word coordinates.
    pub fn basis_matrix(&self, gens: &[usize], len: usize) -> (Vec<TensorElt>, ExactMatrix) {
        let basis = self.basis(gens, len);
        let (words, index) = self.word_index(gens, len);
        let mut m = ExactMatrix::zero(words.len(), basis.len());
        for (j, b) in basis.iter().enumerate() {
            for (i, c) in self.coords(b, &index).entries {
                m.set(i, j, c);
            }
        }
        (basis, m)
    }
}

pub fn is_lyndon(w: &[usize]) -> bool {
    if w.is_empty() {
        return false;
    }
    for s in 1..w.len() {
        if w[s..] <= *w {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rat;

    #[test]
    fn lyndon_counts_two_letters() {
        let l = FreeLie::new(vec![0, 0], 6);
        let gens = [0usize, 1];
        // necklace polynomial values for a 2-letter alphabet
        let expect = [2usize, 1, 2, 3, 6, 9];
        for (len, &e) in (1..=6).zip(expect.iter()) {
            assert_eq!(l.lyndon_words(&gens, len).len(), e, "length {}", len);
        }
    }

    #[test]
    fn bracketing_of_simple_word() {
        let l = FreeLie::new(vec![0, 0], 4);
        let b = l.lyndon_bracketing(&[0, 1]);
        // [x, y] = xy − yx for even generators
        assert_eq!(b.get(&vec![0, 1]).cloned().unwrap(), rat(1));
        assert_eq!(b.get(&vec![1, 0]).cloned().unwrap(), rat(-1));
    }

    #[test]
    fn even_generator_dimensions_match_witt() {
        // dim L_k of the free (even) Lie algebra on 2 generators: Witt
        // numbers 2, 1, 2, 3
        let l = FreeLie::new(vec![0, 0], 4);
        let gens = [0usize, 1];
        let expect = [2usize, 1, 2, 3];
        for (k, &e) in (1..=4).zip(expect.iter()) {
            let (_, m) = l.basis_matrix(&gens, k);
            assert_eq!(m.cols, e, "basis size at length {}", k);
            assert_eq!(m.rank(), e, "independence at length {}", k);
        }
    }

    #[test]
    fn odd_generator_has_nonzero_square() {
        // one odd generator x: L₁ = ⟨x⟩, L₂ = ⟨[x,x]⟩, L₃ = ⟨[x,[x,x]]⟩ = 0?
        // For a single odd generator: [x,x] = 2x⊗x ≠ 0 and [[x,x],x] = 0.
        let l = FreeLie::new(vec![1], 3);
        let gens = [0usize];
        let (_, m2) = l.basis_matrix(&gens, 2);
        assert_eq!(m2.rank(), 1, "odd square survives");
        let x = l.lyndon_bracketing(&[0]);
        let xx = l.bracket(&x, &x);
        assert_eq!(xx.get(&vec![0, 0]).cloned().unwrap(), rat(2));
        let xxx = l.bracket(&xx, &x);
        assert!(tensor_is_zero(&xxx), "graded Jacobi kills [[x,x],x]");
    }

    #[test]
    fn brute_force_span_matches_lyndon_basis() {
        // brute-force bracket spanning oracle: left-normed brackets span L_k
        // with the same rank as the Lyndon basis, for mixed degrees
        let l = FreeLie::new(vec![0, 1, 1], 4);
        let gens = [0usize, 1, 2];
        for k in 1..=4usize {
            let (words, index) = l.word_index(&gens, k);
            // left-normed brackets [..[[g1,g2],g3]..] over all sequences
            let mut sp = crate::linalg::RowSpace::new(words.len());
            let mut seqs = vec![vec![]];
            for _ in 0..k {
                let mut next = Vec::new();
                for s in &seqs {
                    for &g in &gens {
                        let mut t = s.clone();
                        t.push(g);
                        next.push(t);
                    }
                }
                seqs = next;
            }
            for s in &seqs {
                let mut acc = l.lyndon_bracketing(&s[..1]);
                for &g in &s[1..] {
                    let gelt = l.lyndon_bracketing(&[g]);
                    acc = l.bracket(&acc, &gelt);
                }
                sp.insert(l.coords(&acc, &index));
            }
            let (_, m) = l.basis_matrix(&gens, k);
            assert_eq!(m.rank(), m.cols, "Lyndon basis independent at k={}", k);
            assert_eq!(sp.rank(), m.cols, "spanning rank equals basis size at k={}", k);
        }
    }
}
