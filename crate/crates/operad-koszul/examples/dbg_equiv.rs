use operad_koszul::lie::*;
use operad_koszul::linalg::*;
use operad_koszul::pd::*;
use num::traits::Zero;

fn theta(lie: &FreeLie, t: &TensorElt) -> TensorElt {
    let mut out = TensorElt::new();
    for (w, c) in t {
        // graded reversal: sign = product over pairs of odd degrees
        let mut sign = 1i64;
        for i in 0..w.len() {
            for j in (i + 1)..w.len() {
                if lie.degrees[w[i]] % 2 != 0 && lie.degrees[w[j]] % 2 != 0 {
                    sign = -sign;
                }
            }
        }
        let rev: Vec<usize> = w.iter().rev().cloned().collect();
        let e = out.entry(rev).or_insert_with(Rat::zero);
        *e += c * rat(sign);
    }
    out.retain(|_, c| !c.is_zero());
    out
}

fn main() {
    let c = SimplicialComplex::parse("simplex 0 1 2\n").unwrap();
    let (lie, tower, _) = extend_homotopy_comm(&c, 4).unwrap();
    for (k, parts) in &tower.parts {
        let want: i64 = if (k - 1) % 2 == 0 { 1 } else { -1 };
        let mut eigen = true;
        for t in parts {
            let th = theta(&lie, t);
            let mut diff = th.clone();
            tensor_add(&mut diff, t, &rat(-want));
            if !diff.is_empty() {
                eigen = false;
            }
        }
        println!("d_{}: θ-eigenvalue (−1)^{} holds: {}", k, k - 1, eigen);
    }
}
