//! Homotopy algebras, modules, dual modules and inner products on
//! finite-dimensional graded spaces.
//!
//! Structures are coefficient towers over the dual operad table: a
//! derivation tower d encodes maps sA* → (O!(r) ⊗ (sA*)^⊗r)_{S_r}, module
//! towers g, h, f add a distinguished last slot.  All checkers compute the
//! exact residual tensors of the defining identities, truncated at a
//! configured operation arity; an empty residual certifies the identity up
//! to that arity.
//!
//! Sign conventions: the Koszul rule over suspended degrees |sa*| = 1 − |a|,
//! |sm| = |m| + 1, |sm*| = 1 − |m|; the rotation signs of the dual-module
//! construction use the suspended block degrees of the two sides of the
//! diagram.

use crate::cyclic::CyclicStructure;
use crate::linalg::{Rat, SparseVec};
use crate::operad::{OperadError, OperadTable};
use crate::tree::{Perm, Signature};
use num::traits::Zero;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HomotopyError {
    #[error("invalid structure: {0}")]
    Invalid(String),
    #[error(transparent)]
    Operad(#[from] OperadError),
}

/// Basis of a graded vector space; `degrees[i]` is the internal degree of
/// basis element i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradedSpace {
    pub names: Vec<String>,
    pub degrees: Vec<i64>,
}

impl GradedSpace {
    pub fn ungraded(names: Vec<String>) -> Self {
        let n = names.len();
        GradedSpace { names, degrees: vec![0; n] }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

/// Which tower a tensor belongs to: determines the degree conventions of the
/// source and module slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TowerKind {
    /// d: sA* → O!(r) ⊗ (sA*)^⊗r, degree +1
    Derivation,
    /// g: sM* → O!(r) ⊗ (sA*)^⊗(r−1) ⊗ sM*, degree +1
    ModuleDerivation,
    /// h: sM → O!(r) ⊗ (sA*)^⊗(r−1) ⊗ sM, degree +1
    DualModuleDerivation,
    /// f: sM → O!(r) ⊗ (sA*)^⊗(r−1) ⊗ sM*, degree 0
    ModuleMap,
}

impl TowerKind {
    pub fn has_module_slot(self) -> bool {
        !matches!(self, TowerKind::Derivation)
    }

    pub fn expected_degree(self) -> i64 {
        match self {
            TowerKind::ModuleMap => 0,
            _ => 1,
        }
    }
}

/// One coefficient entry: source basis index, operation basis index, the
/// algebra-slot indices, and the module slot when the tower has one.
pub type TKey = (usize, usize, Vec<usize>, Option<usize>);

/// Coefficient tower, grouped by operation arity.
#[derive(Debug, Clone, Default)]
pub struct Tower {
    pub entries: BTreeMap<usize, BTreeMap<TKey, Rat>>,
}

impl Tower {
    pub fn new() -> Self {
        Tower::default()
    }

    pub fn add(&mut self, arity: usize, key: TKey, coeff: Rat) {
        if coeff.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.entries.entry(arity).or_default().entry(key) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += coeff;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            Entry::Vacant(e) => {
                e.insert(coeff);
            }
        }
        if self.entries.get(&arity).map(|m| m.is_empty()).unwrap_or(false) {
            self.entries.remove(&arity);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|m| m.is_empty())
    }

    pub fn support(&self) -> Vec<(usize, TKey)> {
        let mut out = Vec::new();
        for (r, m) in &self.entries {
            for k in m.keys() {
                out.push((*r, k.clone()));
            }
        }
        out
    }
}

/// Shared context: the dual table O!, its cyclic structure, the underlying
/// graded spaces and the truncation arity.
pub struct HomotopyContext<'a> {
    pub dual_table: &'a OperadTable,
    pub dual_cyclic: &'a CyclicStructure,
    pub algebra: GradedSpace,
    pub module: GradedSpace,
    pub max_arity: usize,
}

impl<'a> HomotopyContext<'a> {
    fn op_dim(&self, arity: usize) -> usize {
        self.dual_table.dim(&Signature::all_full(arity))
    }

    fn deg_sa(&self, i: usize) -> i64 {
        1 - self.algebra.degrees[i]
    }

    fn deg_src(&self, kind: TowerKind, i: usize) -> i64 {
        match kind {
            TowerKind::Derivation => 1 - self.algebra.degrees[i],
            TowerKind::ModuleDerivation => 1 - self.module.degrees[i],
            TowerKind::DualModuleDerivation | TowerKind::ModuleMap => self.module.degrees[i] + 1,
        }
    }

    fn deg_mslot(&self, kind: TowerKind, i: usize) -> i64 {
        match kind {
            TowerKind::Derivation => unreachable!("derivations have no module slot"),
            TowerKind::ModuleDerivation | TowerKind::ModuleMap => 1 - self.module.degrees[i],
            TowerKind::DualModuleDerivation => self.module.degrees[i] + 1,
        }
    }

    /// Suspended degrees of all slots of an entry, module slot last.
    fn slot_degrees(&self, kind: TowerKind, key: &TKey) -> Vec<i64> {
        let mut out: Vec<i64> = key.2.iter().map(|&i| self.deg_sa(i)).collect();
        if let Some(m) = key.3 {
            out.push(self.deg_mslot(kind, m));
        }
        out
    }

    fn entry_degree(&self, kind: TowerKind, key: &TKey) -> i64 {
        self.slot_degrees(kind, key).iter().sum::<i64>() - self.deg_src(kind, key.0)
    }

    /// Validate degree homogeneity and coinvariance of a tower.
    pub fn validate(&self, kind: TowerKind, tower: &Tower) -> Result<(), HomotopyError> {
        for (r, m) in &tower.entries {
            if *r > self.max_arity {
                return Err(HomotopyError::Invalid(format!(
                    "tower entry of arity {} beyond the truncation {}",
                    r, self.max_arity
                )));
            }
            for (key, _) in m.iter() {
                if key.1 >= self.op_dim(*r) {
                    return Err(HomotopyError::Invalid(format!(
                        "operation index {} out of range at arity {}",
                        key.1, r
                    )));
                }
                let expected_args = if kind.has_module_slot() { r - 1 } else { *r };
                if key.2.len() != expected_args || kind.has_module_slot() != key.3.is_some() {
                    return Err(HomotopyError::Invalid("slot shape mismatch".into()));
                }
                let d = self.entry_degree(kind, key);
                if d != kind.expected_degree() {
                    return Err(HomotopyError::Invalid(format!(
                        "entry of degree {} in a degree-{} tower",
                        d,
                        kind.expected_degree()
                    )));
                }
            }
        }
        let sym = self.symmetrize(kind, tower);
        if !self.towers_equal(tower, &sym) {
            return Err(HomotopyError::Invalid(
                "tower is not invariant under the coinvariance projector".into(),
            ));
        }
        Ok(())
    }

    fn towers_equal(&self, a: &Tower, b: &Tower) -> bool {
        let mut diff = a.clone();
        for (r, m) in &b.entries {
            for (k, c) in m {
                diff.add(*r, k.clone(), -c.clone());
            }
        }
        diff.is_zero()
    }

    /// Coinvariance projector: average over the symmetric group permuting
    /// the algebra slots (all slots for derivations), acting on the
    /// operation by the corresponding block permutation and on coefficients
    /// by the Koszul sign of the slot shuffle.
    pub fn symmetrize(&self, kind: TowerKind, tower: &Tower) -> Tower {
        let mut out = Tower::new();
        for (&r, m) in &tower.entries {
            let a_slots = if kind.has_module_slot() { r - 1 } else { r };
            let perms = Perm::all(a_slots);
            let norm = Rat::new(1.into(), (perms.len() as i64).into());
            for (key, coeff) in m {
                for sigma in &perms {
                    // extend σ to the full slot set fixing the module slot
                    let full_sigma = if kind.has_module_slot() {
                        let mut images: Vec<usize> = (1..=a_slots).map(|i| sigma.apply(i)).collect();
                        images.push(r);
                        Perm::from_images(images)
                    } else {
                        sigma.clone()
                    };
                    let degrees = self.slot_degrees(kind, key);
                    let ksign = koszul_perm_sign(&degrees, &full_sigma);
                    // new args: slot σ(i) carries old arg i
                    let mut new_args = vec![0usize; a_slots];
                    for (i, &arg) in key.2.iter().enumerate() {
                        new_args[sigma.apply(i + 1) - 1] = arg;
                    }
                    let (_, op_vec) = self
                        .dual_table
                        .act(&Signature::all_full(r), &full_sigma, &SparseVec::unit(key.1))
                        .expect("action within realized range");
                    for (op2, c2) in &op_vec.entries {
                        out.add(
                            r,
                            (key.0, *op2, new_args.clone(), key.3),
                            coeff * c2 * &norm * Rat::from_integer(ksign.into()),
                        );
                    }
                }
            }
        }
        out
    }
}

/// Koszul sign of rearranging graded symbols: slot i moves to position
/// σ(i); each inversion of two odd symbols contributes −1.
pub fn koszul_perm_sign(degrees: &[i64], sigma: &Perm) -> i32 {
    let mut sign = 1;
    for i in 0..degrees.len() {
        for j in (i + 1)..degrees.len() {
            if sigma.apply(i + 1) > sigma.apply(j + 1)
                && degrees[i] % 2 != 0
                && degrees[j] % 2 != 0
            {
                sign = -sign;
            }
        }
    }
    sign
}

/// Koszul sign of an operator of odd degree passing the first `count` slots.
fn pass_sign(degrees: &[i64], count: usize) -> i32 {
    let s: i64 = degrees[..count].iter().sum();
    if s % 2 == 0 {
        1
    } else {
        -1
    }
}

fn compose_ops(
    ctx: &HomotopyContext<'_>,
    outer_arity: usize,
    outer_op: usize,
    slot: usize,
    inner_arity: usize,
    inner_op: usize,
) -> SparseVec {
    let (_, v) = ctx
        .dual_table
        .compose(
            &Signature::all_full(outer_arity),
            &SparseVec::unit(outer_op),
            slot,
            &Signature::all_full(inner_arity),
            &SparseVec::unit(inner_op),
        )
        .expect("composition within realized range");
    v
}

/// Residual of d² as a derivation tower; empty iff d² = 0 up to truncation.
pub fn check_d_squared(ctx: &HomotopyContext<'_>, d: &Tower) -> Result<Tower, HomotopyError> {
    ctx.validate(TowerKind::Derivation, d)?;
    let mut res = Tower::new();
    for (&r2, outer) in &d.entries {
        for (&r1, inner) in &d.entries {
            let target = r2 + r1 - 1;
            if target > ctx.max_arity {
                continue;
            }
            for (okey, oc) in outer {
                let odegs = ctx.slot_degrees(TowerKind::Derivation, okey);
                for slot in 1..=r2 {
                    let src_here = okey.2[slot - 1];
                    for (ikey, ic) in inner {
                        if ikey.0 != src_here {
                            continue;
                        }
                        let sign = pass_sign(&odegs, slot - 1);
                        let ops = compose_ops(ctx, r2, okey.1, slot, r1, ikey.1);
                        let mut args = Vec::with_capacity(target);
                        args.extend_from_slice(&okey.2[..slot - 1]);
                        args.extend_from_slice(&ikey.2);
                        args.extend_from_slice(&okey.2[slot..]);
                        for (op, c) in &ops.entries {
                            res.add(
                                target,
                                (okey.0, *op, args.clone(), None),
                                oc * ic * c * Rat::from_integer(sign.into()),
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(ctx.symmetrize(TowerKind::Derivation, &res))
}

/// Residual of g² (over d) for a module-derivation tower; the same engine
/// verifies h² when handed the dual-module kind.
pub fn check_module_squared(
    ctx: &HomotopyContext<'_>,
    kind: TowerKind,
    g: &Tower,
    d: &Tower,
) -> Result<Tower, HomotopyError> {
    assert!(kind.has_module_slot() && kind != TowerKind::ModuleMap);
    ctx.validate(kind, g)?;
    ctx.validate(TowerKind::Derivation, d)?;
    let mut res = Tower::new();
    for (&r2, outer) in &g.entries {
        // d into an algebra slot
        for (&r1, inner) in &d.entries {
            let target = r2 + r1 - 1;
            if target > ctx.max_arity {
                continue;
            }
            for (okey, oc) in outer {
                let odegs = ctx.slot_degrees(kind, okey);
                for slot in 1..r2 {
                    let src_here = okey.2[slot - 1];
                    for (ikey, ic) in inner {
                        if ikey.0 != src_here {
                            continue;
                        }
                        let sign = pass_sign(&odegs, slot - 1);
                        let ops = compose_ops(ctx, r2, okey.1, slot, r1, ikey.1);
                        let mut args = Vec::with_capacity(target - 1);
                        args.extend_from_slice(&okey.2[..slot - 1]);
                        args.extend_from_slice(&ikey.2);
                        args.extend_from_slice(&okey.2[slot..]);
                        for (op, c) in &ops.entries {
                            res.add(
                                target,
                                (okey.0, *op, args.clone(), okey.3),
                                oc * ic * c * Rat::from_integer(sign.into()),
                            );
                        }
                    }
                }
            }
        }
        // g into the module slot (always the last slot)
        for (&r1, inner) in &g.entries {
            let target = r2 + r1 - 1;
            if target > ctx.max_arity {
                continue;
            }
            for (okey, oc) in outer {
                let odegs = ctx.slot_degrees(kind, okey);
                let m_here = okey.3.expect("module slot");
                for (ikey, ic) in inner {
                    if ikey.0 != m_here {
                        continue;
                    }
                    let sign = pass_sign(&odegs, r2 - 1);
                    let ops = compose_ops(ctx, r2, okey.1, r2, r1, ikey.1);
                    let mut args = Vec::with_capacity(target - 1);
                    args.extend_from_slice(&okey.2);
                    args.extend_from_slice(&ikey.2);
                    for (op, c) in &ops.entries {
                        res.add(
                            target,
                            (okey.0, *op, args.clone(), ikey.3),
                            oc * ic * c * Rat::from_integer(sign.into()),
                        );
                    }
                }
            }
        }
    }
    Ok(ctx.symmetrize(kind, &res))
}

pub fn check_g_squared(
    ctx: &HomotopyContext<'_>,
    g: &Tower,
    d: &Tower,
) -> Result<Tower, HomotopyError> {
    check_module_squared(ctx, TowerKind::ModuleDerivation, g, d)
}

pub fn check_h_squared(
    ctx: &HomotopyContext<'_>,
    h: &Tower,
    d: &Tower,
) -> Result<Tower, HomotopyError> {
    check_module_squared(ctx, TowerKind::DualModuleDerivation, h, d)
}

/// General-position components of a module tower: the module slot moved to
/// every position, with the operation transported and the Koszul shuffle
/// sign applied.  Key: (src, op, slots-with-module-position, m-index).
type GeneralTensor = BTreeMap<(usize, usize, Vec<usize>, usize, usize), Rat>;

fn materialize_general(ctx: &HomotopyContext<'_>, kind: TowerKind, t: &Tower) -> BTreeMap<usize, GeneralTensor> {
    let mut out: BTreeMap<usize, GeneralTensor> = BTreeMap::new();
    for (&r, m) in &t.entries {
        let dst = out.entry(r).or_default();
        for (key, coeff) in m {
            let degs = ctx.slot_degrees(kind, key);
            let mslot_deg = *degs.last().expect("module slot degree");
            for p in 1..=r {
                // cycle sending slot r to slot p, sliding the tail up
                let mut images: Vec<usize> = Vec::with_capacity(r);
                for i in 1..r {
                    images.push(if i < p { i } else { i + 1 });
                }
                images.push(p);
                let sigma = Perm::from_images(images);
                // koszul: module symbol passes the a-slots p..r−1
                let passed: i64 = key.2[(p - 1)..].iter().map(|&a| ctx.deg_sa(a)).sum();
                let ksign = if (passed * mslot_deg) % 2 != 0 { -1 } else { 1 };
                let (_, op_vec) = ctx
                    .dual_table
                    .act(&Signature::all_full(r), &sigma, &SparseVec::unit(key.1))
                    .expect("action in range");
                for (op2, c2) in &op_vec.entries {
                    let k2 = (key.0, *op2, key.2.clone(), p, key.3.unwrap());
                    let e = dst.entry(k2).or_insert_with(Rat::zero);
                    *e += coeff * c2 * Rat::from_integer(ksign.into());
                }
            }
        }
    }
    out
}

/// Dual homotopy module: rotate the operadic slot of g and twist by the
/// product of the suspended block degrees.
pub fn induce_dual_module(
    ctx: &HomotopyContext<'_>,
    g: &Tower,
) -> Result<Tower, HomotopyError> {
    ctx.validate(TowerKind::ModuleDerivation, g)?;
    let general = materialize_general(ctx, TowerKind::ModuleDerivation, g);
    let mut h = Tower::new();
    // stored h-entry (m₁; β; a₁..a_{r−1}, m₂): the (k = r−1, l = 0) instance:
    //   h(m₁)(a⃗, m₂*) = (−1)^ε τ_{r+1}( g(m₂*)(m₁, a⃗) )
    // where the right side reads g at the general position with the module
    // slot first.
    for (&r, gm) in &general {
        for ((m2, op, args, pos, m1), coeff) in gm {
            if *pos != 1 {
                continue;
            }
            // ε = (suspended degree of (m₁, a⃗)) · (suspended degree of (m₂*))
            let block1: i64 = ctx.deg_mslot(TowerKind::DualModuleDerivation, *m1)
                + args.iter().map(|&a| ctx.deg_sa(a)).sum::<i64>();
            let block2: i64 = ctx.deg_mslot(TowerKind::ModuleDerivation, *m2);
            let esign = if (block1 * block2) % 2 != 0 { -1 } else { 1 };
            let rotated = ctx.dual_cyclic.apply(r, &SparseVec::unit(*op));
            for (op2, c2) in &rotated.entries {
                h.add(
                    r,
                    (*m1, *op2, args.clone(), Some(*m2)),
                    coeff * c2 * Rat::from_integer(esign.into()),
                );
            }
        }
    }
    Ok(ctx.symmetrize(TowerKind::DualModuleDerivation, &h))
}

#[derive(Debug, Clone, Serialize)]
pub struct InnerProductReport {
    pub shape_residual: Vec<String>,
    pub fh_gf_residual: Vec<String>,
    pub symmetry_residual: Vec<String>,
    pub verdict: bool,
}

/// Residuals of the inner-product conditions: (i) well-formedness of the
/// module-map tower, (ii) f∘h − g∘f, (iii) the rotation symmetry.
pub fn check_inner_product(
    ctx: &HomotopyContext<'_>,
    f: &Tower,
    g: &Tower,
    d: &Tower,
) -> Result<InnerProductReport, HomotopyError> {
    // (i) the module-map tower must be coinvariant and of degree 0; a
    // violation is reported rather than rejected.
    let shape_residual = match ctx.validate(TowerKind::ModuleMap, f) {
        Ok(()) => Vec::new(),
        Err(e) => vec![e.to_string()],
    };
    ctx.validate(TowerKind::ModuleDerivation, g)?;
    ctx.validate(TowerKind::Derivation, d)?;
    let h = induce_dual_module(ctx, g)?;

    // (ii) f∘h − g∘f as a ModuleMap tower sM → … ⊗ sM*.
    let mut res = Tower::new();
    // f∘h: plug f into the module slot of h
    for (&rh, hm) in &h.entries {
        for (&rf, fm) in &f.entries {
            let target = rh + rf - 1;
            if target > ctx.max_arity {
                continue;
            }
            for (hkey, hc) in hm {
                let m_here = hkey.3.expect("module slot");
                for (fkey, fc) in fm {
                    if fkey.0 != m_here {
                        continue;
                    }
                    // f has degree 0: no passing sign
                    let ops = compose_ops(ctx, rh, hkey.1, rh, rf, fkey.1);
                    let mut args = Vec::with_capacity(target - 1);
                    args.extend_from_slice(&hkey.2);
                    args.extend_from_slice(&fkey.2);
                    for (op, c) in &ops.entries {
                        res.add(
                            target,
                            (hkey.0, *op, args.clone(), fkey.3),
                            hc * fc * c,
                        );
                    }
                }
            }
        }
    }
    // −g∘f: d into algebra slots of f, g into its module slot
    for (&rf, fm) in &f.entries {
        for (&rd, dm) in &d.entries {
            let target = rf + rd - 1;
            if target > ctx.max_arity {
                continue;
            }
            for (fkey, fc) in fm {
                let fdegs = ctx.slot_degrees(TowerKind::ModuleMap, fkey);
                for slot in 1..rf {
                    let src_here = fkey.2[slot - 1];
                    for (dkey, dc) in dm {
                        if dkey.0 != src_here {
                            continue;
                        }
                        let sign = pass_sign(&fdegs, slot - 1);
                        let ops = compose_ops(ctx, rf, fkey.1, slot, rd, dkey.1);
                        let mut args = Vec::with_capacity(target - 1);
                        args.extend_from_slice(&fkey.2[..slot - 1]);
                        args.extend_from_slice(&dkey.2);
                        args.extend_from_slice(&fkey.2[slot..]);
                        for (op, c) in &ops.entries {
                            res.add(
                                target,
                                (fkey.0, *op, args.clone(), fkey.3),
                                -(fc * dc * c * Rat::from_integer(sign.into())),
                            );
                        }
                    }
                }
            }
        }
        for (&rg, gm) in &g.entries {
            let target = rf + rg - 1;
            if target > ctx.max_arity {
                continue;
            }
            for (fkey, fc) in fm {
                let fdegs = ctx.slot_degrees(TowerKind::ModuleMap, fkey);
                let m_here = fkey.3.expect("module slot");
                for (gkey, gc) in gm {
                    if gkey.0 != m_here {
                        continue;
                    }
                    let sign = pass_sign(&fdegs, rf - 1);
                    let ops = compose_ops(ctx, rf, fkey.1, rf, rg, gkey.1);
                    let mut args = Vec::with_capacity(target - 1);
                    args.extend_from_slice(&fkey.2);
                    args.extend_from_slice(&gkey.2);
                    for (op, c) in &ops.entries {
                        res.add(
                            target,
                            (fkey.0, *op, args.clone(), gkey.3),
                            -(fc * gc * c * Rat::from_integer(sign.into())),
                        );
                    }
                }
            }
        }
    }
    let res = ctx.symmetrize(TowerKind::ModuleMap, &res);
    let fh_gf_residual: Vec<String> = res
        .support()
        .into_iter()
        .map(|(r, k)| format!("arity {} entry {:?}", r, k))
        .collect();

    // (iii) symmetry: f(m₂)(a⃗, m₁ at p) = (−1)^ε τ^{r+1−p}(f(m₁)(…, m₂ …)).
    let general = materialize_general(ctx, TowerKind::ModuleMap, f);
    let mut symmetry_residual = Vec::new();
    for (&r, gm) in &general {
        // assemble vectors per (m_src, args-layout, position, m_slot)
        let mut vectors: BTreeMap<(usize, Vec<usize>, usize, usize), SparseVec> = BTreeMap::new();
        for ((src, op, args, pos, mslot), c) in gm {
            let v = vectors
                .entry((*src, args.clone(), *pos, *mslot))
                .or_insert_with(SparseVec::new);
            v.add_to(*op, c.clone());
        }
        for ((m2, args, pos, m1), v) in &vectors {
            // split: i = pos−1 slots before, j = r−pos after
            let i = pos - 1;
            let j = r - pos;
            // partner layout: (a'₁..a'_j, m₂ at j+1, a₁..a_i)
            let mut partner_args = Vec::with_capacity(r - 1);
            partner_args.extend_from_slice(&args[i..]);
            partner_args.extend_from_slice(&args[..i]);
            let partner_key = (*m1, partner_args, j + 1, *m2);
            let w = vectors.get(&partner_key).cloned().unwrap_or_default();
            // ε = product of the block parities of (m₂, a₁..a_i) and
            // (m₁, a'⃗): suspended degrees on the algebra slots, plain
            // degrees on the module symbols (so that for ungraded strict
            // data the lowest condition is plain symmetry of the pairing)
            let block1: i64 = ctx.module.degrees[*m2]
                + args[..i].iter().map(|&a| ctx.algebra.degrees[a]).sum::<i64>()
                + i as i64;
            let block2: i64 = ctx.module.degrees[*m1]
                + args[i..].iter().map(|&a| ctx.algebra.degrees[a]).sum::<i64>()
                + j as i64;
            let esign = if (block1 * block2) % 2 != 0 { -1 } else { 1 };
            let rotated = ctx.dual_cyclic.apply_power(r, j + 1, &w);
            let mut diff = v.clone();
            diff.axpy(&Rat::from_integer((-esign).into()), &rotated);
            if !diff.is_zero() {
                symmetry_residual.push(format!(
                    "arity {} source {} layout {:?} position {}",
                    r, m2, args, pos
                ));
            }
        }
    }

    let verdict =
        shape_residual.is_empty() && fh_gf_residual.is_empty() && symmetry_residual.is_empty();
    Ok(InnerProductReport { shape_residual, fh_gf_residual, symmetry_residual, verdict })
}

/// Package a strict algebra/module/pairing over a built-in cyclic operad as
/// the lowest-arity homotopy data: d = d₁+d₂, g = g₁+g₂, f = f₂.
pub struct StrictInput {
    pub algebra: GradedSpace,
    /// multiplication table: (a, b) ↦ vector over the algebra basis
    pub mult: BTreeMap<(usize, usize), SparseVec>,
    pub module: GradedSpace,
    /// left action (a, m) and right action (m, a); for M = A both default
    /// to the multiplication
    pub left_action: BTreeMap<(usize, usize), SparseVec>,
    pub right_action: BTreeMap<(usize, usize), SparseVec>,
    /// pairing ⟨m₁, m₂⟩
    pub pairing: BTreeMap<(usize, usize), Rat>,
    /// differentials (degree +1), usually zero
    pub diff_a: BTreeMap<usize, SparseVec>,
    pub diff_m: BTreeMap<usize, SparseVec>,
}

impl StrictInput {
    pub fn algebra_over_itself(
        algebra: GradedSpace,
        mult: BTreeMap<(usize, usize), SparseVec>,
        pairing: BTreeMap<(usize, usize), Rat>,
    ) -> Self {
        StrictInput {
            module: algebra.clone(),
            left_action: mult.clone(),
            right_action: mult.clone(),
            algebra,
            mult,
            pairing,
            diff_a: BTreeMap::new(),
            diff_m: BTreeMap::new(),
        }
    }

    fn mult_coeff(&self, a: usize, b: usize, c: usize) -> Rat {
        self.mult.get(&(a, b)).map(|v| v.get(c)).unwrap_or_else(Rat::zero)
    }

    /// Verify associativity of the multiplication table; returns a witness
    /// on failure.
    pub fn check_associative(&self) -> Result<(), HomotopyError> {
        let n = self.algebra.dim();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut lhs = SparseVec::new();
                    if let Some(ab) = self.mult.get(&(a, b)) {
                        for (x, cx) in &ab.entries {
                            if let Some(xc) = self.mult.get(&(*x, c)) {
                                lhs.axpy(cx, xc);
                            }
                        }
                    }
                    let mut rhs = SparseVec::new();
                    if let Some(bc) = self.mult.get(&(b, c)) {
                        for (x, cx) in &bc.entries {
                            if let Some(ax) = self.mult.get(&(a, *x)) {
                                rhs.axpy(cx, ax);
                            }
                        }
                    }
                    lhs.axpy(&crate::linalg::rat(-1), &rhs);
                    if !lhs.is_zero() {
                        return Err(HomotopyError::Invalid(format!(
                            "multiplication not associative at basis ({}, {}, {})",
                            a, b, c
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Build the (d, g, f) towers of a strict structure over Assoc.
///
/// The context's table must be the realized Assoc itself (Assoc is its own
/// quadratic dual); `mu` and `op` are located as the identity and flipped
/// words at arity 2.  The derivation entries carry weight ½ so that one
/// product contributes one coinvariant unit: the raw (μ, μᵒᵖ)-pair is a
/// single class, while module entries are single already.
pub fn from_strict_assoc(
    ctx: &HomotopyContext<'_>,
    input: &StrictInput,
) -> Result<(Tower, Tower, Tower), HomotopyError> {
    input.check_associative()?;
    let sig2 = Signature::all_full(2);
    let sp2 = ctx.dual_table.space(&sig2).expect("arity 2 realized");
    let mut mu_idx = None;
    let mut op_idx = None;
    for b in 0..sp2.dim() {
        let w = crate::operad::assoc_word(sp2.rep(b));
        if w.is_identity() {
            mu_idx = Some(b);
        } else {
            op_idx = Some(b);
        }
    }
    let (mu, opp) = (mu_idx.expect("mu present"), op_idx.expect("op present"));
    let na = input.algebra.dim();
    let nm = input.module.dim();
    let half = Rat::new(1.into(), 2.into());
    let mut d = Tower::new();
    for (src, v) in &input.diff_a {
        for (tgt, c) in &v.entries {
            // d₁: sA* → sA*: dual of the differential
            d.add(1, (*tgt, 0, vec![*src], None), c.clone());
        }
    }
    for a in 0..na {
        for b in 0..na {
            for c in 0..na {
                let coeff = input.mult_coeff(a, b, c);
                if !coeff.is_zero() {
                    d.add(2, (c, mu, vec![a, b], None), &coeff * &half);
                    d.add(2, (c, opp, vec![b, a], None), -(&coeff * &half));
                }
            }
        }
    }
    let mut g = Tower::new();
    for (src, v) in &input.diff_m {
        for (tgt, c) in &v.entries {
            g.add(1, (*tgt, 0, vec![], Some(*src)), c.clone());
        }
    }
    for a in 0..na {
        for m in 0..nm {
            if let Some(am) = input.left_action.get(&(a, m)) {
                for (tgt, c) in &am.entries {
                    g.add(2, (*tgt, mu, vec![a], Some(m)), c.clone());
                }
            }
            if let Some(ma) = input.right_action.get(&(m, a)) {
                for (tgt, c) in &ma.entries {
                    g.add(2, (*tgt, opp, vec![a], Some(m)), -c.clone());
                }
            }
        }
    }
    let mut f = Tower::new();
    for ((m1, m2), c) in &input.pairing {
        f.add(1, (*m1, 0, vec![], Some(*m2)), c.clone());
    }
    Ok((d, g, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclic::assoc_cyclic;
    use crate::linalg::rat;
    use crate::operad::{builtin_assoc, realize};
    use crate::tree::LeafOrder;

    fn setup() -> (OperadTable, CyclicStructure) {
        // Assoc is its own quadratic dual; the towers run over the plain
        // realized Assoc with the coset rotation.
        let ord = LeafOrder::identity();
        let p = builtin_assoc(&ord);
        let table = realize(&p, 4, &ord).unwrap();
        let cyc = assoc_cyclic(&table);
        (table, cyc)
    }

    /// k[x]/(x²): basis (1, x).
    fn dual_numbers() -> StrictInput {
        let alg = GradedSpace::ungraded(vec!["1".into(), "x".into()]);
        let mut mult = BTreeMap::new();
        mult.insert((0, 0), SparseVec::unit(0));
        mult.insert((0, 1), SparseVec::unit(1));
        mult.insert((1, 0), SparseVec::unit(1));
        mult.insert((1, 1), SparseVec::new());
        let mut pairing = BTreeMap::new();
        pairing.insert((0, 1), rat(1));
        pairing.insert((1, 0), rat(1));
        StrictInput::algebra_over_itself(alg, mult, pairing)
    }

    #[test]
    fn strict_associative_algebra_has_square_zero_derivation() {
        let (table, cyc) = setup();
        let ctx = HomotopyContext {
            dual_table: &table,
            dual_cyclic: &cyc,
            algebra: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            module: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            max_arity: 4,
        };
        let (d, g, _f) = from_strict_assoc(&ctx, &dual_numbers()).unwrap();
        let res = check_d_squared(&ctx, &d).unwrap();
        assert!(res.is_zero(), "d² ≠ 0: {:?}", res.support());
        let res = check_g_squared(&ctx, &g, &d).unwrap();
        assert!(res.is_zero(), "g² ≠ 0: {:?}", res.support());
    }

    #[test]
    fn perturbed_product_fails_d_squared() {
        let (table, cyc) = setup();
        let ctx = HomotopyContext {
            dual_table: &table,
            dual_cyclic: &cyc,
            algebra: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            module: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            max_arity: 4,
        };
        let mut input = dual_numbers();
        // x·x = 1 makes (x·x)·x = x but x·(x·x) = x: still associative;
        // instead poison 1·1 = x, (1·1)·x = 0 vs 1·(1·x) = x²=…
        input.mult.insert((1, 1), SparseVec::unit(0));
        input.mult.insert((0, 0), SparseVec::unit(1));
        // bypass the strict validation to exercise the residual checker
        let build = from_strict_assoc(&ctx, &input);
        match build {
            Err(_) => {} // rejected as non-associative: fine
            Ok((d, _, _)) => {
                let res = check_d_squared(&ctx, &d).unwrap();
                assert!(!res.is_zero(), "non-associative product must fail d²");
            }
        }
    }

    #[test]
    fn frobenius_dual_numbers_pass_all_residuals() {
        let (table, cyc) = setup();
        let ctx = HomotopyContext {
            dual_table: &table,
            dual_cyclic: &cyc,
            algebra: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            module: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            max_arity: 4,
        };
        let (d, g, f) = from_strict_assoc(&ctx, &dual_numbers()).unwrap();
        let report = check_inner_product(&ctx, &f, &g, &d).unwrap();
        assert!(report.verdict, "{:#?}", report);
    }

    #[test]
    fn non_invariant_pairing_fails_fh_gf() {
        let (table, cyc) = setup();
        let ctx = HomotopyContext {
            dual_table: &table,
            dual_cyclic: &cyc,
            algebra: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            module: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            max_arity: 4,
        };
        let mut input = dual_numbers();
        input.pairing.clear();
        input.pairing.insert((1, 1), rat(1)); // ⟨x,x⟩=1, ⟨1,x⟩=0
        let (d, g, f) = from_strict_assoc(&ctx, &input).unwrap();
        let report = check_inner_product(&ctx, &f, &g, &d).unwrap();
        assert!(!report.fh_gf_residual.is_empty(), "{:#?}", report);
    }

    #[test]
    fn zero_pairing_is_a_valid_inner_product() {
        let (table, cyc) = setup();
        let ctx = HomotopyContext {
            dual_table: &table,
            dual_cyclic: &cyc,
            algebra: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            module: GradedSpace::ungraded(vec!["1".into(), "x".into()]),
            max_arity: 4,
        };
        let mut input = dual_numbers();
        input.pairing.clear();
        let (d, g, f) = from_strict_assoc(&ctx, &input).unwrap();
        let report = check_inner_product(&ctx, &f, &g, &d).unwrap();
        assert!(report.verdict, "{:#?}", report);
    }

    #[test]
    fn group_algebra_z2_with_trace_pairing() {
        let (table, cyc) = setup();
        let alg = GradedSpace::ungraded(vec!["e".into(), "s".into()]);
        let mut mult = BTreeMap::new();
        mult.insert((0, 0), SparseVec::unit(0));
        mult.insert((0, 1), SparseVec::unit(1));
        mult.insert((1, 0), SparseVec::unit(1));
        mult.insert((1, 1), SparseVec::unit(0));
        // trace pairing ⟨g, h⟩ = δ_{gh = e}
        let mut pairing = BTreeMap::new();
        pairing.insert((0, 0), rat(1));
        pairing.insert((1, 1), rat(1));
        let input = StrictInput::algebra_over_itself(alg.clone(), mult, pairing);
        let ctx = HomotopyContext {
            dual_table: &table,
            dual_cyclic: &cyc,
            algebra: alg.clone(),
            module: alg,
            max_arity: 4,
        };
        let (d, g, f) = from_strict_assoc(&ctx, &input).unwrap();
        let report = check_inner_product(&ctx, &f, &g, &d).unwrap();
        assert!(report.verdict, "{:#?}", report);
    }

    #[test]
    fn induced_dual_module_squares_to_zero_on_random_strict_structures() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let (table, cyc) = setup();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut done = 0;
        while done < 12 {
            // random conjugate of a semisimple product algebra: always
            // associative
            let n = rng.gen_range(2..=3usize);
            let p: Vec<Vec<i64>> =
                (0..n).map(|_| (0..n).map(|_| rng.gen_range(-2..=2i64)).collect()).collect();
            let pm = crate::linalg::ExactMatrix::from_dense(p);
            if pm.rank() < n {
                continue;
            }
            done += 1;
            let alg = GradedSpace::ungraded((0..n).map(|i| format!("e{}", i)).collect());
            // mult'(x, y) = P⁻¹(diag-mult(P x, P y)); we only need the
            // structure constants
            let mut mult = BTreeMap::new();
            // solve P z = w for each product
            for a in 0..n {
                for b in 0..n {
                    // w_k = (P e_a)_k (P e_b)_k
                    let mut w = SparseVec::new();
                    for k in 0..n {
                        let va = pm.get(k, a);
                        let vb = pm.get(k, b);
                        let prod = va * vb;
                        if !prod.is_zero() {
                            w.add_to(k, prod);
                        }
                    }
                    let z = pm.solve(&w).expect("invertible");
                    mult.insert((a, b), z);
                }
            }
            let input = StrictInput::algebra_over_itself(alg.clone(), mult, BTreeMap::new());
            input.check_associative().unwrap();
            let ctx = HomotopyContext {
                dual_table: &table,
                dual_cyclic: &cyc,
                algebra: alg.clone(),
                module: alg,
                max_arity: 4,
            };
            let (d, g, _f) = from_strict_assoc(&ctx, &input).unwrap();
            assert!(check_d_squared(&ctx, &d).unwrap().is_zero());
            assert!(check_g_squared(&ctx, &g, &d).unwrap().is_zero());
            let h = induce_dual_module(&ctx, &g).unwrap();
            let res = check_h_squared(&ctx, &h, &d).unwrap();
            assert!(res.is_zero(), "h² ≠ 0 on a random strict structure");
        }
    }
}
