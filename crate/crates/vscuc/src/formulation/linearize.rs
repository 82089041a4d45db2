//! Product linearization for the learned impedance-ratio expressions.
//!
//! Every surrogate feature is a product of unit-interval quantities:
//! commitment binaries and one-hot admittance-share selectors. Each feature
//! therefore decomposes into a weighted sum of "atoms", where an atom is a
//! single program variable confined to [0, 1]:
//!
//! * a commitment binary is itself an atom,
//! * an admittance share `alpha = sum_l val_l lambda_l` contributes one atom
//!   per level selector,
//! * a pairwise feature contributes AND variables `w = a AND b` over the
//!   atoms of its factors.
//!
//! AND variables carry the exact-at-integral McCormick envelope
//! `w <= a, w <= b, w >= a + b - 1, w >= 0`. Products of an atom with a
//! bounded continuous dispatch variable get the general envelope over
//! `phi in [0, 1], y in [L, U]`. Both registries are keyed so each distinct
//! product variable is created once and shared by every expression that
//! needs it.

use crate::program::{LinExpr, Sense, VarKind};
use crate::surrogate::{FeatureTerm, FittedModel};

use super::{BuildError, Builder};

/// A unit-interval program variable with a multiplicative weight.
pub(super) type Atom = (usize, f64);

impl Builder<'_> {
    /// Fractional admittance share represented by level `l` of plant `m`.
    pub(super) fn alpha_level_value(&self, m: usize, l: usize) -> f64 {
        let levels = self.case.gfm_units[m].alpha_levels as usize;
        l as f64 / (levels - 1) as f64
    }

    /// Decompose one feature at hour `t` into the affine form
    /// `c0 + sum w_i * var_i` over unit-interval program variables. Only the
    /// intercept carries a nonzero `c0`; every other feature is a pure
    /// weighted-atom combination.
    pub(super) fn phi_atoms(&mut self, term: &FeatureTerm, t: usize) -> (f64, Vec<Atom>) {
        match *term {
            FeatureTerm::Constant => (1.0, Vec::new()),
            FeatureTerm::Binary(b) => (0.0, vec![(self.binary_feature_var(b, t), 1.0)]),
            FeatureTerm::Alpha(m) => {
                let levels = self.case.gfm_units[m].alpha_levels as usize;
                let atoms = (0..levels)
                    .map(|l| (self.vars.lambda[t][m][l], self.alpha_level_value(m, l)))
                    .collect();
                (0.0, atoms)
            }
            FeatureTerm::BinaryPair(a, b) => {
                let va = self.binary_feature_var(a, t);
                let vb = self.binary_feature_var(b, t);
                (0.0, vec![(self.and_var(va, vb), 1.0)])
            }
            FeatureTerm::BinaryAlpha(b, m) => {
                let vb = self.binary_feature_var(b, t);
                let levels = self.case.gfm_units[m].alpha_levels as usize;
                let atoms = (0..levels)
                    .map(|l| {
                        let lam = self.vars.lambda[t][m][l];
                        (self.and_var(vb, lam), self.alpha_level_value(m, l))
                    })
                    .collect();
                (0.0, atoms)
            }
            FeatureTerm::AlphaPair(m1, m2) => {
                let l1 = self.case.gfm_units[m1].alpha_levels as usize;
                let l2 = self.case.gfm_units[m2].alpha_levels as usize;
                let mut out = Vec::with_capacity(l1 * l2);
                for a in 0..l1 {
                    for b in 0..l2 {
                        let va = self.vars.lambda[t][m1][a];
                        let vb = self.vars.lambda[t][m2][b];
                        let w = self.alpha_level_value(m1, a) * self.alpha_level_value(m2, b);
                        out.push((self.and_var(va, vb), w));
                    }
                }
                (0.0, out)
            }
        }
    }

    /// The program variable backing surrogate binary-feature `b` at hour `t`.
    ///
    /// The feature space orders binaries as sync machines first, then
    /// condensers; the same order is used here.
    pub(super) fn binary_feature_var(&self, b: usize, t: usize) -> usize {
        let n_sg = self.case.sync_gens.len();
        if b < n_sg {
            self.vars.x[t][b]
        } else {
            self.vars.x_sc[t][b - n_sg]
        }
    }

    /// Shared AND variable of two unit-interval variables.
    pub(super) fn and_var(&mut self, a: usize, b: usize) -> usize {
        let key = (a.min(b), a.max(b));
        if let Some(&w) = self.vars.and_vars.get(&key) {
            return w;
        }
        let w = self.prog.add_var(
            format!("and[{},{}]", key.0, key.1),
            0.0,
            1.0,
            VarKind::Continuous,
        );
        let name = |s: &str| format!("{s}[{},{}]", key.0, key.1);
        self.prog.add_row(
            LinExpr::of_var(w).term(key.0, -1.0),
            Sense::Le,
            0.0,
            name("and_le_a"),
        );
        self.prog.add_row(
            LinExpr::of_var(w).term(key.1, -1.0),
            Sense::Le,
            0.0,
            name("and_le_b"),
        );
        self.prog.add_row(
            LinExpr::of_var(w).term(key.0, -1.0).term(key.1, -1.0),
            Sense::Ge,
            -1.0,
            name("and_ge"),
        );
        self.vars.and_vars.insert(key, w);
        w
    }

    /// Shared product variable `w = phi * y` for a unit-interval `phi` and a
    /// bounded continuous `y`.
    pub(super) fn product_var(&mut self, phi: usize, y: usize) -> Result<usize, BuildError> {
        let key = (phi, y);
        if let Some(&w) = self.vars.product_vars.get(&key) {
            return Ok(w);
        }
        let (lo, hi) = (self.prog.vars[y].lb, self.prog.vars[y].ub);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(BuildError::UnboundedFactor(self.prog.vars[y].name.clone()));
        }
        let w = self.prog.add_var(
            format!("prod[{phi},{y}]"),
            lo.min(0.0),
            hi.max(0.0),
            VarKind::Continuous,
        );
        let name = |s: &str| format!("{s}[{phi},{y}]");
        // McCormick over phi in [0,1], y in [lo,hi]; exact once phi is 0 or 1.
        self.prog.add_row(
            LinExpr::of_var(w).term(phi, -lo),
            Sense::Ge,
            0.0,
            name("prod_lo"),
        );
        self.prog.add_row(
            LinExpr::of_var(w).term(phi, -hi),
            Sense::Le,
            0.0,
            name("prod_hi"),
        );
        self.prog.add_row(
            LinExpr::of_var(w).term(y, -1.0).term(phi, -hi),
            Sense::Ge,
            -hi,
            name("prod_tie_lo"),
        );
        self.prog.add_row(
            LinExpr::of_var(w).term(y, -1.0).term(phi, -lo),
            Sense::Le,
            -lo,
            name("prod_tie_hi"),
        );
        self.vars.product_vars.insert(key, w);
        Ok(w)
    }

    /// Affine expression of a fitted ratio model at hour `t`:
    /// `sum_j k_j * phi_j(x, alpha)` over the retained features.
    pub(super) fn ratio_expr(&mut self, model: &FittedModel, t: usize) -> LinExpr {
        let mut e = LinExpr::new();
        for (&j, &k) in model.retained.iter().zip(&model.coeffs) {
            let term = self.feature_terms[j];
            let (c0, atoms) = self.phi_atoms(&term, t);
            e.constant += k * c0;
            for (var, w) in atoms {
                e.add_term(var, k * w);
            }
        }
        e.compress();
        e
    }

    /// Affine expression of `ratio * y` at hour `t` for a continuous
    /// dispatch variable `y`, with every atom-level product replaced by its
    /// McCormick variable. The intercept part multiplies `y` directly, so it
    /// stays exact without any relaxation.
    pub(super) fn ratio_times(
        &mut self,
        model: &FittedModel,
        t: usize,
        y: usize,
    ) -> Result<LinExpr, BuildError> {
        let mut e = LinExpr::new();
        for (&j, &k) in model.retained.iter().zip(&model.coeffs) {
            let term = self.feature_terms[j];
            let (c0, atoms) = self.phi_atoms(&term, t);
            e.add_term(y, k * c0);
            for (var, w) in atoms {
                let p = self.product_var(var, y)?;
                e.add_term(p, k * w);
            }
        }
        e.compress();
        Ok(e)
    }
}
