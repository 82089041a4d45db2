//! Learned voltage-stability cones at the grid-following IBG buses.
//!
//! For IBG `c` the two-bus network reduction bounds the admissible injection
//! by `Phat^2 + Qhat^2 <= (Qhat + Gamma)^2`, where the equivalent injections
//! fold in the neighbours through mutual-to-self impedance ratios,
//!
//! ```text
//! Phat_c = P_c + sum_{c' != c} zm(c,c') P_c'
//! Qhat_c = Q_c + sum_{c' != c} zm(c,c') Q_c'
//! Gamma_c = z1(c) / 2
//! ```
//!
//! and `z1`, `zm` come from the fitted impedance-ratio models, affine in the
//! commitment binaries, the admittance-share selectors and their pairwise
//! interaction features. Ratio-times-dispatch products are replaced by their
//! shared McCormick variables, so each cone is affine in program variables
//! and exact once the first stage is integral.

use crate::program::{ConeKind, LinExpr, Sense};

use super::{BuildError, Builder, Mode};

impl Builder<'_> {
    /// Add one stability cone per (tree node, IBG). No-op outside VSC modes.
    pub(super) fn add_stability(&mut self) -> Result<(), BuildError> {
        if !self.opts.mode.uses_stability() {
            return Ok(());
        }
        let sur = self.surrogate.expect("checked at entry: VSC modes carry a surrogate");
        let n_ibg = self.case.gfl_ibgs.len();
        let q_free = self.opts.mode == Mode::VscQSi;

        for n in 0..self.tree.n_nodes() {
            let t = self.tree.nodes[n].t;
            for c in 0..n_ibg {
                let mut p_hat = LinExpr::of_var(self.vars.p_ibg[n][c]);
                let mut q_hat = if q_free {
                    LinExpr::of_var(self.vars.q_ibg[n][c])
                } else {
                    LinExpr::new()
                };
                for (k, &(from, toward)) in sur.pair_order.iter().enumerate() {
                    if from != c {
                        continue;
                    }
                    let pe = self.ratio_times(&sur.zm_models[k], t, self.vars.p_ibg[n][toward])?;
                    p_hat.add_scaled(&pe, 1.0);
                    if q_free {
                        let qe =
                            self.ratio_times(&sur.zm_models[k], t, self.vars.q_ibg[n][toward])?;
                        q_hat.add_scaled(&qe, 1.0);
                    }
                }

                let gamma = self.ratio_expr(&sur.z1_models[c], t);
                let mut rhs = q_hat.clone();
                rhs.add_scaled(&gamma, 0.5);

                let name = self.case.gfl_ibgs[c].name.clone();
                // The cone needs a nonnegative bound side; kept explicit so
                // infeasibility shows up in the linear rows as well.
                self.prog
                    .add_row(rhs.clone(), Sense::Ge, 0.0, format!("stab_sign[{name},n{n}]"));
                self.prog.add_soc(
                    rhs,
                    vec![p_hat, q_hat],
                    ConeKind::Stability,
                    format!("stab[{name},n{n}]"),
                );
            }
        }
        Ok(())
    }
}
