//! Frequency-security constraints: aggregate inertia, primary response,
//! RoCoF, and the nadir condition.
//!
//! Per hour the committed fleet supplies synchronous inertia
//! `H = sum_g inertia_h_g p_max_g x_g` (machine seconds scaled to the system
//! base) and primary response `R = sum_g pfr_gain_g x_g`. Synthetic inertia
//! `H_sj` from flagged IBGs is scheduled separately. The nadir condition
//!
//! ```text
//! H R >= x1^2 + (dP_L T_d / 4) sum_j H_sj^2
//! ```
//!
//! is one rotated cone with legs `H/sqrt(2)`, `R/sqrt(2)` and members
//! `[x1, sqrt(dP_L T_d / 4) H_sj ...]`; `x1^2` collects the disturbance
//! constants and is real whenever `dP_L/df_lim > D`, which case validation
//! guarantees. With no synthetic-inertia providers the cone is exactly
//! `H R >= x1^2`. RoCoF is the linear side-constraint
//! `2 H rocof_max >= dP_L`.

use crate::program::{ConeKind, LinExpr, Sense, VarKind};

use super::Builder;

impl Builder<'_> {
    pub(super) fn add_frequency(&mut self) {
        if !self.opts.freq_enabled {
            return;
        }
        let case = self.case;
        let fp = &case.freq_params;
        let x1 = fp.x1_squared().max(0.0).sqrt();
        let si_coeff = fp.si_penalty_coeff().sqrt();
        let horizon = self.tree.horizon;

        let h_max: f64 = case.sync_gens.iter().map(|g| g.inertia_h * g.p_max).sum();
        let r_max: f64 = case.sync_gens.iter().map(|g| g.pfr_gain).sum();
        let si: Vec<usize> = case
            .gfl_ibgs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.si_capable)
            .map(|(j, _)| j)
            .collect();
        self.vars.si_ibg_indices = si.clone();

        for t in 0..horizon {
            let h = self.prog.add_var(format!("H[t{t}]"), 0.0, h_max, VarKind::Continuous);
            let r = self.prog.add_var(format!("R[t{t}]"), 0.0, r_max, VarKind::Continuous);
            let mut h_def = LinExpr::of_var(h);
            let mut r_def = LinExpr::of_var(r);
            for (g, gen) in case.sync_gens.iter().enumerate() {
                h_def.add_term(self.vars.x[t][g], -gen.inertia_h * gen.p_max);
                r_def.add_term(self.vars.x[t][g], -gen.pfr_gain);
            }
            self.prog.add_row(h_def, Sense::Eq, 0.0, format!("h_def[t{t}]"));
            self.prog.add_row(r_def, Sense::Eq, 0.0, format!("r_def[t{t}]"));
            self.vars.h_total.push(h);
            self.vars.r_total.push(r);

            let mut h_sj = Vec::with_capacity(si.len());
            let mut members = vec![LinExpr::of_constant(x1)];
            for &j in &si {
                let cap = case.gfl_ibgs[j].h_si_max;
                let v = self.prog.add_var(
                    format!("Hsi[{},t{t}]", case.gfl_ibgs[j].name),
                    0.0,
                    cap,
                    VarKind::Continuous,
                );
                members.push(LinExpr::new().term(v, si_coeff));
                h_sj.push(v);
            }
            self.vars.h_sj.push(h_sj);

            self.prog.add_rsoc(
                LinExpr::new().term(h, std::f64::consts::FRAC_1_SQRT_2),
                LinExpr::new().term(r, std::f64::consts::FRAC_1_SQRT_2),
                members,
                ConeKind::Nadir,
                format!("nadir[t{t}]"),
            );
            self.prog.add_row(
                LinExpr::new().term(h, 2.0 * fp.rocof_max),
                Sense::Ge,
                fp.dp_l,
                format!("rocof[t{t}]"),
            );
        }
    }
}
