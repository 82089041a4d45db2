//! Second-stage network model: one SOC-relaxed AC snapshot per tree node.
//!
//! Voltages enter through the lifted products `c_ii ~ |V_i|^2`,
//! `c_l ~ |V_i||V_j| cos(th_i - th_j)` and `s_l ~ |V_i||V_j| sin(th_j - th_i)`
//! (one pair per line, the reverse orientation is the sign flip of `s_l`).
//! With the series admittance `g + jb = 1/(r + jx)` and total charging
//! susceptance `b_sh`, the branch flows are
//!
//! ```text
//! P_from = g c_ii - g c_l + b s_l
//! Q_from = -(b + b_sh/2) c_ii + b c_l + g s_l
//! P_to   = g c_jj - g c_l - b s_l
//! Q_to   = -(b + b_sh/2) c_jj + b c_l - g s_l
//! ```
//!
//! and the angle-consistency set is relaxed to the rotated cone
//! `c_l^2 + s_l^2 <= c_ii c_jj`. The expressions are checked against a
//! Newton-Raphson AC power-flow oracle in the integration tests before
//! anything downstream trusts them.

use crate::program::{ConeKind, LinExpr, Sense, VarKind};

use super::Builder;

impl Builder<'_> {
    /// Register all per-node variables and the network constraint set.
    pub(super) fn add_network(&mut self) {
        let n_nodes = self.tree.n_nodes();
        for n in 0..n_nodes {
            self.add_node_vars(n);
        }
        for n in 0..n_nodes {
            self.add_node_network(n);
        }
    }

    fn add_node_vars(&mut self, n: usize) {
        let case = self.case;
        let t = self.tree.nodes[n].t;
        let real = self.realizations[n].clone();

        let mut c_ii = Vec::with_capacity(case.n_buses());
        for bus in &case.buses {
            c_ii.push(self.prog.add_var(
                format!("c[{},n{n}]", bus.id),
                bus.v_min * bus.v_min,
                bus.v_max * bus.v_max,
                VarKind::Continuous,
            ));
        }
        self.vars.c_ii.push(c_ii);

        let mut c_l = Vec::with_capacity(case.lines.len());
        let mut s_l = Vec::with_capacity(case.lines.len());
        for (l, line) in case.lines.iter().enumerate() {
            let vmax = case.buses[line.from].v_max * case.buses[line.to].v_max;
            c_l.push(self.prog.add_var(format!("cl[l{l},n{n}]"), 0.0, vmax, VarKind::Continuous));
            s_l.push(self.prog.add_var(
                format!("sl[l{l},n{n}]"),
                -vmax,
                vmax,
                VarKind::Continuous,
            ));
        }
        self.vars.c_ij.push(c_l);
        self.vars.s_ij.push(s_l);

        let mut pf = Vec::with_capacity(case.lines.len());
        let mut qf = Vec::with_capacity(case.lines.len());
        let mut pt = Vec::with_capacity(case.lines.len());
        let mut qt = Vec::with_capacity(case.lines.len());
        for (l, line) in case.lines.iter().enumerate() {
            let cap = line.rating.unwrap_or(f64::INFINITY);
            pf.push(self.prog.add_var(format!("pf[l{l},n{n}]"), -cap, cap, VarKind::Continuous));
            qf.push(self.prog.add_var(format!("qf[l{l},n{n}]"), -cap, cap, VarKind::Continuous));
            pt.push(self.prog.add_var(format!("pt[l{l},n{n}]"), -cap, cap, VarKind::Continuous));
            qt.push(self.prog.add_var(format!("qt[l{l},n{n}]"), -cap, cap, VarKind::Continuous));
        }
        self.vars.p_from.push(pf);
        self.vars.q_from.push(qf);
        self.vars.p_to.push(pt);
        self.vars.q_to.push(qt);

        let mut p_sg = Vec::with_capacity(case.sync_gens.len());
        let mut q_sg = Vec::with_capacity(case.sync_gens.len());
        for g in &case.sync_gens {
            p_sg.push(self.prog.add_var(
                format!("p[{},n{n}]", g.name),
                0.0,
                g.p_max,
                VarKind::Continuous,
            ));
            q_sg.push(self.prog.add_var(
                format!("q[{},n{n}]", g.name),
                g.q_min.min(0.0),
                g.q_max.max(0.0),
                VarKind::Continuous,
            ));
        }
        self.vars.p_sg.push(p_sg);
        self.vars.q_sg.push(q_sg);

        let mut p_gfm = Vec::with_capacity(case.gfm_units.len());
        for m in 0..case.gfm_units.len() {
            let (name, p_max, levels) = {
                let g = &case.gfm_units[m];
                (g.name.clone(), g.p_max, g.alpha_levels as usize)
            };
            let v = self.prog.add_var(format!("p[{name},n{n}]"), 0.0, p_max, VarKind::Continuous);
            // The plant runs at its committed admittance share.
            let mut tie = LinExpr::of_var(v);
            for l in 0..levels {
                let w = p_max * self.alpha_level_value(m, l);
                tie.add_term(self.vars.lambda[t][m][l], -w);
            }
            self.prog.add_row(tie, Sense::Eq, 0.0, format!("gfm_tie[{name},n{n}]"));
            p_gfm.push(v);
        }
        self.vars.p_gfm.push(p_gfm);

        let mut p_ibg = Vec::with_capacity(case.gfl_ibgs.len());
        let mut q_ibg = Vec::with_capacity(case.gfl_ibgs.len());
        for (c, ibg) in case.gfl_ibgs.iter().enumerate() {
            let avail = real.wind_avail[c].max(0.0);
            let pv =
                self.prog
                    .add_var(format!("p[{},n{n}]", ibg.name), 0.0, avail, VarKind::Continuous);
            let (qlo, qhi) = if self.opts.mode.ibg_q_free() {
                (-ibg.s_max, ibg.s_max)
            } else {
                (0.0, 0.0)
            };
            let qv =
                self.prog
                    .add_var(format!("q[{},n{n}]", ibg.name), qlo, qhi, VarKind::Continuous);
            self.prog.add_soc(
                LinExpr::of_constant(ibg.s_max),
                vec![LinExpr::of_var(pv), LinExpr::of_var(qv)],
                ConeKind::Capability,
                format!("cap[{},n{n}]", ibg.name),
            );
            p_ibg.push(pv);
            q_ibg.push(qv);
        }
        self.vars.p_ibg.push(p_ibg);
        self.vars.q_ibg.push(q_ibg);

        let mut q_stat = Vec::new();
        if self.opts.statcom_enabled {
            let devices = self.vars.statcom_device_indices.clone();
            for &d in &devices {
                let dev = &case.shunt_devices[d];
                let qv = self.prog.add_var(
                    format!("q[{},n{n}]", dev.name),
                    -dev.q_rating,
                    dev.q_rating,
                    VarKind::Continuous,
                );
                // Current limit |Q| <= I_max |V|: Q^2 <= I_max^2 c_bb as a
                // rotated cone with a unit second leg.
                let imax = dev.i_max.expect("validated: STATCOM carries i_max");
                self.prog.add_rsoc(
                    LinExpr::new().term(self.vars.c_ii[n][dev.bus], 0.5 * imax * imax),
                    LinExpr::of_constant(1.0),
                    vec![LinExpr::of_var(qv)],
                    ConeKind::StatcomCurrent,
                    format!("statcur[{},n{n}]", dev.name),
                );
                q_stat.push(qv);
            }
        }
        self.vars.q_stat.push(q_stat);

        let mut q_sc = Vec::new();
        let devices = self.vars.sc_device_indices.clone();
        for (k, &d) in devices.iter().enumerate() {
            let dev = &case.shunt_devices[d];
            let qv = self.prog.add_var(
                format!("q[{},n{n}]", dev.name),
                -dev.q_rating,
                dev.q_rating,
                VarKind::Continuous,
            );
            let xsc = self.vars.x_sc[t][k];
            self.prog.add_row(
                LinExpr::of_var(qv).term(xsc, -dev.q_rating),
                Sense::Le,
                0.0,
                format!("sc_qmax[{},n{n}]", dev.name),
            );
            self.prog.add_row(
                LinExpr::of_var(qv).term(xsc, dev.q_rating),
                Sense::Ge,
                0.0,
                format!("sc_qmin[{},n{n}]", dev.name),
            );
            q_sc.push(qv);
        }
        self.vars.q_sc.push(q_sc);

        let mut shed = Vec::with_capacity(case.n_buses());
        for (b, bus) in case.buses.iter().enumerate() {
            let load = real.p_load[b];
            if load > 0.0 {
                shed.push(Some(self.prog.add_var(
                    format!("shed[{},n{n}]", bus.id),
                    0.0,
                    load,
                    VarKind::Continuous,
                )));
            } else {
                shed.push(None);
            }
        }
        self.vars.shed.push(shed);
    }

    /// Line-flow definitions, angle-relaxation cones, thermal limits and the
    /// nodal balances of one tree node.
    fn add_node_network(&mut self, n: usize) {
        let case = self.case;
        let real = self.realizations[n].clone();

        for (l, line) in case.lines.iter().enumerate() {
            let y = 1.0 / num_complex::Complex64::new(line.r, line.x);
            let (g, b) = (y.re, y.im);
            let bs2 = line.b_sh / 2.0;
            let (ci, cj) = (self.vars.c_ii[n][line.from], self.vars.c_ii[n][line.to]);
            let (cl, sl) = (self.vars.c_ij[n][l], self.vars.s_ij[n][l]);

            let defs = [
                (self.vars.p_from[n][l], [(ci, g), (cl, -g), (sl, b)], "def_pf"),
                (self.vars.q_from[n][l], [(ci, -(b + bs2)), (cl, b), (sl, g)], "def_qf"),
                (self.vars.p_to[n][l], [(cj, g), (cl, -g), (sl, -b)], "def_pt"),
                (self.vars.q_to[n][l], [(cj, -(b + bs2)), (cl, b), (sl, -g)], "def_qt"),
            ];
            for (fv, terms, label) in defs {
                let mut e = LinExpr::of_var(fv);
                for (v, w) in terms {
                    e.add_term(v, -w);
                }
                self.prog.add_row(e, Sense::Eq, 0.0, format!("{label}[l{l},n{n}]"));
            }

            // c_l^2 + s_l^2 <= c_ii c_jj, written with ||u||^2 <= 2 t1 t2.
            self.prog.add_rsoc(
                LinExpr::new().term(ci, 0.5),
                LinExpr::of_var(cj),
                vec![LinExpr::of_var(cl), LinExpr::of_var(sl)],
                ConeKind::PowerFlow,
                format!("angle[l{l},n{n}]"),
            );

            if let Some(rating) = line.rating {
                self.prog.add_soc(
                    LinExpr::of_constant(rating),
                    vec![
                        LinExpr::of_var(self.vars.p_from[n][l]),
                        LinExpr::of_var(self.vars.q_from[n][l]),
                    ],
                    ConeKind::LineRating,
                    format!("rate_f[l{l},n{n}]"),
                );
                self.prog.add_soc(
                    LinExpr::of_constant(rating),
                    vec![
                        LinExpr::of_var(self.vars.p_to[n][l]),
                        LinExpr::of_var(self.vars.q_to[n][l]),
                    ],
                    ConeKind::LineRating,
                    format!("rate_t[l{l},n{n}]"),
                );
            }
        }

        let statcoms = self.vars.statcom_device_indices.clone();
        let condensers = self.vars.sc_device_indices.clone();
        for (b, bus) in case.buses.iter().enumerate() {
            let mut p = LinExpr::new();
            let mut q = LinExpr::new();
            for (g, gen) in case.sync_gens.iter().enumerate() {
                if gen.bus == b {
                    p.add_term(self.vars.p_sg[n][g], 1.0);
                    q.add_term(self.vars.q_sg[n][g], 1.0);
                }
            }
            for (m, gfm) in case.gfm_units.iter().enumerate() {
                if gfm.bus == b {
                    p.add_term(self.vars.p_gfm[n][m], 1.0);
                }
            }
            for (c, ibg) in case.gfl_ibgs.iter().enumerate() {
                if ibg.bus == b {
                    p.add_term(self.vars.p_ibg[n][c], 1.0);
                    q.add_term(self.vars.q_ibg[n][c], 1.0);
                }
            }
            if self.opts.statcom_enabled {
                for (k, &d) in statcoms.iter().enumerate() {
                    if case.shunt_devices[d].bus == b {
                        q.add_term(self.vars.q_stat[n][k], 1.0);
                    }
                }
            }
            for (k, &d) in condensers.iter().enumerate() {
                if case.shunt_devices[d].bus == b {
                    q.add_term(self.vars.q_sc[n][k], 1.0);
                }
            }
            if let Some(sv) = self.vars.shed[n][b] {
                p.add_term(sv, 1.0);
            }
            for (l, line) in case.lines.iter().enumerate() {
                if line.from == b {
                    p.add_term(self.vars.p_from[n][l], -1.0);
                    q.add_term(self.vars.q_from[n][l], -1.0);
                }
                if line.to == b {
                    p.add_term(self.vars.p_to[n][l], -1.0);
                    q.add_term(self.vars.q_to[n][l], -1.0);
                }
            }
            self.prog
                .add_row(p, Sense::Eq, real.p_load[b], format!("pbal[{},n{n}]", bus.id));
            self.prog
                .add_row(q, Sense::Eq, real.q_load[b], format!("qbal[{},n{n}]", bus.id));
        }
    }
}
