//! Scratch probe: exact impedance-target statistics on a case, used while
//! calibrating bundled case parameters.

use vscuc::admittance::{impedance_metrics, DevicePoint};
use vscuc::surrogate::train;

fn main() {
    let path = std::env::args().nth(1).expect("usage: probe <case.toml>");
    let text = std::fs::read_to_string(&path).unwrap();
    let case = vscuc::parse_case(&text).unwrap();
    let n_sg = case.sync_gens.len();
    let n_gfm = case.gfm_units.len();
    let n_sc = case.sc_indices().len();

    // z1 at the first IBG as machines come on one at a time (alpha = 0).
    for k in 0..=n_sg {
        let point = DevicePoint {
            sg_on: (0..n_sg).map(|i| if i < k { 1.0 } else { 0.0 }).collect(),
            gfm_alpha: vec![0.0; n_gfm],
            sc_on: vec![1.0; n_sc],
        };
        match impedance_metrics(&case, &point) {
            Ok(m) => println!(
                "k={k} alpha=0: z1 = {:?}  zm[0][1] = {:.4}",
                m.z1.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                m.zm.get(0).and_then(|r| r.get(1)).copied().unwrap_or(f64::NAN),
            ),
            Err(e) => println!("k={k} alpha=0: {e}"),
        }
    }
    for k in 0..=n_sg {
        let point = DevicePoint {
            sg_on: (0..n_sg).map(|i| if i < k { 1.0 } else { 0.0 }).collect(),
            gfm_alpha: vec![1.0; n_gfm],
            sc_on: vec![1.0; n_sc],
        };
        match impedance_metrics(&case, &point) {
            Ok(m) => println!(
                "k={k} alpha=1: z1 = {:?}  zm[0][1] = {:.4}",
                m.z1.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                m.zm.get(0).and_then(|r| r.get(1)).copied().unwrap_or(f64::NAN),
            ),
            Err(e) => println!("k={k} alpha=1: {e}"),
        }
    }

    // Residual anatomy for the first mutual-ratio target.
    let ds = vscuc::surrogate::enumerate_dataset(&case).unwrap();
    let sur = vscuc::surrogate::train_on(&case, &ds).unwrap();
    let mut errs: Vec<(f64, usize)> = ds
        .features
        .iter()
        .enumerate()
        .map(|(r, phi)| {
            let pred = sur.zm_models[0].predict_from_full(phi);
            let actual = ds.zm[r][0];
            (((pred - actual) / actual).abs(), r)
        })
        .collect();
    errs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("worst zm[0] rows:");
    for &(e, r) in errs.iter().take(8) {
        let p = &ds.points[r];
        let k: f64 = p.sg_on.iter().sum();
        println!(
            "  rel_err {:.3}  exact {:.4}  sg_on {k}  alpha {:?}",
            e,
            ds.zm[r][0],
            p.gfm_alpha.iter().map(|a| (a * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
    let buckets = [0.01, 0.02, 0.05, 0.10, 0.25, 1.0, f64::INFINITY];
    let mut counts = vec![0usize; buckets.len()];
    for &(e, _) in &errs {
        for (bi, &b) in buckets.iter().enumerate() {
            if e <= b {
                counts[bi] += 1;
                break;
            }
        }
    }
    println!("zm rel-err histogram {counts:?} (<=1% <=2% <=5% <=10% <=25% <=100% >100%)");
    for (i, name) in sur.ibg_names.iter().enumerate() {
        let m = &sur.z1_metrics[i];
        println!("z1[{name}]: maep {:.3}%  mse {:.3e}", m.maep, m.mse);
    }
    for (k, &(i, j)) in sur.pair_order.iter().enumerate() {
        let m = &sur.zm_metrics[k];
        println!(
            "zm[{}->{}]: maep {:.3}%  mse {:.3e}",
            sur.ibg_names[i], sur.ibg_names[j], m.maep, m.mse
        );
    }

    // Structural floor experiments.
    // (a) How well does the homogeneous basis approximate the constant-1
    // function over this dataset? That is the irreducible intercept burden.
    let ones = vec![1.0; ds.features.len()];
    let m1 = vscuc::surrogate::fit_target(&ds.features, &ones).unwrap();
    let f1 = vscuc::surrogate::evaluate_fit(&m1, &ds.features, &ones);
    println!("constant-1 floor: maep {:.3}%  mse {:.3e}", f1.maep, f1.mse);
    // (b) Cheat fit with an explicit intercept column: isolates how much of
    // the zm error is intercept-structural versus genuine high-order terms.
    let aug: Vec<Vec<f64>> = ds
        .features
        .iter()
        .map(|phi| {
            let mut row = Vec::with_capacity(phi.len() + 1);
            row.push(1.0);
            row.extend_from_slice(phi);
            row
        })
        .collect();
    for (k, &(i, j)) in sur.pair_order.iter().enumerate() {
        let y: Vec<f64> = ds.zm.iter().map(|r| r[k]).collect();
        let mc = vscuc::surrogate::fit_target(&aug, &y).unwrap();
        let fc = vscuc::surrogate::evaluate_fit(&mc, &aug, &y);
        println!(
            "zm[{}->{}] WITH intercept: maep {:.3}%  mse {:.3e}",
            sur.ibg_names[i], sur.ibg_names[j], fc.maep, fc.mse
        );
    }
    for i in 0..sur.ibg_names.len() {
        let y: Vec<f64> = ds.z1.iter().map(|r| r[i]).collect();
        let mc = vscuc::surrogate::fit_target(&aug, &y).unwrap();
        let fc = vscuc::surrogate::evaluate_fit(&mc, &aug, &y);
        println!(
            "z1[{}] WITH intercept: maep {:.3}%  mse {:.3e}",
            sur.ibg_names[i], fc.maep, fc.mse
        );
    }
}
