//! The exit gate: one numbered check per line, all of them must hold.
//! Run with `--nocapture` to watch the lines as they complete; the slow
//! Monte Carlo checks come first.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ratchet_core::bfun::{b_funcs, b_partials, b_slopes};
use ratchet_core::curve::{
    a_by_quadrature, integrate_curve, solve_continuum, CurveOpts, VerifyOpts,
};
use ratchet_core::finite::{
    convergence_study, foc_residual, obstacle_thresholds, solve_thresholds, FocCheck, RateGrid,
    SolveOpts,
};
use ratchet_core::model::{v_constant, Unrestricted};
use ratchet_core::sim::{simulate_value, SimConfig, StrategySpec};
use ratchet_core::ModelParams;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn new() -> Self {
        Gate { failures: Vec::new() }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} - {name}: {detail}");
        if !pass {
            self.failures.push(format!("{name}: {detail}"));
        }
    }
}

fn rich<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |hh: f64| (f(x + hh) - f(x - hh)) / (2.0 * hh);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn acceptance() {
    let mut gate = Gate::new();
    let p = ModelParams::new(4.0, 2.0, 0.1).unwrap();
    let cbar = 4.0;
    let scale = cbar / p.q;

    let curve4 = integrate_curve(&p, cbar, &CurveOpts { steps: 2000, c_low: 0.0 }).unwrap();
    let curve4_half = integrate_curve(&p, cbar, &CurveOpts { steps: 4000, c_low: 0.0 }).unwrap();
    let curve8 = integrate_curve(&p, 8.0, &CurveOpts { steps: 16_000, c_low: 0.0 }).unwrap();

    // 1. simulating the never-ratchet strategy reproduces its closed form
    {
        let exact = v_constant(&p, cbar, 5.0);
        let frozen = 26.9231241859;
        let cfg = SimConfig {
            n_paths: 200_000,
            dt: 1e-3,
            t_max: 100.0,
            seed: 7,
            antithetic: true,
            bridge: true,
        };
        let t0 = Instant::now();
        let r = simulate_value(&p, &StrategySpec::Constant { rate: cbar }, 5.0, &cfg).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let z = (r.mean - exact).abs() / r.std_error;
        gate.check(
            "constant-rate simulation",
            (exact - frozen).abs() <= 1e-9 * frozen && z <= 3.0 && secs <= 60.0,
            format!(
                "mean {:.6} vs {:.6}, |z| = {:.2}, {:.1}s for {} paths",
                r.mean, exact, z, secs, r.n_paths
            ),
        );
    }

    // 2. simulating the moving-boundary strategy from five start states
    {
        let zeta2 = curve4.zeta_at(2.0).unwrap();
        let probes = [(5.0, 0.0), (zeta2, 2.0), (2.0, 0.0), (4.0, 1.0), (10.0, 3.0)];
        let t0 = Instant::now();
        let mut worst_z = 0.0_f64;
        let mut lines = Vec::new();
        for (k, &(x0, c0)) in probes.iter().enumerate() {
            let exact = curve4.w_value(x0, c0).unwrap();
            let cfg = SimConfig {
                n_paths: 100_000,
                dt: 1e-3,
                t_max: 100.0,
                seed: 101 + k as u64,
                antithetic: true,
                bridge: true,
            };
            let spec = StrategySpec::Curve { policy: curve4.clone(), start_rate: c0 };
            let r = simulate_value(&p, &spec, x0, &cfg).unwrap();
            let z = (r.mean - exact).abs() / r.std_error;
            worst_z = worst_z.max(z);
            lines.push(format!("({x0:.3},{c0}) |z|={z:.2}"));
        }
        gate.check(
            "curve simulation probes",
            worst_z <= 3.0,
            format!("{} in {:.1}s", lines.join(", "), t0.elapsed().as_secs_f64()),
        );
    }

    // 3. the integrated coefficient still solves its defining identity,
    //    vanishes at the cap, stays positive inside, and matches the
    //    quadrature route
    {
        let cs = curve4.c_samples();
        let zs = curve4.zeta_samples();
        let as_ = curve4.a_samples();
        let n = cs.len();
        let mut ident = 0.0_f64;
        for k in 0..n {
            let (b0_x, b1_x) = b_slopes(&p, zs[k], cs[k]);
            ident = ident.max((as_[k] * b1_x + b0_x).abs());
        }
        let anchor = as_[n - 1].abs();
        let positive = as_[..n - 1].iter().all(|&a| a > 0.0);
        let aq = a_by_quadrature(&curve4).unwrap();
        let mut qdiff = 0.0_f64;
        for k in 0..n {
            qdiff = qdiff.max((aq[k] - as_[k]).abs());
        }
        gate.check(
            "coefficient optimality identity",
            ident <= 1e-6 * scale && anchor <= 1e-12 && positive && qdiff <= 1e-6 * scale,
            format!(
                "max |A b1' + b0'| = {ident:.2e}, A at cap = {anchor:.1e}, \
                 interior positive = {positive}, quadrature gap {qdiff:.2e}"
            ),
        );
    }

    // 4. the full verification sweep at caps 4 and 8
    {
        let vopts = VerifyOpts { tol: 1e-4, nx: 400 };
        let r4 = curve4.verify(&vopts).unwrap();
        let r8 = curve8.verify(&vopts).unwrap();
        gate.check(
            "verification sweep",
            r4.pass && r8.pass,
            format!(
                "cap 4: pass={} (pasting {:.1e}/{:.1e}), cap 8: pass={} (pasting {:.1e}/{:.1e})",
                r4.pass,
                r4.max_pasting_mixed,
                r4.max_pasting_cc,
                r8.pass,
                r8.max_pasting_mixed,
                r8.max_pasting_cc
            ),
        );
    }

    // 5. a cap below q sigma^2 / (2 mu) collapses every solver to
    //    immediate full payout
    {
        let tiny = 0.04;
        let (pol, rep) = solve_continuum(
            &p,
            tiny,
            &CurveOpts { steps: 400, c_low: 0.0 },
            &VerifyOpts::default(),
        )
        .unwrap();
        let flat = pol.zeta_samples().iter().all(|&z| z == 0.0);
        let mut vdiff = 0.0_f64;
        for k in 0..=40 {
            let x = 0.25 * k as f64;
            for c in [0.0, 0.01, 0.03] {
                let d = (pol.w_value(x, c).unwrap() - v_constant(&p, tiny, x)).abs();
                vdiff = vdiff.max(d);
            }
        }
        let menu = solve_thresholds(&p, &RateGrid::dyadic(tiny, 3).unwrap(), &SolveOpts::default())
            .unwrap();
        let menu_flat = menu.thresholds().iter().all(|&z| z == 0.0);
        let mut mdiff = 0.0_f64;
        for k in 0..=40 {
            let x = 0.25 * k as f64;
            mdiff = mdiff.max((menu.value(x, 0) - v_constant(&p, tiny, x)).abs());
        }
        let one = solve_thresholds(&p, &RateGrid::new(vec![0.0, tiny]).unwrap(), &SolveOpts::default())
            .unwrap();
        gate.check(
            "trivial cap collapses",
            flat && rep.pass
                && vdiff <= 1e-12
                && menu_flat
                && mdiff <= 1e-12
                && one.thresholds()[0] == 0.0,
            format!(
                "boundary flat = {flat}, verified = {}, curve gap {vdiff:.1e}, \
                 menu gap {mdiff:.1e}, single threshold {}",
                rep.pass,
                one.thresholds()[0]
            ),
        );
    }

    // 6. value ordering across strategy classes, and where the curve
    //    starts relative to the unrestricted barrier
    {
        let u4 = Unrestricted::new(p, cbar).unwrap();
        let u8 = Unrestricted::new(p, 8.0).unwrap();
        let one = solve_thresholds(&p, &RateGrid::new(vec![0.0, cbar]).unwrap(), &SolveOpts::default())
            .unwrap();
        let mut m1 = f64::INFINITY; // one-step over constant
        let mut m2 = f64::INFINITY; // curve over one-step
        let mut m3 = f64::INFINITY; // unrestricted over curve
        for k in 0..400 {
            let x = 25.0 * k as f64 / 399.0;
            let vc = v_constant(&p, cbar, x);
            let v1 = one.value(x, 0);
            let w = curve4.w_value(x, 0.0).unwrap();
            let vn = u4.value(x);
            m1 = m1.min(v1 - vc);
            m2 = m2.min(w - v1);
            m3 = m3.min(vn - w);
        }
        let slack = 1e-6 * scale;
        let z40 = curve4.zeta_at(0.0).unwrap();
        let z80 = curve8.zeta_at(0.0).unwrap();
        gate.check(
            "value ordering",
            m1 >= -slack
                && m2 >= -slack
                && m3 >= -slack
                && z40 >= u4.b_star()
                && z80 < u8.b_star(),
            format!(
                "min gaps {m1:.2e}, {m2:.2e}, {m3:.2e}; boundary starts {z40:.4} >= {:.4} \
                 at cap 4 and {z80:.4} < {:.4} at cap 8",
                u4.b_star(),
                u8.b_star()
            ),
        );
    }

    // 7. dyadic menu refinement: gains shrink monotonically and the last
    //    menu is within a small multiple of its own last gain from the curve
    {
        let t0 = Instant::now();
        let rows = convergence_study(&p, cbar, 6, &SolveOpts::default()).unwrap();
        let nonneg = rows.iter().all(|r| r.d_sup >= 0.0);
        let decreasing = rows.windows(2).all(|w| w[1].d_sup <= w[0].d_sup);
        let d_last = rows.last().unwrap().d_sup;

        let fine = solve_thresholds(&p, &RateGrid::dyadic(cbar, 6).unwrap(), &SolveOpts::default())
            .unwrap();
        let hi = 4.0 * Unrestricted::new(p, cbar).unwrap().b_star();
        let mut gap = f64::NEG_INFINITY;
        for k in 0..400 {
            let x = hi * k as f64 / 399.0;
            gap = gap.max(curve4.w_value(x, 0.0).unwrap() - fine.value(x, 0));
        }
        let secs = t0.elapsed().as_secs_f64();
        gate.check(
            "dyadic refinement",
            nonneg && decreasing && gap <= 5.0 * d_last && secs <= 300.0,
            format!(
                "gains {} nonneg/decreasing, curve gap {gap:.2e} vs 5x last gain {:.2e}, {secs:.1}s",
                rows.iter().map(|r| format!("{:.1e}", r.d_sup)).collect::<Vec<_>>().join(" "),
                5.0 * d_last
            ),
        );
    }

    // 8. the recursive argmax and the smallest-supersolution contact point
    //    place the same thresholds, and each interior threshold zeroes the
    //    first-order condition
    {
        let grid = RateGrid::new(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let pol = solve_thresholds(&p, &grid, &SolveOpts::default()).unwrap();
        let obs = obstacle_thresholds(&p, &grid, &Default::default()).unwrap();
        let mut dz = 0.0_f64;
        for i in 0..pol.thresholds().len() {
            dz = dz.max((pol.thresholds()[i] - obs.thresholds[i]).abs());
        }
        let mut foc = 0.0_f64;
        let mut interior = 0;
        for level in 0..pol.thresholds().len() {
            if let FocCheck::Interior(r) = foc_residual(&pol, level).unwrap() {
                foc = foc.max(r.abs());
                interior += 1;
            }
        }
        gate.check(
            "threshold route agreement",
            dz <= 1e-5 && foc <= 1e-6 * scale && interior == pol.thresholds().len(),
            format!("max threshold gap {dz:.2e}, max first-order residual {foc:.2e} over {interior} interior thresholds"),
        );
    }

    // 9. numerics hygiene: step-halving stability, derivative evaluators
    //    against a coarse-step differencing oracle, root identities
    {
        let z_full = curve4.zeta_at(0.0).unwrap();
        let z_half = curve4_half.zeta_at(0.0).unwrap();
        let halving = (z_full - z_half).abs() / z_full;

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut fd = 0.0_f64;
        for _ in 0..20 {
            let x = 0.15 + 14.85 * rng.random::<f64>();
            let c = 7.5 * rng.random::<f64>();
            let d = b_partials(&p, x, c);
            let hx = 1e-3 * x.max(1.0);
            let hc = 1e-3 * c.max(1.0);
            fd = fd.max(rel(d.b0_x, rich(|xx| b_funcs(&p, xx, c).0, x, hx)));
            fd = fd.max(rel(d.b1_x, rich(|xx| b_funcs(&p, xx, c).1, x, hx)));
            fd = fd.max(rel(d.b0_xx, rich(|xx| b_slopes(&p, xx, c).0, x, hx)));
            fd = fd.max(rel(d.b1_xx, rich(|xx| b_slopes(&p, xx, c).1, x, hx)));
            fd = fd.max(rel(d.b0_xc, rich(|cc| b_slopes(&p, x, cc).0, c, hc)));
            fd = fd.max(rel(d.b1_xc, rich(|cc| b_slopes(&p, x, cc).1, c, hc)));
        }

        let mut vieta = 0.0_f64;
        for k in 0..=32 {
            let c = 0.25 * k as f64;
            let t = p.theta(c);
            let prod = 2.0 * p.q / (p.sigma * p.sigma);
            let sum = 2.0 * (c - p.mu) / (p.sigma * p.sigma);
            vieta = vieta.max((t.theta1 * t.theta2 + prod).abs() / prod);
            vieta = vieta.max((t.theta1 + t.theta2 - sum).abs() / sum.abs().max(1.0));
        }
        gate.check(
            "numerics hygiene",
            halving <= 1e-6 && fd <= 1e-6 && vieta <= 1e-12,
            format!(
                "step-halving shift {halving:.1e}, worst derivative gap {fd:.1e}, \
                 worst root identity {vieta:.1e}"
            ),
        );
    }

    assert!(
        gate.failures.is_empty(),
        "acceptance failures:\n{}",
        gate.failures.join("\n")
    );
}
