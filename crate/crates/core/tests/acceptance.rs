//! Acceptance criteria. Each test prints one PASS/FAIL line and then asserts.
//! Reference values come from oracles implemented here, independent of the
//! library's own special functions.

use std::fs;
use std::process::Command;
use std::time::Instant;

use hilfer_core::monotone::{eta_value, iterate_extremal, order_leq, MildSolver, MonotoneConfig};
use hilfer_core::operators::{FractionalFamily, FractionalOrder, Generator};
use hilfer_core::problems::{
    build_heat1d, find_quasi_pair, Heat1DScenario, HeatImpulse, ScalarLinearScenario, X0Profile,
};
use hilfer_core::quadrature::{gronwall_bound, JumpRecord, PcTrajectory};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

// Pinned tolerances and limits.
const C1_MAX_ABS: f64 = 1e-3;
const C1_MAX_SECONDS: f64 = 30.0;
const C2_MAX_WEIGHTED: f64 = 1e-3;
const C3_MAX_WEIGHTED: f64 = 2e-3;
const C4_MAX_DEV: f64 = 1e-6;
const C5_MAX_WEIGHTED: f64 = 2e-3;
const C5_JUMP_TOL: f64 = 1e-8;
const C6_MAX_GAP: f64 = 1e-6;
const C6_MAX_ITER: usize = 200;
const C6_MAX_SECONDS: f64 = 120.0;
const C7_TOL: f64 = 1e-9;
const C7_RESIDUAL_FACTOR: f64 = 10.0;
const C8_SAMPLES: usize = 100;
const C9_MIN_RATIO: f64 = 1.5;
const C10_REL_SLACK: f64 = 1e-3;
const C10_ORACLE_REL: f64 = 5e-3;
const C11_TOL: f64 = 1e-12;

fn report(n: u32, pass: bool, detail: String) {
    println!(
        "criterion {n:>2}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// E_{a,b}(z) by direct power series; adequate for |z| ≤ 4.
fn ml(a: f64, b: f64, z: f64) -> f64 {
    let mut sum = 0.0;
    let mut zk = 1.0;
    for k in 0..400 {
        let term = zk / gamma(a * k as f64 + b);
        sum += term;
        if k > 5 && term.abs() < 1e-18 {
            break;
        }
        zk *= z;
    }
    sum
}

/// Weighted trajectory of x' = -a x in the Hilfer sense with weighted
/// initial datum x0, plus constant impulses: a sum of relaxation kernels.
fn scalar_reference(mu: f64, nu: f64, a: f64, x0: f64, impulses: &[(f64, f64)], t: f64) -> f64 {
    let lam = mu + nu - mu * nu;
    let relax = |tau: f64| tau.powf(lam - 1.0) * ml(mu, lam, -a * tau.powf(mu));
    let mut x = x0 * relax(t);
    for &(tk, j) in impulses.iter().filter(|(tk, _)| *tk < t) {
        x += j * relax(t - tk);
    }
    x
}

/// Solves the linear scalar problem on the solver grid by Picard iteration.
fn scalar_solve(
    mu: f64,
    nu: f64,
    impulses: &[(f64, f64)],
    nodes: usize,
) -> (MildSolver, PcTrajectory) {
    let order = FractionalOrder::new(mu, nu).unwrap();
    let mut sc = ScalarLinearScenario::new(1.0, 0.0, 1.0, order, 1.0);
    for &(t, j) in impulses {
        sc = sc.with_impulse(t, j);
    }
    let problem = sc.problem().unwrap();
    let mut cfg = MonotoneConfig::new(0.0, 0.0, 0.0, vec![0.0; impulses.len()]);
    cfg.nodes_per_segment = nodes;
    let solver = MildSolver::new(&problem, &cfg).unwrap();
    let zero = PcTrajectory::zeros(solver.grid().clone(), 1);
    let x = solver.apply_g(&zero, &zero).unwrap();
    (solver, x)
}

/// (max |x - ref|, max weighted |x - ref|) over non-impulse nodes t > 0.
fn scalar_errors(
    solver: &MildSolver,
    x: &PcTrajectory,
    mu: f64,
    nu: f64,
    impulses: &[(f64, f64)],
) -> (f64, f64) {
    let grid = solver.grid();
    let (mut abs, mut weighted) = (0.0_f64, 0.0_f64);
    for n in 1..grid.len() {
        if grid.impulse_indices().contains(&n) {
            continue;
        }
        let t = grid.nodes()[n];
        let e = (x.raw_at(n)[0] - scalar_reference(mu, nu, 1.0, 1.0, impulses, t)).abs();
        abs = abs.max(e);
        weighted = weighted.max(grid.weight(n) * e);
    }
    (abs, weighted)
}

fn criterion1_error(nodes: usize) -> f64 {
    let (solver, x) = scalar_solve(0.6, 1.0, &[], nodes);
    scalar_errors(&solver, &x, 0.6, 1.0, &[]).0
}

#[test]
fn criterion_01_caputo_reduction() {
    // With ν = 1 the reference reduces to E_{0.6}(-t^{0.6}).
    let start = Instant::now();
    let err = criterion1_error(4096);
    let secs = start.elapsed().as_secs_f64();
    let pass = err <= C1_MAX_ABS && secs <= C1_MAX_SECONDS;
    report(
        1,
        pass,
        format!("max abs error {err:.3e} <= {C1_MAX_ABS:e}, {secs:.2} s <= {C1_MAX_SECONDS} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_riemann_liouville_reduction() {
    let (solver, x) = scalar_solve(0.6, 0.0, &[], 512);
    let (_, w) = scalar_errors(&solver, &x, 0.6, 0.0, &[]);
    let pass = w <= C2_MAX_WEIGHTED;
    report(
        2,
        pass,
        format!("max weighted error {w:.3e} <= {C2_MAX_WEIGHTED:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_general_hilfer() {
    let (solver, x) = scalar_solve(0.5, 0.5, &[], 512);
    let (_, w) = scalar_errors(&solver, &x, 0.5, 0.5, &[]);
    let pass = w <= C3_MAX_WEIGHTED;
    report(
        3,
        pass,
        format!("max weighted error {w:.3e} <= {C3_MAX_WEIGHTED:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_zero_generator_identities() {
    let gen = Generator::zero(2).unwrap();
    let x = DVector::from_vec(vec![1.0, -0.5]);
    let mut worst_s = 0.0_f64;
    let mut worst_p = 0.0_f64;
    for mu in [0.3, 0.5, 0.7] {
        for nu in [0.0, 0.5, 1.0] {
            let order = FractionalOrder::new(mu, nu).unwrap();
            let lam = mu + nu - mu * nu;
            let fam = FractionalFamily::new(&gen, 0.0, order).unwrap();
            for t in [0.1, 0.5, 1.0] {
                let s = fam.s_apply(t, &x).unwrap();
                let s_ref = &x * (t.powf(lam - 1.0) / gamma(lam));
                worst_s = worst_s.max((s - s_ref).amax());
                let p = fam.p_apply(t, &x).unwrap();
                let p_ref = &x / gamma(mu);
                worst_p = worst_p.max((p - p_ref).amax());
            }
        }
    }
    let pass = worst_s <= C4_MAX_DEV && worst_p <= C4_MAX_DEV;
    report(
        4,
        pass,
        format!("S deviation {worst_s:.3e}, P deviation {worst_p:.3e}, both <= {C4_MAX_DEV:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_impulse_jump() {
    let (mu, nu, t1, jump) = (0.5, 0.5, 0.4, 0.5);
    let lam = mu + nu - mu * nu;
    let imp = [(t1, jump)];
    let (solver, x) = scalar_solve(mu, nu, &imp, 512);
    let grid = solver.grid();
    let i1 = grid.impulse_indices()[0];
    let (mut before, mut after) = (0.0_f64, 0.0_f64);
    for n in 1..grid.len() {
        if n == i1 {
            continue;
        }
        let t = grid.nodes()[n];
        let e =
            grid.weight(n) * (x.raw_at(n)[0] - scalar_reference(mu, nu, 1.0, 1.0, &imp, t)).abs();
        if t < t1 {
            before = before.max(e);
        } else {
            after = after.max(e);
        }
    }
    // left limit: the pre-impulse solution, continuous from the left
    let left_ref = t1.powf(1.0 - lam) * scalar_reference(mu, nu, 1.0, 1.0, &[], t1);
    let left_err = (x.weighted_at(i1)[0] - left_ref).abs();
    before = before.max(left_err);
    // (t - t1)^{1-λ} S*(t - t1) J → J / Γ(λ) as t → t1⁺
    let propagated = jump / gamma(lam);
    let recorded = x.weighted_jump(1)[0];
    let jump_err = (recorded - propagated).abs();
    let pass = before <= C5_MAX_WEIGHTED && after <= C5_MAX_WEIGHTED && jump_err <= C5_JUMP_TOL;
    report(
        5,
        pass,
        format!(
            "weighted error before {before:.3e}, after {after:.3e} (<= {C5_MAX_WEIGHTED:e}); jump {recorded:.12} vs {propagated:.12}, diff {jump_err:.2e} <= {C5_JUMP_TOL:e}"
        ),
    );
    assert!(pass);
}

fn heat_scenario() -> Heat1DScenario {
    Heat1DScenario {
        n_interior: 16,
        length: 1.0,
        order: FractionalOrder::new(0.7, 0.5).unwrap(),
        horizon: 1.0,
        f: 1.0,
        alpha: -0.5,
        beta: 0.2,
        impulses: vec![HeatImpulse {
            time: 0.5,
            kappa: 0.3,
            constant: 0.1,
        }],
        x0: X0Profile::Sine { amplitude: 1.0 },
    }
}

/// A(1) holds with C = 0.5 ≥ -α and L = 0 ≥ -β; with C* = 0.5 ≥ α and
/// L* = 0.2 ≥ β the uniqueness condition holds as well.
fn heat_config(tol: f64, with_a5: bool) -> MonotoneConfig {
    let mut cfg = MonotoneConfig::new(0.5, 0.0, 0.0, vec![0.3]);
    cfg.nodes_per_segment = 256;
    cfg.tol = tol;
    cfg.max_iter = C6_MAX_ITER;
    if with_a5 {
        cfg.c_star = Some(0.5);
        cfg.l_star = Some(0.2);
    }
    cfg
}

#[test]
fn criterion_06_monotone_sandwich() {
    let start = Instant::now();
    let problem = build_heat1d(&heat_scenario()).unwrap();
    let solver = MildSolver::new(&problem, &heat_config(C6_MAX_GAP, false)).unwrap();
    let (pair, _) = find_quasi_pair(&solver, 0.125, 40).unwrap();
    let (_, _, rep) = iterate_extremal(&solver, &pair.y0, &pair.z0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let gap = rep.final_gap();
    let pass = rep.violation_count == 0
        && rep.converged
        && gap <= C6_MAX_GAP
        && rep.iterations <= C6_MAX_ITER
        && secs <= C6_MAX_SECONDS;
    report(
        6,
        pass,
        format!(
            "{} iterations, {} ordering violations beyond {:.1e}, final gap {gap:.2e} <= {C6_MAX_GAP:e}, {secs:.1} s <= {C6_MAX_SECONDS} s",
            rep.iterations, rep.violation_count, rep.order_tol
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_uniqueness() {
    let problem = build_heat1d(&heat_scenario()).unwrap();
    let solver = MildSolver::new(&problem, &heat_config(C7_TOL, true)).unwrap();
    let (pair, _) = find_quasi_pair(&solver, 0.125, 40).unwrap();
    let (y, z, rep) = iterate_extremal(&solver, &pair.y0, &pair.z0).unwrap();
    let ry = solver.residual_fixed_point(&y).unwrap();
    let rz = solver.residual_fixed_point(&z).unwrap();
    let gap = rep.final_gap();
    let limit = C7_RESIDUAL_FACTOR * C7_TOL;
    let pass = gap <= C7_TOL && ry <= limit && rz <= limit && rep.unique;
    report(
        7,
        pass,
        format!("final gap {gap:.2e} <= {C7_TOL:e}, residuals {ry:.2e} / {rz:.2e} <= {limit:e}"),
    );
    assert!(pass);
}

/// Per-entry blend lo + s (hi - lo), applied to node values and jump records.
fn blend(lo: &PcTrajectory, hi: &PcTrajectory, s: &[f64], sj: &[f64]) -> PcTrajectory {
    let weighted = lo
        .weighted()
        .iter()
        .zip(hi.weighted())
        .zip(s)
        .map(|((a, b), s)| a + s * (b - a))
        .collect();
    let mut idx = 0;
    let mut mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(a, b)| {
                let v = a + sj[idx] * (b - a);
                idx += 1;
                v
            })
            .collect()
    };
    let jumps = lo
        .jumps()
        .iter()
        .zip(hi.jumps())
        .map(|(a, b)| JumpRecord {
            time: a.time,
            left: mix(&a.left, &b.left),
            right: mix(&a.right, &b.right),
        })
        .collect();
    PcTrajectory::from_weighted(lo.grid().clone(), lo.dim(), weighted, jumps).unwrap()
}

#[test]
fn criterion_08_mixed_monotonicity() {
    let problem = build_heat1d(&heat_scenario()).unwrap();
    let mut cfg = heat_config(1e-8, false);
    cfg.nodes_per_segment = 64;
    let solver = MildSolver::new(&problem, &cfg).unwrap();
    let (pair, _) = find_quasi_pair(&solver, 0.125, 40).unwrap();
    let order_tol = solver.order_tol_for(&pair.y0, &pair.z0);
    let n_entries = pair.y0.weighted().len();
    let n_jump = pair
        .y0
        .jumps()
        .iter()
        .map(|j| 2 * j.left.len())
        .sum::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let mut draw = |n: usize| -> [Vec<f64>; 4] {
        let mut q: [Vec<f64>; 4] = Default::default();
        for _ in 0..n {
            let mut v: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
            v.sort_by(f64::total_cmp);
            for (slot, x) in q.iter_mut().zip(v) {
                slot.push(x);
            }
        }
        q
    };
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..C8_SAMPLES {
        // y1 ≤ y2 ≤ z2 ≤ z1 entrywise inside [y0, z0]
        let s = draw(n_entries);
        let sj = draw(n_jump);
        let y1 = blend(&pair.y0, &pair.z0, &s[0], &sj[0]);
        let y2 = blend(&pair.y0, &pair.z0, &s[1], &sj[1]);
        let z2 = blend(&pair.y0, &pair.z0, &s[2], &sj[2]);
        let z1 = blend(&pair.y0, &pair.z0, &s[3], &sj[3]);
        let g1 = solver.apply_g(&y1, &z1).unwrap();
        let g2 = solver.apply_g(&y2, &z2).unwrap();
        let check = order_leq(&g1, &g2, order_tol).unwrap();
        worst = worst.min(check.worst);
        if !check.holds {
            failures += 1;
        }
    }
    let pass = failures == 0;
    report(
        8,
        pass,
        format!("{failures}/{C8_SAMPLES} ordered quadruples violate G(y1,z1) <= G(y2,z2); smallest margin {worst:.2e}, order_tol {order_tol:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_grid_refinement() {
    let grids = [512, 1024, 2048, 4096];
    let errors: Vec<f64> = grids.iter().map(|&n| criterion1_error(n)).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|r| *r >= C9_MIN_RATIO);
    let detail = grids
        .iter()
        .zip(&errors)
        .map(|(n, e)| format!("{n}: {e:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let rs = ratios
        .iter()
        .map(|r| format!("{r:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        9,
        pass,
        format!("errors {detail}; ratios {rs} >= {C9_MIN_RATIO}"),
    );
    assert!(pass);
}

/// Picard iteration for x = a + b ∫_0^t (t-s)^{β-1} x(s) ds with piecewise
/// linear product integration on a quadratically graded grid.
fn picard_volterra(nodes: &[f64], a: f64, b: f64, beta: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![vec![0.0; n]; n];
    for i in 1..n {
        let t = nodes[i];
        for j in 1..=i {
            let (lo, hi) = (nodes[j - 1], nodes[j]);
            let (ul, uh) = (t - lo, t - hi);
            let i0 = (ul.powf(beta) - uh.powf(beta)) / beta;
            let i1 = t * i0 - (ul.powf(beta + 1.0) - uh.powf(beta + 1.0)) / (beta + 1.0);
            let h = hi - lo;
            w[i][j - 1] += (hi * i0 - i1) / h;
            w[i][j] += (i1 - lo * i0) / h;
        }
    }
    let mut x = vec![a; n];
    for _ in 0..500 {
        let next: Vec<f64> = (0..n)
            .map(|i| a + b * w[i].iter().zip(&x).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        let step = next
            .iter()
            .zip(&x)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        x = next;
        if step < 1e-14 {
            break;
        }
    }
    x
}

#[test]
fn criterion_10_gronwall_diagnostic() {
    let (a, b, beta) = (1.0, 0.5, 0.5);
    let m = 400;
    let nodes: Vec<f64> = (0..=m).map(|j| (j as f64 / m as f64).powi(2)).collect();
    let x = picard_volterra(&nodes, a, b, beta);
    let ones = vec![a; nodes.len()];
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_oracle = 0.0_f64;
    for i in 1..nodes.len() {
        let bound = gronwall_bound(&nodes, &ones, b, beta, i).unwrap();
        worst_excess = worst_excess.max((x[i] - bound) / bound);
        // for constant a both sides equal a E_β(bΓ(β) t^β)
        let exact = a * ml(beta, 1.0, b * gamma(beta) * nodes[i].powf(beta));
        worst_oracle = worst_oracle
            .max(((x[i] - exact) / exact).abs())
            .max(((bound - exact) / exact).abs());
    }
    let pass = worst_excess <= C10_REL_SLACK && worst_oracle <= C10_ORACLE_REL;
    report(
        10,
        pass,
        format!(
            "max (x - bound)/bound = {worst_excess:.2e} <= {C10_REL_SLACK:e}; both within {worst_oracle:.2e} <= {C10_ORACLE_REL:e} of the Mittag-Leffler closed form"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_eta_report() {
    let want = 1.6 / gamma(1.5);
    let lib = eta_value(1.0, 0.0, 0.1, 0.2, 1.0, 0.5, 0.75);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eta.json");
    fs::write(
        &cfg,
        r#"{"problem": {"kind": "scalar", "a": 1.0, "x0": 1.0}, "mu": 0.5, "nu": 0.5, "T": 1.0,
            "grid_n": 64, "m_star": 1.0, "monotone": {"C": 0.2, "L1": 0.1},
            "mode": "check-hypotheses"}"#,
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_hilfer"))
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    let report_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let reported = report_json["eta"].as_f64().unwrap_or(f64::NAN);
    let pass =
        status.success() && (lib - want).abs() <= C11_TOL && (reported - want).abs() <= C11_TOL;
    report(
        11,
        pass,
        format!(
            "eta library {lib:.15}, report {reported:.15}, hand value {want:.15}, tol {C11_TOL:e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_12_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"problem": {"kind": "heat1d", "n_interior": 8, "f": 1.0, "alpha": -0.5, "beta": 0.2,
                        "x0": {"kind": "sine", "amplitude": 1.0}},
            "mu": 0.7, "nu": 0.5, "T": 1.0, "grid_n": 48,
            "impulses": [{"time": 0.5, "jump": 0.1, "kappa": 0.3}],
            "monotone": {"C": 0.5, "L": 0.0, "M_k": [0.3], "C_star": 0.5, "L_star": 0.2},
            "tol": 1e-9, "seed": 7}"#,
    )
    .unwrap();
    let run = |mode: &str, tag: &str| -> (Vec<u8>, Vec<u8>) {
        let out = dir.path().join(format!("{mode}-{tag}"));
        let status = Command::new(env!("CARGO_BIN_EXE_hilfer"))
            .args([
                "--config",
                cfg.to_str().unwrap(),
                "--mode",
                mode,
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success(), "{mode} run failed");
        let csv = fs::read(out.join("trajectory.csv")).unwrap_or_default();
        (csv, fs::read(out.join("report.json")).unwrap())
    };
    let (csv_a, rep_a) = run("solve", "a");
    let (csv_b, rep_b) = run("solve", "b");
    let (_, hyp_a) = run("check-hypotheses", "a");
    let (_, hyp_b) = run("check-hypotheses", "b");
    let pass = !csv_a.is_empty() && csv_a == csv_b && rep_a == rep_b && hyp_a == hyp_b;
    report(
        12,
        pass,
        format!(
            "solve CSV {} bytes identical: {}, solve report identical: {}, hypothesis report identical: {}",
            csv_a.len(),
            csv_a == csv_b,
            rep_a == rep_b,
            hyp_a == hyp_b
        ),
    );
    assert!(pass);
}
