//! End-to-end acceptance checks for the five-bus microgrid workflow. Each
//! test prints one summary line so the suite doubles as a release gate.

#![allow(non_snake_case)]

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use passnet::linsys::{check_strict_passivity, LtiNode, PassivityCertificate};
use passnet::mats;
use passnet::microgrid::{build_case_study, CaseStudy, DguParams};
use passnet::netgraph::{build_node_model, NetworkModel};
use passnet::sim::{self, simulate, Method, SimOptions};
use passnet::synthesis::{
    controlled_state_cost, retune, synthesize_node, SynthesisOptions, SynthesisResult,
};
use passnet::verify::{are_residual, assemble_design, local_cost_sum, lqr, verify_design};
use passnet::Error;

fn dgu_node() -> LtiNode {
    build_node_model(&DguParams::default().dynamics()).expect("parametric").unwrap()
}

/// The three DGUs share their dynamics, so one synthesis serves all of them.
fn shared_synthesis() -> &'static SynthesisResult {
    static CELL: OnceLock<SynthesisResult> = OnceLock::new();
    CELL.get_or_init(|| {
        synthesize_node(&dgu_node(), &SynthesisOptions::with_lambda(-8.0)).unwrap()
    })
}

fn case_results(network: &NetworkModel) -> BTreeMap<String, SynthesisResult> {
    network
        .nodes()
        .iter()
        .filter(|n| n.model.is_controlled())
        .map(|n| (n.id.clone(), shared_synthesis().clone()))
        .collect()
}

fn report(num: u32, what: &str, ok: bool) {
    println!("acceptance {num} ({what}): {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "acceptance {num} ({what}) failed");
}

#[test]
fn a1_single_node_penalty_recovery() {
    let t0 = Instant::now();
    let res = synthesize_node(&dgu_node(), &SynthesisOptions::with_lambda(-8.0)).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let r = res.r[(0, 0)];
    let ok = (r - 1.55).abs() / 1.55 <= 0.05 && elapsed < 5.0;
    println!("  R = {r:.4}, synthesized in {elapsed:.2} s");
    report(1, "single-node control penalty", ok);
}

#[test]
fn a2_global_gain_matches_lqr_oracle() {
    let t0 = Instant::now();
    let cs = build_case_study().unwrap();
    let results = case_results(&cs.network);

    let mut ok = true;
    for post_event in [false, true] {
        let mut network = cs.network.clone();
        if post_event {
            for (_, ev) in &cs.events {
                network.modify_topology(ev).unwrap();
            }
        }
        let design = assemble_design(&network, &results).unwrap();
        let sol = lqr(&design.a, &design.bu, &design.q, &design.r).unwrap();
        // the oracle reports u = -K x; the design carries u = +K x
        let gain_err = mats::frob(&(-&sol.k - &design.k)) / mats::frob(&design.k);
        let resid =
            are_residual(&design.a, &design.bu, &design.q, &design.r, &(&design.p * 0.5)).unwrap();
        println!(
            "  topology {}: gain mismatch {gain_err:.3e}, Riccati residual {resid:.3e}",
            if post_event { "after events" } else { "initial" }
        );
        ok &= gain_err <= 1e-6 && resid <= 1e-6;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    ok &= elapsed < 5.0;
    report(2, "network gain is the LQR optimum", ok);
}

#[test]
fn a3_certificates_and_trajectory_dissipation() {
    let cs = build_case_study().unwrap();
    let results = case_results(&cs.network);

    let vr = verify_design(&cs.network, &results, 1e-8).unwrap();
    let worst = vr.subsystems.iter().map(|s| s.margin).fold(f64::NEG_INFINITY, f64::max);
    let certs_ok = vr.subsystems.iter().all(|s| s.passed);
    println!("  worst certificate margin {worst:.3e}");

    let opts = SimOptions { dt: 2e-6, t_end: 4.0, ..Default::default() };
    let traj = simulate(&cs.network, &results, None, &cs.events, None, &opts).unwrap();
    let margin = traj.min_dissipation_margin();
    println!("  trajectory dissipation margin {margin:.3e}");

    report(3, "passivity certificates hold", certs_ok && margin >= -1e-4);
}

#[test]
fn a4_cost_is_a_sum_of_local_terms() {
    let cs = build_case_study().unwrap();
    let results = case_results(&cs.network);
    let design = assemble_design(&cs.network, &results).unwrap();
    let n = design.q.nrows();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    for _ in 0..100 {
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let global = mats::quad_form(&design.q, &x);
        let local = local_cost_sum(&cs.network, &results, &x).unwrap();
        ok &= (global - local).abs() <= 1e-10 * global.abs().max(1.0);
    }

    // load and line diagonal entries are the physical conductances and
    // resistances; their rows carry no coupling terms
    for (i, expect) in [(9, 0.1), (10, 0.05), (11, 0.05), (12, 0.05), (13, 0.05)] {
        ok &= (design.q[(i, i)] - expect).abs() <= 1e-12 * expect;
        for j in 0..n {
            if j != i {
                ok &= design.q[(i, j)] == 0.0 && design.q[(j, i)] == 0.0;
            }
        }
    }
    report(4, "cost evaluates as local terms", ok);
}

#[test]
fn a5_gain_is_cost_minimizing() {
    let t0 = Instant::now();
    let cs = build_case_study().unwrap();
    let results = case_results(&cs.network);
    let design = assemble_design(&cs.network, &results).unwrap();
    let n = design.a.nrows();
    let x_cost = design.cost_to_go().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;

    // exact quadratic cost of each perturbed stabilizing gain
    let mut perturbed = Vec::new();
    while perturbed.len() < 20 {
        let k = design.k.map(|v| v * (1.0 + 0.05 * rng.gen_range(-1.0..1.0_f64)));
        let a_cl = &design.a + &design.bu * &k;
        if mats::spectral_abscissa(&a_cl) >= 0.0 {
            continue;
        }
        let q_total = &design.q + k.transpose() * &design.r * &k;
        perturbed.push(passnet::verify::lyapunov(&a_cl, &q_total).unwrap());
    }

    let mut worst_gap = f64::INFINITY;
    let mut worst_rel = 0.0_f64;
    for _ in 0..20 {
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let j_opt = mats::quad_form(&x_cost, &x0);
        for xp in &perturbed {
            let j_pert = mats::quad_form(xp, &x0);
            worst_gap = worst_gap.min((j_pert - j_opt) / j_opt);
            ok &= j_pert >= j_opt * (1.0 - 1e-9);
        }

        // running cost integrated along the actual closed loop, with the
        // exact quadratic tail past the integration horizon
        let j_traj = integrate_cost(&design.a_cl, &design.q, &design.r, &design.k, &x_cost, &x0);
        let j_value = 0.5 * mats::quad_form(&design.p, &x0);
        let rel = (j_traj - j_value).abs() / j_value;
        worst_rel = worst_rel.max(rel);
        ok &= rel <= 0.01;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "  min dominance gap {worst_gap:.3e}, worst value mismatch {worst_rel:.3e}, {elapsed:.1} s"
    );
    report(5, "gain minimizes the certified cost", ok && elapsed < 60.0);
}

/// RK4 integration of the closed loop with trapezoidal accumulation of the
/// running cost, cut off at a fixed horizon plus the exact quadratic tail.
fn integrate_cost(
    a_cl: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k: &DMatrix<f64>,
    x_cost: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> f64 {
    let q_total = q + k.transpose() * r * k;
    let dt = 2e-7;
    let steps = 250_000; // 0.05 s, then the tail is exact
    let cutoff = 1e-9 * x0.norm();
    let mut x = x0.clone();
    let mut cost = 0.0;
    let mut prev = mats::quad_form(&q_total, &x);
    for _ in 0..steps {
        let k1 = a_cl * &x;
        let k2 = a_cl * (&x + &k1 * (dt / 2.0));
        let k3 = a_cl * (&x + &k2 * (dt / 2.0));
        let k4 = a_cl * (&x + &k3 * dt);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let cur = mats::quad_form(&q_total, &x);
        cost += 0.5 * dt * (prev + cur);
        prev = cur;
        if x.norm() <= cutoff {
            break;
        }
    }
    cost + mats::quad_form(x_cost, &x)
}

#[test]
fn a6_retuning_keeps_certificates() {
    let node = dgu_node();
    let res = shared_synthesis();
    let q_base = controlled_state_cost(&node.a, &node.bu, &res.p, res.s);

    let mut ok = true;
    for rbar in [1.55, 0.5, 0.1, 0.01] {
        let kbar = retune(&node, res, &DMatrix::from_element(1, 1, rbar)).unwrap();
        let sbar = 0.5 / rbar;
        // the certificate shape for the faster gain, from the same Y
        let w = -(
            &res.y * node.a.transpose() + &node.a * &res.y
                - (&node.bu * node.bu.transpose()) * (2.0 * sbar)
        );
        let gamma = &res.y * w.cholesky().unwrap().inverse() * &res.y;
        let cert = PassivityCertificate::new(res.p.clone(), mats::symmetrize(&gamma)).unwrap();
        let chk = check_strict_passivity(
            &node.a,
            Some(&node.bu),
            &node.bw,
            &node.c,
            Some(&kbar),
            &cert,
            1e-8,
        )
        .unwrap();
        let q_new = controlled_state_cost(&node.a, &node.bu, &res.p, sbar);
        let loewner = mats::min_eig_sym(&(&q_new - &q_base));
        println!("  rbar {rbar}: margin {:.3e}, state-cost gap {loewner:.3e}", chk.margin);
        ok &= chk.passed && loewner >= -1e-9 * mats::frob(&q_base);
    }

    let invalid = retune(&node, res, &DMatrix::from_element(1, 1, 2.0));
    ok &= matches!(invalid, Err(Error::InvalidRetune(_)));
    report(6, "retuning stays certified, larger penalties rejected", ok);
}

#[test]
fn a7_event_scenario_settles() {
    let t0 = Instant::now();
    let cs = build_case_study().unwrap();
    let results = case_results(&cs.network);
    let mut ok = true;

    let opts = SimOptions {
        dt: 2e-6,
        t_end: 4.0,
        monitor_dissipation: false,
        ..Default::default()
    };
    let traj = simulate(&cs.network, &results, None, &cs.events, None, &opts).unwrap();

    // each epoch ends within 0.5% of the nominal 48 V scale of the
    // equilibrium recomputed from the network state at that point
    let mut network = cs.network.clone();
    let mut event_idx = 0;
    for ep in &traj.epochs {
        while event_idx < cs.events.len() && cs.events[event_idx].0 <= ep.t_start {
            network.modify_topology(&cs.events[event_idx].1).unwrap();
            event_idx += 1;
        }
        let design = assemble_design(&network, &results).unwrap();
        let x_eq = sim::equilibrium(&design.a_cl, &design.affine).unwrap();
        let x_end = ep.states.last().unwrap();
        let worst = network
            .state_labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| l.ends_with(":v"))
            .map(|(i, _)| (x_end[i] - x_eq[i]).abs())
            .fold(0.0_f64, f64::max);
        println!("  epoch ending {:.1} s: worst voltage error {worst:.3e} V", ep.t_end);
        ok &= worst <= 0.005 * 48.0;
    }

    // Hurwitz before and after the plug-in
    let before = assemble_design(&cs.network, &results).unwrap();
    ok &= mats::spectral_abscissa(&before.a_cl) < 0.0;
    ok &= mats::spectral_abscissa(&assemble_design(&network, &results).unwrap().a_cl) < 0.0;

    // startup responses across the retuning sweep
    let node = dgu_node();
    let mut settle = Vec::new();
    let mut overshoot = Vec::new();
    for rbar in [1.55, 0.5, 0.1, 0.01] {
        let kbar = retune(&node, shared_synthesis(), &DMatrix::from_element(1, 1, rbar)).unwrap();
        let gains: BTreeMap<String, DMatrix<f64>> = cs
            .network
            .nodes()
            .iter()
            .filter(|n| n.model.is_controlled())
            .map(|n| (n.id.clone(), kbar.clone()))
            .collect();
        let opts = SimOptions {
            dt: 2e-6,
            t_end: 1.0,
            monitor_dissipation: false,
            ..Default::default()
        };
        let traj = simulate(&cs.network, &results, Some(&gains), &[], None, &opts).unwrap();
        let ep = &traj.epochs[0];
        let i_v = ep.labels.iter().position(|l| l == "dgu1:v").unwrap();
        let target = ep.equilibrium[i_v];
        let (t, v) = traj.series("dgu1:v");
        settle.push(sim::settling_time(&t, &v, target, 0.005).unwrap_or(f64::INFINITY));
        overshoot.push(sim::peak(&v) / target);
    }
    println!("  settling {settle:.3?} s, normalized peaks {overshoot:.3?}");
    ok &= settle[0] > settle[1] && settle[1] > settle[2];
    ok &= overshoot[3] > overshoot[2];

    let elapsed = t0.elapsed().as_secs_f64();
    ok &= elapsed < 120.0;
    println!("  scenario and sweep in {elapsed:.1} s");
    report(7, "event scenario settles and retuning trades speed for overshoot", ok);
}

#[test]
fn a8_integrator_cross_check() {
    let cs = build_case_study().unwrap();
    let results = case_results(&cs.network);
    let design = assemble_design(&cs.network, &results).unwrap();
    let x_eq = sim::equilibrium(&design.a_cl, &design.affine).unwrap();
    let x0 = &x_eq * 1.01;

    let run = |dt: f64, t_end: f64, method: Method| {
        let opts = SimOptions {
            dt,
            t_end,
            method,
            record_stride: usize::MAX,
            monitor_dissipation: false,
            ..Default::default()
        };
        let traj = simulate(&cs.network, &results, None, &[], Some(&x0), &opts).unwrap();
        traj.final_state().unwrap().1.clone()
    };

    let reference = run(2.5e-7, 1e-4, Method::Rk4);
    let err_coarse = (run(4e-6, 1e-4, Method::Rk4) - &reference).norm();
    let err_fine = (run(2e-6, 1e-4, Method::Rk4) - &reference).norm();
    let ratio = err_coarse / err_fine;
    println!("  halving-step error ratio {ratio:.2}");
    let order_ok = (ratio - 16.0).abs() <= 0.3 * 16.0;

    let xt = run(2e-7, 5e-5, Method::Trapezoidal);
    let xr = run(2e-7, 5e-5, Method::Rk4);
    let agree = (xt - xr).norm() / x_eq.norm();
    println!("  method disagreement {agree:.3e}");
    report(8, "integrators cross-validate", order_ok && agree <= 1e-6);
}

#[test]
fn case_study_is_the_shipped_configuration() {
    // keep the checked-in configuration in sync with the built-in scenario
    let text = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/microgrid.json"),
    )
    .unwrap();
    let cfg: passnet::config::Config = serde_json::from_str(&text).unwrap();
    let net = cfg.build_network().unwrap();
    let CaseStudy { network, events } = build_case_study().unwrap();
    assert_eq!(net.global_dim(), network.global_dim());
    assert_eq!(cfg.events().len(), events.len());
    assert_eq!(cfg.synthesis.lambda, -8.0);
}
