mod common;

use common::fixture;
use dlmc_core::dlmc::{decompose, reconcile, relative_gap, PiCoefficients};
use dlmc_core::pipeline::{run_dlmc, RunOptions};
use dlmc_core::sensitivity::Kind;
use dlmc_core::thermal::PiecewiseAging;

#[test]
fn root_total_is_the_price() {
    let f = fixture("chain6");
    let run = run_dlmc(&f, &RunOptions::default()).unwrap();
    for t in 1..=f.periods() {
        for kind in Kind::BOTH {
            let row = decompose(
                &f.topology,
                &run.tensor,
                &run.report.duals,
                &f.costs,
                &run.pi,
                0,
                t,
                kind,
            )
            .unwrap();
            let c = match kind {
                Kind::P => f.costs.energy[t - 1],
                Kind::Q => f.costs.reactive[t - 1],
            };
            assert_eq!(row.total, c);
            assert_eq!(row.components()[1..], [0.0; 5]);
            assert!((row.solver_dual - c).abs() < 1e-8);
        }
    }
}

#[test]
fn fixtures_reconcile() {
    for name in ["two_node", "chain6", "feeder15"] {
        let f = fixture(name);
        let run = run_dlmc(&f, &RunOptions::default()).unwrap();
        assert_eq!(run.rows.len(), 2 * f.topology.n_lines() * f.periods());
        assert_eq!(run.reconciliation.flagged, 0, "{name}");
        assert!(
            run.reconciliation.max_gap <= 1e-4,
            "{name}: {}",
            run.reconciliation.max_gap
        );
        for r in &run.rows {
            assert_eq!(r.total, r.components().iter().sum::<f64>());
        }
    }
}

#[test]
fn dropping_the_transformer_part_opens_a_gap() {
    let f = fixture("feeder15");
    let run = run_dlmc(&f, &RunOptions::default()).unwrap();
    let row = run
        .rows
        .iter()
        .max_by(|a, b| a.transformer.abs().total_cmp(&b.transformer.abs()))
        .unwrap();
    assert!(row.transformer.abs() > 1.0);
    let k = row.period - 1;
    let (cp, cq) = (f.costs.energy[k], f.costs.reactive[k]);
    let mut broken = row.clone();
    broken.transformer = 0.0;
    broken.total = broken.components().iter().sum();
    let gap = relative_gap(broken.total, row.solver_dual, cp, cq);
    let scale = row.solver_dual.abs().max(cp.abs()).max(cq.abs());
    assert!((gap - row.transformer.abs() / scale).abs() < 1e-4);
    let rec = reconcile(std::slice::from_ref(&broken), &f.costs, 1e-4);
    assert_eq!(rec.flagged, 1);
}

#[test]
fn congestion_parts_vanish_without_binding_limits() {
    let f = fixture("two_node");
    let run = run_dlmc(&f, &RunOptions::default()).unwrap();
    for r in &run.rows {
        assert!(r.voltage.abs() < 1e-8 && r.ampacity.abs() < 1e-8, "{r:?}");
    }
}

#[test]
fn losses_only_with_silent_transformer() {
    let f = fixture("chain6");
    let run = run_dlmc(&f, &RunOptions::default()).unwrap();
    let mut duals = run.report.duals.clone();
    duals
        .xi
        .iter_mut()
        .flatten()
        .flatten()
        .for_each(|x| *x = 0.0);
    duals.rho.iter_mut().for_each(|r| *r = Some(0.0));
    duals.mu_upper.iter_mut().flatten().for_each(|x| *x = 0.0);
    duals.mu_lower.iter_mut().flatten().for_each(|x| *x = 0.0);
    duals.nu.iter_mut().flatten().for_each(|x| *x = 0.0);
    let slopes = PiecewiseAging::new(&f.aging_breakpoints).unwrap().slopes;
    let pi = PiCoefficients::compute(&run.pi.coeffs, &duals, &slopes).unwrap();
    assert!(pi.pi.iter().flatten().all(|&p| p == 0.0));
    let topo = &f.topology;
    for t in 1..=f.periods() {
        for j in 1..topo.n_nodes() {
            let row = decompose(topo, &run.tensor, &duals, &f.costs, &pi, j, t, Kind::P).unwrap();
            let s = run.tensor.get(j, t, Kind::P).unwrap();
            let (mut rl, mut xl) = (0.0, 0.0);
            for i in 1..topo.n_nodes() {
                rl += topo.line_into(i).r * s.dl(i);
                xl += topo.line_into(i).x * s.dl(i);
            }
            let expected = f.costs.energy[t - 1] * (1.0 + rl) + f.costs.reactive[t - 1] * xl;
            assert!((row.total - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn pi_is_shared_between_kinds() {
    let f = fixture("feeder15");
    let run = run_dlmc(&f, &RunOptions::default()).unwrap();
    let slopes = PiecewiseAging::new(&f.aging_breakpoints).unwrap().slopes;
    let again = PiCoefficients::compute(&run.pi.coeffs, &run.report.duals, &slopes).unwrap();
    assert_eq!(again, run.pi);
    let y = run.pi.transformers[0];
    for t in 1..=f.periods() {
        let implied: Vec<f64> = Kind::BOTH
            .iter()
            .map(|&kind| {
                let row = run
                    .rows
                    .iter()
                    .find(|r| r.node == 5 && r.period == t && r.kind == kind)
                    .unwrap();
                row.transformer / run.tensor.get(5, t, kind).unwrap().dl(y)
            })
            .collect();
        let pi = run.pi.get(y, t).unwrap();
        assert!((implied[0] - pi).abs() <= 1e-9 * pi.abs());
        assert!((implied[1] - pi).abs() <= 1e-9 * pi.abs());
    }
}
