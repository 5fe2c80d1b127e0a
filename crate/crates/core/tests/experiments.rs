use rte_lowrank::experiments::{
    cmd_compare, cmd_run, cmd_singvals, cmd_sweep_dt, cmd_sweep_eps, InitialCondition, OneOrMany, PolyFourierTerm,
    RunConfig, Trig,
};
use rte_lowrank::Scheme;

fn small() -> RunConfig {
    RunConfig { n_x: 32, n_mu: 8, rank: 3, t_final: 0.2, dt: OneOrMany::One(0.05), ..RunConfig::default() }
}

fn constant() -> InitialCondition {
    InitialCondition::CustomPolyFourier { terms: vec![PolyFourierTerm { coeff: 1.5, k: 0, p: 0, trig: Trig::Cos }] }
}

#[test]
fn run_reports_finite_errors_at_eps_one() {
    let res = cmd_run(&small()).unwrap();
    let rep = res.error_report.expect("reference fits");
    assert!(rep.rel_l2_full.is_finite() && rep.rel_l2_density.is_finite());
    assert!(res.ap_limit_density_error.is_finite());
    assert_eq!(res.n_steps, 4);
}

#[test]
fn run_config_echo_round_trips() {
    let res = cmd_run(&small()).unwrap();
    let back = RunConfig::from_json_str(&res.config.to_json()).unwrap();
    assert_eq!(back, res.config);
    let json = serde_json::to_string(&res).unwrap();
    let again: rte_lowrank::experiments::RunResult = serde_json::from_str(&json).unwrap();
    assert_eq!(again, res);
}

#[test]
fn reference_beyond_cap_is_rejected() {
    let cfg = RunConfig { n_x: 4000, n_mu: 100, integrator: Scheme::Reference, ..RunConfig::default() };
    let err = cmd_run(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("reference_cap"), "{err}");
}

#[test]
fn eps_sweep_single_entry_and_downscaled_monotonicity() {
    let one = RunConfig { eps: OneOrMany::Many(vec![1.0]), ..small() };
    assert_eq!(cmd_sweep_eps(&one, 1).unwrap().rows.len(), 1);

    let cfg = RunConfig {
        n_x: 200,
        n_mu: 32,
        rank: 5,
        eps: OneOrMany::Many(vec![1.0, 1e-1, 1e-2]),
        dt: OneOrMany::One(0.1),
        t_final: 1.0,
        ..RunConfig::default()
    };
    let rows = cmd_sweep_eps(&cfg, 1).unwrap().rows;
    assert!(rows[1].rel_l2_density < rows[0].rel_l2_density);
    assert!(rows[2].rel_l2_density < rows[1].rel_l2_density);
}

#[test]
fn eps_sweep_requires_descending_list() {
    let cfg = RunConfig { eps: OneOrMany::Many(vec![0.1, 1.0]), ..small() };
    assert!(cmd_sweep_eps(&cfg, 1).is_err());
}

#[test]
fn dt_sweep_single_entry_has_no_slope() {
    let sweep = cmd_sweep_dt(&small(), 1).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(sweep.slope, None);
}

#[test]
fn dt_sweep_reference_against_itself_is_exact() {
    let cfg = RunConfig { integrator: Scheme::Reference, ..small() };
    let sweep = cmd_sweep_dt(&cfg, 1).unwrap();
    assert_eq!(sweep.rows[0].rel_l2_full, 0.0);
}

#[test]
fn singvals_of_diffusive_rank_one_data() {
    let cfg = RunConfig { n_x: 100, n_mu: 16, eps: OneOrMany::One(1e-6), t_final: 1.0, ..RunConfig::default() };
    let sv = cmd_singvals(&cfg).unwrap().sigma;
    assert!(sv[1] / sv[0] <= 1e-4, "ratio {}", sv[1] / sv[0]);
}

#[test]
fn singvals_at_time_zero_follow_the_ladder() {
    let cfg = RunConfig {
        n_x: 200,
        n_mu: 100,
        t_final: 0.0,
        initial_condition: InitialCondition::SineLadder,
        ..RunConfig::default()
    };
    let sv = cmd_singvals(&cfg).unwrap().sigma;
    for k in 0..10 {
        assert!(sv[k + 1] < sv[k], "sigma_{} = {} >= sigma_{} = {}", k + 2, sv[k + 1], k + 1, sv[k]);
    }
}

#[test]
fn singvals_of_constant_data() {
    let cfg = RunConfig { initial_condition: constant(), ..small() };
    let sv = cmd_singvals(&cfg).unwrap().sigma;
    assert!(sv[0] > 0.0);
    assert!(sv[1] <= 1e-13 * sv[0]);
}

#[test]
fn compare_in_the_kinetic_regime() {
    let cfg = RunConfig { n_x: 16, n_mu: 8, rank: 4, dt: OneOrMany::One(1e-3), t_final: 1e-2, ..RunConfig::default() };
    let cmp = cmd_compare(&cfg, 1).unwrap();
    assert_eq!(cmp.rows.len(), 4);
    for row in &cmp.rows {
        assert!(row.rel_l2_full.unwrap() <= 1e-4, "{:?}", row);
    }
    let reference = cmp.rows.iter().find(|r| r.scheme == Scheme::Reference).unwrap();
    assert_eq!(reference.status, "reference");
    assert_eq!(reference.rel_l2_full, Some(0.0));
}

#[test]
fn compare_in_the_diffusive_regime() {
    let cfg = RunConfig {
        n_x: 64,
        n_mu: 16,
        rank: 4,
        eps: OneOrMany::One(1e-3),
        dt: OneOrMany::One(0.1),
        t_final: 0.5,
        ..RunConfig::default()
    };
    let cmp = cmd_compare(&cfg, 2).unwrap();
    let row = |s: Scheme| cmp.rows.iter().find(|r| r.scheme == s).unwrap();
    let gap = row(Scheme::Gap).rel_l2_full.expect("GAP finite");
    assert!(row(Scheme::Bug).rel_l2_full.expect("BUG finite").is_finite());
    let psi = row(Scheme::Psi);
    match psi.rel_l2_full {
        None => assert_eq!(psi.status, "diverged"),
        Some(e) => assert!(e >= 10.0 * gap, "psi {e} vs gap {gap}"),
    }
}
