mod common;

use std::fs;

use league_core::cluster::{league_report, run_in_process};
use league_core::config::RunConfig;
use league_core::env::EnvSpec;
use league_core::eval::{self, evaluate};
use league_core::policy::{self, ParamBlob, PolicyFamily, PolicyShape};
use league_core::Error;
use proptest::prelude::*;

fn pure(action: usize) -> ParamBlob {
    let mut b = ParamBlob::zeros(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 3)).unwrap();
    b.tabular_logits_mut(0).unwrap()[action] = 60.0;
    b
}

fn uniform() -> ParamBlob {
    ParamBlob::zeros(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 3)).unwrap()
}

#[test]
fn eval_fixed_policies() {
    let spec = EnvSpec::named("rps", 0);
    let r = evaluate(("paper", &pure(1)), ("rock", &pure(0)), &spec, 200, 1).unwrap();
    assert_eq!((r.wins, r.losses, r.ties), (200, 0, 0));
    assert_eq!(r.win_rate, 1.0);

    let r = evaluate(("uniform", &uniform()), ("rock", &pure(0)), &spec, 10_000, 2).unwrap();
    assert!((r.win_rate - 0.5).abs() < 0.02, "win_rate {}", r.win_rate);
    assert!(r.exploitability.unwrap().abs() < 1e-12);

    // Same blob on both seats: every pair of seat-swapped episodes is a mirror image.
    let b = policy::init_params(PolicyFamily::TabularSoftmax, PolicyShape::new(1, 3), 1.0, 5).unwrap();
    let r = evaluate(("x", &b), ("x", &b), &spec, 1000, 3).unwrap();
    assert_eq!(r.wins, r.losses);
    assert_eq!(r.win_rate, 0.5);
    assert!(format!("{r}").contains("episodes=1000"));
}

#[test]
fn swapped_seats_mirror_on_grid() {
    let spec = EnvSpec::named("grid_duel", 4);
    let shape = PolicyShape::new(59, 6);
    let a = policy::init_params(PolicyFamily::LinearSoftmax, shape, 0.7, 11).unwrap();
    let b = policy::init_params(PolicyFamily::LinearSoftmax, shape, 0.7, 12).unwrap();
    let ab = evaluate(("a", &a), ("b", &b), &spec, 40, 8).unwrap();
    let ba = evaluate(("b", &b), ("a", &a), &spec, 40, 8).unwrap();
    assert_eq!((ab.wins, ab.losses, ab.ties), (ba.losses, ba.wins, ba.ties));
    assert!((ab.win_rate + ba.win_rate - 1.0).abs() < 1e-12);
    assert!(ab.exploitability.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn exploitability_matches_enumeration(logits in prop::collection::vec(-4.0f64..4.0, 3)) {
        let mut b = uniform();
        b.tabular_logits_mut(0).unwrap().copy_from_slice(&logits);
        let spec = EnvSpec::named("rps", 0);
        let probs = eval::one_shot_policy(&b, &spec).unwrap();
        let got = eval::exploitability(&b, &spec).unwrap();
        prop_assert!((got - common::oracle_rps_exploitability(&probs)).abs() < 1e-12);
        prop_assert!(got >= -1e-12);
    }
}

#[test]
fn average_policy_and_distance() {
    let avg = eval::average_policy(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    assert!(eval::l1_distance(&avg, &[1.0 / 3.0; 3]) < 1e-15);
    assert!(eval::average_policy(&[]).is_err());
    assert!(eval::average_policy(&[vec![1.0], vec![0.5, 0.5]]).is_err());
}

#[test]
fn config_errors_carry_line_numbers() {
    let cases = [
        ("[cluster]\nactors: 2\n[learner]\nbatch_size: -3\n", 4),
        ("[cluster]\nshards: 0\n", 2),
        ("[env]\nname: chess\n", 2),
        ("[cluster]\ngroups: 1\n[group.3]\nlineage: x\n", 3),
        ("[actor]\ninference: remote\n", 2),
        ("seed: 4\n", 1),
        ("[learner]\ntotal_periods: 0\n", 2),
        ("[league]\nscheme: mixture\nmixture_self_play: 1.5\n", 1),
    ];
    for (text, want) in cases {
        match RunConfig::parse(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, want, "{text:?}"),
            other => panic!("{text:?}: expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn duplicate_ports_are_a_config_error() {
    let text = "[cluster]\nshards: 2\n[endpoints]\nleague: 127.0.0.1:9100\nlearner: 127.0.0.1:9101, 127.0.0.1:9100\n";
    assert!(matches!(RunConfig::parse(text), Err(Error::Config { line: 5, .. })));
    let text = "[cluster]\nshards: 2\n[endpoints]\nlearner: 127.0.0.1:9101\n";
    assert!(matches!(RunConfig::parse(text), Err(Error::Config { .. })));
}

#[test]
fn process_count_follows_topology() {
    for (g, l, a, m, infs) in [(1, 1, 1, 1, 0), (1, 2, 8, 1, 0), (2, 2, 3, 3, 1), (3, 1, 4, 2, 2)] {
        let text = format!(
            "[cluster]\ngroups: {g}\nshards: {l}\nactors: {a}\npool_replicas: {m}\ninf_servers: {infs}\n[env]\nname: rps\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.process_count(), m + 1 + g * l + g * l * a + g * infs);
        assert_eq!(c.total_actors(), g * l * a);
    }
}

fn short_run(dir: &std::path::Path, period_steps: u64, periods: u64) -> RunConfig {
    let text = format!(
        "[cluster]\nactors: 2\nseed: 9\nrun_dir: {}\n[env]\nname: rps\n\
         [learner]\nbatch_size: 16\nperiod_steps: {period_steps}\npublish_interval: 5\ntotal_periods: {periods}\n\
         [league]\nscheme: uniform_recent_k\n",
        dir.display()
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn report_of_fresh_and_finished_runs() {
    let tmp = tempfile::tempdir().unwrap();

    let fresh = tmp.path().join("fresh");
    // No period can end before the deadline.
    let cfg = short_run(&fresh, 1_000_000_000, 1);
    run_in_process(&cfg, Some(std::time::Duration::from_millis(200))).unwrap();
    let report = league_report(&fresh).unwrap();
    assert!(report.contains("models: 1\n"), "{report}");

    let done = tmp.path().join("done");
    let cfg = short_run(&done, 20, 3);
    let summary = run_in_process(&cfg, Some(std::time::Duration::from_secs(60))).unwrap();
    let report = league_report(&done).unwrap();
    assert!(report.contains("models: 4\n"), "{report}");
    assert!(report.contains("periods_ended: 3"), "{report}");
    assert_eq!(fs::read_dir(done.join("models")).unwrap().count(), 3);

    // Reported rfps against the learner's own counter over the run.
    let counters = &summary.learners[0].counters;
    let expect = counters.received_frames as f64 / summary.elapsed.as_secs_f64();
    let line = report.lines().skip_while(|l| !l.starts_with("== throughput")).nth(2).unwrap();
    let rfps: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((rfps - expect).abs() <= 0.01 * expect, "report {rfps} vs counter {expect}");
}

#[test]
fn report_needs_a_league_log() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(league_report(tmp.path()).is_err());
    fs::write(tmp.path().join("league.log"), "nothing here\n").unwrap();
    assert!(matches!(league_report(tmp.path()), Err(Error::Malformed(_))));
}
