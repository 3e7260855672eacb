//! End-to-end report generation on the surrogate walker.

use jointattack::report::{
    actuator_histogram, best_perturbation_table, box_stats_csv, read_outcome, run_experiment, sweep_epsilon,
    write_histogram, write_sweep, write_table, ActuatorHistogram, ExperimentConfig, BOX_STATS_FILE, HISTOGRAM_FILE,
    OUTCOME_FILE, SWEEP_REWARDS_FILE, TABLE_JSON_FILE, TABLE_TEXT_FILE, TRACE_FILE,
};
use jointattack::search::Method;
use jointattack::walker::walker_rollout;
use jointattack::{SeededRng, TorquePerturbation};

fn de_cfg() -> ExperimentConfig {
    ExperimentConfig {
        episodes: 1,
        budget_evals: Some(1500),
        ..Default::default()
    }
}

#[test]
fn de_population_concentrates_on_a_toppling_attack() {
    let cfg = de_cfg();
    let out = run_experiment(&cfg).unwrap();
    let pop = out.final_population.as_ref().unwrap();
    assert_eq!(pop.len(), cfg.de.population_size);

    let medians = ActuatorHistogram::medians(pop);
    let strongest = medians.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(strongest >= 0.3, "medians {medians:?}");

    // The population's median perturbation is itself a successful attack.
    let median_pert = TorquePerturbation::new(medians.clone(), cfg.eps).unwrap();
    let (_, steps) = walker_rollout(&cfg.walker, &median_pert, &mut SeededRng::new(0, 0)).unwrap();
    assert!(steps < cfg.walker.horizon, "median attack survived: {medians:?}");

    let labels = cfg.actuator_labels(8);
    let hist = actuator_histogram(pop, cfg.eps, cfg.histogram_bins, &labels).unwrap();
    for bins in &hist.actuators {
        assert_eq!(bins.counts.iter().sum::<usize>(), pop.len());
    }
    assert_eq!(hist.actuators[0].label, "hip1");
    assert_eq!(hist.actuators[7].label, "ankle4");
}

#[test]
fn files_round_trip_and_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let cfg = ExperimentConfig {
            out: Some(dir.to_path_buf()),
            budget_evals: Some(300),
            de: jointattack::search::DEConfig {
                population_size: 30,
                ..Default::default()
            },
            ..de_cfg()
        };
        let out = run_experiment(&cfg).unwrap();
        let labels = cfg.actuator_labels(8);
        let pop = out.final_population.as_ref().unwrap();
        write_histogram(dir, &actuator_histogram(pop, cfg.eps, 5, &labels).unwrap()).unwrap();
        write_table(dir, &best_perturbation_table(&out.best_pert, &labels).unwrap()).unwrap();
        assert_eq!(read_outcome(dir).unwrap(), out);
    }
    for name in [
        OUTCOME_FILE,
        TRACE_FILE,
        HISTOGRAM_FILE,
        TABLE_TEXT_FILE,
        TABLE_JSON_FILE,
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between reruns");
    }
    let table = std::fs::read_to_string(a.path().join(TABLE_TEXT_FILE)).unwrap();
    assert_eq!(table.lines().count(), 9);
    assert!(table.lines().nth(1).unwrap().starts_with("hip1"));
}

#[test]
fn sweep_medians_fall_as_eps_grows() {
    let cfg = ExperimentConfig {
        method: Method::Random,
        budget_evals: Some(300),
        ..de_cfg()
    };
    let oracle = cfg.build_oracle().unwrap();
    let rows = sweep_epsilon(oracle.as_ref(), &cfg, &[0.0, 0.1, 0.3, 0.5], 20).unwrap();
    let medians: Vec<f64> = rows.iter().map(|r| r.stats.unwrap().median).collect();
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
    assert!(medians[3] < 0.6 * medians[0]);
    for r in &rows {
        assert!(r.best_pert.inf_norm() <= r.eps);
        assert_eq!(r.rewards.len(), 20);
    }

    let dir = tempfile::tempdir().unwrap();
    write_sweep(dir.path(), &rows).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(BOX_STATS_FILE)).unwrap();
    assert_eq!(csv, box_stats_csv(&rows).unwrap());
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("eps,min,q1,median,q3,max,mean,n_episodes\n"));
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(SWEEP_REWARDS_FILE)).unwrap()).unwrap();
    assert_eq!(raw.as_array().unwrap().len(), 4);
}
