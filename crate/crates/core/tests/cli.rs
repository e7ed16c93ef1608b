mod common;

use std::fs;
use std::path::Path;

use rirl::cli::{load_corpus, mean_std, parse_config, run, run_overall, run_robustness, RunConfig};
use rirl::dqn::PriorityStrategy;
use rirl::eval::{metrics, read_predictions};

fn small(seed: u64, dir: &Path) -> RunConfig {
    RunConfig {
        synth_events: 400,
        train_ratio: 0.9,
        epochs: 1,
        ..common::learning_config(seed, PriorityStrategy::TdError, dir)
    }
}

fn data_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn overall_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_overall(&small(1, dir.path())).unwrap();
    for f in [
        "config.txt",
        "metrics.csv",
        "training.log",
        "predictions.tsv",
        "profiles/profiles.tsv",
        "kg/kg.tsv",
        "kg/update_params.tsv",
        "qnet/eval.tsv",
        "qnet/target.tsv",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, ["run_id,group,prec_cat,rec_cat,avg_sim,avg_dist,L", &report.csv_row("overall", "all")]);
    assert_eq!(report.events, 40);
    assert_eq!(data_lines(&dir.path().join("training.log")), 360);
    let log = fs::read_to_string(dir.path().join("training.log")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step\taction\tr_d\tr_c\tr_p\tr\tdqn_loss\trepr_loss");
}

#[test]
fn metrics_recompute_from_dumped_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(2, dir.path());
    let report = run_overall(&cfg).unwrap();
    let records = read_predictions(fs::File::open(dir.path().join("predictions.tsv")).unwrap()).unwrap();
    let world = load_corpus(&cfg).unwrap().world;
    assert_eq!(metrics(&records, &world.vectors).unwrap(), report);
}

#[test]
fn config_echo_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_overall(&small(3, a.path())).unwrap();
    let echo = a.path().join("config.txt");
    let out = format!("--out_dir={}", b.path().display());
    let cfg = parse_config(["rirl", "--config", echo.to_str().unwrap(), out.as_str()]).unwrap();
    run(&cfg).unwrap();
    for f in ["metrics.csv", "training.log", "predictions.tsv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn robustness_summary_is_the_hand_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { cross_validation: 1, ..small(4, dir.path()) };
    let reports = run_robustness(&cfg).unwrap();
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for (g, row) in rows[..5].iter().enumerate() {
        assert_eq!(row[..2], ["robustness", &g.to_string()]);
    }
    let summary = &rows[5];
    assert_eq!(summary[..2], ["robustness", "summary"]);
    let precs: Vec<f64> = rows[..5].iter().map(|r| r[2].parse().unwrap()).collect();
    let hand = precs.iter().sum::<f64>() / 5.0;
    let (mean, std) = summary[2].split_once(';').unwrap();
    assert!((mean.parse::<f64>().unwrap() - hand).abs() < 1e-12);
    assert!((std.parse::<f64>().unwrap() - mean_std(&precs).1).abs() < 1e-12);
    assert_eq!(precs, reports.iter().map(|r| r.prec_cat).collect::<Vec<_>>());
}

#[test]
fn tiny_corpus_groups_differ_by_at_most_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        cross_validation: 1,
        synth_events: 53,
        ..small(5, dir.path())
    };
    run_robustness(&cfg).unwrap();
    let sizes: Vec<usize> = (0..5)
        .map(|g| {
            let group = dir.path().join(format!("group{g}"));
            data_lines(&group.join("training.log")) + data_lines(&group.join("predictions.tsv"))
        })
        .collect();
    assert_eq!(sizes.iter().sum::<usize>(), 53);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
}
