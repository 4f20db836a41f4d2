use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use iotformer::cli::{cmd_gradcheck, run, summarize};
use iotformer::gradsuite::GradCase;
use iotformer::metrics::{MetricsRecord, Phase, COLUMNS};
use iotformer::tensor::{gradcheck, Tensor};

fn cli(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["iotformer".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out".into());
    argv.push(out.display().to_string());
    run(argv)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

const SHORT: &[&str] = &[
    "--override",
    "train.episodes=3",
    "--override",
    "scenario.steps=6",
    "--override",
    "encoder.d_model=8",
    "--override",
    "encoder.heads=2",
    "--override",
    "encoder.d_ff=8",
    "--override",
    "train.hidden=8",
];

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.cfg");
    let out = Command::new(env!("CARGO_BIN_EXE_iotformer"))
        .args(["train", "--config"])
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent.cfg"), "{stderr}");
}

#[test]
fn bad_config_line_names_file_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\ntrain.episodes = 2\nppo.clip = wide\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_iotformer"))
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("run.cfg:3: ppo.clip"), "{stderr}");
}

#[test]
fn train_is_byte_deterministic_and_has_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args: Vec<&str> = ["train", "--seed", "4"]
        .iter()
        .chain(SHORT)
        .copied()
        .collect();
    assert_eq!(cli(&a, &args), 0);
    assert_eq!(cli(&b, &args), 0);
    let text = read(&a.join("metrics.csv"));
    assert_eq!(text, read(&b.join("metrics.csv")));
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
    assert_eq!(lines.count(), 3);
    assert!(!text.contains('\r'));
}

#[test]
fn seed_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let with_seed = |s: &'static str| -> Vec<&str> {
        ["train", "--seed", s]
            .iter()
            .chain(SHORT)
            .copied()
            .collect()
    };
    assert_eq!(cli(&a, &with_seed("1")), 0);
    assert_eq!(cli(&b, &with_seed("2")), 0);
    assert_ne!(read(&a.join("metrics.csv")), read(&b.join("metrics.csv")));
}

#[test]
fn bench_writes_six_runs_with_n_rows_each() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let args: Vec<&str> = ["bench", "--runs", "2"]
        .iter()
        .chain(SHORT)
        .copied()
        .collect();
    assert_eq!(cli(&out, &args), 0);

    let fig1 = read(&out.join("fig1_reward.csv"));
    let mut per_run: BTreeMap<String, usize> = BTreeMap::new();
    for line in fig1.lines().skip(1) {
        *per_run
            .entry(line.split(',').next().unwrap().to_string())
            .or_default() += 1;
    }
    assert_eq!(per_run.len(), 6, "{per_run:?}");
    assert!(per_run.values().all(|&n| n == 3));
    for f in ["metrics.csv", "fig2_completion.csv", "fig3_response.csv"] {
        assert_eq!(read(&out.join(f)).lines().count(), 1 + 18, "{f}");
    }
    assert_eq!(read(&out.join("summary.csv")).lines().count(), 4);
}

#[test]
fn sweep_writes_one_row_per_count_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = [
        "sweep-latency",
        "--counts",
        "10,20,50,100",
        "--episodes",
        "3",
    ];
    assert_eq!(cli(&a, &args), 0);
    assert_eq!(cli(&b, &args), 0);
    let text = read(&a.join("fig4_latency.csv"));
    assert_eq!(text, read(&b.join("fig4_latency.csv")));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn descending_counts_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["sweep-latency", "--counts", "50,10"]), 2);
}

#[test]
fn checkpoint_outside_out_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let code = cli(
        &out,
        &[
            "train",
            "--override",
            "train.episodes=1",
            "--override",
            "train.checkpoint=../escape",
        ],
    );
    assert_eq!(code, 2);
    assert!(!dir.path().join("escape.json").exists());
}

fn sin_case(name: &str, deriv: fn(f64) -> f64) -> GradCase {
    GradCase::new(name, move || {
        let x = Tensor::new(&[3], vec![0.3, -0.7, 1.2])?;
        gradcheck(
            |g, x| {
                let y = g.map(x, f64::sin, deriv);
                Ok(g.sum(y))
            },
            &x,
        )
    })
}

#[test]
fn gradcheck_flags_a_corrupted_rule() {
    let mut buf = Vec::new();
    assert_eq!(
        cmd_gradcheck(&[sin_case("sin", f64::cos)], &mut buf).unwrap(),
        0
    );

    // Derivative off by a factor of two.
    let broken = sin_case("broken_sin", |v| 2.0 * v.cos());
    let mut buf = Vec::new();
    assert_eq!(
        cmd_gradcheck(&[sin_case("sin", f64::cos), broken], &mut buf).unwrap(),
        1
    );
    let report = String::from_utf8(buf).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(report.lines().nth(1).unwrap().contains("FAIL"));
}

fn record(
    run: &str,
    variant: &str,
    episode: usize,
    reward: f64,
    completion: Option<f64>,
) -> MetricsRecord {
    MetricsRecord {
        run_id: run.into(),
        variant: variant.into(),
        seed: 0,
        episode,
        phase: Phase::Train,
        total_reward: reward,
        completion_mean: completion,
        completion_p95: None,
        response: [None; 3],
        latency_mean: None,
        update: None,
        wall_clock: None,
    }
}

#[test]
fn summary_medians_match_hand_computation() {
    // Tail of 2 episodes. Run means: a1 = (3+5)/2 = 4, a2 = 10, a3 = 1.
    // Median over runs = 4. Variant b has one run with mean (2+4)/2 = 3.
    let mut rs = vec![
        record("a1", "a", 0, 100.0, None),
        record("a1", "a", 1, 3.0, Some(10.0)),
        record("a1", "a", 2, 5.0, None),
        record("a2", "a", 0, -50.0, None),
        record("a2", "a", 1, 9.0, Some(20.0)),
        record("a2", "a", 2, 11.0, Some(40.0)),
        record("a3", "a", 0, 0.0, None),
        record("a3", "a", 1, 1.0, None),
        record("a3", "a", 2, 1.0, None),
        record("b1", "b", 0, 2.0, None),
        record("b1", "b", 1, 4.0, None),
    ];
    let mut eval = record("a1", "a", 2, 1e6, None);
    eval.phase = Phase::Eval;
    rs.push(eval);
    let s = summarize(&rs, 2);
    assert_eq!(s.len(), 2);
    assert_eq!((s[0].variant.as_str(), s[0].runs), ("a", 3));
    assert_eq!(s[0].final_reward, Some(4.0));
    // Completion tails: a1 -> 10, a2 -> 30, a3 -> none. Median of {10, 30} = 20.
    assert_eq!(s[0].completion_mean, Some(20.0));
    assert_eq!(s[1].final_reward, Some(3.0));
    assert_eq!(s[1].completion_mean, None);
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let default = iotformer::config::ExperimentConfig::load(&dir.join("default.cfg")).unwrap();
    assert_eq!(
        default.to_text(),
        iotformer::config::ExperimentConfig::default().to_text()
    );
    let memory = iotformer::config::ExperimentConfig::load(&dir.join("memory.cfg")).unwrap();
    memory.validate().unwrap();
    assert!(memory.scenario.memory_variant);
}
