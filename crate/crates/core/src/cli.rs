//! Command-line driver: `train`, `bench`, `sweep-latency`, `gradcheck`.
//!
//! Every command writes only inside `--out`. Exit codes: 0 success, 1
//! runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::citysim::{mean, Action, DeviceClass, Environment};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, standard_cases, GradCase};
use crate::metrics::{MetricsRecord, MetricsWriter, Phase};
use crate::train::{Trainer, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "iotformer",
    version,
    about = "Transformer-encoded PPO in a smart-city IoT simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `section.key = value` config file; defaults apply without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sets both `train.seed` and `scenario.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `section.key=value`, applied after the config file; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant and write `metrics.csv`.
    Train {
        /// Resume from this checkpoint stem inside the output directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train all three variants over consecutive seeds.
    Bench {
        /// Seeds per variant, starting at `train.seed`.
        #[arg(long, default_value_t = 5)]
        runs: u64,
    },
    /// Mean step latency of the balanced policy versus device count.
    SweepLatency {
        #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
        counts: Vec<usize>,
        /// Episodes per device count.
        #[arg(long, default_value_t = 8)]
        episodes: u64,
    },
    /// Finite-difference check of every gradient rule.
    Gradcheck,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("iotformer: {e}");
            match e {
                Error::Config { .. } | Error::ConfigParse { .. } | Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

/// Loads the config and applies `--override` and `--seed`.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32> {
    if let Command::Gradcheck = cli.command {
        let stdout = std::io::stdout();
        return cmd_gradcheck(&standard_cases(), stdout.lock());
    }
    let cfg = match load_config(cli).and_then(|c| c.validate().map(|()| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("iotformer: {e}");
            return Ok(2);
        }
    };
    match &cli.command {
        Command::Train { resume } => cmd_train(&cfg, &cli.out, resume.as_deref()),
        Command::Bench { runs } => cmd_bench(&cfg, &cli.out, *runs),
        Command::SweepLatency { counts, episodes } => {
            cmd_sweep_latency(&cfg, &cli.out, counts, *episodes)
        }
        Command::Gradcheck => unreachable!("handled above"),
    }
    .map(|()| 0)
}

/// Resolves a relative path inside `out`, refusing anything that could
/// escape it.
pub fn confined(out: &Path, rel: &Path) -> Result<PathBuf> {
    let ok = rel
        .components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
        && rel.components().next().is_some();
    if !ok {
        return Err(Error::usage(format!(
            "path {} must be relative and stay inside the output directory",
            rel.display()
        )));
    }
    Ok(out.join(rel))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains `cfg.train.variant`, writing `metrics.csv`, `config.cfg` and any
/// configured checkpoints into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let ckpt = (!cfg.train.checkpoint.is_empty())
        .then(|| confined(out, Path::new(&cfg.train.checkpoint)))
        .transpose()?;
    let resume = resume.map(|r| confined(out, r)).transpose()?;
    prepare_out(out)?;
    if let Some(parent) = ckpt.as_deref().and_then(Path::parent) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(out.join("config.cfg"), cfg.to_text())
        .map_err(|e| Error::io(out.join("config.cfg"), e))?;

    let mut trainer = match resume {
        Some(stem) => Trainer::resume(cfg.clone(), &stem)?,
        None => Trainer::new(cfg.clone())?,
    };
    let path = out.join("metrics.csv");
    let mut w = MetricsWriter::new(create(&path)?)?;
    trainer.run(Some(out), |r| w.write(r))?;
    w.flush()
}

fn optional(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Median of the present values; `None` if there are none.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Per-variant medians over runs of each run's mean over its final `tail`
/// training episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub runs: usize,
    pub final_reward: Option<f64>,
    pub completion_mean: Option<f64>,
    pub response: [Option<f64>; 3],
    pub latency_mean: Option<f64>,
}

pub const SUMMARY_TAIL: usize = 20;

pub fn summarize(records: &[MetricsRecord], tail: usize) -> Vec<SummaryRow> {
    let mut variants: Vec<&str> = Vec::new();
    let mut runs: Vec<(&str, &str)> = Vec::new();
    for r in records.iter().filter(|r| r.phase == Phase::Train) {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
        if !runs.contains(&(r.variant.as_str(), r.run_id.as_str())) {
            runs.push((&r.variant, &r.run_id));
        }
    }
    let run_tail = |id: &str| -> Vec<&MetricsRecord> {
        let all: Vec<&MetricsRecord> = records
            .iter()
            .filter(|r| r.phase == Phase::Train && r.run_id == id)
            .collect();
        all[all.len().saturating_sub(tail)..].to_vec()
    };
    let tail_mean = |rs: &[&MetricsRecord], f: &dyn Fn(&MetricsRecord) -> Option<f64>| {
        let xs: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
        mean(&xs)
    };
    variants
        .into_iter()
        .map(|v| {
            let tails: Vec<Vec<&MetricsRecord>> = runs
                .iter()
                .filter(|(rv, _)| *rv == v)
                .map(|(_, id)| run_tail(id))
                .collect();
            let stat = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| {
                median(&tails.iter().map(|t| tail_mean(t, f)).collect::<Vec<_>>())
            };
            SummaryRow {
                variant: v.to_string(),
                runs: tails.len(),
                final_reward: stat(&|r| Some(r.total_reward)),
                completion_mean: stat(&|r| r.completion_mean),
                response: [0, 1, 2].map(|c| stat(&|r| r.response[c])),
                latency_mean: stat(&|r| r.latency_mean),
            }
        })
        .collect()
}

/// Trains every variant for `runs` consecutive seeds and writes
/// `metrics.csv`, `fig1_reward.csv`, `fig2_completion.csv`,
/// `fig3_response.csv` and `summary.csv`.
pub fn cmd_bench(cfg: &ExperimentConfig, out: &Path, runs: u64) -> Result<()> {
    cfg.validate()?;
    if runs == 0 {
        return Err(Error::usage("bench needs at least one run"));
    }
    prepare_out(out)?;
    let mut records = Vec::new();
    for variant in Variant::ALL {
        for i in 0..runs {
            let mut c = cfg.clone();
            c.train.variant = variant;
            c.set_seed(cfg.train.seed + i);
            c.train.checkpoint.clear();
            let mut t = Trainer::new(c)?;
            t.run(None, |r| {
                records.push(r.clone());
                Ok(())
            })?;
        }
    }

    let mut w = MetricsWriter::new(create(&out.join("metrics.csv"))?)?;
    for r in &records {
        w.write(r)?;
    }
    w.flush()?;

    let train: Vec<&MetricsRecord> = records.iter().filter(|r| r.phase == Phase::Train).collect();
    let key = |r: &MetricsRecord| {
        vec![
            r.run_id.clone(),
            r.variant.clone(),
            r.seed.to_string(),
            r.episode.to_string(),
        ]
    };
    let rows = |f: &dyn Fn(&MetricsRecord) -> Vec<String>| -> Vec<Vec<String>> {
        train
            .iter()
            .map(|r| {
                let mut row = key(r);
                row.extend(f(r));
                row
            })
            .collect()
    };
    write_csv(
        &out.join("fig1_reward.csv"),
        &["run_id", "variant", "seed", "episode", "total_reward"],
        &rows(&|r| vec![r.total_reward.to_string()]),
    )?;
    write_csv(
        &out.join("fig2_completion.csv"),
        &[
            "run_id",
            "variant",
            "seed",
            "episode",
            "completion_mean_s",
            "completion_p95_s",
        ],
        &rows(&|r| vec![optional(r.completion_mean), optional(r.completion_p95)]),
    )?;
    write_csv(
        &out.join("fig3_response.csv"),
        &[
            "run_id",
            "variant",
            "seed",
            "episode",
            "response_traffic_s",
            "response_environmental_s",
            "response_safety_s",
        ],
        &rows(&|r| r.response.iter().map(|x| optional(*x)).collect()),
    )?;
    let summary: Vec<Vec<String>> = summarize(&records, SUMMARY_TAIL)
        .into_iter()
        .map(|s| {
            vec![
                s.variant,
                s.runs.to_string(),
                optional(s.final_reward),
                optional(s.completion_mean),
                optional(s.response[0]),
                optional(s.response[1]),
                optional(s.response[2]),
                optional(s.latency_mean),
            ]
        })
        .collect();
    write_csv(
        &out.join("summary.csv"),
        &[
            "variant",
            "runs",
            "median_final_reward",
            "median_completion_mean_s",
            "median_response_traffic_s",
            "median_response_environmental_s",
            "median_response_safety_s",
            "median_latency_mean_s",
        ],
        &summary,
    )
}

/// Splits `total` devices across classes in proportion to `base` using
/// largest remainders (ties go to the earlier class).
pub fn scale_devices(base: [usize; 3], total: usize) -> [usize; 3] {
    let sum: usize = base.iter().sum();
    if sum == 0 {
        return [total, 0, 0];
    }
    let mut counts = [0usize; 3];
    let mut rems = [(0usize, 0usize); 3];
    for c in 0..3 {
        let q = total * base[c];
        counts[c] = q / sum;
        rems[c] = (q % sum, c);
    }
    let short = total - counts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in rems.iter().take(short) {
        counts[c] += 1;
    }
    counts
}

/// One row of `fig4_latency.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub count: usize,
    pub devices: [usize; 3],
    pub episodes: u64,
    pub mean: Option<f64>,
    /// Sample standard deviation across episodes.
    pub std: Option<f64>,
}

pub fn latency_sweep(
    cfg: &ExperimentConfig,
    counts: &[usize],
    episodes: u64,
) -> Result<Vec<LatencyRow>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::usage("device counts must be positive"));
    }
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::usage(format!(
            "device counts must be strictly ascending, got {counts:?}"
        )));
    }
    if episodes == 0 {
        return Err(Error::usage("sweep needs at least one episode per count"));
    }
    let s = &cfg.scenario;
    let base = DeviceClass::ALL.map(|c| s.devices(c));
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let devices = scale_devices(base, count);
        let mut sc = s.clone();
        sc.traffic_devices = devices[0];
        sc.environmental_devices = devices[1];
        sc.safety_devices = devices[2];
        let mut env = Environment::new(sc)?;
        let mut latencies = Vec::new();
        for e in 0..episodes {
            env.reset_episode(e);
            while !env.step(Action::Balanced)?.done {}
            if let Some(l) = env.metrics()?.latency_mean {
                latencies.push(l);
            }
        }
        let m = mean(&latencies);
        let std = m.filter(|_| latencies.len() > 1).map(|m| {
            let ss: f64 = latencies.iter().map(|x| (x - m) * (x - m)).sum();
            (ss / (latencies.len() - 1) as f64).sqrt()
        });
        rows.push(LatencyRow {
            count,
            devices,
            episodes,
            mean: m,
            std,
        });
    }
    Ok(rows)
}

/// Writes `fig4_latency.csv`.
pub fn cmd_sweep_latency(
    cfg: &ExperimentConfig,
    out: &Path,
    counts: &[usize],
    episodes: u64,
) -> Result<()> {
    cfg.scenario.validate()?;
    let rows = latency_sweep(cfg, counts, episodes)?;
    prepare_out(out)?;
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.count.to_string(),
                r.devices[0].to_string(),
                r.devices[1].to_string(),
                r.devices[2].to_string(),
                r.episodes.to_string(),
                optional(r.mean),
                optional(r.std),
            ]
        })
        .collect();
    write_csv(
        &out.join("fig4_latency.csv"),
        &[
            "devices",
            "traffic",
            "environmental",
            "safety",
            "episodes",
            "mean_latency_s",
            "std_latency_s",
        ],
        &rows,
    )
}

/// Runs `cases`, printing one line each; returns 0 iff all pass.
pub fn cmd_gradcheck(cases: &[GradCase], mut out: impl Write) -> Result<i32> {
    let reports = run_suite(cases, &mut out)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    writeln!(
        out,
        "{} checks, {failed} failed, worst {worst:.3e}",
        reports.len()
    )
    .map_err(|e| Error::io("<stdout>", e))?;
    Ok(if failed == 0 { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_scaling_hits_the_total() {
        assert_eq!(scale_devices([6, 4, 2], 12), [6, 4, 2]);
        assert_eq!(scale_devices([6, 4, 2], 10), [5, 3, 2]);
        assert_eq!(scale_devices([6, 4, 2], 20), [10, 7, 3]);
        assert_eq!(scale_devices([6, 4, 2], 100), [50, 33, 17]);
        for n in 1..200 {
            assert_eq!(scale_devices([6, 4, 2], n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn median_of_present_values() {
        assert_eq!(median(&[Some(3.0), None, Some(1.0), Some(2.0)]), Some(2.0));
        assert_eq!(median(&[Some(4.0), Some(1.0)]), Some(2.5));
        assert_eq!(median(&[None]), None);
    }

    #[test]
    fn non_ascending_counts_are_usage_errors() {
        let cfg = ExperimentConfig::default();
        for counts in [&[20, 10][..], &[10, 10], &[0, 5], &[]] {
            assert!(matches!(
                latency_sweep(&cfg, counts, 1),
                Err(Error::Usage(_))
            ));
        }
    }

    #[test]
    fn confinement() {
        let out = Path::new("/tmp/o");
        assert_eq!(
            confined(out, Path::new("ck/a")).unwrap(),
            Path::new("/tmp/o/ck/a")
        );
        assert!(confined(out, Path::new("../a")).is_err());
        assert!(confined(out, Path::new("/etc/a")).is_err());
        assert!(confined(out, Path::new("")).is_err());
    }
}
