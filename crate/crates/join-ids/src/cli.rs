//! Command-line entry points: run a join over stream files, generate
//! synthetic datasets, and evaluate a delta log against groundtruth.
//!
//! Every flag can also be set through an environment variable with the
//! `JOINIDS_` prefix (for example `JOINIDS_EPSILON=0.2`).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::datagen::{
    generate, groundtruth_pairs, mask, validate_rule, DataDistribution, GenerateParams,
    MaskParams,
};
use crate::dd::DDRule;
use crate::engine::{Engine, EngineConfig, JoinDelta, NestedLoopBaseline, PruneStats, Stepper};
use crate::io;
use crate::model::{AttributeSchema, IncompleteObject};
use crate::prune::JoinParams;

#[derive(Debug, Parser)]
#[command(
    name = "joinids",
    about = "Probabilistic similarity join over incomplete data streams",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a streaming join and write the per-timestamp delta log.
    Run(RunArgs),
    /// Generate synthetic streams, a repository, groundtruth, and rules.
    Generate(GenerateArgs),
    /// Compare a delta log against groundtruth and report metrics.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Algo {
    /// Interleaved lazy imputation and join.
    Joinids,
    /// Impute everything eagerly, then nested-loop refinement.
    DdAsp,
    /// Impute everything eagerly, then the grid-based join.
    DdGrid,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Left stream CSV (timestamp,attrs... with `-` for missing).
    #[arg(long, env = "JOINIDS_STREAM1")]
    pub stream1: PathBuf,
    /// Right stream CSV.
    #[arg(long, env = "JOINIDS_STREAM2")]
    pub stream2: PathBuf,
    /// Complete repository CSV.
    #[arg(long, env = "JOINIDS_REPO")]
    pub repo: PathBuf,
    /// Rule file (`detA:eps,detB:eps -> dep:eps` per line).
    #[arg(long, env = "JOINIDS_RULES")]
    pub rules: PathBuf,
    /// Distance threshold.
    #[arg(long, env = "JOINIDS_EPSILON", default_value_t = 0.3)]
    pub epsilon: f64,
    /// Probabilistic threshold.
    #[arg(long, env = "JOINIDS_ALPHA", default_value_t = 0.5)]
    pub alpha: f64,
    /// Sliding-window size.
    #[arg(long, env = "JOINIDS_WINDOW", default_value_t = 2000)]
    pub window: usize,
    #[arg(long, value_enum, env = "JOINIDS_ALGO", default_value = "joinids")]
    pub algo: Algo,
    /// Write the delta log here instead of stdout.
    #[arg(long, env = "JOINIDS_OUT")]
    pub out: Option<PathBuf>,
    /// Histogram buckets per index node.
    #[arg(long, env = "JOINIDS_LAMBDA", default_value_t = 10)]
    pub lambda: usize,
    /// Fix the cluster leaf capacity instead of selecting among candidates.
    #[arg(long, env = "JOINIDS_LEAF_CAPACITY")]
    pub leaf_capacity: Option<usize>,
    /// Sample queries used to score candidate clusterings.
    #[arg(long, env = "JOINIDS_CLUSTER_SAMPLES", default_value_t = 100)]
    pub cluster_samples: usize,
    /// Cap on candidate values per missing attribute.
    #[arg(long, env = "JOINIDS_CANDIDATE_CAP", default_value_t = 16)]
    pub candidate_cap: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory for stream1.csv, stream2.csv, repository.csv,
    /// groundtruth.csv, and rules.dd.
    #[arg(long, env = "JOINIDS_OUT_DIR")]
    pub out_dir: PathBuf,
    /// uniform | correlated | anti-correlated.
    #[arg(long, env = "JOINIDS_DISTRIBUTION", default_value = "uniform")]
    pub distribution: String,
    /// Attribute count.
    #[arg(long, env = "JOINIDS_D", default_value_t = 4)]
    pub d: usize,
    /// Repository rows.
    #[arg(long, env = "JOINIDS_REPO_SIZE", default_value_t = 30_000)]
    pub repo_size: usize,
    /// Rows per stream.
    #[arg(long, env = "JOINIDS_STREAM_LEN", default_value_t = 4000)]
    pub stream_len: usize,
    /// Window size used to pair groundtruth timestamps.
    #[arg(long, env = "JOINIDS_WINDOW", default_value_t = 2000)]
    pub window: usize,
    /// Distance threshold used for the groundtruth join.
    #[arg(long, env = "JOINIDS_EPSILON", default_value_t = 0.3)]
    pub epsilon: f64,
    /// Missing attributes per stream row.
    #[arg(long, short = 'm', env = "JOINIDS_MISSING", default_value_t = 1)]
    pub missing: usize,
    /// Family seeds to draw before deriving rule-consistent rows.
    #[arg(long, env = "JOINIDS_SEEDS", default_value_t = 5000)]
    pub seeds: usize,
    /// RNG seed; equal seeds give byte-identical outputs.
    #[arg(long, env = "JOINIDS_RNG_SEED", default_value_t = 42)]
    pub rng_seed: u64,
    /// Use these rules instead of the distribution's defaults.
    #[arg(long, env = "JOINIDS_RULES")]
    pub rules: Option<PathBuf>,
    /// Maximum tolerated fraction of rule-violating pairs in the output.
    #[arg(long, env = "JOINIDS_VALIDATION_TOLERANCE", default_value_t = 0.01)]
    pub validation_tolerance: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Delta log produced by `run`.
    #[arg(long, env = "JOINIDS_DELTAS")]
    pub deltas: PathBuf,
    /// Groundtruth CSV (`timestamp_x,timestamp_y`).
    #[arg(long, env = "JOINIDS_GROUNDTRUTH")]
    pub groundtruth: PathBuf,
}

/// Attribute names A, B, C, ... for generated schemas.
pub fn letter_schema(d: usize) -> AttributeSchema {
    let names: Vec<String> = (0..d)
        .map(|i| {
            if i < 26 {
                char::from(b'A' + i as u8).to_string()
            } else {
                format!("X{i}")
            }
        })
        .collect();
    AttributeSchema::new(names).expect("letter names are unique")
}

/// Default rules per family, patterned after the synthetic rule table and
/// remapped onto the last attribute as the dependent.
pub fn default_rules(distribution: DataDistribution, d: usize) -> anyhow::Result<Vec<DDRule>> {
    if d < 2 {
        bail!("need at least 2 attributes for a rule");
    }
    let dep = d - 1;
    let rules = match distribution {
        DataDistribution::Uniform => {
            let determinants: Vec<usize> = (0..dep).collect();
            let eps = vec![0.01; determinants.len()];
            vec![DDRule::new(determinants, eps, dep, 0.01)?]
        }
        DataDistribution::Correlated => {
            let determinants: Vec<usize> = (0..dep.min(2)).collect();
            let eps = vec![0.02; determinants.len()];
            vec![DDRule::new(determinants, eps, dep, 0.05)?]
        }
        DataDistribution::AntiCorrelated => {
            let mut rules = Vec::new();
            if d >= 4 {
                rules.push(DDRule::new(vec![0, 2], vec![0.03, 0.03], dep, 0.1)?);
                rules.push(DDRule::new(vec![1], vec![0.02], dep, 0.05)?);
            } else {
                rules.push(DDRule::new(vec![0], vec![0.03], dep, 0.1)?);
            }
            rules
        }
    };
    Ok(rules)
}

/// Pair two timestamped streams into per-timestamp arrivals.
fn align_streams(
    left: Vec<IncompleteObject>,
    right: Vec<IncompleteObject>,
) -> BTreeMap<i64, (Option<IncompleteObject>, Option<IncompleteObject>)> {
    let mut by_ts: BTreeMap<i64, (Option<IncompleteObject>, Option<IncompleteObject>)> =
        BTreeMap::new();
    for obj in left {
        let t = obj.timestamp;
        by_ts.entry(t).or_default().0 = Some(obj);
    }
    for obj in right {
        let t = obj.timestamp;
        by_ts.entry(t).or_default().1 = Some(obj);
    }
    by_ts
}

/// Outcome of a `run` invocation.
pub struct RunOutcome {
    pub deltas: Vec<JoinDelta>,
    pub stats: PruneStats,
    pub final_pairs: usize,
    pub wall_clock: Duration,
    pub timestamps: usize,
    pub unimputable: usize,
}

/// Drive one stepper over aligned streams, timing only the step loop.
pub fn drive(
    stepper: &mut dyn Stepper,
    arrivals: BTreeMap<i64, (Option<IncompleteObject>, Option<IncompleteObject>)>,
) -> anyhow::Result<RunOutcome> {
    let mut deltas = Vec::with_capacity(arrivals.len());
    let timestamps = arrivals.len();
    let start = Instant::now();
    for (t, (l, r)) in arrivals {
        deltas.push(stepper.step(l, r, t)?);
    }
    let wall_clock = start.elapsed();
    let unimputable = deltas.iter().map(|d| d.unimputable.len()).sum();
    Ok(RunOutcome {
        stats: stepper.stats(),
        final_pairs: stepper.join_set().len(),
        deltas,
        wall_clock,
        timestamps,
        unimputable,
    })
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let (schema1, left) = io::read_stream_csv(&args.stream1, crate::model::StreamId::Left)
        .with_context(|| format!("reading {}", args.stream1.display()))?;
    let (schema2, right) = io::read_stream_csv(&args.stream2, crate::model::StreamId::Right)
        .with_context(|| format!("reading {}", args.stream2.display()))?;
    let repo = io::read_repository_csv(&args.repo)
        .with_context(|| format!("reading {}", args.repo.display()))?;
    if schema1 != schema2 || &schema1 != repo.schema() {
        bail!("stream and repository schemas disagree");
    }
    let rules = io::read_rules(&args.rules, repo.schema())
        .with_context(|| format!("reading {}", args.rules.display()))?;

    let params = JoinParams::new(args.epsilon, args.alpha)?;
    let mut config = EngineConfig::new(params, args.window);
    config.lambda = args.lambda;
    config.cluster_samples = args.cluster_samples;
    config.candidate_cap = args.candidate_cap;
    if let Some(capacity) = args.leaf_capacity {
        config.leaf_capacities = vec![capacity];
    }

    let mut stepper: Box<dyn Stepper> = match args.algo {
        Algo::Joinids => Box::new(Engine::startup(repo, &rules, config)?),
        Algo::DdGrid => Box::new(Engine::startup_eager(repo, &rules, config)?),
        Algo::DdAsp => Box::new(NestedLoopBaseline::startup(repo, &rules, config)?),
    };
    let outcome = drive(stepper.as_mut(), align_streams(left, right))?;

    let algo_name = match args.algo {
        Algo::Joinids => "joinids",
        Algo::DdAsp => "dd-asp",
        Algo::DdGrid => "dd-grid",
    };
    let summary = run_summary(algo_name, &args_summary(args), &outcome);
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            io::write_delta_log(std::io::BufWriter::new(file), &outcome.deltas, &summary)?;
        }
        None => io::write_delta_log(&mut *out, &outcome.deltas, &summary)?,
    }
    Ok(())
}

fn args_summary(args: &RunArgs) -> Vec<(String, String)> {
    vec![
        ("epsilon".into(), format!("{}", args.epsilon)),
        ("alpha".into(), format!("{}", args.alpha)),
        ("window".into(), format!("{}", args.window)),
    ]
}

fn run_summary(
    algo: &str,
    params: &[(String, String)],
    outcome: &RunOutcome,
) -> Vec<(String, String)> {
    let stats = outcome.stats;
    let added: usize = outcome.deltas.iter().map(|d| d.added.len()).sum();
    let removed: usize = outcome.deltas.iter().map(|d| d.removed.len()).sum();
    let mut summary = vec![("algo".to_string(), algo.to_string())];
    summary.extend(params.iter().cloned());
    summary.extend([
        ("timestamps".to_string(), outcome.timestamps.to_string()),
        ("wall_clock_seconds".to_string(), format!("{:.6}", outcome.wall_clock.as_secs_f64())),
        ("pairs_added".to_string(), added.to_string()),
        ("pairs_removed".to_string(), removed.to_string()),
        ("final_join_pairs".to_string(), outcome.final_pairs.to_string()),
        ("unimputable".to_string(), outcome.unimputable.to_string()),
        ("window_pairs".to_string(), stats.window_pairs.to_string()),
        ("grid_candidate_pairs".to_string(), stats.grid_candidate_pairs.to_string()),
        ("lemma1_pruned".to_string(), stats.lemma1_pruned.to_string()),
        ("lemma3_pruned".to_string(), stats.lemma3_pruned.to_string()),
        ("refined".to_string(), stats.refined.to_string()),
    ]);
    summary
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let distribution: DataDistribution = args.distribution.parse()?;
    let schema = letter_schema(args.d);
    let rules = match &args.rules {
        Some(path) => io::read_rules(path, &schema)
            .with_context(|| format!("reading {}", path.display()))?,
        None => default_rules(distribution, args.d)?,
    };

    let count = args.repo_size + 2 * args.stream_len;
    let dataset = generate(
        &GenerateParams {
            distribution,
            dim: args.d,
            count,
            seed_count: args.seeds.min(count),
            rng_seed: args.rng_seed,
        },
        &rules,
    )?;

    let mut dependents: Vec<usize> = rules.iter().map(|r| r.dependent()).collect();
    dependents.sort_unstable();
    dependents.dedup();
    let masked = mask(
        &dataset,
        &MaskParams {
            missing_per_row: args.missing,
            dependents,
            stream_len: args.stream_len,
            rng_seed: args.rng_seed.wrapping_add(1),
        },
    )?;

    let mut validations = Vec::new();
    for rule in &rules {
        validations.push(validate_rule(
            rule,
            &dataset,
            args.validation_tolerance,
            2000,
            args.rng_seed,
        )?);
    }

    let pairs = groundtruth_pairs(
        &masked.groundtruth_left,
        &masked.groundtruth_right,
        args.epsilon,
        args.window,
    );

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    io::write_stream_csv(&args.out_dir.join("stream1.csv"), &schema, &masked.left)?;
    io::write_stream_csv(&args.out_dir.join("stream2.csv"), &schema, &masked.right)?;
    io::write_repository_csv(&args.out_dir.join("repository.csv"), &schema, &masked.repository)?;
    io::write_groundtruth_csv(&args.out_dir.join("groundtruth.csv"), &pairs)?;
    io::write_rules(&args.out_dir.join("rules.dd"), &rules, &schema)?;

    writeln!(out, "out_dir={}", args.out_dir.display())?;
    writeln!(out, "distribution={}", args.distribution)?;
    writeln!(out, "rows={count}")?;
    writeln!(out, "stream_len={}", args.stream_len)?;
    writeln!(out, "repo_size={}", masked.repository.len())?;
    writeln!(out, "groundtruth_pairs={}", pairs.len())?;
    for (i, v) in validations.iter().enumerate() {
        writeln!(out, "rule{}_violation_fraction={:.6}", i + 1, v.violation_fraction)?;
        writeln!(out, "rule{}_consistent={}", i + 1, v.passed)?;
    }
    Ok(())
}

/// Metrics of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub groundtruth_pairs: usize,
    pub returned_pairs: usize,
    pub correct_pairs: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub final_live_pairs: usize,
}

pub fn f1_score(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

/// Compare every pair a delta log ever reported against the groundtruth.
pub fn evaluate_deltas(
    records: &[io::DeltaRecord],
    groundtruth: &[(i64, i64)],
) -> EvalReport {
    let truth: std::collections::HashSet<(i64, i64)> = groundtruth.iter().copied().collect();
    let returned: std::collections::HashSet<(i64, i64)> = records
        .iter()
        .filter(|r| r.added)
        .map(|r| (r.left_ts, r.right_ts))
        .collect();
    let correct = returned.intersection(&truth).count();
    let recall = if truth.is_empty() { 1.0 } else { correct as f64 / truth.len() as f64 };
    let precision =
        if returned.is_empty() { 0.0 } else { correct as f64 / returned.len() as f64 };
    EvalReport {
        groundtruth_pairs: truth.len(),
        returned_pairs: returned.len(),
        correct_pairs: correct,
        recall,
        precision,
        f1: f1_score(recall, precision),
        final_live_pairs: io::replay_final_set(records).len(),
    }
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let (records, summary) = io::read_delta_log(&args.deltas)
        .with_context(|| format!("reading {}", args.deltas.display()))?;
    let groundtruth = io::read_groundtruth_csv(&args.groundtruth)
        .with_context(|| format!("reading {}", args.groundtruth.display()))?;
    let report = evaluate_deltas(&records, &groundtruth);

    writeln!(out, "groundtruth_pairs={}", report.groundtruth_pairs)?;
    writeln!(out, "returned_pairs={}", report.returned_pairs)?;
    writeln!(out, "correct_pairs={}", report.correct_pairs)?;
    writeln!(out, "recall={:.6}", report.recall)?;
    writeln!(out, "precision={:.6}", report.precision)?;
    writeln!(out, "f1={:.6}", report.f1)?;
    writeln!(out, "final_live_pairs={}", report.final_live_pairs)?;
    if let Some(expected) = summary.get("final_join_pairs") {
        writeln!(out, "final_join_pairs_reported={expected}")?;
        writeln!(
            out,
            "replay_consistent={}",
            expected == &report.final_live_pairs.to_string()
        )?;
    }

    // Pruning power over both denominators, when the log carries counters.
    let as_u64 = |key: &str| summary.get(key).and_then(|v| v.parse::<u64>().ok());
    if let (Some(grid), Some(l1), Some(l3), Some(refined)) = (
        as_u64("grid_candidate_pairs"),
        as_u64("lemma1_pruned"),
        as_u64("lemma3_pruned"),
        as_u64("refined"),
    ) {
        if grid > 0 {
            writeln!(out, "pruning_power_grid={:.6}", (l1 + l3) as f64 / grid as f64)?;
            writeln!(out, "lemma1_fraction_grid={:.6}", l1 as f64 / grid as f64)?;
            writeln!(out, "lemma3_fraction_grid={:.6}", l3 as f64 / grid as f64)?;
            writeln!(out, "refined_fraction_grid={:.6}", refined as f64 / grid as f64)?;
        }
        if let Some(window_pairs) = as_u64("window_pairs") {
            if window_pairs > 0 {
                writeln!(
                    out,
                    "pruning_power_window={:.6}",
                    (window_pairs - refined.min(window_pairs)) as f64 / window_pairs as f64
                )?;
            }
        }
    }
    Ok(())
}

pub fn main_with(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(args, out),
        Command::Generate(args) => cmd_generate(args, out),
        Command::Eval(args) => cmd_eval(args, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_matches_hand_computation() {
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        let f1 = f1_score(0.9, 0.95);
        assert!((f1 - 2.0 * 0.855 / 1.85).abs() < 1e-12);
        assert!((f1 - 0.924324).abs() < 1e-6);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn eval_degenerate_cases() {
        let truth = vec![(1, 1), (2, 2)];
        let report = evaluate_deltas(&[], &truth);
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.precision, 0.0);
        assert_eq!(report.f1, 0.0);

        let records = vec![
            io::DeltaRecord { timestamp: 1, added: true, left_ts: 1, right_ts: 1, probability: 1.0 },
            io::DeltaRecord { timestamp: 2, added: true, left_ts: 2, right_ts: 2, probability: 1.0 },
        ];
        let report = evaluate_deltas(&records, &truth);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.f1, 1.0);
    }

    #[test]
    fn default_rules_cover_each_family() {
        let uniform = default_rules(DataDistribution::Uniform, 4).unwrap();
        assert_eq!(uniform.len(), 1);
        assert_eq!(uniform[0].determinants(), &[0, 1, 2]);
        assert_eq!(uniform[0].dependent(), 3);

        let correlated = default_rules(DataDistribution::Correlated, 4).unwrap();
        assert_eq!(correlated[0].determinants(), &[0, 1]);

        let anti = default_rules(DataDistribution::AntiCorrelated, 4).unwrap();
        assert_eq!(anti.len(), 2);
        assert_eq!(anti[0].determinants(), &[0, 2]);
        assert_eq!(anti[1].determinants(), &[1]);
    }
}
