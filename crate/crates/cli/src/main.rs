mod config;
mod report;
mod state;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpv_core::decision::{compute_expected_loss, compute_pbb, decide, derive_rpv_samples};
use rpv_core::diagnostics::{posterior_predictive_check, PpcStatistic};
use rpv_core::posterior::marginal_mean;
use rpv_core::sim::run_study;
use rpv_core::Verdict;

use crate::config::{Overrides, StudyFile};
use crate::state::{load_transactions, StateFile};

#[derive(Debug, Parser)]
#[command(name = "rpv", version, about = "Bayesian revenue-per-visitor decisions for A/B/n experiments")]
struct Cli {
    /// Base seed. Defaults to a fixed value so every invocation is reproducible.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation studies (output does not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for study output files.
    #[arg(long, global = true, default_value = "rpv-output")]
    output: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate both methods over one or more scenarios and tabulate outcomes.
    RunStudy(StudyArgs),
    /// Evaluate the stopping rule on cumulative data from a state file.
    Evaluate {
        /// State file with per-variant cumulative data.
        state: PathBuf,
    },
    /// Posterior predictive check of one variant's fitted model.
    Ppc {
        /// State file with per-variant cumulative data.
        state: PathBuf,
        /// Observed transaction values, one per line.
        transactions: PathBuf,
        /// One of: mean, variance, max, zero_fraction.
        #[arg(long, default_value = "mean")]
        statistic: String,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Variant index; defaults to the control.
        #[arg(long)]
        variant: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Study configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: revenue-trap, clear-winner, futility, or all.
    #[arg(long)]
    preset: Vec<String>,
    #[arg(long)]
    n_runs: Option<u64>,
    /// Monte Carlo samples per variant per day.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_days: Option<u32>,
    /// Significance level of the peeking baseline.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    min_days: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cli.command {
        Command::RunStudy(args) => cmd_run_study(args, cli.seed, jobs, &cli.output),
        Command::Evaluate { state } => cmd_evaluate(&state, cli.seed),
        Command::Ppc {
            state,
            transactions,
            statistic,
            replicates,
            variant,
        } => cmd_ppc(&state, &transactions, &statistic, replicates, variant, cli.seed),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run_study(args: StudyArgs, seed: Option<u64>, jobs: usize, output: &Path) -> Result<()> {
    let started = Instant::now();
    let mut study = match (&args.config, args.preset.is_empty()) {
        (Some(path), _) => StudyFile::load(path)?,
        (None, false) => StudyFile::from_presets(&args.preset)?,
        (None, true) => bail!("either --config <path> or --preset <name> is required"),
    };
    study.apply(&Overrides {
        seed,
        n_runs: args.n_runs,
        samples: args.samples,
        epsilon: args.epsilon,
        max_days: args.max_days,
        alpha: args.alpha,
        min_days: args.min_days,
    });
    let resolved = study.resolve()?;
    std::fs::create_dir_all(output).with_context(|| format!("cannot create {}", output.display()))?;

    let mut outputs = Vec::new();
    for (scenario, engine) in &resolved {
        let out = run_study(scenario, engine, study.engine.n_runs, jobs)
            .with_context(|| format!("study `{}` failed", scenario.name))?;
        outputs.push((scenario, out));
    }
    for (i, (scenario, out)) in outputs.iter().enumerate() {
        let names = scenario.variant_names();
        write_file(output, &format!("{}-runs.csv", scenario.name), &report::records_csv(&out.records, &names))?;
        write_file(output, &format!("{}-summary.csv", scenario.name), &report::summary_csv(&out.report))?;
        let text = report::summary_text(&out.report);
        write_file(output, &format!("{}-summary.txt", scenario.name), &text)?;
        if i > 0 {
            println!();
        }
        print!("{text}");
    }
    write_file(output, "config.toml", &study.to_toml())?;
    let metadata = format!(
        "tool = \"rpv {}\"\nseed = {}\njobs = {}\nwall_clock_seconds = {:.3}\nscenarios = [{}]\nconfig = \"config.toml\"\n",
        env!("CARGO_PKG_VERSION"),
        study.engine.seed,
        jobs,
        started.elapsed().as_secs_f64(),
        resolved
            .iter()
            .map(|(s, _)| format!("\"{}\"", s.name))
            .collect::<Vec<_>>()
            .join(", ")
    );
    write_file(output, "metadata.toml", &metadata)?;
    Ok(())
}

fn cmd_evaluate(path: &Path, seed: Option<u64>) -> Result<()> {
    let file = StateFile::load(path)?;
    let states = file.states();
    let mut rng = ChaCha8Rng::seed_from_u64(file.seed(seed));
    let m = derive_rpv_samples(&states, file.samples, &mut rng);
    let pbb = compute_pbb(&m);
    let losses = compute_expected_loss(&m);
    let decision = decide(&losses, &pbb, file.epsilon, file.control, file.day);

    println!(
        "{:<12} {:>10} {:>11} {:>9} {:>8} {:>10} {:>8} {:>10} {:>7} {:>10}",
        "variant", "visitors", "conversions", "conv_mean", "t_dof", "t_loc", "t_scale", "rpv_mean", "pbb", "exp_loss"
    );
    for (i, (state, entry)) in states.iter().zip(&file.variants).enumerate() {
        let t = marginal_mean(&state.value_posterior());
        let label = if i == file.control {
            format!("{} (ctl)", entry.name)
        } else {
            entry.name.clone()
        };
        println!(
            "{:<12} {:>10} {:>11} {:>9.5} {:>8.1} {:>10.4} {:>8.4} {:>10.4} {:>7.4} {:>10.4}",
            label,
            state.visitors,
            state.conversions,
            state.conversion_posterior().mean(),
            t.dof,
            t.loc,
            t.scale,
            m.column_mean(i),
            pbb[i],
            losses[i]
        );
    }
    let verdict = match decision.verdict {
        Verdict::Continue => format!("continue (minimum expected loss >= {:.4})", file.epsilon),
        Verdict::StopWinner(i) => format!("stop: ship {}", file.variants[i].name),
        Verdict::StopFutility => format!("stop for futility: keep {}", file.variants[file.control].name),
    };
    println!("decision (day {}): {verdict}", decision.day);
    Ok(())
}

fn cmd_ppc(
    state_path: &Path,
    transactions_path: &Path,
    statistic: &str,
    replicates: usize,
    variant: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let statistic: PpcStatistic = statistic.parse()?;
    let file = StateFile::load(state_path)?;
    let index = variant.unwrap_or(file.control);
    let states = file.states();
    let Some(state) = states.get(index) else {
        bail!("variant index {index} out of range for {} variants", states.len());
    };
    let transactions = load_transactions(transactions_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(file.seed(seed));
    let result = posterior_predictive_check(state, &transactions, statistic, replicates, &mut rng)
        .with_context(|| format!("check of variant `{}` failed", file.variants[index].name))?;

    let mut sorted = result.replicated_values.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    println!("variant:    {}", file.variants[index].name);
    println!("statistic:  {}", result.statistic);
    println!("observed:   {:.4}", result.observed_value);
    println!(
        "replicates: {} (min {:.4}, median {:.4}, max {:.4})",
        sorted.len(),
        sorted[0],
        median,
        sorted[sorted.len() - 1]
    );
    println!("ppc p-value: {:.4}", result.ppc_p_value);
    Ok(())
}
