use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use holdctl::agents::Variant;
use holdctl::metrics::MetricsReport;
use holdctl::plot::{parse_trajectory_csv, render_timespace_svg, render_weights_svg, WeightCurves};
use holdctl::scenario::AnomalySpec;
use holdctl::sim::EpisodeDoc;
use holdctl::trainer::{
    curves_csv, evaluate, run_episode, run_manifest, run_sweep, train, Controller, EvalSpec, RunOptions, SweepConfig,
    TrainerConfig, WeightProfile,
};

#[derive(Parser, Debug)]
#[command(name = "holdctl", version, about = "Bus holding control: simulate, train, evaluate and plot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a learned controller.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the agent variant of the config.
        #[arg(long)]
        agent: Option<Variant>,
    },
    /// Evaluate a controller against no-control on paired seeds.
    Eval {
        /// Saved controller (required for learned variants).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        route: PathBuf,
        #[arg(long)]
        agent: Variant,
        #[arg(long, default_value_t = 1.0)]
        sigma_d: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma_s: f64,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 1000)]
        base_seed: u64,
        /// Anomaly such as `interruption:factor=0.1,buses=1,window=1800-2400`.
        #[arg(long)]
        anomaly: Vec<AnomalySpec>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate several agents over a grid of perturbation levels.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a trajectory CSV or a weight-curve JSON file as SVG.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in loss and gradient oracles.
    Selftest,
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            error_line("usage", &e.kind().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line("runtime", &format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            seed,
            out,
            episodes,
            agent,
        } => cmd_train(&config, seed, &out, episodes, agent),
        Command::Eval {
            checkpoint,
            route,
            agent,
            sigma_d,
            sigma_s,
            seeds,
            base_seed,
            anomaly,
            out,
        } => {
            let spec = EvalSpec {
                cells: vec![(sigma_d, sigma_s)],
                anomalies: anomaly,
                n_seeds: seeds,
                base_seed,
                ..EvalSpec::default()
            };
            cmd_eval(checkpoint.as_deref(), &route, agent, &spec, &out)
        }
        Command::Sweep { config, out } => {
            let cfg = SweepConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_sweep(&cfg, &config)?;
            std::fs::create_dir_all(&out)?;
            let csv = report.to_csv()?;
            std::fs::write(out.join("sweep.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Plot { log, out } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let svg = if log.extension().is_some_and(|e| e == "json") {
                let curves: WeightCurves = serde_json::from_str(&text)?;
                render_weights_svg(&curves)?
            } else {
                render_timespace_svg(&parse_trajectory_csv(&text)?)?
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&out, svg)?;
            Ok(())
        }
        Command::Selftest => {
            let checks = holdctl::selftest::run()?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!(
                    "{} {} (value {:.3e}, tolerance {:.0e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.tolerance
                );
            }
            if failed > 0 {
                bail!("{failed} of {} oracles failed", checks.len());
            }
            Ok(())
        }
    }
}

fn cmd_train(config: &Path, seed: Option<u64>, out: &Path, episodes: Option<usize>, agent: Option<Variant>) -> Result<()> {
    let mut cfg = TrainerConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = episodes {
        cfg.episodes = n;
    }
    if let Some(v) = agent {
        cfg.agent.variant = v;
        cfg.agent.beta = None;
    }
    let episode_path = cfg.episode_path(config);
    let fixture = std::fs::read(&episode_path).with_context(|| format!("reading {}", episode_path.display()))?;
    let doc = EpisodeDoc::from_json_str(std::str::from_utf8(&fixture)?)?;
    let outcome = train(&cfg, &doc, |row| {
        if row.episode % 25 == 0 {
            eprintln!(
                "episode {:>4}  reward {:>9.5}  loss {}",
                row.episode,
                row.mean_reward,
                row.critic_loss.map(|l| format!("{l:.5}")).unwrap_or_else(|| "-".into())
            );
        }
    })?;
    std::fs::create_dir_all(out)?;
    outcome.controller.save(&out.join("checkpoint"))?;
    std::fs::write(out.join("curves.csv"), curves_csv(&outcome.curves))?;
    let manifest = run_manifest(&cfg, &fixture, outcome.updates);
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn cmd_eval(checkpoint: Option<&Path>, route: &Path, agent: Variant, spec: &EvalSpec, out: &Path) -> Result<()> {
    let doc = EpisodeDoc::load(route).with_context(|| format!("loading {}", route.display()))?;
    let controller = match checkpoint {
        Some(ck) => {
            let c = Controller::load(ck)?;
            if c.spec.variant != agent {
                bail!("checkpoint holds {}, --agent is {}", c.spec.variant, agent);
            }
            c
        }
        None if agent.is_learned() => bail!("{agent} needs --checkpoint"),
        None => Controller::rule(agent)?,
    };
    let cells = evaluate(&controller, &doc, spec)?;
    let report = MetricsReport {
        rows: cells.iter().map(|c| c.row.clone()).collect(),
    };
    std::fs::create_dir_all(out)?;
    let csv = report.to_csv()?;
    std::fs::write(out.join("metrics.csv"), &csv)?;
    print!("{csv}");

    // Trajectory of the first seed, for time-space plots.
    let (draw, seed) = spec.draw(spec.cells[0], 0);
    let opts = RunOptions {
        record_trajectory: true,
        ..RunOptions::default()
    };
    let log = run_episode(&controller, &doc, &draw, seed, &opts, &mut ChaCha8Rng::seed_from_u64(seed), None)?;
    std::fs::write(out.join("trajectory.csv"), log.trajectory_csv())?;

    if let Some(learner) = controller.learners().next().filter(|l| l.meta.is_some()) {
        let exps = holdctl::trainer::collect_experiences(&controller, &doc, &[(draw, seed)])?;
        let profile = WeightProfile::from_graphs(learner, exps.iter().map(|e| &e.g))?;
        let curves = WeightCurves {
            midpoints: holdctl::agents::QuantileGrid::even(learner.spec.k)?.midpoints,
            curves: profile
                .by_event_count
                .iter()
                .map(|(ec, (_, w))| (format!("events={ec}"), w.clone()))
                .collect(),
        };
        std::fs::write(out.join("weights.json"), serde_json::to_string_pretty(&curves)?)?;
    }
    Ok(())
}
