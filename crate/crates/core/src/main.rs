use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geese_core::agents::Policy;
use geese_core::env::replay::{ReplayFrame, ReplayWriter};
use geese_core::env::{GameConfig, GameState, MAX_GEESE};
use geese_core::eval::{play_recorded, tournament};
use geese_core::training::{load_policy, run_training, TrainConfig};

#[derive(Parser)]
#[command(name = "geese", version, about = "Hungry Geese deep Q-learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learner from a TOML config; writes metrics.csv and checkpoints.
    Train {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
    },
    /// Tournament between up to four agents (checkpoint paths, `greedy` or
    /// `random`), agent i on seat i. Prints one JSON line per agent.
    Eval {
        #[arg(long, num_args = 1..=4, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long, default_value_t = 100)]
        games: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Play one game with the checkpoint on seat 0 and write it as JSON lines.
    ExportReplay {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "greedy,greedy,greedy")]
        opponents: Vec<String>,
    },
    /// Random-action environment throughput.
    BenchEnv {
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<geese_core::Error> for Failure {
    fn from(e: geese_core::Error) -> Self {
        match e {
            geese_core::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} '{}' not found", path.display())))
    }
}

fn policy_for(spec: &str) -> Result<Policy, Failure> {
    match spec {
        "greedy" => Ok(Policy::Greedy),
        "random" => Ok(Policy::Random),
        path => {
            require_file(Path::new(path), "checkpoint")?;
            Ok(load_policy(path)?)
        }
    }
}

fn train(config: &Path, out: &Path) -> Result<(), Failure> {
    require_file(config, "config")?;
    let cfg = TrainConfig::load(config)?;
    let started = Instant::now();
    let outcome = run_training(&cfg, out)?;
    let csv = fs::read_to_string(out.join("metrics.csv")).context("reading metrics")?;
    print!("{csv}");
    eprintln!(
        "trained {} steps over {} episodes ({} gradient steps) in {:.1}s; {} checkpoints in {}",
        cfg.total_steps,
        outcome.episodes,
        outcome.gradient_steps,
        started.elapsed().as_secs_f64(),
        outcome.checkpoints.len(),
        out.display()
    );
    Ok(())
}

fn eval(models: &[String], games: usize, seed: u64) -> Result<(), Failure> {
    if games == 0 {
        return Err(Failure::Usage("--games must be at least 1".into()));
    }
    let agents = models
        .iter()
        .map(|m| Ok((m.clone(), policy_for(m)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let result = tournament(&agents, games, seed, GameConfig::default(), None)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for a in &result.agents {
        writeln!(out, "{}", serde_json::to_string(a).context("serializing")?).context("stdout")?;
        eprintln!(
            "seat {} {:<24} win rate {:.3}  mean score {:.1}  max score {}  elo {:.1}",
            a.seat, a.name, a.win_rate, a.mean_score, a.max_score, a.elo
        );
    }
    Ok(())
}

fn export_replay(checkpoint: &str, out: &Path, seed: u64, opponents: &[String]) -> Result<(), Failure> {
    if opponents.len() >= MAX_GEESE {
        return Err(Failure::Usage(format!("at most {} opponents", MAX_GEESE - 1)));
    }
    let mut policies = vec![policy_for(checkpoint)?];
    for o in opponents {
        policies.push(policy_for(o)?);
    }
    let refs: Vec<&Policy> = policies.iter().collect();
    let cfg = GameConfig {
        num_geese: refs.len(),
        ..GameConfig::default()
    };
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut writer = ReplayWriter::new(BufWriter::new(file));
    let (result, last) = play_recorded(&refs, seed, cfg, |state, actions| {
        writer.write(&ReplayFrame::new(state, actions))
    })?;
    writer.write(&ReplayFrame::new(&last, &[None; MAX_GEESE]))?;
    writer.finish()?.flush().context("flushing replay")?;
    eprintln!(
        "{} steps, scores {:?}, winner {:?}",
        result.steps, result.scores, result.winner
    );
    Ok(())
}

fn bench_env(steps: u64, seed: u64) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut game = GameState::new(rng.gen(), GameConfig::default())?;
    let started = Instant::now();
    let mut episodes = 1u64;
    for _ in 0..steps {
        if game.is_done() {
            game = GameState::new(rng.gen(), GameConfig::default())?;
            episodes += 1;
        }
        let mut actions = [None; MAX_GEESE];
        for (g, a) in actions.iter_mut().enumerate() {
            if game.goose(g).alive() {
                let legal = game.legal_actions(g)?;
                *a = Some(legal[rng.gen_range(0..legal.len())]);
            }
        }
        game.step_mut(actions)?;
    }
    let secs = started.elapsed().as_secs_f64();
    let rate = steps as f64 / secs.max(1e-12);
    println!(
        "{}",
        serde_json::json!({ "steps": steps, "episodes": episodes, "seconds": secs, "steps_per_second": rate })
    );
    eprintln!("{steps} steps in {secs:.3}s: {rate:.0} steps/s");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Train { config, out } => train(config, out),
        Command::Eval { models, games, seed } => eval(models, *games, *seed),
        Command::ExportReplay {
            checkpoint,
            out,
            seed,
            opponents,
        } => export_replay(checkpoint, out, *seed, opponents),
        Command::BenchEnv { steps, seed } => bench_env(*steps, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
