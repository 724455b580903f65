use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use codesign::error::Error;
use codesign::morphology::TalentVector;
use codesign::pipeline::{
    load_boundary, load_json, paths, report, run_pipeline, srta_study, PipelineConfig, PipelineOptions, Stage,
};
use codesign::seed::derive_seed;
use codesign::sim::{format_log, generate_scenario, Scenario, ScriptedPolicy};
use codesign::train::{
    evaluate, write_history, EvalPolicy, RunControl, ScenarioSource, TalentMode, TrainConfig, TrainedPolicy,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "codesign",
    version,
    about = "Talent-based morphology and task-allocation co-design"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML pipeline configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    /// Reuse completed stages whose digests match and resume training checkpoints.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Multi-run NSGA-II talent Pareto search.
    Pareto,
    /// Fit the Pareto surface and quantile bands.
    Boundary,
    /// Talent-infused PPO training.
    Train,
    /// Train fixed-talent baselines (archive corners unless --talents is given).
    TrainBaseline {
        /// Fixed talents as range,speed,capacity.
        #[arg(long, value_parser = parse_talents)]
        talents: Option<TalentVector>,
    },
    /// Greedy completion-rate evaluation of co-design and baselines.
    Evaluate,
    /// Recover a feasible morphology for the learned talents.
    Finalize,
    /// Single-robot co-design study and comparison with the fleet.
    Srta,
    /// Every stage in order.
    Pipeline,
    /// Completion tables and plot data from a finished run.
    Report,
    /// Play one scenario and print its event log.
    Simulate(SimulateArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// random, random-task, nearest, edf, or a trained policy JSON file.
    #[arg(long, default_value = "edf")]
    policy: String,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    robots: Option<usize>,
    /// Talents as range,speed,capacity; defaults to the run's co-design talents.
    #[arg(long, value_parser = parse_talents)]
    talents: Option<TalentVector>,
    #[arg(long, default_value_t = 0)]
    scenario_seed: u64,
    /// Load the scenario from a JSON file instead of generating it.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write the event log here instead of standard output.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn parse_talents(s: &str) -> Result<TalentVector, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [r, sp, c] => {
            let t = TalentVector::new(r, sp, c);
            if t.is_valid() {
                Ok(t)
            } else {
                Err("talents must be finite and nonnegative".into())
            }
        }
        _ => Err("expected range,speed,capacity".into()),
    }
}

fn load_config(g: &Global) -> codesign::error::Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) if !p.exists() => return Err(Error::Config(format!("config file {} not found", p.display()))),
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage_options(stage: Stage, resume: bool) -> PipelineOptions {
    PipelineOptions {
        until: stage,
        resume,
        reuse_upstream: true,
    }
}

fn print_outcome(out: &codesign::pipeline::PipelineOutcome) {
    for s in &out.reused {
        println!("{s}: reused");
    }
    for s in &out.executed {
        println!("{s}: done");
    }
}

fn run(cli: Cli) -> codesign::error::Result<()> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    let dir = g.out_dir.as_path();
    match cli.command {
        Command::Pareto => print_outcome(&run_pipeline(&cfg, dir, &stage_options(Stage::Pareto, g.resume))?),
        Command::Boundary => print_outcome(&run_pipeline(&cfg, dir, &stage_options(Stage::Boundary, g.resume))?),
        Command::Train => {
            let out = run_pipeline(&cfg, dir, &stage_options(Stage::Train, g.resume))?;
            print_outcome(&out);
            let policy: TrainedPolicy = load_json(dir, paths::POLICY, Stage::Train)?;
            let t = policy.talents();
            println!(
                "talents: range {:.3} km, speed {:.3} m/s, capacity {:.3}",
                t.flight_range, t.nominal_speed, t.package_capacity
            );
        }
        Command::TrainBaseline { talents: None } => {
            print_outcome(&run_pipeline(&cfg, dir, &stage_options(Stage::Baselines, g.resume))?)
        }
        Command::TrainBaseline { talents: Some(t) } => train_custom_baseline(&cfg, dir, t, g.resume)?,
        Command::Evaluate => {
            print_outcome(&run_pipeline(&cfg, dir, &stage_options(Stage::Evaluate, g.resume))?);
            let eval: codesign::pipeline::EvaluationReport = load_json(dir, paths::EVALUATION, Stage::Evaluate)?;
            for p in &eval.policies {
                for s in &p.scales {
                    println!(
                        "{:<11} {:>4} tasks {:>3} robots  median {:.3}  q1 {:.3}  q3 {:.3}",
                        p.policy, s.n_tasks, s.n_robots, s.median, s.q1, s.q3
                    );
                }
            }
        }
        Command::Finalize => {
            print_outcome(&run_pipeline(&cfg, dir, &stage_options(Stage::Finalize, g.resume))?);
            let r: codesign::finalize::FinalizeReport = load_json(dir, paths::FINAL, Stage::Finalize)?;
            println!("{}", serde_json::to_string_pretty(&r).map_err(Error::Json)?);
        }
        Command::Srta => {
            let r = srta_study(&cfg, dir, g.resume)?;
            for (a, b) in r.single_robot.iter().zip(&r.multi_robot) {
                println!(
                    "{:>4} tasks  single robot {:.3}  fleet of {:>2} {:.3}",
                    a.n_tasks, a.mean, b.n_robots, b.mean
                );
            }
            println!(
                "single robot decreasing: {}, fleet within 10 points: {}, single robot faster: {}",
                r.single_decreasing, r.multi_within_10_points, r.srta_faster
            );
        }
        Command::Pipeline => {
            let opts = PipelineOptions {
                until: Stage::Evaluate,
                resume: g.resume,
                reuse_upstream: g.resume,
            };
            print_outcome(&run_pipeline(&cfg, dir, &opts)?);
        }
        Command::Report => {
            let files = report(dir)?;
            let s = std::fs::read_to_string(&files.summary).map_err(|e| Error::io(&files.summary, e))?;
            print!("{s}");
        }
        Command::Simulate(args) => simulate(&cfg, dir, &args)?,
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn train_custom_baseline(
    cfg: &PipelineConfig,
    dir: &Path,
    talents: TalentVector,
    resume: bool,
) -> codesign::error::Result<()> {
    let boundary_out = run_pipeline(cfg, dir, &stage_options(Stage::Boundary, true))?;
    print_outcome(&boundary_out);
    let boundary = load_boundary(dir)?;
    if !boundary.within_band(&talents.to_array(), 1e-9) {
        eprintln!("warning: talents lie outside the Pareto band");
    }
    let config = TrainConfig {
        seed: derive_seed(cfg.seed, "baseline-custom"),
        ..cfg.train.clone()
    };
    let out = dir.join("baselines/custom");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ckpt = out.join("checkpoint.json");
    let mode = TalentMode::Fixed(talents);
    let st = codesign::train::train(
        &config,
        &mode,
        &ScenarioSource::Random(cfg.env.clone()),
        &RunControl {
            checkpoint: Some(&ckpt),
            resume,
            stop_after: None,
        },
    )?;
    let policy = TrainedPolicy {
        actor: st.learner.actor.clone(),
        mode,
    };
    let policy_path = out.join("policy.json");
    std::fs::write(&policy_path, serde_json::to_string_pretty(&policy)?).map_err(|e| Error::io(&policy_path, e))?;
    let history_path = out.join("history.csv");
    let f = std::fs::File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    write_history(&st.history, f)?;
    let stats = evaluate(
        &EvalPolicy::Trained(&policy),
        &cfg.env,
        &[(cfg.env.n_tasks, cfg.env.n_robots)],
        cfg.evaluation.episodes,
        derive_seed(cfg.seed, "evaluate"),
    )?;
    println!(
        "baseline written to {}; median completion {:.3}",
        out.display(),
        stats[0].median
    );
    Ok(())
}

fn simulate(cfg: &PipelineConfig, dir: &Path, args: &SimulateArgs) -> codesign::error::Result<()> {
    let scenario = match &args.scenario {
        Some(p) => Scenario::load(p)?,
        None => {
            let env = cfg.env.with_scale(
                args.tasks.unwrap_or(cfg.env.n_tasks),
                args.robots.unwrap_or(cfg.env.n_robots),
            );
            generate_scenario(&env, args.scenario_seed).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m),
                e => e,
            })?
        }
    };
    let state = match args.policy.parse::<ScriptedPolicy>() {
        Ok(scripted) => {
            let talents = match args.talents {
                Some(t) => t,
                None => load_json::<TrainedPolicy>(dir, paths::POLICY, Stage::Train)
                    .map(|p| p.talents())
                    .map_err(|_| Error::Config("pass --talents or train a policy in --out-dir first".into()))?,
            };
            scripted.play(&scenario, talents, derive_seed(args.scenario_seed, "simulate"))?
        }
        Err(_) => {
            let path = PathBuf::from(&args.policy);
            if !path.exists() {
                return Err(Error::Config(format!("unknown policy `{}`", args.policy)));
            }
            let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut policy: TrainedPolicy = serde_json::from_str(&s)?;
            if let Some(t) = args.talents {
                policy.mode = TalentMode::Fixed(t);
            }
            policy.play(&scenario)?
        }
    };
    let log = format_log(&state.log);
    match &args.log {
        Some(p) => std::fs::write(p, &log).map_err(|e| Error::io(p, e))?,
        None => print!("{log}"),
    }
    eprintln!(
        "completed {}/{} tasks, reward {:.3}",
        state.completed(),
        state.n_tasks(),
        state.episode_reward()?
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_STAGE),
            }
        }
    }
}
