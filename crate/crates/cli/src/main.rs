use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uavtraj::ddpg::{write_reward_curve, Agent, EpisodeStats, StateScaler, TrainError, Trainer};
use uavtraj::env::UrbanMap;
use uavtraj::experiment::{evaluate_strategy, write_eval_csv, RunConfig, Strategy};
use uavtraj::mdp::write_trajectory_csv;

#[derive(Parser)]
#[command(name = "uavtraj", version, about = "UAV trajectory design laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an urban map with ground terminals and write map.toml.
    GenEnv(Common),
    /// Train the DDPG agent; writes checkpoint/ and reward_curve.csv.
    Train(TrainArgs),
    /// Evaluate a strategy over independent realizations.
    Eval(EvalArgs),
    /// Turn a run directory into plot-ready CSV tables under plots/.
    ExportPlots(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of ground terminals, overriding the config.
    #[arg(long)]
    gts: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Number of training episodes, overriding the config.
    #[arg(long)]
    episodes: Option<usize>,
    /// Resume from this checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// drl, aco or scan.
    #[arg(long, default_value = "drl")]
    strategy: Strategy,
    /// Checkpoint directory of a trained agent (required for drl).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Abort(String),
}

impl Failure {
    fn abort(e: impl std::fmt::Display) -> Self {
        Failure::Abort(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenEnv(c) => gen_env(&c),
        Command::Train(t) => train(&t),
        Command::Eval(e) => eval(&e),
        Command::ExportPlots(c) => export_plots(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Abort(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(c: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.gts {
        cfg.env.num_gts = k;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("run"));
    cfg.output_dir = Some(out.clone());
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((cfg, out))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Abort(format!("{}: {e}", path.display())))
}

fn gen_env(c: &Common) -> Outcome {
    let (cfg, out) = load_config(c)?;
    fs::create_dir_all(&out).map_err(Failure::abort)?;
    let map = cfg.generate_map().map_err(|e| Failure::Usage(e.to_string()))?;
    map.save(&out.join("map.toml")).map_err(Failure::abort)?;
    println!("buildings: {}", map.buildings.len());
    println!("built fraction: {:.4}", map.built_fraction());
    println!("ground terminals: {}", map.num_gts());
    println!("wrote {}", out.join("map.toml").display());
    Ok(())
}

fn train(t: &TrainArgs) -> Outcome {
    let (mut cfg, out) = load_config(&t.common)?;
    if let Some(m) = t.episodes {
        cfg.train.episodes = m;
    }
    fs::create_dir_all(&out).map_err(Failure::abort)?;
    let map = cfg.generate_map().map_err(|e| Failure::Usage(e.to_string()))?;
    map.save(&out.join("map.toml")).map_err(Failure::abort)?;
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(Failure::abort)?;
    let ckpt = out.join("checkpoint");
    let curve_path = out.join("reward_curve.csv");

    let (mut trainer, mut curve) = match &t.checkpoint {
        Some(dir) => {
            let trainer = Trainer::resume(dir, &map, &cfg.mdp, cfg.train.clone(), cfg.train_seed())
                .map_err(|e| Failure::Usage(format!("cannot resume from {}: {e}", dir.display())))?;
            let curve = read_curve(&curve_path, trainer.next_episode);
            (trainer, curve)
        }
        None => (Trainer::new(&map, &cfg.mdp, cfg.train.clone(), cfg.train_seed()), Vec::new()),
    };
    let mut env = cfg.env(&map);
    let save = |trainer: &Trainer, curve: &[EpisodeStats]| -> Outcome {
        trainer.save(&ckpt).map_err(Failure::abort)?;
        fs::write(ckpt.join("config.toml"), cfg.to_toml()).map_err(Failure::abort)?;
        map.save(&ckpt.join("map.toml")).map_err(Failure::abort)?;
        let mut w = create(&curve_path)?;
        write_reward_curve(&mut w, curve).map_err(Failure::abort)?;
        w.flush().map_err(Failure::abort)
    };
    while !trainer.is_finished() {
        match trainer.run_episode(&mut env) {
            Ok(stats) => curve.push(stats),
            Err(e @ TrainError::Diverged { .. }) => {
                let diag = out.join("checkpoint_diverged");
                let _ = trainer.save(&diag);
                return Err(Failure::Abort(format!("{e}; diagnostic checkpoint in {}", diag.display())));
            }
            Err(e) => return Err(Failure::abort(e)),
        }
        let every = cfg.train.checkpoint_every;
        if every > 0 && trainer.next_episode % every == 0 && !trainer.is_finished() {
            save(&trainer, &curve)?;
        }
    }
    save(&trainer, &curve)?;
    if let Some(last) = curve.last() {
        println!(
            "episodes: {}  updates: {}  last reward: {:.3}  completed: {}",
            trainer.next_episode, trainer.updates, last.reward, last.completed
        );
    }
    println!("wrote {} and {}", ckpt.display(), curve_path.display());
    Ok(())
}

/// Rows of an existing reward curve that precede `upto`.
fn read_curve(path: &Path, upto: usize) -> Vec<EpisodeStats> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some(EpisodeStats {
                episode: f.first()?.parse().ok()?,
                reward: f.get(1)?.parse().ok()?,
                steps: f.get(2)?.parse().ok()?,
                completed: *f.get(3)? == "1",
                mission_time: f64::NAN,
            })
        })
        .filter(|e| e.episode < upto)
        .collect()
}

fn eval(e: &EvalArgs) -> Outcome {
    let (cfg, out) = load_config(&e.common)?;
    if e.strategy == Strategy::Drl && e.checkpoint.is_none() {
        return Err(Failure::Usage("--strategy drl requires --checkpoint".into()));
    }
    let map = match &e.checkpoint {
        Some(dir) if dir.join("map.toml").exists() => UrbanMap::load(&dir.join("map.toml")).map_err(Failure::abort)?,
        _ => cfg.generate_map().map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let agent = match (&e.checkpoint, e.strategy) {
        (Some(dir), Strategy::Drl) => Some(
            Agent::load_dir(dir, StateScaler::new(&map, &cfg.mdp), &cfg.mdp)
                .map_err(|err| Failure::Usage(format!("cannot load {}: {err}", dir.display())))?,
        ),
        _ => None,
    };
    let res = evaluate_strategy(e.strategy, &cfg, &map, agent.as_ref()).map_err(Failure::abort)?;
    fs::create_dir_all(&out).map_err(Failure::abort)?;
    if !out.join("map.toml").exists() {
        map.save(&out.join("map.toml")).map_err(Failure::abort)?;
    }
    let k = map.num_gts();
    let summary_path = out.join(format!("eval_{}_k{k}.csv", e.strategy));
    let mut w = create(&summary_path)?;
    write_eval_csv(&mut w, e.strategy, &res.summary).map_err(Failure::abort)?;
    w.flush().map_err(Failure::abort)?;
    let traj_path = out.join(format!("trajectory_{}_k{k}.csv", e.strategy));
    let mut w = create(&traj_path)?;
    write_trajectory_csv(&mut w, e.strategy.name(), &res.trajectories[0]).map_err(Failure::abort)?;
    w.flush().map_err(Failure::abort)?;
    println!(
        "{}: mean mission time {:.2} s (std {:.2}), completion rate {:.2} over {} realizations",
        e.strategy,
        res.summary.mean_time,
        res.summary.std_time,
        res.summary.completion_rate,
        res.summary.runs.len()
    );
    println!("wrote {}", summary_path.display());
    Ok(())
}

/// `(strategy, K)` parsed from `eval_<strategy>_k<K>.csv`.
fn parse_eval_name(name: &str) -> Option<(Strategy, usize)> {
    let stem = name.strip_prefix("eval_")?.strip_suffix(".csv")?;
    let (s, k) = stem.rsplit_once("_k")?;
    Some((s.parse().ok()?, k.parse().ok()?))
}

fn mean_row_time(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path).ok()?;
    let line = text.lines().find(|l| l.split(',').nth(1) == Some("mean"))?;
    line.split(',').nth(2)?.parse().ok()
}

fn export_plots(c: &Common) -> Outcome {
    let (_, run) = load_config(c)?;
    let mut entries: Vec<String> = match fs::read_dir(&run) {
        Ok(rd) => rd.filter_map(|e| e.ok()?.file_name().into_string().ok()).collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();
    let plots = run.join("plots");
    let mut written = Vec::new();

    let map_path = run.join("map.toml");
    if map_path.exists() {
        fs::create_dir_all(&plots).map_err(Failure::abort)?;
        let map = UrbanMap::load(&map_path).map_err(Failure::abort)?;
        let mut w = create(&plots.join("buildings.csv"))?;
        writeln!(w, "x0,y0,x1,y1,height").map_err(Failure::abort)?;
        for b in &map.buildings {
            let (lo, hi) = (b.min_corner(), b.max_corner());
            writeln!(w, "{},{},{},{},{}", lo.x, lo.y, hi.x, hi.y, b.height).map_err(Failure::abort)?;
        }
        w.flush().map_err(Failure::abort)?;
        let mut w = create(&plots.join("gts.csv"))?;
        writeln!(w, "index,x,y").map_err(Failure::abort)?;
        for (i, g) in map.gts.iter().enumerate() {
            writeln!(w, "{i},{},{}", g.x, g.y).map_err(Failure::abort)?;
        }
        w.flush().map_err(Failure::abort)?;
        written.extend(["buildings.csv", "gts.csv"]);
    }

    let trajectories: Vec<&String> = entries.iter().filter(|n| n.starts_with("trajectory_") && n.ends_with(".csv")).collect();
    if !trajectories.is_empty() {
        fs::create_dir_all(&plots).map_err(Failure::abort)?;
        let mut w = create(&plots.join("trajectories.csv"))?;
        for (i, name) in trajectories.iter().enumerate() {
            let text = fs::read_to_string(run.join(name)).map_err(Failure::abort)?;
            for line in text.lines().skip(usize::from(i > 0)) {
                writeln!(w, "{line}").map_err(Failure::abort)?;
            }
        }
        w.flush().map_err(Failure::abort)?;
        written.push("trajectories.csv");
    }

    let curve = run.join("reward_curve.csv");
    if curve.exists() {
        fs::create_dir_all(&plots).map_err(Failure::abort)?;
        let text = fs::read_to_string(&curve).map_err(Failure::abort)?;
        let rows: Vec<(String, f64)> = text
            .lines()
            .skip(1)
            .filter_map(|l| {
                let mut f = l.split(',');
                let ep = f.next()?.to_owned();
                Some((ep, f.next()?.parse().ok()?))
            })
            .collect();
        let mut w = create(&plots.join("reward_vs_episode.csv"))?;
        writeln!(w, "episode,reward,moving_mean_100").map_err(Failure::abort)?;
        let mut window = 0.0;
        for (i, (ep, r)) in rows.iter().enumerate() {
            window += r;
            if i >= 100 {
                window -= rows[i - 100].1;
            }
            let avg = window / (i + 1).min(100) as f64;
            writeln!(w, "{ep},{r},{avg}").map_err(Failure::abort)?;
        }
        w.flush().map_err(Failure::abort)?;
        written.push("reward_vs_episode.csv");
    }

    let mut table: std::collections::BTreeMap<usize, [Option<f64>; 3]> = Default::default();
    for name in &entries {
        if let Some((s, k)) = parse_eval_name(name) {
            if let Some(t) = mean_row_time(&run.join(name)) {
                let col = Strategy::ALL.iter().position(|x| *x == s).expect("known strategy");
                table.entry(k).or_default()[col] = Some(t);
            }
        }
    }
    if !table.is_empty() {
        fs::create_dir_all(&plots).map_err(Failure::abort)?;
        let mut w = create(&plots.join("completion_vs_k.csv"))?;
        writeln!(w, "K,drl,aco,scan").map_err(Failure::abort)?;
        for (k, cols) in &table {
            let cell = |v: Option<f64>| v.map(|t| t.to_string()).unwrap_or_default();
            writeln!(w, "{k},{},{},{}", cell(cols[0]), cell(cols[1]), cell(cols[2])).map_err(Failure::abort)?;
        }
        w.flush().map_err(Failure::abort)?;
        written.push("completion_vs_k.csv");
    }

    if written.is_empty() {
        return Err(Failure::Abort(format!("nothing to export in {}", run.display())));
    }
    for name in written {
        println!("wrote {}", plots.join(name).display());
    }
    Ok(())
}
