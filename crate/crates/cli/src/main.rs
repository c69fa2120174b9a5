use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use friendly_attack::attack::{self, AttackVector};
use friendly_attack::config::{ConfigError, RunConfig, SearchSnr};
use friendly_attack::eval::{self, Link, MonteCarloResult};
use friendly_attack::gradcheck;

const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "friendly-attack", version, about = "Friendly-attack search and BER/BLER simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Attack vector file (eval, sweep).
    #[arg(long, global = true)]
    attack: Option<PathBuf>,
    /// Output path (attack file for search, CSV otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks the number of CPUs.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Search a friendly attack and write it as JSON.
    Search,
    /// Evaluate one Eb/N0 point.
    Eval,
    /// Evaluate the configured Eb/N0 grid.
    Sweep,
    /// Finite-difference check of the gradients.
    Gradcheck,
}

enum Failure {
    Config(String),
    Search(String),
    Gradcheck(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Search(_) => 3,
            Failure::Gradcheck(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Search(m) | Failure::Gradcheck(m) | Failure::Other(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn other(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(other)?;
    }
    let link = cfg.link()?;
    info!(
        "{} (n={}, k={}), BP-{}, {}, {}",
        link.code.name,
        link.code.n,
        link.code.k,
        link.decoder.iters,
        link.scheme(),
        link.channel.name()
    );
    match cli.command {
        Command::Search => search(cli, &cfg, &link),
        Command::Eval => evaluate(cli, &cfg, &link, &[cfg.eval.ebn0_db]),
        Command::Sweep => evaluate(cli, &cfg, &link, &cfg.eval.grid),
        Command::Gradcheck => grad(&cfg, &link),
    }
}

fn search(cli: &Cli, cfg: &RunConfig, link: &Link) -> Result<(), Failure> {
    let s = &cfg.search;
    let ebn0 = match s.ebn0 {
        SearchSnr::Db(db) => db,
        SearchSnr::Auto => {
            let db = attack::calibrate_ebn0(link, s.target_bler, s.calibration_frames, cfg.seed)
                .map_err(|e| Failure::Search(e.to_string()))?;
            info!("calibrated search point: {db:.3} dB for BLER ≈ {}", s.target_bler);
            db
        }
    };
    let mut search_cfg = s.cfg.clone();
    search_cfg.sigma = link.sigma_at(ebn0).map_err(|e| Failure::Config(e.to_string()))?;
    info!(
        "approach {}: B={} I={} runs={} sigma={:.5}",
        s.approach, search_cfg.batch_size, search_cfg.iterations, search_cfg.runs, search_cfg.sigma
    );
    let outcome = attack::run_approach(
        link,
        &search_cfg,
        cfg.seed,
        &s.approach.to_string(),
        &cfg.selection(ebn0, 0),
    )
    .map_err(|e| Failure::Search(e.to_string()))?;
    for t in &outcome.trace {
        info!(
            "trial {:4} eps {:.4e} ber {:.5e} -> {:.5e} {}",
            t.trial,
            t.eps,
            t.ber_before(),
            t.ber_after(),
            if t.accepted { "accept" } else { "reject" }
        );
    }
    info!("result: {}", outcome.chosen);
    let json = outcome.chosen.to_json().map_err(other)?;
    match cli.out.as_ref().or(cfg.output_attack.as_ref()) {
        Some(p) => {
            std::fs::write(p, json).map_err(other)?;
            info!("wrote {}", p.display());
        }
        None => io::stdout().write_all(json.as_bytes()).map_err(other)?,
    }
    if s.require_nonzero && outcome.chosen.is_zero() {
        return Err(Failure::Search("search returned the zero vector".into()));
    }
    Ok(())
}

fn load_attack(path: &Path, link: &Link) -> Result<AttackVector, Failure> {
    let a = AttackVector::load(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if a.code_id != link.code.name || a.scheme != link.scheme() || a.n != link.code.n {
        return Err(Failure::Config(format!(
            "attack is for {} {} (n={}), config is {} {} (n={})",
            a.code_id,
            a.scheme,
            a.n,
            link.code.name,
            link.scheme(),
            link.code.n
        )));
    }
    Ok(a)
}

fn evaluate(cli: &Cli, cfg: &RunConfig, link: &Link, grid: &[f64]) -> Result<(), Failure> {
    let attack = cli.attack.as_deref().map(|p| load_attack(p, link)).transpose()?;
    let shared = cfg.point(0.0, 0);
    let run = |a: Option<&AttackVector>| {
        if grid.len() == 1 {
            let spec = cfg.point(grid[0], 0);
            eval::run_point(link, &spec, a).map(|r| vec![r])
        } else {
            eval::sweep(link, grid, &shared, a)
        }
    };
    let base = run(None).map_err(other)?;
    let rows: Vec<MonteCarloResult> = match &attack {
        None => base,
        Some(a) => {
            let attacked = run(Some(a)).map_err(other)?;
            base.into_iter()
                .zip(attacked)
                .flat_map(|(b, a)| [b, a])
                .collect()
        }
    };
    for r in &rows {
        info!(
            "{:5.2} dB {}: BER {:.4e} ± {:.1e}, BLER {:.4e} over {} frames",
            r.ebn0_db,
            if r.attacked == 1 { "attacked" } else { "baseline" },
            r.ber,
            r.ci95_ber,
            r.bler,
            r.frames
        );
    }
    match cli.out.as_ref().or(cfg.output_csv.as_ref()) {
        Some(p) => eval::write_csv(File::create(p).map_err(other)?, &rows).map_err(other),
        None => eval::write_csv(io::stdout().lock(), &rows).map_err(other),
    }
}

fn grad(cfg: &RunConfig, link: &Link) -> Result<(), Failure> {
    let ebn0 = match cfg.search.ebn0 {
        SearchSnr::Db(db) => db,
        SearchSnr::Auto => cfg.eval.ebn0_db,
    };
    let sigma = link.sigma_at(ebn0).map_err(|e| Failure::Config(e.to_string()))?;
    let r = gradcheck::gradcheck(link, cfg.search.cfg.loss, sigma, 3, cfg.seed).map_err(other)?;
    println!("demodulate_adjoint max rel. error: {:.3e}", r.demod_max_rel);
    println!("bp_backward max rel. error: {:.3e}", r.bp_max_rel);
    if r.passed(GRADCHECK_TOL) {
        println!("pass");
        Ok(())
    } else {
        let w = r.worst;
        Err(Failure::Gradcheck(format!(
            "gradient check failed: {} input {} coordinate {}: analytic {:.6e}, numeric {:.6e}, rel. error {:.3e}",
            w.stage, w.input, w.coord, w.analytic, w.numeric, w.rel_err
        )))
    }
}
