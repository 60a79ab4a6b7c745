use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ratebal_core::experiment::{
    build_network, run_balance_curve, run_snr_sweep, run_tradeoff_sweep, ExperimentConfig, RowSink,
};
use std::path::{Path, PathBuf};

mod eval;
mod validate;

#[derive(Parser)]
#[command(name = "ratebal", version, about = "Feedback/downlink tradeoff experiments for cooperating base stations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunOpts {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo blocks per sweep point.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, env = "RATEBAL_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Builds the network and writes its layout and gain matrix.
    Topology(RunOpts),
    /// Downlink vs feedback SE for each cooperation size.
    Tradeoff(RunOpts),
    /// Budget-driven choice of fed antennas, with slope tangents.
    Balance(RunOpts),
    /// Downlink SE over SNR with fixed and proportional feedback.
    SnrSweep(RunOpts),
    /// Evaluates a single closed-form quantity.
    Eval {
        #[command(subcommand)]
        what: eval::Eval,
    },
    /// Runs the invariant checks and reports each one.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

fn init_pool(workers: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("initializing worker pool")
}

fn load_config(opts: &RunOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(t) = opts.trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_sink(dir: &Path, kind: &str, cfg: &ExperimentConfig) -> Result<RowSink> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{kind}.csv"));
    let sink = RowSink::open(&path, kind, cfg.fingerprint()?)?;
    if sink.resumed() > 0 {
        eprintln!("resuming {} after {} rows", path.display(), sink.resumed());
    }
    Ok(sink)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| format!("{v:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Topology(opts) => {
            let cfg = load_config(&opts)?;
            init_pool(opts.workers)?;
            let net = build_network(&cfg.topology)?;
            std::fs::create_dir_all(&opts.out)?;
            net.topology.save(opts.out.join("topology.toml"))?;
            net.gains
                .write_csv(std::fs::File::create(opts.out.join("gains.csv"))?)?;
            println!("sites {}", net.topology.sites.len());
            println!("antennas {}", net.topology.num_antennas());
            println!("mobiles {}", net.gains.rows());
            println!("residual_coeff {}", net.residual);
            println!("density_b {}", net.density);
        }
        Command::Tradeoff(opts) => {
            let cfg = load_config(&opts)?;
            init_pool(opts.workers)?;
            let net = build_network(&cfg.topology)?;
            let mut sink = open_sink(&opts.out, "tradeoff", &cfg)?;
            let set = run_tradeoff_sweep(&cfg, &net, &mut sink)?;
            println!("no_cooperation {:.4}", set.no_cooperation.downlink_se);
            for c in &set.curves {
                let last = c.points.last().expect("non-empty curve");
                println!("L={} max_feedback {:.4} downlink {:.4}", c.fed, last.feedback_se, last.downlink_se);
            }
            for x in &set.crossings {
                println!("crossing {}->{} at {}", x.lower, x.upper, fmt_opt(x.feedback_se));
            }
        }
        Command::Balance(opts) => {
            let cfg = load_config(&opts)?;
            init_pool(opts.workers)?;
            let net = build_network(&cfg.topology)?;
            let mut sink = open_sink(&opts.out, "balance", &cfg)?;
            let bal = run_balance_curve(&cfg, &net, &mut sink)?;
            for p in &bal.curve.points {
                println!("F {:.4} L {} downlink {:.4}", p.feedback_se, p.fed, p.downlink_se);
            }
            for t in &bal.tangents {
                println!(
                    "tangent L={} at {:.4}: slope {:.3}, simulated {}",
                    t.fed,
                    t.feedback_se,
                    t.slope,
                    fmt_opt(t.local_slope)
                );
            }
        }
        Command::SnrSweep(opts) => {
            let cfg = load_config(&opts)?;
            init_pool(opts.workers)?;
            let net = build_network(&cfg.topology)?;
            let mut sink = open_sink(&opts.out, "snr-sweep", &cfg)?;
            let sweep = run_snr_sweep(&cfg, &net, &mut sink)?;
            println!("fitted_slope {:.4}", sweep.fitted_slope);
            println!("reference_slope {:.4}", sweep.reference_slope);
            if let Some(v) = sweep.gap_variation(35.0, 45.0) {
                println!("gap_variation_35_45 {v:.4}");
            }
        }
        Command::Eval { what } => eval::run(what)?,
        Command::Validate { seed, workers } => {
            init_pool(workers)?;
            let failed = validate::run(seed)?;
            if failed > 0 {
                bail!("{failed} invariant check(s) failed");
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
