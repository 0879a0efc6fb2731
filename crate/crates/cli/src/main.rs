use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mots_core::capture::{parse_sidecar, render_listing, render_sidecar, write_pcap, ListingOptions};
use mots_core::detect::{analyze, analyze_pcap, score, DetectConfig, DetectionMatrix, RuleId};
use mots_core::mots::{
    http_lab, race_outcome, render_report, run_experiment, AckMode, DelayDist, Experiment, FlagsMode, RaceModel,
    ScenarioConfig,
};
use mots_core::simnet::{build_topology, SimTime, TopologySpec};

/// Environment variable that replaces the default output directory.
const OUT_ENV: &str = "MOTS_OUT_DIR";

#[derive(Parser)]
#[command(name = "mots", version, about = "Man-on-the-side injection testbed")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write capture, listing, sidecar and report.
    Run(RunArgs),
    /// Analyze a pcap with the rule engine.
    Detect(DetectArgs),
    /// Monte-Carlo estimate of how often the forged response wins.
    Race(RaceArgs),
    /// Run every preset and print the rule by experiment table.
    Matrix(MatrixArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AckArg {
    Standard,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlagsArg {
    FinAck,
    PushAck,
}

#[derive(clap::Args)]
struct RunArgs {
    /// 1-4, baseline-http or baseline-iec104.
    #[arg(long, short)]
    experiment: Experiment,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Responder processing delay in milliseconds.
    #[arg(long, default_value_t = 500.0)]
    server_delay: f64,
    /// Attacker observe-to-inject delay in milliseconds.
    #[arg(long, default_value_t = 0.05)]
    attacker_delay: f64,
    /// Forged acknowledgment number (default depends on the experiment).
    #[arg(long, value_enum)]
    ack: Option<AckArg>,
    /// Forged TCP flags (default depends on the experiment).
    #[arg(long, value_enum)]
    flags: Option<FlagsArg>,
    /// Added to the observed TTL in forged packets.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    ttl_skew: i8,
    /// Topology TOML replacing the built-in lab.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Mark forged frames in the listing.
    #[arg(long)]
    ground_truth: bool,
    /// Output directory [env: MOTS_OUT_DIR] [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DetectArgs {
    #[arg(long)]
    pcap: PathBuf,
    /// Comma-separated subset, e.g. r1,r4.
    #[arg(long, value_delimiter = ',')]
    rules: Vec<RuleId>,
    /// Sidecar of forged record indices for precision and recall.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Normal,
}

#[derive(clap::Args)]
struct RaceArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// Server processing delay in milliseconds.
    #[arg(long, default_value_t = 500.0)]
    server_delay: f64,
    /// Server delay spread in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    server_jitter: f64,
    /// Attacker delay in milliseconds (start of the sweep).
    #[arg(long, default_value_t = 0.05)]
    attacker_delay: f64,
    /// Attacker delay spread in milliseconds.
    #[arg(long, default_value_t = 0.5)]
    attacker_jitter: f64,
    /// Uniform spreads over [delay, delay + jitter]; normal uses jitter as sd.
    #[arg(long, value_enum, default_value = "uniform")]
    dist: DistArg,
    /// Sweep the attacker delay up to this many milliseconds.
    #[arg(long)]
    sweep_to: Option<f64>,
    #[arg(long, default_value_t = 10)]
    points: usize,
}

#[derive(clap::Args)]
struct MatrixArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Also write the table and key-value lines here.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn millis(ms: f64) -> Result<SimTime> {
    if !ms.is_finite() || ms < 0.0 {
        bail!("delay must be a non-negative number of milliseconds, got {ms}");
    }
    Ok(SimTime::from_micros((ms * 1000.0).round() as u64))
}

fn out_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = ScenarioConfig::new(a.experiment, a.seed);
    cfg.server_delay = millis(a.server_delay)?;
    cfg.attacker_delay = millis(a.attacker_delay)?;
    cfg.ttl_skew = a.ttl_skew;
    cfg.ack_mode = a.ack.map(|x| match x {
        AckArg::Standard => AckMode::Standard,
        AckArg::Literal => AckMode::RequestSeq,
    });
    cfg.flags = a.flags.map(|x| match x {
        FlagsArg::FinAck => FlagsMode::FinAck,
        FlagsArg::PushAck => FlagsMode::PushAck,
    });
    if let Some(path) = &a.topology {
        cfg.topology = Some(TopologySpec::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    let outcome = run_experiment(&cfg)?;

    let dir = out_dir(a.out).join(a.experiment.slug());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_pcap(&outcome.capture, &dir.join("capture.pcap"))?;
    write(&dir.join("listing.txt"), render_listing(&outcome.capture, ListingOptions { ground_truth: a.ground_truth }))?;
    write(&dir.join("forged.sidecar"), render_sidecar(&outcome.sidecar))?;
    let report = render_report(&outcome);
    write(&dir.join("report.txt"), &report)?;
    print!("{report}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let cfg = if a.rules.is_empty() { DetectConfig::default() } else { DetectConfig::only(a.rules.iter().copied()) };
    let analysis = analyze_pcap(&a.pcap, &cfg).with_context(|| format!("reading {}", a.pcap.display()))?;
    let mut out = String::new();
    for alert in &analysis.alerts {
        out.push_str(&format!("{alert}\n"));
    }
    let mut matrix = DetectionMatrix::for_rules(cfg.enabled.iter().copied());
    let column = a.pcap.file_stem().map_or("capture".into(), |s| s.to_string_lossy().into_owned());
    matrix.add_column(column, &analysis);
    out.push('\n');
    out.push_str(&matrix.render_table());
    out.push('\n');
    out.push_str(&matrix.render_kv());
    for alert in &analysis.alerts {
        out.push_str(&format!("alert.{}.record={}\n", alert.rule, alert.record_index));
    }
    if let Some(path) = &a.ground_truth {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let truth = parse_sidecar(&text)?;
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        for rule in RuleId::ALL.into_iter().filter(|r| cfg.enabled.contains(r)) {
            let s = score(&analysis, &truth, Some(rule));
            out.push_str(&format!(
                "score.{rule} alerts={} true_positives={} precision={} recall={}\n",
                s.alerts,
                s.true_positives,
                fmt(s.precision()),
                fmt(s.recall())
            ));
        }
    }
    print!("{out}");
    if let Some(path) = &a.report {
        write(path, &out)?;
    }
    Ok(())
}

fn cmd_race(a: RaceArgs) -> Result<()> {
    let topo = build_topology(&http_lab())?;
    let id = |n: &str| topo.host_by_name(n).map(|h| h.id).context("built-in lab host");
    let model = RaceModel::from_topology(&topo, id("Client")?, id("Server")?, id("Attacker")?)
        .context("lab hosts are not connected")?;
    let dist = |delay_ms: f64, jitter_ms: f64| {
        let (d, j) = (delay_ms * 1000.0, jitter_ms * 1000.0);
        match a.dist {
            DistArg::Uniform => DelayDist::Uniform { lo: d, hi: d + j },
            DistArg::Normal => DelayDist::Normal { mean: d, sd: j },
        }
    };
    let server = dist(a.server_delay, a.server_jitter);
    let delays: Vec<f64> = match a.sweep_to {
        Some(end) if a.points > 1 => {
            (0..a.points).map(|i| a.attacker_delay + (end - a.attacker_delay) * i as f64 / (a.points - 1) as f64).collect()
        }
        _ => vec![a.attacker_delay],
    };
    println!("seed={} trials={} head_start_us={}", a.seed, a.trials, model.head_start());
    for d in delays {
        let r = race_outcome(&model, dist(d, a.attacker_jitter), server, a.trials, a.seed);
        println!("attacker_delay_ms={d:.3} server_delay_ms={:.3} wins={} win_rate={:.4}", a.server_delay, r.wins, r.win_rate());
    }
    Ok(())
}

fn cmd_matrix(a: MatrixArgs) -> Result<()> {
    let cfg = DetectConfig::default();
    let mut matrix = DetectionMatrix::new();
    for exp in Experiment::ALL {
        let outcome = run_experiment(&ScenarioConfig::new(exp, a.seed))?;
        matrix.add_column(exp.slug(), &analyze(&outcome.capture, &cfg));
    }
    let out = format!("seed={}\n{}\n{}", a.seed, matrix.render_table(), matrix.render_kv());
    print!("{out}");
    if let Some(path) = &a.report {
        write(path, &out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Detect(a) => cmd_detect(a),
        Cmd::Race(a) => cmd_race(a),
        Cmd::Matrix(a) => cmd_matrix(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
