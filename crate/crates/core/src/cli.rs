//! Command-line front end. Every command writes CSV with the header
//! [`CSV_HEADER`]; diagnostics go to standard error.
//!
//! Exit status: 0 on success, 2 for invalid flags or configurations, 3 when
//! a trial fails (for example a search exceeding its dimension cap).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::constellation::{awgn_ser_reference, Constellation, FoldMode};
use crate::montecarlo::{point_seed, LinkConfig, Runner, SerRecord, SimError};
use crate::precoder::{nominal_fold_dim, PrecoderKind};

pub const CSV_HEADER: [&str; 16] = [
    "precoder",
    "N",
    "M",
    "L",
    "fold_mode",
    "J",
    "K",
    "tau",
    "esn0_db",
    "trials",
    "symbols_sent",
    "symbol_errors",
    "ser",
    "wall_seconds",
    "candidates",
    "seed",
];

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_TRIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "coplab", version, about = "Constellation-oriented perturbation precoding lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// SER of one precoder over a list of SNR points.
    Simulate {
        #[command(flatten)]
        link: LinkArgs,
        /// zf, vp, dkvp[K], cop or wlcop[-none|-sign|-full].
        #[arg(long)]
        precoder: String,
        /// Comma-separated Es/N0 values in dB.
        #[arg(long, value_delimiter = ',', required = true)]
        snr_list: Vec<f64>,
    },
    /// SER of one precoder over a list of modulo periods at a fixed SNR.
    TauSweep {
        #[command(flatten)]
        link: LinkArgs,
        #[arg(long, default_value = "wlcop")]
        precoder: String,
        /// Comma-separated periods.
        #[arg(long, value_delimiter = ',', required = true)]
        tau_list: Vec<f64>,
        /// Es/N0 in dB.
        #[arg(long)]
        snr: f64,
    },
    /// Several precoders on shared channel, symbol and noise draws.
    Compare {
        #[command(flatten)]
        link: LinkArgs,
        /// Comma-separated precoder names.
        #[arg(long, value_delimiter = ',', required = true)]
        precoders: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        snr_list: Vec<f64>,
    },
    /// Closed-form AWGN SER of square QAM.
    AwgnRef {
        #[arg(long = "mod")]
        order: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        snr_list: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct LinkArgs {
    /// Users.
    #[arg(long)]
    n: usize,
    /// Transmit antennas; defaults to N.
    #[arg(long)]
    m: Option<usize>,
    /// QAM order.
    #[arg(long = "mod")]
    order: usize,
    /// Fold mode for WL-COP: none, sign or full.
    #[arg(long)]
    fold: Option<FoldMode>,
    /// DKVP degree.
    #[arg(long)]
    k: Option<usize>,
    /// Modulo period.
    #[arg(long, default_value_t = 2.5)]
    tau: f64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// One channel for every trial of a point.
    #[arg(long)]
    fixed_channel: bool,
    /// Accept a period that wraps the constellation.
    #[arg(long)]
    allow_wrap: bool,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Invalid(String),
    Trial(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => Failure::Invalid(m),
            t @ SimError::Trial { .. } => Failure::Trial(t.to_string()),
        }
    }
}

fn io_failure(e: io::Error) -> Failure {
    Failure::Trial(format!("write failed: {e}"))
}

fn parse_precoder(name: &str, link: &LinkArgs) -> Result<PrecoderKind, Failure> {
    let mut kind: PrecoderKind = name.parse().map_err(Failure::Invalid)?;
    match &mut kind {
        PrecoderKind::WlCop { mode } => {
            if let Some(f) = link.fold {
                *mode = f;
            }
        }
        PrecoderKind::Dkvp { k } => {
            if let Some(v) = link.k {
                *k = v;
            }
        }
        _ => {}
    }
    Ok(kind)
}

fn base_config(link: &LinkArgs, kind: PrecoderKind) -> LinkConfig {
    LinkConfig {
        tau: link.tau,
        trials: link.trials,
        master_seed: link.seed,
        channel_per_trial: !link.fixed_channel,
        allow_wrap: link.allow_wrap,
        ..LinkConfig::new(link.n, link.m.unwrap_or(link.n), link.order, kind)
    }
}

/// Shortest round-tripping decimal.
fn fmt_real(x: f64) -> String {
    format!("{x}")
}

/// CSV fields for one record, in [`CSV_HEADER`] order.
pub fn record_fields(rec: &SerRecord) -> Vec<String> {
    let c = &rec.config;
    let cons = Constellation::make_qam(c.order).ok();
    let j = cons.as_ref().and_then(|cons| nominal_fold_dim(&c.precoder, cons));
    vec![
        c.precoder.name().to_string(),
        c.n.to_string(),
        c.m.to_string(),
        c.order.to_string(),
        c.precoder.fold_mode().map(|m| m.to_string()).unwrap_or_default(),
        j.map(|v| v.to_string()).unwrap_or_default(),
        c.precoder.degree().map(|v| v.to_string()).unwrap_or_default(),
        fmt_real(c.tau),
        fmt_real(c.esn0_db),
        c.trials.to_string(),
        rec.symbols_sent.to_string(),
        rec.symbol_errors.to_string(),
        format!("{:.16e}", rec.ser),
        format!("{:.6}", rec.wall_seconds),
        rec.candidates.to_string(),
        c.master_seed.to_string(),
    ]
}

/// AWGN reference row: only `precoder`, `L`, `esn0_db` and `ser` are set.
pub fn awgn_fields(order: usize, esn0_db: f64) -> Vec<String> {
    let mut f = vec![String::new(); CSV_HEADER.len()];
    f[0] = "awgn".into();
    f[3] = order.to_string();
    f[8] = fmt_real(esn0_db);
    f[12] = format!("{:.16e}", awgn_ser_reference(order, esn0_db));
    f
}

/// One parsed data row. Optional columns are `None` when empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub precoder: String,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub order: usize,
    pub fold_mode: Option<FoldMode>,
    pub j: Option<usize>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
    pub esn0_db: f64,
    pub trials: Option<u64>,
    pub symbols_sent: Option<u64>,
    pub symbol_errors: Option<u64>,
    pub ser: f64,
    pub wall_seconds: Option<f64>,
    pub candidates: Option<u64>,
    pub seed: Option<u64>,
}

impl CsvRow {
    /// Precoder reassembled from the `precoder`, `fold_mode` and `K`
    /// columns; `None` for reference rows.
    pub fn kind(&self) -> Option<PrecoderKind> {
        PrecoderKind::from_parts(&self.precoder, self.fold_mode.unwrap_or(FoldMode::None), self.k.unwrap_or(2)).ok()
    }
}

fn opt<T: std::str::FromStr>(s: &str, col: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("bad value '{s}' in column {col}"))
}

fn req<T: std::str::FromStr>(s: &str, col: &str) -> Result<T, String> {
    opt(s, col)?.ok_or_else(|| format!("column {col} is empty"))
}

/// Parses CSV text produced by this module.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(format!("unexpected header: {header:?}"));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let r = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| r.get(i).unwrap_or("");
        rows.push(CsvRow {
            precoder: f(0).to_string(),
            n: opt(f(1), "N")?,
            m: opt(f(2), "M")?,
            order: req(f(3), "L")?,
            fold_mode: opt(f(4), "fold_mode")?,
            j: opt(f(5), "J")?,
            k: opt(f(6), "K")?,
            tau: opt(f(7), "tau")?,
            esn0_db: req(f(8), "esn0_db")?,
            trials: opt(f(9), "trials")?,
            symbols_sent: opt(f(10), "symbols_sent")?,
            symbol_errors: opt(f(11), "symbol_errors")?,
            ser: req(f(12), "ser")?,
            wall_seconds: opt(f(13), "wall_seconds")?,
            candidates: opt(f(14), "candidates")?,
            seed: opt(f(15), "seed")?,
        });
    }
    Ok(rows)
}

fn write_rows(out: Option<&PathBuf>, stdout: &mut dyn Write, rows: &[Vec<String>]) -> Result<(), Failure> {
    let sink: Box<dyn Write + '_> = match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(stdout),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER).map_err(|e| io_failure(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_failure(e.into()))?;
    }
    w.flush().map_err(io_failure)
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { link, precoder, snr_list } => {
            let kind = parse_precoder(&precoder, &link)?;
            let base = base_config(&link, kind);
            check_points(&base, snr_list.len(), |c, i| c.esn0_db = snr_list[i])?;
            let runner = Runner::new(link.workers)?;
            let recs = runner.sweep_snr(&base, &snr_list)?;
            write_rows(link.out.as_ref(), stdout, &recs.iter().map(record_fields).collect::<Vec<_>>())
        }
        Command::TauSweep { link, precoder, tau_list, snr } => {
            let kind = parse_precoder(&precoder, &link)?;
            let base = LinkConfig { esn0_db: snr, ..base_config(&link, kind) };
            check_points(&base, tau_list.len(), |c, i| c.tau = tau_list[i])?;
            let runner = Runner::new(link.workers)?;
            let recs = runner.sweep_tau(&base, &tau_list)?;
            write_rows(link.out.as_ref(), stdout, &recs.iter().map(record_fields).collect::<Vec<_>>())
        }
        Command::Compare { link, precoders, snr_list } => {
            let kinds = precoders.iter().map(|p| parse_precoder(p, &link)).collect::<Result<Vec<_>, _>>()?;
            let base = base_config(&link, kinds[0]);
            for &k in &kinds {
                check_points(&LinkConfig { precoder: k, ..base.clone() }, snr_list.len(), |c, i| c.esn0_db = snr_list[i])?;
            }
            let runner = Runner::new(link.workers)?;
            let points = runner.compare(&base, &kinds, &snr_list)?;
            let mut rows = Vec::new();
            for pt in &points {
                if let Some(ex) = &pt.exceeds_zf {
                    let db = pt.records[0].config.esn0_db;
                    for (rec, n) in pt.records.iter().zip(ex) {
                        let _ = writeln!(stderr, "esn0_db={db} {}: objective above zf in {n}/{} trials", rec.config.precoder, rec.config.trials);
                    }
                }
                rows.extend(pt.records.iter().map(record_fields));
            }
            write_rows(link.out.as_ref(), stdout, &rows)
        }
        Command::AwgnRef { order, snr_list, out } => {
            Constellation::make_qam(order).map_err(|e| Failure::Invalid(e.to_string()))?;
            if let Some(bad) = snr_list.iter().find(|v| v.is_nan()) {
                return Err(Failure::Invalid(format!("invalid SNR {bad}")));
            }
            let rows: Vec<Vec<String>> = snr_list.iter().map(|&db| awgn_fields(order, db)).collect();
            write_rows(out.as_ref(), stdout, &rows)
        }
    }
}

/// Validates every sweep point before any trial runs.
fn check_points(base: &LinkConfig, count: usize, set: impl Fn(&mut LinkConfig, usize)) -> Result<(), Failure> {
    for i in 0..count {
        let mut c = LinkConfig { master_seed: point_seed(base.master_seed, i), ..base.clone() };
        set(&mut c, i);
        c.validate()?;
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                EXIT_OK
            } else {
                let _ = write!(stderr, "{}", e.render());
                EXIT_INVALID
            };
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_INVALID
        }
        Err(Failure::Trial(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_TRIAL
        }
    }
}
