use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use elbrp_core::hilow::{route, HilowConfig};
use elbrp_core::metrics::write_metrics_csv;
use elbrp_core::{decode, run_matrix, summarize, ScenarioConfig};

#[derive(Parser)]
#[command(name = "elbrp-sim", version, about = "ELBRP / LOAD 6LoWPAN routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (protocol, seed) cell of a scenario and export the results.
    Run {
        /// Scenario file (TOML).
        config: PathBuf,
        /// Output directory for metrics.csv, summary.json and packet logs.
        #[arg(long, env = "ELBRP_OUT_DIR", default_value = "results")]
        out: PathBuf,
        /// Also write one packet-log CSV per cell.
        #[arg(long)]
        log_packets: bool,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        parallel: Option<usize>,
        /// Replace the scenario's seed list, e.g. `--seed-override 1,2,3`.
        #[arg(long = "seed-override", visible_alias = "seeds", value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Decode a hex-encoded frame and print its fields.
    Inspect {
        /// Frame bytes as hex; may be split across arguments.
        #[arg(required = true)]
        hex: Vec<String>,
    },
    /// Print the HiLow tree route between two addresses, one hop per line.
    Hilow {
        /// Maximum children per router.
        mc: u16,
        current: u16,
        dest: u16,
    },
    /// Print the default scenario as TOML.
    Defaults,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            log_packets,
            parallel,
            seeds,
        } => run(&config, &out, log_packets, parallel, seeds),
        Command::Inspect { hex } => inspect(&hex.concat()),
        Command::Hilow { mc, current, dest } => {
            let cfg = HilowConfig::new(mc)?;
            for hop in route(current, dest, cfg)? {
                println!("{hop}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Defaults => {
            print!("{}", ScenarioConfig::default().to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &Path, seeds: Option<Vec<u64>>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ScenarioConfig::from_toml(&text).with_context(|| format!("invalid scenario {}", path.display()))?;
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
        cfg.validate().context("invalid seed override")?;
    }
    Ok(cfg)
}

fn run(config: &Path, out: &Path, log_packets: bool, parallel: Option<usize>, seeds: Option<Vec<u64>>) -> Result<ExitCode> {
    let cfg = load_config(config, seeds)?;
    let threads = parallel
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let cells = run_matrix(&cfg, threads, log_packets);
    let mut rows = Vec::new();
    let mut failed = 0;
    for cell in &cells {
        match &cell.result {
            Ok(r) => {
                rows.push(r.row.clone());
                if let Some(log) = &r.log {
                    let name = format!("packets_{}_seed{}.csv", cell.protocol.as_str(), cell.seed);
                    write_atomic(&out.join(name), |w| log.write_csv(w))?;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {} seed {}: {e}", cell.protocol.as_str(), cell.seed);
            }
        }
    }

    // Whatever completed is written even when some cells failed.
    write_atomic(&out.join("metrics.csv"), |w| write_metrics_csv(&rows, w))?;
    let summary = summarize(&rows);
    write_atomic(&out.join("summary.json"), |w| writeln!(w, "{}", summary.to_json()))?;

    for p in &summary.protocols {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<6} runs={:<3} pdr={} delay_s={} overhead={} energy_j={}",
            p.protocol,
            p.runs,
            fmt(p.pdr.mean),
            fmt(p.avg_e2e_delay_s.mean),
            fmt(p.control_overhead.mean),
            fmt(p.energy_consumed_j.mean),
        );
    }
    if let Some(r) = summary.overhead_ratio_elbrp_over_load {
        println!("overhead ratio elbrp/load = {r:.4}");
    }
    println!("results written to {}", out.display());

    if failed > 0 {
        eprintln!("{failed} of {} cell(s) failed; partial results kept", cells.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

/// Writes through a temporary file in the same directory, then renames it
/// into place, so readers never see a half-written file.
fn write_atomic(path: &Path, body: impl FnOnce(&mut std::io::BufWriter<&mut std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        body(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))?;
    }
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn inspect(text: &str) -> Result<ExitCode> {
    let cleaned: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let cleaned = cleaned.strip_prefix("0x").unwrap_or(&cleaned);
    let bytes = match hex::decode(cleaned) {
        Ok(b) => b,
        Err(e) => bail!("not a hex string: {e}"),
    };
    println!("{} byte(s): {}", bytes.len(), hex::encode(&bytes));
    match decode(&bytes) {
        Ok(packet) => {
            print!("{packet}");
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("decode error: {e:?}: {e}");
            Ok(ExitCode::from(1))
        }
    }
}
