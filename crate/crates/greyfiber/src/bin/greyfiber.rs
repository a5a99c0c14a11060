use std::collections::BTreeMap;
use std::fs;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use greyfiber::harness::{run_scenario, write_rates_csv, Scenario};
use greyfiber::service::{
    serve_exchange, serve_ggc, serve_glsc, GgcServiceConfig, GlscServiceConfig,
};
use greyfiber::substrate::LatencyProfile;
use greyfiber::topology::{LinkId, SiteId, TopologyDocument};
use greyfiber::units::Money;

#[derive(Parser)]
#[command(name = "greyfiber", about = "Auction-mediated optical circuit control plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file under the deterministic clock and write
    /// events.jsonl, rates.csv, and report.json.
    RunScenario {
        /// Scenario file (JSON).
        file: PathBuf,
        /// Seed recorded in the report; defaults to the scenario's.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize a previous run's output directory.
    Report {
        /// Directory written by run-scenario.
        dir: PathBuf,
    },
    /// Serve the fiber exchange.
    ServeExchange {
        #[arg(long, default_value = "127.0.0.1:4640")]
        listen: String,
    },
    /// Serve global control against an exchange.
    ServeGgc {
        #[arg(long, default_value = "127.0.0.1:4641")]
        listen: String,
        #[arg(long, default_value = "127.0.0.1:4640")]
        exchange: String,
        /// Topology file to register with the exchange.
        #[arg(long)]
        topology: PathBuf,
        /// Per-link reserve prices as link=micros pairs.
        #[arg(long = "reserve", value_parser = parse_reserve)]
        reserves: Vec<(String, i64)>,
        #[arg(long, default_value = "ideal", value_parser = parse_profile)]
        profile: LatencyProfile,
    },
    /// Serve one site's local control against a global controller.
    ServeGlsc {
        #[arg(long)]
        site: String,
        #[arg(long, default_value = "127.0.0.1:4641")]
        ggc: String,
        /// Monitoring interval in seconds.
        #[arg(long, default_value_t = 1.0)]
        monitor_interval: f64,
        #[arg(long, default_value = "ideal", value_parser = parse_profile)]
        profile: LatencyProfile,
    },
}

fn parse_reserve(s: &str) -> Result<(String, i64), String> {
    let (link, amount) = s.split_once('=').ok_or("expected link=micros")?;
    let amount: i64 = amount.parse().map_err(|e| format!("bad amount: {e}"))?;
    Ok((link.to_string(), amount))
}

fn parse_profile(s: &str) -> Result<LatencyProfile, String> {
    match s {
        "ideal" => Ok(LatencyProfile::Ideal),
        "optical" => Ok(LatencyProfile::Optical),
        "geni" => Ok(LatencyProfile::Geni),
        other => Err(format!("unknown profile `{other}` (ideal|optical|geni)")),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(passed) => {
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::RunScenario { file, seed, out } => {
            let scenario = Scenario::load(&file)?;
            let seed = seed.unwrap_or(scenario.seed);
            let base = file.parent().unwrap_or(std::path::Path::new("."));
            let run = run_scenario(&scenario, base, seed)?;

            fs::create_dir_all(&out)?;
            fs::write(out.join("events.jsonl"), run.log.to_jsonl())?;
            let mut csv = Vec::new();
            write_rates_csv(&run.trace, &mut csv)?;
            fs::write(out.join("rates.csv"), csv)?;
            fs::write(out.join("report.json"), serde_json::to_string_pretty(&run.report)?)?;

            println!("scenario `{}` seed {}", run.report.scenario, run.report.seed);
            println!(
                "  total transfer: {:.4} Gb over {:.1} s",
                run.report.total_gbits, run.report.horizon_s
            );
            if let Some(r) = &run.report.recovery {
                println!(
                    "  recovery: failed {:.3} s, restored {:.3} s (lag {:.3} s)",
                    r.failed_at_s, r.restored_at_s, r.lag_s
                );
            }
            for e in &run.report.expectations {
                println!(
                    "  [{}] {} -> {}",
                    if e.pass { "PASS" } else { "FAIL" },
                    e.description,
                    e.observed
                );
            }
            // Wall-clock cost of the control plane's own work; measured, so
            // deliberately not part of the deterministic outputs.
            let worst_wall = run
                .wall
                .per_request
                .values()
                .map(|w| w.internal_total_s)
                .fold(0.0_f64, f64::max);
            println!("  control-plane wall time: worst {worst_wall:.6} s per request");
            println!("  outputs in {}", out.display());
            Ok(run.report.passed)
        }
        Command::Report { dir } => {
            let report: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?;
            println!(
                "scenario `{}` seed {}",
                report["scenario"].as_str().unwrap_or("?"),
                report["seed"]
            );
            println!("  total transfer: {} Gb", report["total_gbits"]);
            if let Some(r) = report["recovery"].as_object() {
                println!(
                    "  recovery lag: {} s (failed {} s, restored {} s)",
                    r["lag_s"], r["failed_at_s"], r["restored_at_s"]
                );
            }
            if let Some(timings) = report["stage_timings"]["per_request"].as_object() {
                for (id, t) in timings {
                    println!(
                        "  {id}: exchange {} s, config-gen {} s, circuit-creation {} s, total {} s",
                        t["exchange_s"],
                        t["config_generation_s"],
                        t["circuit_creation_s"],
                        t["client_request_total_s"]
                    );
                }
            }
            let mut passed = true;
            if let Some(expectations) = report["expectations"].as_array() {
                for e in expectations {
                    let pass = e["pass"].as_bool().unwrap_or(false);
                    passed &= pass;
                    println!(
                        "  [{}] {} -> {}",
                        if pass { "PASS" } else { "FAIL" },
                        e["description"].as_str().unwrap_or("?"),
                        e["observed"].as_str().unwrap_or("?")
                    );
                }
            }
            Ok(passed)
        }
        Command::ServeExchange { listen } => {
            let listener = TcpListener::bind(&listen)?;
            println!("exchange listening on {listen}");
            serve_exchange(listener, Arc::new(AtomicBool::new(false)))?;
            Ok(true)
        }
        Command::ServeGgc { listen, exchange, topology, reserves, profile } => {
            let doc: TopologyDocument = serde_json::from_str(&fs::read_to_string(&topology)?)?;
            let reserves: BTreeMap<LinkId, Money> =
                reserves.into_iter().map(|(l, m)| (LinkId::new(l), Money(m))).collect();
            let listener = TcpListener::bind(&listen)?;
            println!("global control listening on {listen}, exchange at {exchange}");
            serve_ggc(
                listener,
                GgcServiceConfig { topology: doc, reserves, exchange_addr: exchange, profile },
                Arc::new(AtomicBool::new(false)),
            )?;
            Ok(true)
        }
        Command::ServeGlsc { site, ggc, monitor_interval, profile } => {
            println!("site `{site}` joining {ggc}, monitoring every {monitor_interval} s");
            serve_glsc(
                GlscServiceConfig {
                    site: SiteId::new(site),
                    ggc_addr: ggc,
                    monitor_interval: Duration::from_secs_f64(monitor_interval),
                    profile,
                },
                Arc::new(AtomicBool::new(false)),
            )?;
            Ok(true)
        }
    }
}
