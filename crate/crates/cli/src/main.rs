use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use burstshape::energy::{RadioProfile, SurfaceGrid};
use burstshape::harness::{check_expectations, compare_scenario, resolve_profile, run_scenario, sweep_surface, write_compare_csv, OutputPaths, Scenario};
use burstshape::proxy::{Proxy, ProxyConfig};
use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "burstshape", version, about = "Burst shaping for media streams: energy models, simulation and a live proxy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its CSV outputs.
    Run {
        scenario: PathBuf,
        /// Write every output into this directory instead of the paths in
        /// the scenario's [output] section.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Average radio power over a grid of encoding rates, intervals and
    /// buffer sizes. Values are lists (`128k,500k`) or ranges
    /// (`1:100` or `1M:50M:1M`).
    Sweep {
        /// Built-in profile name or profile file.
        profile: String,
        /// Encoding rates in bit/s.
        #[arg(long)]
        rs: String,
        /// Burst intervals in seconds.
        #[arg(long)]
        t: String,
        /// Client buffer sizes in bytes.
        #[arg(long)]
        b: String,
        /// Bulk transfer capacity in bit/s; defaults to the profile's.
        #[arg(long)]
        rbtc: Option<String>,
        /// Output file; stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Evaluate a scenario's workload under several profiles and check the
    /// scenario's expectations.
    Compare {
        scenario: PathBuf,
        #[arg(required = true, num_args = 2..)]
        profiles: Vec<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the shaping HTTP proxy.
    Proxy {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long, default_value_t = 40.0)]
        fast_start_seconds: f64,
        #[arg(long, default_value_t = 1.0)]
        granularity_s: f64,
        /// Encoding rate to assume when responses carry no stream info.
        #[arg(long)]
        rate_override_bps: Option<f64>,
        /// Burst log CSV, appended to.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Send every request to this `host:port`.
        #[arg(long)]
        origin: Option<String>,
        /// Profile name recorded in session reports.
        #[arg(long)]
        profile: Option<String>,
        /// Send-buffer saturation that counts as a full client, in ms.
        #[arg(long, default_value_t = 500)]
        saturation_ms: u64,
        /// Handle a single connection, then exit.
        #[arg(long)]
        once: bool,
    },
    /// List built-in profiles, or print one as a profile file.
    Profiles {
        name: Option<String>,
    },
}

fn parse_quantity(s: &str) -> Result<f64> {
    let s = s.trim();
    let (num, mult) = match s.char_indices().last() {
        Some((i, 'k' | 'K')) => (&s[..i], 1e3),
        Some((i, 'M')) => (&s[..i], 1e6),
        Some((i, 'G')) => (&s[..i], 1e9),
        _ => (s, 1.0),
    };
    let v: f64 = num.parse().with_context(|| format!("bad number '{s}'"))?;
    Ok(v * mult)
}

/// Comma-separated values and `start:end[:step]` ranges; a range without a
/// step counts in steps of one unit of `start`'s suffix.
fn parse_values(spec: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let fields: Vec<&str> = part.split(':').collect();
        match fields[..] {
            [v] => out.push(parse_quantity(v)?),
            [a, b] | [a, b, _] => {
                let (start, end) = (parse_quantity(a)?, parse_quantity(b)?);
                let step = match fields.get(2) {
                    Some(s) => parse_quantity(s)?,
                    None => parse_quantity(&format!("1{}", a.trim().trim_start_matches(|c: char| c.is_ascii_digit() || c == '.')))?,
                };
                if !(step > 0.0) || end < start {
                    bail!("bad range '{part}'");
                }
                let n = ((end - start) / step + 1e-9).floor() as u64;
                out.extend((0..=n).map(|i| start + i as f64 * step));
            }
            _ => bail!("bad range '{part}'"),
        }
    }
    if out.is_empty() {
        bail!("empty value list '{spec}'");
    }
    Ok(out)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(scenario: &Path, out_dir: Option<&Path>) -> Result<bool> {
    let sc = Scenario::load(scenario).with_context(|| format!("loading {}", scenario.display()))?;
    let report = run_scenario(&sc)?;
    let paths = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            OutputPaths::in_dir(d)
        }
        None => sc.output.clone(),
    };
    report.write_outputs(&paths)?;
    report.write_summary(io::stdout().lock())?;
    if sc.expect.is_empty() {
        return Ok(true);
    }
    let mut profiles = vec![sc.profile.clone()];
    profiles.extend(sc.compare.iter().cloned());
    check(&compare_scenario(&sc, &profiles)?, &sc)
}

fn check(rows: &[burstshape::harness::ConfigRow], sc: &Scenario) -> Result<bool> {
    let mut ok = true;
    for r in check_expectations(rows, &sc.expect) {
        eprintln!("{r}");
        ok &= r.holds;
    }
    Ok(ok)
}

fn real_main(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, out_dir } => run(&scenario, out_dir.as_deref()),
        Command::Sweep { profile, rs, t, b, rbtc, out } => {
            let p = resolve_profile(&profile, Path::new("."))?;
            let grid = SurfaceGrid {
                r_btc_bps: match rbtc {
                    Some(v) => parse_quantity(&v)?,
                    None => p.bulk_rate_bps,
                },
                r_s_bps: parse_values(&rs)?,
                interval_s: parse_values(&t)?,
                buffer_bytes: parse_values(&b)?,
            };
            let n = sweep_surface(&p, &grid, output(out.as_deref())?)?;
            info!("{n} grid points");
            Ok(true)
        }
        Command::Compare { scenario, profiles, out } => {
            let sc = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let profiles = profiles.iter().map(|n| resolve_profile(n, Path::new("."))).collect::<Result<Vec<_>, _>>()?;
            let rows = compare_scenario(&sc, &profiles)?;
            write_compare_csv(&rows, output(out.as_deref())?)?;
            check(&rows, &sc)
        }
        Command::Proxy { listen, fast_start_seconds, granularity_s, rate_override_bps, log, origin, profile, saturation_ms, once } => {
            let mut cfg = ProxyConfig::new(listen);
            cfg.fast_start_s = fast_start_seconds;
            cfg.granularity_s = granularity_s;
            cfg.rate_override_bps = rate_override_bps;
            cfg.log_path = log;
            cfg.origin = origin;
            cfg.profile_tag = profile;
            cfg.saturation = Duration::from_millis(saturation_ms);
            let proxy = Proxy::bind(cfg)?;
            eprintln!("listening on {}", proxy.local_addr()?);
            if once {
                let rep = proxy.serve_one()?;
                eprintln!(
                    "{:?} {}: {} bytes, BS_OPT {:?}, termination {:?}",
                    rep.peer,
                    rep.target,
                    rep.bytes_forwarded,
                    rep.bs_opt_bytes,
                    rep.termination.map(|t| t.as_str())
                );
            } else {
                proxy.serve()?;
            }
            Ok(true)
        }
        Command::Profiles { name } => {
            match name {
                Some(n) => {
                    let p = RadioProfile::builtin(&n).with_context(|| format!("no built-in profile '{n}'"))?;
                    print!("{}", p.to_toml_string());
                }
                None => {
                    for n in RadioProfile::builtin_names() {
                        println!("{n}");
                    }
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
