use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand, ValueEnum};

use smartenergy::analytics::{
    daily_aggregate, daily_to_csv, fit_mlr, fit_mpr, read_meter_csv, split_subsets, weekly_correlations, Calendar,
    Channel, HourlyDataset,
};
use smartenergy::devicenet::server::{Clock, FleetServer, TcpLink, WallClock};
use smartenergy::runtime::{
    replay, write_bundle, EventStore, FileStore, HttpServer, ReplayOptions, Runtime, ScenarioScript, Service, Transport,
};
use smartenergy::{DeploymentConfig, Timestamp};

#[derive(Parser)]
#[command(name = "smartenergy", version, about = "Location-driven building energy control")]
struct Cli {
    /// Deployment configuration (TOML). Defaults to the bundled two-building setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the API on the wall clock.
    Run {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Address for the device line protocol.
        #[arg(long, default_value = "127.0.0.1:0")]
        fleet_bind: String,
        /// Event log directory; an existing log is recovered.
        #[arg(long, default_value = "smartenergy-data")]
        data: PathBuf,
    },
    /// Play a scenario script on a simulated clock.
    Replay {
        script: PathBuf,
        /// Simulated seconds per real second ("inf" for no pacing).
        #[arg(long)]
        speedup: Option<f64>,
        /// Directory for report.json, comparison.csv, ledger.csv, events.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Call the fleet directly instead of over a loopback socket.
        #[arg(long)]
        in_process: bool,
    },
    /// Offline meter analytics.
    Analyze {
        meter_csv: PathBuf,
        #[arg(value_enum)]
        what: Analysis,
    },
    /// Replay the bundled reference day and print actual vs. mode estimates.
    Report {
        /// Script to use instead of the bundled day.
        #[arg(long)]
        script: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Correlations,
    Regress,
    Subsets,
    Daily,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => DeploymentConfig::load(p)?,
        None => DeploymentConfig::bundled(),
    };
    match cli.command {
        Command::Run { bind, fleet_bind, data } => serve(config, &bind, &fleet_bind, data),
        Command::Replay {
            script,
            speedup,
            out,
            in_process,
        } => {
            let script = ScenarioScript::load(&script)?;
            let opts = ReplayOptions {
                speedup,
                transport: if in_process {
                    Transport::InProcess
                } else {
                    Transport::Tcp
                },
                ..ReplayOptions::default()
            };
            let result = replay(&config, &script, opts)?;
            if let Some(dir) = out {
                write_bundle(&result, &dir)?;
                eprintln!("wrote {}", dir.display());
            }
            print!("{}", result.report.comparison.to_csv());
            Ok(())
        }
        Command::Analyze { meter_csv, what } => analyze(meter_csv, what),
        Command::Report { script } => {
            let script = match script {
                Some(p) => ScenarioScript::load(&p)?,
                None => ScenarioScript::reference_day(),
            };
            let result = replay(&config, &script, ReplayOptions::fast())?;
            println!("# daily estimates (kWh)");
            println!("site,mode,total_kwh");
            for e in &result.report.estimates {
                println!("{},{},{:.4}", e.site, e.mode, e.total_kwh);
            }
            println!("# actual vs. modes");
            print!("{}", result.report.comparison.to_csv());
            Ok(())
        }
    }
}

fn serve(config: DeploymentConfig, bind: &str, fleet_bind: &str, data: PathBuf) -> Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(WallClock);
    let start = Timestamp::now_unix();
    let fleet = Arc::new(Mutex::new(config.build_fleet(start)?));
    let fleet_server = FleetServer::start(fleet_bind, fleet, clock.clone())?;
    let link = Box::new(TcpLink::connect(fleet_server.local_addr())?);
    let store = FileStore::open(&data)?;
    let runtime = if store.load()?.snapshots.is_empty() {
        Runtime::new(config, start, link, Box::new(store))?
    } else {
        let (rt, report) = Runtime::recover(config, start, link, Box::new(store))?;
        eprintln!("recovered {} records from {}", rt.events().len(), data.display());
        if let Some(stop) = report.stopped {
            eprintln!("log cut at line {}: {}", stop.line, stop.reason);
        }
        rt
    };
    let service = Arc::new(Service::new(runtime, clock));
    let http = HttpServer::start(bind, service)?;
    eprintln!(
        "api on http://{}  devices on {}",
        http.local_addr(),
        fleet_server.local_addr()
    );
    http.join();
    Ok(())
}

fn analyze(path: PathBuf, what: Analysis) -> Result<()> {
    let series = read_meter_csv(File::open(&path)?)?;
    let data = HourlyDataset::from_series(&series)?;
    for (c, v) in &data.channels {
        let missing = v.iter().filter(|x| x.is_none()).count();
        if missing > 0 {
            eprintln!("{c}: {missing} of {} hours missing", data.hours);
        }
    }
    match what {
        Analysis::Correlations => {
            use Channel::*;
            let pairs = [
                (Electricity, Temperature),
                (Electricity, Humidity),
                (Heating, Temperature),
                (Heating, Humidity),
                (Cooling, Temperature),
                (Cooling, Humidity),
            ];
            let present: Vec<_> = pairs
                .into_iter()
                .filter(|(a, b)| data.channels.contains_key(a) && data.channels.contains_key(b))
                .collect();
            let table = weekly_correlations(&data, &present)?;
            let excluded = table.weeks.iter().filter(|w| w.excluded).count();
            if excluded > 0 {
                eprintln!("{excluded} week(s) excluded for missing data");
            }
            print!("{}", table.to_csv());
        }
        Analysis::Regress => {
            let days: Vec<_> = daily_aggregate(&data).into_iter().filter(|d| !d.partial).collect();
            let col = |c: Channel| -> Vec<f64> { days.iter().map(|d| d.values[&c].unwrap_or(f64::NAN)).collect() };
            let x = col(Channel::Temperature);
            let y = col(Channel::Humidity);
            println!("target,model,n,r_squared,terms,coefficients");
            for target in [Channel::Electricity, Channel::Heating, Channel::Cooling] {
                if !data.channels.contains_key(&target) {
                    continue;
                }
                let z = col(target);
                let fits = [fit_mlr(&z, &[("X", &x), ("Y", &y)]), fit_mpr(&z, ("X", &x), ("Y", &y))];
                for fit in fits {
                    match fit {
                        Ok(f) => println!(
                            "{target},{:?},{},{:.4},{},{}",
                            f.model,
                            f.n,
                            f.r_squared,
                            f.terms.join(" "),
                            f.coefficients
                                .iter()
                                .map(|b| format!("{b:.6e}"))
                                .collect::<Vec<_>>()
                                .join(" ")
                        ),
                        Err(e) => println!("{target},,,,,{e}"),
                    }
                }
            }
        }
        Analysis::Subsets => print!("{}", split_subsets(&data, &Calendar::academic_2011()).to_csv()),
        Analysis::Daily => print!("{}", daily_to_csv(&daily_aggregate(&data))),
    }
    Ok(())
}
