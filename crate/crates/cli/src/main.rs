mod experiments;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leo_isac::precoder::OptStatus;
use leo_isac::rates::ModeConfig;
use leo_isac::scenario::{Profile, ScenarioConfig};

use crate::experiments as ex;
use crate::failure::Failure;
use crate::output::{RunInfo, RunOutput};

#[derive(Debug, Parser)]
#[command(
    name = "leo-isac",
    version,
    about = "LEO satellite ISAC simulator and precoder optimizer"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Scenario TOML; replaces the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
    /// Worker threads for sweeps; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Echo path loss of both radar structures against target altitude.
    Pathloss {
        #[arg(long, default_value_t = 1.0)]
        alt_min: f64,
        #[arg(long, default_value_t = 50.0)]
        alt_max: f64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
    /// Optimize the precoder for the first user drop.
    Optimize {
        #[command(flatten)]
        point: PointArgs,
    },
    /// Minimum rate over transmit powers and modes, averaged over user drops.
    MinrateSweep {
        /// Comma-separated transmit powers, dBW.
        #[arg(long, value_delimiter = ',', default_values_t = [10.0, 15.0, 20.0, 25.0, 30.0])]
        power_list: Vec<f64>,
        /// Comma-separated mode labels; all eight by default.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Vec<ModeConfig>,
        /// Overrides the drops per point of the scenario.
        #[arg(long)]
        drops: Option<usize>,
    },
    /// Transmit beampatterns and stream power ratios of the optimized precoder.
    Beampattern {
        #[command(flatten)]
        point: PointArgs,
        /// Angle grid step, degrees.
        #[arg(long, default_value_t = 2.0)]
        step_deg: f64,
    },
    /// MUSIC spectrum of one echo frame.
    Music {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// AOA, delay, Doppler and position of the target from one echo frame.
    Track {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Offset added to the MUSIC estimate as `theta,phi` in degrees.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        aoa_offset_deg: Option<Vec<f64>>,
    },
}

/// Overrides of a single operating point.
#[derive(Debug, Args)]
struct PointArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ModeConfig>,
    /// Transmit power, dBW.
    #[arg(long, allow_negative_numbers = true)]
    power: Option<f64>,
    /// CRB thresholds `theta,phi` in rad^2.
    #[arg(long, value_delimiter = ',')]
    crb_threshold: Option<Vec<f64>>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: leo_isac::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ModeConfig, String> {
    s.parse().map_err(|e: leo_isac::Error| e.to_string())
}

impl PointArgs {
    fn apply(&self, cfg: &mut ScenarioConfig) -> Result<(), Failure> {
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(p) = self.power {
            cfg.p_t_dbw = p;
        }
        if let Some(t) = &self.crb_threshold {
            cfg.crb_threshold = pair(t, "--crb-threshold")?;
        }
        Ok(())
    }
}

fn pair(v: &[f64], flag: &str) -> Result<[f64; 2], Failure> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => Err(Failure::Config(format!(
            "{flag} takes two comma-separated values, got {}",
            v.len()
        ))),
    }
}

fn load_config(g: &Global) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            ScenarioConfig::from_toml(&text)?
        }
        None => ScenarioConfig::for_profile(g.profile),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Pathloss { .. } => "pathloss",
        Command::Optimize { .. } => "optimize",
        Command::MinrateSweep { .. } => "minrate-sweep",
        Command::Beampattern { .. } => "beampattern",
        Command::Music { .. } => "music",
        Command::Track { .. } => "track",
    }
}

/// Optimized precoder for drop 0; infeasible points stop the command.
fn optimized(
    out: &mut RunOutput,
    cfg: &ScenarioConfig,
) -> Result<(leo_isac::scenario::Scenario, leo_isac::precoder::OptResult), Failure> {
    let (scn, r) = out.timed("optimize", || ex::solve_drop(cfg, 0))?;
    if r.status == OptStatus::Infeasible {
        ex::require_converged(&r)?;
    }
    Ok((scn, r))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli.global)?;
    let workers = cli
        .global
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Failure::Config("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Numerical(format!("thread pool: {e}")))?;
    let mut out = RunOutput::create(&cli.global.out_dir)?;
    // a non-converged point still writes its files before the exit code is set
    let mut deferred: Option<Failure> = None;

    match &cli.command {
        Command::Pathloss {
            alt_min,
            alt_max,
            steps,
        } => {
            cfg.validate()?;
            let rows = out.timed("pathloss", || ex::pathloss(&cfg, *alt_min, *alt_max, *steps))?;
            out.write_csv("pathloss.csv", ex::PATHLOSS_HEADER, &rows)?;
        }
        Command::Optimize { point } => {
            point.apply(&mut cfg)?;
            cfg.validate()?;
            let (scn, r) = out.timed("optimize", || ex::solve_drop(&cfg, 0))?;
            out.write_csv("optimize.csv", ex::OPTIMIZE_HEADER, &[ex::optimize_row(&cfg, &scn, &r)])?;
            if r.status != OptStatus::Infeasible {
                out.write_csv("power_ratio.csv", ex::RATIO_HEADER, &ex::ratio_rows(&r))?;
            }
            deferred = ex::require_converged(&r).err();
        }
        Command::MinrateSweep {
            power_list,
            modes,
            drops,
        } => {
            if let Some(d) = drops {
                cfg.drops = *d;
            }
            cfg.validate()?;
            if power_list.is_empty() || power_list.iter().any(|p| !p.is_finite()) {
                return Err(Failure::Config("--power-list needs finite powers".into()));
            }
            let modes: Vec<ModeConfig> = if modes.is_empty() {
                ModeConfig::table().to_vec()
            } else {
                modes.clone()
            };
            let rows = out.timed("sweep", || pool.install(|| ex::minrate_sweep(&cfg, power_list, &modes)))?;
            out.write_csv("minrate.csv", ex::SWEEP_HEADER, &rows)?;
        }
        Command::Beampattern { point, step_deg } => {
            point.apply(&mut cfg)?;
            cfg.validate()?;
            if !(*step_deg > 0.0 && *step_deg <= 90.0) {
                return Err(Failure::Config(format!(
                    "--step-deg must be in (0, 90], got {step_deg}"
                )));
            }
            let (_, r) = optimized(&mut out, &cfg)?;
            let rows = out.timed("beampattern", || ex::beampattern(&cfg, &r, *step_deg))?;
            out.write_csv("beampattern.csv", ex::BEAM_HEADER, &rows)?;
            out.write_csv("power_ratio.csv", ex::RATIO_HEADER, &ex::ratio_rows(&r))?;
            deferred = ex::require_converged(&r).err();
        }
        Command::Music { point, trial } => {
            point.apply(&mut cfg)?;
            cfg.validate()?;
            let (scn, r) = optimized(&mut out, &cfg)?;
            let (grids, o) = out.timed("sensing", || ex::sensing_trial(&scn, &r, *trial, None))?;
            out.write_csv("music.csv", ex::MUSIC_HEADER, &ex::music_rows(&grids, &o))?;
            out.write_csv(
                "music_summary.csv",
                ex::MUSIC_SUMMARY_HEADER,
                &[ex::music_summary(&scn, &grids, &o)],
            )?;
            deferred = ex::require_converged(&r).err();
        }
        Command::Track {
            point,
            trial,
            aoa_offset_deg,
        } => {
            point.apply(&mut cfg)?;
            cfg.validate()?;
            let offset = match aoa_offset_deg {
                Some(v) => {
                    let [t, p] = pair(v, "--aoa-offset-deg")?;
                    Some((t.to_radians(), p.to_radians()))
                }
                None => None,
            };
            if offset.is_some_and(|(a, b)| !a.is_finite() || !b.is_finite()) {
                return Err(Failure::Config("--aoa-offset-deg needs finite angles".into()));
            }
            let (scn, r) = optimized(&mut out, &cfg)?;
            let (grids, o) = out.timed("sensing", || ex::sensing_trial(&scn, &r, *trial, offset))?;
            out.write_csv("matched_filter.csv", ex::MATCHED_HEADER, &ex::matched_rows(&grids, &o))?;
            out.write_csv("report.csv", ex::REPORT_HEADER, &[ex::report_row(&scn, &o)?])?;
            deferred = ex::require_converged(&r).err();
        }
    }

    let args: Vec<String> = std::env::args().skip(1).collect();
    let config_toml = cfg.to_toml();
    out.finish(&RunInfo {
        command: command_name(&cli.command),
        args: &args,
        config_toml: &config_toml,
        seed: cfg.seed,
        user_seed: cli.global.seed,
        drops: cfg.drops,
        workers,
    })?;
    deferred.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("leo-isac: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
