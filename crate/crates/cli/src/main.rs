use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sigrank_core::codec::{pack_stream, BitStream, ControlParameter};
use sigrank_core::link::{required_bandwidth_mhz, CodeRate, LinkParams};
use sigrank_core::rda::{bpp, rda_decode};
use sigrank_core::sim::{compare_policies, export_comparison, export_csv, run_scenario_full, Policy, Profile, ScenarioConfig};
use sigrank_core::svid::{approximation_error, svid_decompose};
use sigrank_core::Matrix64;

/// Sign-split low-rank codec and bandwidth admission simulator.
#[derive(Parser, Debug)]
#[command(name = "sigrank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure rate, distortion and accuracy over the scenario's (rank, qbits) grid.
    Profile {
        #[command(flatten)]
        config: ConfigArg,
        /// Experience table CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one admission scenario and write its event log, summary and curve.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Admission policy: oracle, rule, prompt or llm.
        #[arg(long)]
        policy: Policy,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several policies over several seeds on a common queue.
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated policies.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<Policy>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the bandwidth in MHz needed to carry a payload over a link.
    Bandwidth {
        /// Payload bits.
        #[arg(long)]
        bits: f64,
        /// Code rate, as n/d or a decimal from the allowed set.
        #[arg(long)]
        rate: CodeRate,
        /// Delay budget in milliseconds.
        #[arg(long = "delay-ms")]
        delay_ms: f64,
        /// Link SNR in dB.
        #[arg(long = "snr-db", allow_negative_numbers = true)]
        snr_db: f64,
    },
    /// Encode a matrix file into a bitstream.
    Encode {
        /// Matrix text file: "m n" header then m rows of n reals.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        qbits: u8,
        /// Bitstream file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a bitstream into a matrix file.
    Decode {
        /// Bitstream file.
        #[arg(long)]
        input: PathBuf,
        /// Matrix text file to write.
        #[arg(long)]
        out: PathBuf,
        /// Original matrix; when given, the NMSE is printed.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Print bits per pixel of an RGB image: bits / (3 * height * width).
    Bpp {
        #[arg(long)]
        bits: f64,
        #[arg(long)]
        height: u32,
        #[arg(long)]
        width: u32,
    },
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Scenario file of `key = value` lines; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ScenarioConfig> {
        match &self.config {
            Some(p) => Ok(ScenarioConfig::load(p)?),
            None => Ok(ScenarioConfig::default()),
        }
    }
}

/// Files created by the current command, removed again if it fails.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    fn file(&mut self, p: &Path) {
        self.files.push(p.to_path_buf());
    }

    fn dir(&mut self, p: &Path) -> Result<()> {
        if !p.exists() {
            fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))?;
            self.dirs.push(p.to_path_buf());
        }
        Ok(())
    }

    fn remove(&self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn run(cmd: Command, out: &mut Outputs) -> Result<()> {
    match cmd {
        Command::Profile { config, out: path } => {
            let cfg = config.load()?;
            let profile = Profile::build(&cfg)?;
            out.file(&path);
            profile.table.save(&path)?;
            println!("{} configurations profiled -> {}", profile.table.len(), path.display());
        }
        Command::Run { config, policy, out: dir } => {
            let cfg = config.load()?;
            let run = run_scenario_full(&cfg, policy)?;
            out.dir(&dir)?;
            for f in ["events.csv", "summary.csv", "curve.csv", "users.csv", "experience.csv"] {
                out.file(&dir.join(f));
            }
            export_csv(&run.report, &dir)?;
            let users = dir.join("users.csv");
            let file = fs::File::create(&users).with_context(|| format!("cannot create {}", users.display()))?;
            run.state
                .write_users_csv(file)
                .with_context(|| format!("cannot write {}", users.display()))?;
            run.experience.save(dir.join("experience.csv"))?;
            println!(
                "policy {} seed {}: admitted {} of {}, {:.6} MHz per user, utilization {:.6}",
                policy,
                cfg.seed,
                run.report.admitted_count,
                cfg.queue_length,
                run.report.avg_mhz_per_user(),
                run.state.utilization()
            );
        }
        Command::Compare {
            config,
            policies,
            seeds,
            out: dir,
        } => {
            let cfg = config.load()?;
            let report = compare_policies(&cfg, &policies, &seeds)?;
            out.dir(&dir)?;
            for r in &report.runs {
                out.file(&dir.join(format!("events_{}_{}.csv", r.policy, r.seed)));
            }
            out.file(&dir.join("summary.csv"));
            out.file(&dir.join("curve.csv"));
            export_comparison(&report, &dir)?;
            println!("policy,seed,admitted,avg_mhz_per_user");
            for r in &report.runs {
                println!("{},{},{},{:.6}", r.policy, r.seed, r.admitted_count, r.avg_mhz_per_user());
            }
        }
        Command::Bandwidth {
            bits,
            rate,
            delay_ms,
            snr_db,
        } => {
            let link = LinkParams {
                snr_db,
                code_rate: rate,
                delay_budget_s: delay_ms * 1e-3,
            };
            println!("{:.6} MHz", required_bandwidth_mhz(bits, &link)?);
        }
        Command::Encode {
            input,
            rank,
            qbits,
            out: path,
        } => {
            let z = Matrix64::read_file(&input)?;
            let theta = ControlParameter::new(rank, qbits)?;
            let stream = pack_stream(&svid_decompose(&z, theta.rank())?, theta.qbits())?;
            out.file(&path);
            fs::write(&path, stream.as_bytes()).with_context(|| format!("cannot write {}", path.display()))?;
            println!("{} bits", stream.total_bits());
        }
        Command::Decode {
            input,
            out: path,
            reference,
        } => {
            let bytes = fs::read(&input).with_context(|| format!("cannot read {}", input.display()))?;
            let zhat: Matrix64 = rda_decode(&BitStream::from_bytes(bytes))?;
            let reference = reference.map(|p| Matrix64::read_file(&p)).transpose()?;
            let nmse = match &reference {
                Some(z) if !z.same_shape(&zhat) => bail!(
                    "reference is {}x{} but the stream decodes to {}x{}",
                    z.rows(),
                    z.cols(),
                    zhat.rows(),
                    zhat.cols()
                ),
                Some(z) => Some(approximation_error(z, &zhat)?.nmse),
                None => None,
            };
            out.file(&path);
            zhat.write_file(&path)?;
            if let Some(nmse) = nmse {
                println!("nmse {nmse:e}");
            }
        }
        Command::Bpp { bits, height, width } => {
            println!("{:?}", bpp(bits, height, width)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut outputs = Outputs::default();
    match run(cli.command, &mut outputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            outputs.remove();
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("sigrank: error: {msg}");
            ExitCode::FAILURE
        }
    }
}

