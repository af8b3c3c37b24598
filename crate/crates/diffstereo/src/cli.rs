//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use diffstereo_core::datapipe::{DegradationSpec, PatchSpec, Task};
use diffstereo_core::model::Profile;

use crate::commands;
use crate::config;
use crate::dataset;
use crate::error::{CliError, Result};
use crate::training;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Sr4,
    Blur,
    Lowlight,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Sr4 => Task::Sr4,
            TaskArg::Blur => Task::Blur,
            TaskArg::Lowlight => Task::Lowlight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "diffstereo", version, about = "Stereo image restoration guided by diffusion-estimated latent maps")]
pub struct Cli {
    /// Network sizes: `desk` trains on a CPU, `paper` is full size.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade a dataset and write the LQ cache and patch index.
    PrepareData {
        /// JSON-lines manifest of HQ pairs.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a training stage.
    Train {
        /// JSON training config.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's stage.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
    },
    /// Restore an LQ stereo pair.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Output directory for restored_L.png and restored_R.png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a PSNR/SSIM report over a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write the sampled latent maps of an LQ pair.
    DumpLhfr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Every step of the chain (Z_T down to Z_0), not only Z_0.
        #[arg(long)]
        per_step: bool,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let profile = cli.profile.map(Profile::from);
    let say = |out: &mut dyn Write, msg: String| writeln!(out, "{msg}").map_err(|e| CliError::Internal(e.to_string()));
    match cli.command {
        Command::PrepareData { manifest, task, out: root } => {
            let task = Task::from(task);
            let spec = DegradationSpec {
                seed: config::seed_override()?.unwrap_or(0),
                ..DegradationSpec::for_task(task)
            };
            let s = dataset::prepare(&manifest, &spec, &PatchSpec::default(), &root)?;
            say(out, format!("prepared {} pairs, {} patches; manifest {}", s.images, s.patches, s.manifest.display()))
        }
        Command::Train { config: path, stage } => {
            let loaded = config::load_train_config(&path, stage, profile)?;
            let o = training::run(&loaded)?;
            let loss = o.last_loss.map_or_else(|| "n/a".into(), |l| format!("{l:.6}"));
            let ckpt = o.checkpoint.map_or_else(|| "none (already finished)".into(), |p| p.display().to_string());
            say(out, format!("stage {} finished after {} steps, last loss {loss}; checkpoint {ckpt}", o.stage, o.steps))
        }
        Command::Infer { ckpt, left, right, task, out: dir } => {
            let o = commands::infer(&ckpt, &left, &right, task.into(), &dir, profile)?;
            say(out, format!("wrote {} and {}", o.left.display(), o.right.display()))
        }
        Command::Eval { ckpt, manifest, report } => {
            let r = commands::eval(&ckpt, &manifest, &report, profile)?;
            if let Some(m) = r.mean {
                say(out, format!("mean PSNR {:.2} dB, SSIM {:.4} over {} pairs", m.psnr_avg, m.ssim_avg, r.items.len() - r.errors))?;
            }
            if r.errors > 0 {
                return Err(CliError::user(format!(
                    "{} of {} pairs failed; see {}",
                    r.errors,
                    r.items.len(),
                    report.display()
                )));
            }
            Ok(())
        }
        Command::DumpLhfr {
            ckpt,
            left,
            right,
            out: dir,
            per_step,
        } => {
            let files = commands::dump_lhfr(&ckpt, &left, &right, &dir, per_step, profile)?;
            say(out, format!("wrote {} maps to {}", files.len(), dir.display()))
        }
        Command::Selftest => {
            if commands::selftest(out)? {
                Ok(())
            } else {
                Err(CliError::Internal("selftest failed".into()))
            }
        }
    }
}

/// Parse `args`, run, print errors as one line, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        1
                    } else {
                        0
                    }
                }
                _ => {
                    let text = e.to_string();
                    let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
                    eprintln!("error: {first} (see --help)");
                    1
                }
            };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
