use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ood_forge::checkpoint::{cider_container, probe_container, Container, KIND_CIDER};
use ood_forge::config::{RunConfig, SyntheticSettings};
use ood_forge::emb::write_emb;
use ood_forge::fsutil::{write_atomic, StagedDir};
use ood_forge::run::{self, Inputs};
use ood_forge::stages;
use ood_forge::{Error, Result};
use ood_forge_core::dataset::generate_synthetic;
use ood_forge_core::eval::{compare_conditions, parse_csv};

/// Post-hoc out-of-domain detection on exported embeddings.
#[derive(Debug, Parser)]
#[command(name = "ood-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the probe and projection-head seeds.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let cfg = RunConfig::load(&self.config)?;
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write id_train.emb, id_test.emb and ood.emb from a synthetic spec.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the projection head and prototypes.
    CiderTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the linear probe, on projected features when --cider is given.
    ProbeTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        cider: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every configured detector into a directory of states.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        cider: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the ID test set and every OOD set with fitted detectors.
    Score {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        cider: Option<PathBuf>,
        #[arg(long)]
        detectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a score file into report.csv and report.md.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Side-by-side markdown table of several single-condition reports.
    Report {
        #[arg(long = "csv", required = true)]
        csv: Vec<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, fit and evaluate one condition end to end.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; defaults to the config's "out".
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate the configuration and inputs, then exit.
        #[arg(long)]
        check: bool,
    },
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    Inputs::load(cfg)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn accuracy_note(acc: Option<f64>) -> String {
    acc.map_or_else(|| "unlabeled test set".to_string(), |a| format!("ID test accuracy {:.4}", a))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenSynthetic { spec, out } => {
            let spec = SyntheticSettings::load(&spec)?;
            let splits = generate_synthetic(&spec)?;
            let staged = StagedDir::new(&out)?;
            write_emb(&splits.id_train, staged.path().join("id_train.emb"))?;
            write_emb(&splits.id_test, staged.path().join("id_test.emb"))?;
            write_emb(&splits.ood, staged.path().join("ood.emb"))?;
            let out = staged.commit()?;
            println!("wrote {}", out.display());
        }
        Command::CiderTrain { cfg, out } => {
            let cfg = cfg.load()?;
            let inputs = load_inputs(&cfg)?;
            let stage = stages::train_cider_stage(&cfg, &inputs)?;
            cider_container(&stage.model, &stage.config)?.save(&out)?;
            if let Some(last) = stage.loss_trace.last() {
                println!(
                    "epochs {} final loss {:.6} (dispersion {:.6}, compactness {:.6})",
                    stage.loss_trace.len(),
                    last.total,
                    last.dispersion,
                    last.compactness
                );
            }
        }
        Command::ProbeTrain { cfg, cider, out } => {
            let cfg = cfg.load()?;
            let model = match &cider {
                Some(p) => Some(ood_forge::checkpoint::cider_from(&Container::load(p, KIND_CIDER)?)?.0),
                None => None,
            };
            let inputs = load_inputs(&cfg)?;
            let stage = stages::train_probe_stage(&cfg, &inputs, model.as_ref())?;
            probe_container(&stage.probe).save(&out)?;
            println!("{}", accuracy_note(stage.id_accuracy));
        }
        Command::Fit {
            cfg,
            probe,
            cider,
            out,
        } => {
            let cfg = cfg.load()?;
            let (condition, models) = stages::load_models(&cfg, &probe, cider.as_deref())?;
            let inputs = load_inputs(&cfg)?;
            let fitted = stages::assemble_stage(&inputs, &condition, models)?;
            let results = stages::fit_stage(&cfg, &fitted);
            for (spec, det) in &results {
                if let Err(e) = det {
                    eprintln!("warning: {} failed to fit: {e}", spec.kind().key());
                }
            }
            stages::write_detectors(&out, &results)?;
        }
        Command::Score {
            cfg,
            probe,
            cider,
            detectors,
            out,
        } => {
            let cfg = cfg.load()?;
            let (condition, models) = stages::load_models(&cfg, &probe, cider.as_deref())?;
            let dets = stages::read_detectors(&cfg, &detectors)?;
            let inputs = load_inputs(&cfg)?;
            let fitted = stages::assemble_stage(&inputs, &condition, models)?;
            stages::score_stage(&fitted, &dets).save(&out)?;
        }
        Command::Evaluate { cfg, scores, out } => {
            let cfg = cfg.load()?;
            let file = stages::ScoreFile::load(&scores)?;
            let report = stages::evaluate_scores(&file, &cfg.evaluation)?;
            stages::write_report(&out, &report)?;
            print!("{}", report.to_markdown());
        }
        Command::Report { csv, out } => {
            let reports = csv
                .iter()
                .map(|p| parse_csv(&read_text(p)?).map_err(|e| Error::from(e).in_file(p)))
                .collect::<Result<Vec<_>>>()?;
            let table = compare_conditions(&reports)?;
            match out {
                Some(path) => write_atomic(&path, table.as_bytes())?,
                None => print!("{table}"),
            }
        }
        Command::Run { cfg, out, check } => {
            let path = cfg.config.clone();
            let cfg = cfg.load()?;
            if check {
                println!(
                    "{}: ok ({} detectors, {} OOD sets, condition {})",
                    path.display(),
                    cfg.detectors.len(),
                    cfg.ood.len(),
                    cfg.pipeline_condition()?.tag()
                );
                return Ok(());
            }
            let out = out
                .or_else(|| cfg.out.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set \"out\"".into()))?;
            let threads = run::thread_budget()?;
            let result = run::run(&cfg, &out, threads)?;
            eprintln!("{}", accuracy_note(result.trained.id_accuracy));
            print!("{}", result.report.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(&format!(": {text}"));
                }
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
