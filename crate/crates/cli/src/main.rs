//! `fabric-inspect`: corpus synthesis, preprocessing, uniformity ranking,
//! ensemble training and inspection from the command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
//! 4 degenerate input, 5 corrupt artifact.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fabric_inspect::classifier::Architecture;
use fabric_inspect::ensemble::{self, Ensemble};
use fabric_inspect::image::{load_gray, save_image};
use fabric_inspect::manifest::natural_cmp;
use fabric_inspect::uniformity::{self, SampleUniformity, TypeScore};
use fabric_inspect::{synthfab, Error, Label, Manifest};
use serde::Serialize;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "fabric-inspect", version, about = "Tactile fabric defect inspection")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.csv.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Intensity-adjust one image.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure the uniformity of every manifest sample.
    Uniformity {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON report, or CSV when the path ends in `.csv`.
        #[arg(long)]
        report: PathBuf,
    },
    /// Split a manifest by fabric-type uniformity.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        train_types: usize,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_test: PathBuf,
        /// Type ranking CSV; defaults to `ranking.csv` beside the training manifest.
        #[arg(long)]
        ranking: Option<PathBuf>,
    },
    /// Train an ensemble and write its checkpoint directory.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one image and print the verdict as JSON.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Evaluate an ensemble on a manifest.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// JSON report; a CSV table is written beside it with extension `.csv`.
        #[arg(long)]
        report: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::MissingFile { .. } | Error::Io { .. } => 3,
            Error::DegenerateStretch
            | Error::NonpositiveMean(_)
            | Error::NoDefectFreeSamples(_)
            | Error::MalformedHeader(_)
            | Error::UnsupportedMaxval(_)
            | Error::TruncatedPixels { .. }
            | Error::UnexpectedImageKind(_)
            | Error::InvalidDimensions { .. } => 4,
            Error::CorruptCheckpoint(_) => 5,
            Error::Config(_)
            | Error::Manifest(_)
            | Error::SingleLabel
            | Error::ShapeMismatch(_)
            | Error::WindowTooLarge { .. }
            | Error::InsufficientBlocks { .. } => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(message) => Failure { code: 3, message },
            ConfigError::Invalid(message) => Failure { code: 2, message },
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { out } => {
            let manifest = synthfab::generate_corpus(&cfg.corpus, &out)?;
            eprintln!("wrote {} samples to {}", manifest.rows.len(), out.display());
        }
        Command::Preprocess { input, out } => {
            let img = load_gray(&input)?;
            let adjusted = fabric_inspect::adjust_intensity(&img, &cfg.intensity)?;
            save_image(&adjusted, &out)?;
        }
        Command::Uniformity { manifest, report } => {
            let m = Manifest::read(&manifest)?;
            let samples = uniformity::measure_manifest(&m, &cfg.intensity, &cfg.uniformity)?;
            let doc = UniformityDoc::new(&m, samples);
            if report.extension().is_some_and(|e| e == "csv") {
                write_file(&report, doc.samples_csv())?;
            } else {
                write_file(&report, to_json(&doc))?;
            }
        }
        Command::Split {
            manifest,
            train_types,
            out_train,
            out_test,
            ranking,
        } => {
            let m = Manifest::read(&manifest)?;
            let split = uniformity::split_by_uniformity(&m, train_types, &cfg.intensity, &cfg.uniformity)?;
            write_manifest(&split.train, &out_train)?;
            write_manifest(&split.test, &out_test)?;
            let ranking = ranking.unwrap_or_else(|| out_train.with_file_name("ranking.csv"));
            write_file(&ranking, ranking_csv(&split.ranking, train_types))?;
        }
        Command::Train { train, out } => {
            let m = Manifest::read(&train)?;
            if m.rows.is_empty() {
                return Err(Error::Manifest("training manifest is empty".into()).into());
            }
            if !m.has_both_labels() {
                return Err(Error::SingleLabel.into());
            }
            let preprocess = cfg.ensemble.preprocess.then_some(&cfg.intensity);
            let data = ensemble::load_dataset(&m, preprocess, cfg.train.input_side)?;
            let arch = Architecture {
                input_side: cfg.train.input_side,
                ..Architecture::default()
            };
            let (e, reports) = ensemble::train_ensemble(&data, &cfg.train, arch, &cfg.ensemble, &cfg.intensity)?;
            e.save(&out)?;
            for (i, r) in reports.iter().enumerate() {
                write_file(&out.join(format!("member_{i}_loss.csv")), r.loss_curve_csv())?;
            }
        }
        Command::Inspect { model, input } => {
            let e = Ensemble::load(&model)?;
            let verdict = e.inspect(&load_gray(&input)?)?;
            print!("{}", to_json(&verdict));
        }
        Command::Evaluate { model, test, report } => {
            let e = Ensemble::load(&model)?;
            let m = Manifest::read(&test)?;
            let r = ensemble::evaluate(&e, &m)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            for err in &r.errors {
                eprintln!("evaluation error: {}: {}", err.path, err.message);
            }
            write_file(&report, r.to_json())?;
            write_file(&report.with_extension("csv"), r.to_csv())?;
        }
    }
    Ok(())
}

/// Writes a manifest to `path`, keeping relative sample paths when it stays
/// in the source directory and making them absolute otherwise.
fn write_manifest(m: &Manifest, path: &Path) -> Result<(), Failure> {
    let target_dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(target_dir).map_err(|e| io_failure(target_dir, e))?;
    let same_dir = match (target_dir.canonicalize(), m.base_dir.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    let out = if same_dir { m.clone() } else { m.absolutized() };
    out.write(path)?;
    Ok(())
}

fn ranking_csv(ranking: &[TypeScore], n_train: usize) -> String {
    let mut out = String::from("rank,fabric_type,mean_uniformity,defect_free_samples,split\n");
    for (i, t) in ranking.iter().enumerate() {
        let side = if i < n_train { "train" } else { "test" };
        out.push_str(&format!(
            "{},{},{},{},{side}\n",
            i + 1,
            t.fabric_type,
            t.mean_score,
            t.samples
        ));
    }
    out
}

#[derive(Serialize)]
struct TypeSummary {
    fabric_type: String,
    samples: usize,
    mean_score: f64,
    defect_free_samples: usize,
    /// Mean over defect-free samples only; this is what type ranking uses.
    defect_free_mean_score: Option<f64>,
}

#[derive(Serialize)]
struct UniformityDoc {
    samples: Vec<SampleUniformity>,
    types: Vec<TypeSummary>,
}

impl UniformityDoc {
    fn new(m: &Manifest, samples: Vec<SampleUniformity>) -> Self {
        let mut acc: BTreeMap<&str, [(f64, usize); 2]> = BTreeMap::new();
        for s in &samples {
            let e = acc.entry(s.fabric_type.as_str()).or_default();
            e[0].0 += s.report.score;
            e[0].1 += 1;
            if s.label == Label::DefectFree {
                e[1].0 += s.report.score;
                e[1].1 += 1;
            }
        }
        let mut types: Vec<TypeSummary> = m
            .fabric_types()
            .into_iter()
            .filter_map(|t| {
                let [all, clean] = *acc.get(t.as_str())?;
                Some(TypeSummary {
                    samples: all.1,
                    mean_score: all.0 / all.1 as f64,
                    defect_free_samples: clean.1,
                    defect_free_mean_score: (clean.1 > 0).then(|| clean.0 / clean.1 as f64),
                    fabric_type: t,
                })
            })
            .collect();
        types.sort_by(|a, b| natural_cmp(&a.fabric_type, &b.fabric_type));
        Self { samples, types }
    }

    fn samples_csv(&self) -> String {
        let mut out = String::from("path,fabric_type,label,score,block_frequencies\n");
        for s in &self.samples {
            let freqs: Vec<String> = s.report.frequencies.iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.path,
                s.fabric_type,
                s.label,
                s.report.score,
                freqs.join(";")
            ));
        }
        out
    }
}
