use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use snob_core::audit::{
    config_hash, export_plot_data, load_audit_data, merge_reports, read_bundle, resolve_output_dir,
    run_audit_with_data, split_assignments, train_and_save, write_outputs, AuditConfig, AuditRun, ExternalScoresSpec,
    OUTPUT_DIR_ENV,
};
use snob_core::corpus::{write_corpus, SplitPart, SplitRatios};
use snob_core::synth::{
    evenly_spaced_occupations, generate_planted_corpus, planted_embeddings, planted_lexicon, PlantedSpec,
};
use snob_core::{ErrorClass, InterventionKind, PronounGroup, Repr, SnobError};

#[derive(Parser)]
#[command(
    name = "snob-audit",
    version,
    about = "Audit occupation classifiers for social norm bias"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the stratified train/validation/test assignment.
    Split(ConfigArgs),
    /// Train and save the occupation models and the norm classifier.
    Train(ConfigArgs),
    /// Run the full audit and write the report.
    Audit(ConfigArgs),
    /// Audit with task-relevance filtering and G^c-irrev.
    Robustness(ConfigArgs),
    /// Audit externally produced scores.
    ImportScores {
        /// CSV with bio_id,occupation,score.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        label: String,
        /// Also audit the built-in models.
        #[arg(long)]
        with_models: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-export scatter data from one or more report files.
    ExportPlots {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Write a planted corpus, word vectors and lexicon.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config; its fields override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    nonbinary_corpus: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train, validation and test fractions.
    #[arg(long, num_args = 3, value_names = ["TRAIN", "VALIDATION", "TEST"])]
    split: Option<Vec<f64>>,
    #[arg(long = "repr", value_delimiter = ',')]
    reprs: Option<Vec<Repr>>,
    #[arg(long = "intervention", value_delimiter = ',')]
    interventions: Option<Vec<InterventionKind>>,
    #[arg(long)]
    reg_strength: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    indicators: Option<Vec<String>>,
    #[arg(long)]
    min_df: Option<usize>,
    #[arg(long)]
    chi2_level: Option<f64>,
    #[arg(long = "t")]
    t: Option<f64>,
    #[arg(long = "t-prime")]
    t_prime: Option<f64>,
    #[arg(long)]
    snob_group: Option<PronounGroup>,
    #[arg(long, value_parser = parse_calibration)]
    calibration: Option<SplitPart>,
    #[arg(long)]
    randomized_thresholds: bool,
    #[arg(long)]
    robustness: bool,
    #[arg(long)]
    bow_norm_diagnostic: bool,
    #[arg(long)]
    export_scores: bool,
}

fn parse_calibration(s: &str) -> Result<SplitPart, String> {
    match s {
        "validation" => Ok(SplitPart::Validation),
        "test" => Ok(SplitPart::Test),
        _ => Err(format!("expected validation or test, got {s:?}")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<AuditConfig, SnobError> {
        let mut cfg = AuditConfig::default();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { cfg.$f = v.clone().into(); } )* };
        }
        set!(
            seed,
            reprs,
            interventions,
            indicators,
            min_df,
            chi2_level,
            t,
            t_prime,
            snob_group,
            calibration
        );
        cfg.corpus = self.corpus.clone();
        cfg.embeddings = self.embeddings.clone();
        cfg.lexicon = self.lexicon.clone();
        cfg.nonbinary_corpus = self.nonbinary_corpus.clone();
        cfg.output_dir = self.output_dir.clone();
        if let Some(s) = &self.split {
            cfg.split = SplitRatios {
                train: s[0],
                validation: s[1],
                test: s[2],
            };
        }
        if let Some(v) = self.reg_strength {
            cfg.train.reg_strength = v;
        }
        if let Some(v) = self.tol {
            cfg.train.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.train.max_iter = v;
        }
        cfg.randomized_thresholds |= self.randomized_thresholds;
        cfg.robustness |= self.robustness;
        cfg.bow_norm_diagnostic |= self.bow_norm_diagnostic;
        cfg.export_scores |= self.export_scores;
        if let Some(path) = &self.config {
            cfg = overlay(cfg, path)?;
        }
        Ok(cfg)
    }
}

/// Fields present in the file replace the flag values.
fn overlay(cfg: AuditConfig, path: &Path) -> Result<AuditConfig, SnobError> {
    let bad = |e: &dyn std::fmt::Display| SnobError::Config(format!("{}: {e}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(&e))?;
    let file: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
    let serde_json::Value::Object(fields) = file else {
        return Err(bad(&"config must be a JSON object"));
    };
    let output_dir = cfg.output_dir.clone();
    let mut base = serde_json::to_value(&cfg).map_err(|e| bad(&e))?;
    let obj = base.as_object_mut().expect("config serializes to an object");
    for (k, v) in fields {
        obj.insert(k, v);
    }
    let mut merged: AuditConfig = serde_json::from_value(base).map_err(|e| bad(&e))?;
    if merged.output_dir.is_none() {
        merged.output_dir = output_dir;
    }
    Ok(merged)
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    occupations: usize,
    #[arg(long, default_value_t = 2000)]
    documents: usize,
    #[arg(long, default_value_t = 0.1)]
    p_min: f64,
    #[arg(long, default_value_t = 0.9)]
    p_max: f64,
    #[arg(long, default_value_t = 0.8)]
    kappa: f64,
    #[arg(long, default_value_t = 0)]
    nonbinary: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON generator spec; replaces the flags above.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = ".")]
    output_dir: PathBuf,
}

fn exit_code(e: &SnobError) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn print_summary(run: &AuditRun) {
    let b = &run.bundle;
    println!("config {}  split {}", b.config_hash, b.split_id);
    println!("norm classifier accuracy {:.3}", b.norm.accuracy);
    if let Some(l) = &b.norm.lexicon {
        println!(
            "lexicon correlation {:.3} (p={:.2e}, {} words)",
            l.correlation.rho, l.correlation.p_value, l.shared_words
        );
    }
    if let Some(r) = &b.relevance {
        println!(
            "task-irrelevant words {:.1}%, G^c-irrev accuracy {:.3} ± {:.3}",
            100.0 * r.mean_irrelevant_fraction,
            r.mean_accuracy,
            r.sd_accuracy
        );
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    println!(
        "{:<24} {:>8} {:>8} {:>10} {:>8} {:>10}",
        "approach", "acc", "gap_rms", "rho", "p", "rho_irrev"
    );
    for r in &b.reports {
        println!(
            "{:<24} {:>8} {:>8} {:>10} {:>8} {:>10}",
            r.approach.to_string(),
            fmt(r.multiclass_accuracy),
            fmt(r.gap_rms),
            fmt(r.rho.map(|c| c.rho)),
            r.rho.map_or("-".into(), |c| format!("{:.1e}", c.p_value)),
            fmt(r.rho_irrev.map(|c| c.rho)),
        );
    }
}

fn audit(cfg: &AuditConfig) -> Result<(), SnobError> {
    let data = load_audit_data(cfg).map_err(|e| e.in_stage("load"))?;
    let run = run_audit_with_data(cfg, &data)?;
    let dir = resolve_output_dir(cfg);
    let written = write_outputs(&run, &dir).map_err(|e| e.in_stage("write"))?;
    print_summary(&run);
    for p in written {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), SnobError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| SnobError::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| SnobError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(args: &SynthArgs) -> Result<(), SnobError> {
    let spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| SnobError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| SnobError::Config(format!("{}: {e}", p.display())))?
        }
        None => PlantedSpec {
            occupations: evenly_spaced_occupations(args.occupations, args.p_min, args.p_max, args.documents),
            kappa: args.kappa,
            nonbinary_per_occupation: args.nonbinary,
            seed: args.seed,
            ..PlantedSpec::default()
        },
    };
    spec.validate()?;
    let dir = &args.output_dir;
    fs::create_dir_all(dir).map_err(|e| SnobError::Io {
        path: dir.clone(),
        source: e,
    })?;
    let corpus = generate_planted_corpus(&spec)?;
    write_corpus(&corpus, &dir.join("corpus.jsonl"))?;
    planted_embeddings(&spec)?.write(&dir.join("embeddings.txt"))?;
    planted_lexicon(&spec)?.write(&dir.join("lexicon.csv"))?;
    write_json(&dir.join("spec.json"), &spec)?;
    println!("wrote {} biographies to {}", corpus.len(), dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), SnobError> {
    match cli.command {
        Command::Split(args) => {
            let cfg = args.resolve()?;
            let data = load_audit_data(&cfg).map_err(|e| e.in_stage("load"))?;
            let split = split_assignments(&cfg, &data).map_err(|e| e.in_stage("split"))?;
            let dir = resolve_output_dir(&cfg);
            fs::create_dir_all(&dir).map_err(|e| SnobError::Io {
                path: dir.clone(),
                source: e,
            })?;
            write_json(&dir.join("split.json"), &split)?;
            println!("split {} (config {})", split.split_id, split.config_hash);
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let data = load_audit_data(&cfg).map_err(|e| e.in_stage("load"))?;
            let dir = resolve_output_dir(&cfg).join("models");
            let written = train_and_save(&cfg, &data, &dir)?;
            println!(
                "config {}: {} model files in {}",
                config_hash(&cfg, &data)?,
                written.len(),
                dir.display()
            );
        }
        Command::Audit(args) => audit(&args.resolve()?)?,
        Command::Robustness(args) => {
            let mut cfg = args.resolve()?;
            cfg.robustness = true;
            audit(&cfg)?;
        }
        Command::ImportScores {
            scores,
            label,
            with_models,
            config,
        } => {
            let mut cfg = config.resolve()?;
            cfg.external_scores.push(ExternalScoresSpec { path: scores, label });
            if !with_models {
                cfg.reprs.clear();
            }
            audit(&cfg)?;
        }
        Command::ExportPlots { reports, output_dir } => {
            let bundles = reports.iter().map(|p| read_bundle(p)).collect::<Result<Vec<_>, _>>()?;
            let merged = merge_reports(&bundles)?;
            for p in export_plot_data(&merged, &output_dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Synth(args) => synth(&args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
