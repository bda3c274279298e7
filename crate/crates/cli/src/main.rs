use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sentiprobe::workflow::{self, RobustnessConfig};
use sentiprobe::{AuditConfig, Error, Result};

/// Audit a language model's embeddings for nationality bias.
#[derive(Parser, Debug)]
#[command(name = "sentiprobe", version)]
struct Cli {
    /// Audit config (TOML). For `robustness`, the setup matrix.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the significance level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Overrides the backend: `synthetic`, `file:<store.jsonl>` or
    /// `external:<command>`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write training instances and probe groups as JSONL.
    Gen,
    /// Write the sentences the embedding extractor has to encode.
    ExtractRequest,
    /// Train the sentiment head, score probes and classify bias.
    Audit,
    /// Context positivity per nationality over the configured corpus.
    CorpusStats,
    /// Correlate corpus statistics with audit results.
    Correlate {
        /// JSON list of corpus statistics.
        stats: PathBuf,
        /// CSV with `nationality` and `relative_sentiment` columns.
        results: PathBuf,
    },
    /// Pairwise correlations between audit setups.
    Robustness,
    /// Markdown summary of an output directory.
    Report,
}

impl Cli {
    fn apply_overrides(&self, cfg: &mut AuditConfig) -> Result<()> {
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = &self.backend {
            workflow::apply_backend_override(&mut cfg.backend, b)?;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()
    }

    fn config_path(&self) -> Result<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("--config is required for this command".into()))
    }

    fn audit_config(&self) -> Result<AuditConfig> {
        let mut cfg = AuditConfig::load_with_seed(self.config_path()?, self.seed)?;
        self.apply_overrides(&mut cfg)?;
        Ok(cfg)
    }

    /// `--out`, else the config's output directory, else the working directory.
    fn out_dir(&self) -> Result<PathBuf> {
        if let Some(o) = &self.out {
            return Ok(o.clone());
        }
        match &self.config {
            Some(_) => Ok(self.audit_config()?.output_dir),
            None => Ok(PathBuf::from(".")),
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen => {
            let cfg = cli.audit_config()?;
            let s = workflow::cmd_gen(&cfg)?;
            println!(
                "{} training instances, {} probe groups ({} texts) in {}",
                s.n_training,
                s.n_probe_groups,
                s.n_probe_texts,
                cfg.output_dir.display()
            );
        }
        Command::ExtractRequest => {
            let cfg = cli.audit_config()?;
            let n = workflow::cmd_extract_request(&cfg)?;
            println!("{n} sentences in {}", cfg.output_dir.join(workflow::SENTENCES_FILE).display());
        }
        Command::Audit => {
            let cfg = cli.audit_config()?;
            let run = workflow::cmd_audit(&cfg)?;
            println!(
                "heldout accuracy {:.4}; {} nationalities",
                run.train_report.heldout_accuracy,
                run.results.len()
            );
            for r in &run.results {
                println!(
                    "{:<20} {:+.4} [{:+.4}, {:+.4}] p={:.4} {}",
                    r.nationality, r.relative_sentiment, r.ci.low, r.ci.high, r.wilcoxon.p_two_sided, r.bias_class
                );
            }
        }
        Command::CorpusStats => {
            let cfg = cli.audit_config()?;
            for s in workflow::cmd_corpus_stats(&cfg)? {
                match s.context_positivity {
                    Some(p) => println!("{:<20} {:.4} ({} sentences)", s.nationality, p, s.n_sentences),
                    None => println!("{:<20} - (no sentences)", s.nationality),
                }
            }
        }
        Command::Correlate { stats, results } => {
            let out = cli.out_dir()?;
            let c = workflow::cmd_correlate(stats, results, &out)?;
            println!("r = {:.4}, p = {:.4}, n = {}", c.pearson.r, c.pearson.p_two_sided, c.pearson.n);
            if !c.excluded.is_empty() {
                println!("excluded: {}", c.excluded.join(", "));
            }
        }
        Command::Robustness => {
            let (mut base, setups) = RobustnessConfig::load(cli.config_path()?)?;
            if let Some(seed) = cli.seed {
                base.seed = seed;
            }
            cli.apply_overrides(&mut base)?;
            let m = workflow::cmd_robustness(&base, &setups)?;
            for c in &m.cells {
                println!("{} vs {}: r = {:.4} (p = {:.4})", c.setup_a, c.setup_b, c.pearson.r, c.pearson.p_two_sided);
            }
        }
        Command::Report => {
            print!("{}", workflow::cmd_report(&cli.out_dir()?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
