use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gesture_hmm::classifier::{score, train_bank, BankConfig, HmmBank};
use gesture_hmm::experiments::{self, Dataset, Experiment, ExperimentConfig, FeatureOptions};
use gesture_hmm::seqmodel::{decode_session, fit_sequence_model};
use gesture_hmm::signal::{
    import_dataset, read_corpus_dir, write_corpus_dir, GestureLabel, ImportAdapter, DEFAULT_SAMPLE_RATE_HZ,
    DEFAULT_STEP, DEFAULT_WINDOW,
};
use gesture_hmm::synth::{generate_corpus, SynthConfig};
use gesture_hmm::{ModelFile, ScoreVector};

#[derive(Parser)]
#[command(name = "gesture-hmm", version, about = "Eating-gesture recognition with two-level hidden Markov models")]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed overriding the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an external recording layout into a corpus directory.
    Ingest {
        /// TOML adapter describing the source file layout.
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus directory.
    Synth {
        /// Synthetic corpus TOML; built-in defaults when omitted.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        sessions: usize,
        #[arg(long, short, required_unless_present = "print_config")]
        out: Option<PathBuf>,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Train the per-gesture bank and, for order > 0, the context model.
    Train(TrainArgs),
    /// Score and label every annotated gesture of a corpus.
    Classify {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Label each session's gestures jointly with the context model.
    Decode {
        #[arg(long, short)]
        model: PathBuf,
        /// Corpus to score with the model's bank.
        #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
        corpus: Option<PathBuf>,
        /// Score table as written by `classify`.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Accuracy over the (states, mixtures) grid.
    SweepComplexity(ExperimentArgs),
    /// Accuracy against training gestures per class.
    SweepSize(ExperimentArgs),
    /// Context orders evaluated by session-level cross-validation.
    CompareOrders(ExperimentArgs),
    /// Session-level cross-validation of the bank alone and with context.
    Crossval(ExperimentArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 13)]
    states: usize,
    #[arg(long, default_value_t = 5)]
    mixtures: usize,
    /// Context order; 0 trains the bank only.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: usize,
    /// Divide scores by the gesture's window count.
    #[arg(long)]
    normalize_scores: bool,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    sample_rate: f64,
    /// Model JSON destination.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment TOML.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory overriding the configuration.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also write the per-gesture prediction log.
    #[arg(long)]
    predictions: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SweepComplexity(a) => run_experiment(Experiment::Complexity, a, cli.seed, cli.workers),
        Command::SweepSize(a) => run_experiment(Experiment::TrainingSize, a, cli.seed, cli.workers),
        Command::CompareOrders(a) => run_experiment(Experiment::Orders, a, cli.seed, cli.workers),
        Command::Crossval(a) => run_experiment(Experiment::Crossval, a, cli.seed, cli.workers),
        command => {
            if let Some(w) = cli.workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build_global()
                    .context("configuring worker pool")?;
            }
            match command {
                Command::Ingest { adapter, input, out } => ingest(&adapter, &input, &out),
                Command::Synth {
                    config,
                    sessions,
                    out,
                    print_config,
                } => synth(config.as_deref(), sessions, out.as_deref(), print_config, cli.seed),
                Command::Train(a) => train(&a, cli.seed),
                Command::Classify { model, corpus, out } => classify(&model, &corpus, out.as_deref()),
                Command::Decode {
                    model,
                    corpus,
                    scores,
                    out,
                } => decode(&model, corpus.as_deref(), scores.as_deref(), out.as_deref()),
                _ => unreachable!("experiments handled above"),
            }
        }
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn ingest(adapter: &Path, input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(adapter).with_context(|| format!("reading {}", adapter.display()))?;
    let adapter = ImportAdapter::from_toml(&text).with_context(|| format!("parsing {}", adapter.display()))?;
    let summary = import_dataset(&adapter, input, out)?;
    eprintln!(
        "imported {} sessions, {} segments ({} annotation rows skipped) into {}",
        summary.sessions,
        summary.segments,
        summary.skipped_rows,
        out.display()
    );
    Ok(())
}

fn synth(config: Option<&Path>, sessions: usize, out: Option<&Path>, print: bool, seed: Option<u64>) -> Result<()> {
    let mut c = match config {
        Some(p) => SynthConfig::from_toml_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    if print {
        print!("{}", c.to_toml_string()?);
        return Ok(());
    }
    let out = out.expect("clap requires --out");
    let corpus = generate_corpus(&c, sessions)?;
    write_corpus_dir(out, &corpus)?;
    let gestures: usize = corpus.iter().map(|(_, s)| s.len()).sum();
    eprintln!("wrote {sessions} sessions, {gestures} gestures to {}", out.display());
    Ok(())
}

fn train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let corpus = read_corpus_dir(&a.corpus, a.sample_rate)?;
    let data = Dataset::from_corpus(
        &corpus,
        &FeatureOptions {
            window: a.window,
            step: a.step,
        },
    )?;
    let config = BankConfig {
        window: a.window,
        step: a.step,
        states: a.states,
        mixtures: a.mixtures,
        seed: seed.unwrap_or(0),
        normalize_scores: a.normalize_scores,
        ..BankConfig::default()
    };
    let bank = train_bank(data.gestures.iter().map(|g| (&g.features, g.label)), &config)?;
    for m in &bank.models {
        let t = &m.training;
        eprintln!(
            "{:<11} {:>5} gestures  {:>3} iterations  converged={}  log-likelihood/window {:.4}",
            m.label.token(), t.sequences, t.iterations, t.converged, t.final_log_likelihood
        );
    }
    let sequence_model = if a.order > 0 {
        let sessions: Vec<Vec<GestureLabel>> = data
            .sessions
            .iter()
            .map(|s| s.iter().map(|&i| data.gestures[i].label).collect())
            .collect();
        let scored = data
            .gestures
            .iter()
            .map(|g| Ok((score(&bank, &g.features)?, g.label)))
            .collect::<gesture_hmm::Result<Vec<_>>>()?;
        let (model, report) = fit_sequence_model(&sessions, &scored, a.order, config.seed)?;
        for (label, m) in report.emissions.reduced {
            eprintln!("warning: {label} has only {m} gestures; its emission uses {m} components");
        }
        Some(model)
    } else {
        None
    };
    ModelFile::new(bank, sequence_model).save(&a.out)?;
    eprintln!("model written to {}", a.out.display());
    Ok(())
}

const SCORE_COLUMNS: [&str; 5] = ["score_rest", "score_utensiling", "score_bite", "score_drink", "score_other"];

struct Scored {
    session: String,
    position: usize,
    truth: Option<GestureLabel>,
    scores: ScoreVector,
}

fn score_corpus(bank: &HmmBank, corpus: &Path) -> Result<Vec<Scored>> {
    let corpus = read_corpus_dir(corpus, DEFAULT_SAMPLE_RATE_HZ)?;
    let data = Dataset::from_corpus(
        &corpus,
        &FeatureOptions {
            window: bank.config.window,
            step: bank.config.step,
        },
    )?;
    data.gestures
        .iter()
        .map(|g| {
            Ok(Scored {
                session: data.session_ids[g.session].clone(),
                position: g.position,
                truth: Some(g.label),
                scores: score(bank, &g.features)?,
            })
        })
        .collect()
}

fn report_accuracy(what: &str, pairs: impl Iterator<Item = (Option<GestureLabel>, GestureLabel)>) {
    let (mut hit, mut n) = (0, 0);
    for (t, p) in pairs {
        if let Some(t) = t {
            n += 1;
            hit += usize::from(t == p);
        }
    }
    if n > 0 {
        eprintln!("{what} accuracy {:.4} ({hit}/{n})", hit as f64 / n as f64);
    }
}

fn classify(model: &Path, corpus: &Path, out: Option<&Path>) -> Result<()> {
    let model = ModelFile::load(model).with_context(|| format!("loading {}", model.display()))?;
    let scored = score_corpus(&model.bank, corpus)?;
    let mut w = csv::Writer::from_writer(sink(out)?);
    let mut header = vec!["session", "position", "true_label", "predicted"];
    header.extend(SCORE_COLUMNS);
    w.write_record(&header)?;
    for s in &scored {
        let mut rec = vec![
            s.session.clone(),
            s.position.to_string(),
            s.truth.map(|l| l.to_string()).unwrap_or_default(),
            s.scores.best().to_string(),
        ];
        rec.extend(s.scores.0.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    report_accuracy("HMM-S", scored.iter().map(|s| (s.truth, s.scores.best())));
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<Scored>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: missing column {name}", path.display()))
    };
    let session = col("session")?;
    let position = col("position")?;
    let truth = col("true_label").ok();
    let scores: Vec<usize> = SCORE_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let mut v = [0.0; 5];
        for (slot, &i) in v.iter_mut().zip(&scores) {
            *slot = field(i)
                .parse()
                .with_context(|| format!("{}:{line}: bad score {:?}", path.display(), field(i)))?;
        }
        out.push(Scored {
            session: field(session).to_string(),
            position: field(position)
                .parse()
                .with_context(|| format!("{}:{line}: bad position", path.display()))?,
            truth: match truth.map(field) {
                Some(t) if !t.is_empty() => Some(t.parse().with_context(|| format!("{}:{line}", path.display()))?),
                _ => None,
            },
            scores: ScoreVector(v),
        });
    }
    Ok(out)
}

fn decode(model: &Path, corpus: Option<&Path>, scores: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let model = ModelFile::load(model).with_context(|| format!("loading {}", model.display()))?;
    let Some(context) = &model.sequence_model else {
        bail!("model has no context model; train it with --order 1 or higher");
    };
    let scored = match (corpus, scores) {
        (Some(c), _) => score_corpus(&model.bank, c)?,
        (None, Some(s)) => read_scores(s)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    let mut sessions: BTreeMap<&str, Vec<&Scored>> = BTreeMap::new();
    for s in &scored {
        sessions.entry(&s.session).or_default().push(s);
    }
    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(["session", "position", "true_label", "hmm_s", "decoded"])?;
    let mut pairs = Vec::new();
    for (id, mut gestures) in sessions {
        gestures.sort_by_key(|g| g.position);
        let labels = decode_session(context, &gestures.iter().map(|g| g.scores).collect::<Vec<_>>())
            .with_context(|| format!("decoding session {id}"))?;
        for (g, l) in gestures.iter().zip(labels) {
            w.write_record([
                id.to_string(),
                g.position.to_string(),
                g.truth.map(|t| t.to_string()).unwrap_or_default(),
                g.scores.best().to_string(),
                l.to_string(),
            ])?;
            pairs.push((g.truth, g.scores.best(), l));
        }
    }
    w.flush()?;
    report_accuracy("HMM-S", pairs.iter().map(|p| (p.0, p.1)));
    report_accuracy(&format!("HMM-{}", context.order), pairs.iter().map(|p| (p.0, p.2)));
    Ok(())
}

fn run_experiment(
    experiment: Experiment,
    a: ExperimentArgs,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<()> {
    let mut config =
        ExperimentConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(s) = seed {
        config.base_seed = s;
    }
    if let Some(w) = workers {
        config.workers = w;
    }
    if let Some(o) = a.out {
        config.output_dir = o;
    }
    let data = Dataset::load(&config)?;
    eprintln!(
        "{experiment}: {} sessions, {} gestures",
        data.sessions.len(),
        data.gestures.len()
    );
    let result = experiments::run(experiment, &config, &data)?;
    let written = result.write(&config.output_dir, a.predictions)?;
    let effective = config.output_dir.join(format!("{}_config.toml", experiment.id()));
    fs::write(&effective, config.to_toml_string()?).with_context(|| format!("writing {}", effective.display()))?;
    print!("{}", result.summary_csv()?);
    eprintln!("tables written: {}, {}, {}", written.raw.display(), written.summary.display(), written.timing.display());
    Ok(())
}
