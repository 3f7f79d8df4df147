use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hapm_core::anchors::{select_anchors, AnchorSelection, DEFAULT_ALPHA};
use hapm_core::gating::{confusion_matrix, family_scores, gate_top_n, DEFAULT_N_DIV};
use hapm_core::metrics::{descriptor_alignment, evaluate, predict_all, token_correlation};
use hapm_core::pipeline::{enhanced_prototypes, holdout_split, prepare_with_anchors};
use hapm_core::store::{
    load_checkpoint, load_embedding_set, load_prompt_library, save_checkpoint, save_embedding_set,
    save_prompt_library, validate_prompt_file, Checkpoint, EmbeddingSet,
};
use hapm_core::synth::{generate, SynthConfig};
use hapm_core::trainer::{model_dims, train, TrainConfig};
use hapm_core::{GradeId, PrototypeSet};

const HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Parser)]
#[command(name = "hapm", version, about = "Prototype evolution for ordinal severity grading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an embedding and/or prompt manifest and print a summary.
    Validate {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Pick the lowest-variance records of every grade.
    SelectAnchors {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prompt families on anchor records and keep the top `n-div`.
    Gate {
        #[arg(long)]
        prompts: PathBuf,
        /// Embedding manifest holding the anchor records (with gating embeddings).
        #[arg(long)]
        anchors: PathBuf,
        /// Restrict the manifest to the ids of a `select-anchors` output.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_N_DIV)]
        n_div: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the grade-by-grade semantic confusion matrix as CSV.
    Confusion {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the modulation projections and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        /// Output of `select-anchors`; ids must exist in `--embeddings`.
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Separate validation manifest.
        #[arg(long, conflicts_with = "splits")]
        val: Option<PathBuf>,
        /// Split lists; training uses `train`, validation uses `val`.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_N_DIV)]
        n_div: usize,
        /// Where to write the training report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Accuracy, macro-F1 and confusion counts of a checkpoint.
    Eval {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "split")]
        splits: Option<PathBuf>,
        /// Name of the split to evaluate (e.g. `test`).
        #[arg(long, requires = "splits")]
        split: Option<String>,
        /// Score the unmodulated base prototypes instead.
        #[arg(long)]
        base: bool,
    },
    /// One prediction per record, as JSON lines.
    Infer {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export analysis matrices as CSV.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        what: Analysis,
        #[arg(long)]
        out: PathBuf,
        /// Query records (required for `descriptors`).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Correlation,
    Descriptors,
}

#[derive(Debug, Serialize, Deserialize)]
struct Splits {
    #[serde(flatten)]
    splits: BTreeMap<String, Vec<String>>,
}

impl Splits {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn subset(&self, set: &EmbeddingSet, name: &str) -> Result<EmbeddingSet> {
        let ids = self
            .splits
            .get(name)
            .with_context(|| format!("split `{name}` not found"))?;
        Ok(set.subset(ids)?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn synth(config: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let cfg = match config {
        Some(p) => SynthConfig::from_file(p)?,
        None => SynthConfig::default(),
    };
    let data = generate(&cfg)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    save_embedding_set(&data.combined()?, out.join("embeddings.json"))?;
    for (name, set) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        save_embedding_set(set, out.join(format!("{name}.json")))?;
    }
    save_prompt_library(&data.library, out.join("prompts.json"))?;
    let ids = |s: &EmbeddingSet| s.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
    let splits = Splits {
        splits: BTreeMap::from([
            ("train".to_string(), ids(&data.train)),
            ("val".to_string(), ids(&data.val)),
            ("test".to_string(), ids(&data.test)),
        ]),
    };
    write_json(&out.join("splits.json"), &splits)?;
    println!(
        "wrote {} train / {} val / {} test records and {} prompt families to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.library.families().len(),
        out.display()
    );
    Ok(())
}

fn validate(embeddings: Option<PathBuf>, prompts: Option<PathBuf>) -> Result<()> {
    if embeddings.is_none() && prompts.is_none() {
        bail!("nothing to validate: pass --embeddings and/or --prompts");
    }
    if let Some(p) = embeddings {
        let set = load_embedding_set(&p)?;
        let labeled = set.iter().filter(|r| r.grade.is_some()).count();
        let mut per_grade = [0usize; hapm_core::NUM_GRADES];
        for r in &set {
            if let Some(g) = r.grade {
                per_grade[g.index()] += 1;
            }
        }
        let summary = serde_json::json!({
            "records": set.len(),
            "labeled": labeled,
            "per_grade": per_grade,
            "n_s": set.n_s(),
            "d_v": set.d_v(),
            "d_t": set.d_t(),
            "with_gating": set.iter().filter(|r| r.gating.is_some()).count(),
            "generator": set.generator(),
        });
        println!("{}", serde_json::to_string_pretty(&summary)?);
    }
    if let Some(p) = prompts {
        println!("{}", serde_json::to_string_pretty(&validate_prompt_file(&p)?)?);
    }
    Ok(())
}

fn gate(prompts: PathBuf, anchors: PathBuf, selection: Option<PathBuf>, n_div: usize, out: PathBuf) -> Result<()> {
    let library = load_prompt_library(&prompts)?;
    let mut set = load_embedding_set(&anchors)?;
    if let Some(sel) = selection {
        let sel: AnchorSelection = read_json(&sel)?;
        set = set.subset(&sel.all_ids())?;
    }
    let result = gate_top_n(&library, &set, n_div)?;
    let all = family_scores(&library, &set)?;
    write_json(
        &out,
        &serde_json::json!({ "n_div": n_div, "selected": result.selected, "all_scores": all }),
    )?;
    log::info!("kept {:?}", result.selected_ids());
    Ok(())
}

fn confusion(prompts: PathBuf, out: PathBuf) -> Result<()> {
    let m = confusion_matrix(&load_prompt_library(&prompts)?)?;
    let mut w = csv_writer(&out)?;
    let mut header = vec!["grade".to_string()];
    header.extend(GradeId::all().map(|g| g.to_string()));
    w.write_record(&header)?;
    for (g, row) in m.rows().into_iter().enumerate() {
        let mut rec = vec![g.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    config: Option<PathBuf>,
    embeddings: PathBuf,
    prompts: PathBuf,
    anchors: PathBuf,
    out: PathBuf,
    val: Option<PathBuf>,
    splits: Option<PathBuf>,
    n_div: usize,
    report: Option<PathBuf>,
) -> Result<()> {
    let cfg = match config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    let pool = load_embedding_set(&embeddings)?;
    let library = load_prompt_library(&prompts)?;
    let selection: AnchorSelection = read_json(&anchors)?;
    let anchor_ids = selection.all_ids();
    let (train_set, val_set) = match (val, splits) {
        (Some(v), _) => (pool.clone(), load_embedding_set(&v)?),
        (None, Some(s)) => {
            let s = Splits::load(&s)?;
            (s.subset(&pool, "train")?, s.subset(&pool, "val")?)
        }
        (None, None) => holdout_split(&pool, HOLDOUT_FRACTION, cfg.seed, &anchor_ids)?,
    };
    let prep = prepare_with_anchors(&pool, &library, selection.clone(), n_div)?;
    log::info!(
        "training on {} records, validating on {}, {} gated families",
        train_set.len(),
        val_set.len(),
        prep.gating.selected.len()
    );
    let (params, rep) = train(&train_set, &val_set, &prep.base, &prep.features, &cfg)?;
    let ck = Checkpoint {
        dims: model_dims(&prep.base, &prep.features, cfg.proj_dim),
        tau: cfg.tau,
        params,
        base: prep.base,
        features: prep.features,
        selected_families: prep.gating.selected_ids().iter().map(|s| s.to_string()).collect(),
        anchors: selection,
    };
    save_checkpoint(&ck, &out)?;
    if let Some(r) = report {
        write_json(&r, &rep)?;
    }
    println!(
        "val loss {:.6} -> {:.6} (best epoch {}), val accuracy {:.4}, macro-F1 {:.4}",
        rep.initial_val_loss, rep.best_val_loss, rep.best_epoch, rep.final_metrics.accuracy, rep.final_metrics.macro_f1
    );
    Ok(())
}

fn checkpoint_prototypes(ck: &Checkpoint, base: bool) -> Result<PrototypeSet> {
    Ok(if base {
        ck.base.clone()
    } else {
        enhanced_prototypes(&ck.base, &ck.features, &ck.params)?
    })
}

fn eval(
    embeddings: PathBuf,
    checkpoint: PathBuf,
    out: PathBuf,
    splits: Option<PathBuf>,
    split: Option<String>,
    base: bool,
) -> Result<()> {
    let mut set = load_embedding_set(&embeddings)?;
    if let (Some(s), Some(name)) = (splits, split) {
        set = Splits::load(&s)?.subset(&set, &name)?;
    }
    let ck = load_checkpoint(&checkpoint)?;
    let report = evaluate(&set, &checkpoint_prototypes(&ck, base)?)?;
    write_json(&out, &report)?;
    println!("accuracy {:.4}, macro-F1 {:.4} on {} records", report.accuracy, report.macro_f1, set.len());
    Ok(())
}

fn infer(embeddings: PathBuf, checkpoint: PathBuf, out: PathBuf) -> Result<()> {
    let set = load_embedding_set(&embeddings)?;
    let ck = load_checkpoint(&checkpoint)?;
    let preds = predict_all(&set, &checkpoint_prototypes(&ck, false)?)?;
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("writing {}", out.display()))?);
    for p in &preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn analyze(checkpoint: PathBuf, what: Analysis, out: PathBuf, embeddings: Option<PathBuf>) -> Result<()> {
    let ck = load_checkpoint(&checkpoint)?;
    let enhanced = checkpoint_prototypes(&ck, false)?;
    let mut w = csv_writer(&out)?;
    match what {
        Analysis::Correlation => {
            w.write_record(["stage", "grade", "i", "j", "cosine"])?;
            for protos in [&ck.base, &enhanced] {
                for (g, m) in token_correlation(protos)?.iter().enumerate() {
                    for ((i, j), v) in m.indexed_iter() {
                        w.write_record([protos.stage().to_string(), g.to_string(), i.to_string(), j.to_string(), v.to_string()])?;
                    }
                }
            }
        }
        Analysis::Descriptors => {
            let path = embeddings.context("--what descriptors needs --embeddings")?;
            let set = load_embedding_set(&path)?;
            let family = ck.selected_families.first().cloned().unwrap_or_default();
            // Row 0 of each grade's gated features: the top family's variant for that grade.
            let descriptors: Vec<_> = ck.features.diverse.iter().map(|m| m.row(0)).collect();
            w.write_record(["id", "predicted", "family", "descriptor_grade", "cosine"])?;
            for q in &set {
                let a = descriptor_alignment(q, &descriptors, &enhanced, &ck.params.wp)?;
                for (g, s) in a.similarities.iter().enumerate() {
                    w.write_record([a.id.clone(), a.predicted.to_string(), family.clone(), g.to_string(), s.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => synth(config, out),
        Command::Validate { embeddings, prompts } => validate(embeddings, prompts),
        Command::SelectAnchors { embeddings, alpha, out } => {
            let selection = select_anchors(&load_embedding_set(&embeddings)?, alpha)?;
            write_json(&out, &selection)
        }
        Command::Gate {
            prompts,
            anchors,
            selection,
            n_div,
            out,
        } => gate(prompts, anchors, selection, n_div, out),
        Command::Confusion { prompts, out } => confusion(prompts, out),
        Command::Train {
            config,
            embeddings,
            prompts,
            anchors,
            out,
            val,
            splits,
            n_div,
            report,
        } => train_cmd(config, embeddings, prompts, anchors, out, val, splits, n_div, report),
        Command::Eval {
            embeddings,
            checkpoint,
            out,
            splits,
            split,
            base,
        } => eval(embeddings, checkpoint, out, splits, split, base),
        Command::Infer {
            embeddings,
            checkpoint,
            out,
        } => infer(embeddings, checkpoint, out),
        Command::Analyze {
            checkpoint,
            what,
            out,
            embeddings,
        } => analyze(checkpoint, what, out, embeddings),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
