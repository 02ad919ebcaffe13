use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context};

use vlqual_core::fusion::{confusion, confusion_of, score_deltas, Confusion, ScoreTable};
use vlqual_core::kb::{KnowledgeBase, ModelConfig, Store};
use vlqual_core::model::{Embedding, ExpertLabel, FusionConfig, Prediction};
use vlqual_core::retrieval::{retrieval_report, retrieve, vision_corpus, write_report, QueryDescriptor};
use vlqual_core::scoring::{baseline_from_table, score_batch};
use vlqual_core::similarity::pairwise_matrix;
use vlqual_core::synthetic;
use vlqual_core::table::{fixture_deltas, fmt_real, read_table_file, sample_id_from_image, write_score_table, Precision};
use vlqual_core::tree::{batch_tree_report, evaluate_tree, FinalVerdict, KbScorer, QualificationTrace, TreeConfig, Verdict};
use vlqual_service::ServiceConfig;

use crate::{
    Cli, Command, EvaluateArgs, ExportArgs, ExportWhat, FusionArgs, IngestArgs, ModelArgs, PrecisionArg,
    RetrieveArgs, ScoreArgs, ServeArgs, SyntheticArgs, TreeArgs,
};

pub enum Failure {
    Usage(String),
    Op(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Op(e.into())
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    let dir = cli.data_dir.as_path();
    match cli.command {
        Command::Ingest(a) => ingest(dir, a),
        Command::Score(a) => score(dir, a),
        Command::Evaluate(a) => evaluate(dir, a),
        Command::Retrieve(a) => retrieve_cmd(dir, a),
        Command::Tree(a) => tree(dir, a),
        Command::Serve(a) => serve(dir, a),
        Command::Export(a) => export(dir, a),
        Command::Synthetic(a) => write_synthetic(a),
    }
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Fixed4 => Precision::Fixed4,
            PrecisionArg::Full => Precision::Full,
        }
    }
}

impl FusionArgs {
    fn config(&self) -> FusionConfig {
        FusionConfig {
            strategy: self.strategy,
            weights: self.weights,
            threshold: self.threshold,
            sigma_convention: self.sigma,
            ..Default::default()
        }
    }
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            text_model: self.text_model.clone(),
            image_model: self.image_model.clone(),
            variant: self.variant,
        }
    }
}

/// Opens an existing knowledge base.
fn open(dir: &Path) -> anyhow::Result<Store> {
    if !dir.is_dir() {
        bail!("data directory {} does not exist; run `vlqual ingest` first", dir.display());
    }
    Ok(Store::open(dir)?)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn ingest(dir: &Path, a: IngestArgs) -> Outcome {
    if a.embeddings.is_empty() && a.labels.is_none() && a.criteria.is_none() {
        return Err(Failure::Usage("nothing to ingest; pass --embeddings, --labels or --criteria".into()));
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let store = Store::open(dir)?;
    let lines = store.write(|kb| {
        let mut lines = Vec::new();
        // labels first so criteria can reference labeled samples
        if let Some(p) = &a.labels {
            lines.push(format!("{} labels loaded", kb.load_labels(p)?));
        }
        for p in &a.embeddings {
            let r = kb.ingest_embeddings(p)?;
            let mut line = format!("{} embeddings ingested from {}", r.count, p.display());
            if !r.renormalized.is_empty() {
                let _ = write!(line, " ({} re-normalized)", r.renormalized.len());
            }
            lines.push(line);
            for (n, id) in &r.renormalized {
                eprintln!("warning: {}:{n}: embedding '{id}' was not unit-norm and was re-normalized", p.display());
            }
        }
        if let Some(p) = &a.criteria {
            lines.push(format!("{} criteria loaded", kb.load_criteria(p)?));
        }
        Ok(lines)
    })?;
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn score(dir: &Path, a: ScoreArgs) -> Outcome {
    if a.fixture.is_some() && a.save_baseline {
        return Err(Failure::Usage("--save-baseline needs embeddings, not --fixture".into()));
    }
    let config = a.fusion.config();
    let table = match &a.fixture {
        Some(path) => {
            let rows = read_table_file(path)?;
            let deltas = fixture_deltas(&rows, &a.criterion)?;
            score_deltas(&a.criterion, &deltas, &config, None)?
        }
        None => {
            let models = a.models.config();
            let store = open(dir)?;
            store.write(|kb| {
                let table = score_batch(kb, None, &a.criterion, &models, &config)?;
                if a.save_baseline {
                    kb.set_baseline(baseline_from_table(&table)?);
                }
                kb.append_score_table(table.clone());
                Ok(table)
            })?
        }
    };
    warn_all(&table.warnings);
    emit(a.out.as_deref(), &write_score_table(&table, a.precision.into()))?;
    eprintln!(
        "scored {} samples for {} (batch {}, {} positive)",
        table.rows.len(),
        table.criterion_id,
        table.batch_id,
        table.rows.iter().filter(|r| r.label.is_positive()).count()
    );
    Ok(())
}

fn labels_from(dir: &Path, against: Option<&Path>, criterion: &str) -> anyhow::Result<BTreeMap<String, ExpertLabel>> {
    match against {
        Some(p) => {
            let mut kb = KnowledgeBase::new();
            kb.load_labels(p)?;
            Ok(kb.labels_for(criterion))
        }
        None => Ok(open(dir)?.snapshot().labels_for(criterion)),
    }
}

fn confusion_text(criterion: &str, m: &Confusion) -> String {
    let ratio = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let mut s = String::new();
    let _ = writeln!(s, "criterion {criterion}: {} labeled samples", m.total());
    let _ = writeln!(s, "tp {}  fp {}  fn {}  tn {}", m.tp, m.fp, m.fn_, m.tn);
    let _ = writeln!(s, "accuracy {:.4}", m.accuracy);
    let _ = writeln!(s, "precision {}", ratio(m.precision));
    let _ = writeln!(s, "recall {}", ratio(m.recall));
    let list = |ids: &[String]| if ids.is_empty() { "none".to_string() } else { ids.join(", ") };
    let _ = writeln!(s, "false positives: {}", list(&m.false_positives));
    let _ = writeln!(s, "false negatives: {}", list(&m.false_negatives));
    s
}

fn evaluate(dir: &Path, a: EvaluateArgs) -> Outcome {
    let labels = labels_from(dir, a.against.as_deref(), &a.criterion)?;
    let m = match &a.table {
        Some(path) => {
            let rows = read_table_file(path)?;
            let tau = a.threshold.unwrap_or(0.0);
            let ids: Vec<String> = rows.iter().map(|r| sample_id_from_image(&r.image)).collect();
            let mut preds = Vec::with_capacity(rows.len());
            for (r, id) in rows.iter().zip(&ids) {
                let c = r
                    .delta_combined
                    .ok_or_else(|| anyhow!("{}: row '{}' has no delta_combined value", path.display(), r.image))?;
                preds.push((id.as_str(), Prediction::from_bool(c >= tau)));
            }
            confusion_of(&preds, &labels)?
        }
        None => {
            let snap = open(dir)?.snapshot();
            let table: &ScoreTable = snap
                .latest_score_table(&a.criterion)
                .ok_or_else(|| anyhow!("no stored score table for {}; run `vlqual score` first", a.criterion))?;
            match a.threshold {
                Some(t) => confusion(&table.relabel(t)?, &labels)?,
                None => confusion(table, &labels)?,
            }
        }
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&m)?);
    } else {
        print!("{}", confusion_text(&a.criterion, &m));
    }
    Ok(())
}

fn retrieve_cmd(dir: &Path, a: RetrieveArgs) -> Outcome {
    if a.criteria.len() > 1 && !a.cumulative {
        return Err(Failure::Usage("several criteria need --cumulative".into()));
    }
    let snap = open(dir)?.snapshot();
    let query = QueryDescriptor { criteria: a.criteria, variant: a.variant, cumulative: a.cumulative };
    let result = retrieve(&snap, &query, &a.model, a.k, a.mode.into())?;
    warn_all(&result.warnings);
    let mut out = String::from("rank,sample,similarity\n");
    for (i, (id, s)) in result.top_k().iter().enumerate() {
        let _ = writeln!(out, "{},{id},{}", i + 1, fmt_real(*s, a.precision.into()));
    }
    emit(None, &out)?;
    Ok(())
}

fn tree_config(a: &TreeArgs) -> TreeConfig {
    let mut cfg = TreeConfig { models: a.models.config(), stop_at_first_failure: a.stop_at_first_failure, ..Default::default() };
    if let Some(order) = &a.order {
        cfg.order = order.clone();
    }
    if let Some(gates) = &a.gates {
        cfg.gate_criteria = gates.iter().filter(|g| !g.is_empty()).cloned().collect();
    }
    if let Some(t) = a.threshold {
        cfg.fusion.threshold = t;
    }
    cfg
}

fn trace_text(t: &QualificationTrace) -> String {
    let verdict = match t.final_verdict {
        FinalVerdict::Accept => "ACCEPT",
        FinalVerdict::Reject => "REJECT",
    };
    let mut s = format!("{}: {verdict}", t.sample_id);
    if t.short_circuited {
        let last = t.steps.last().map(|st| st.criterion_id.as_str()).unwrap_or_default();
        let _ = write!(s, " (short-circuited at {last})");
    }
    s.push('\n');
    for st in &t.steps {
        let v = match st.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        };
        match (&st.score, &st.error) {
            (Some(sc), _) => {
                let _ = writeln!(s, "  {:<4} {v}  combined {:.4}", st.criterion_id, sc.combined);
            }
            (None, Some(e)) => {
                let _ = writeln!(s, "  {:<4} {v}  error: {e}", st.criterion_id);
            }
            (None, None) => {
                let _ = writeln!(s, "  {:<4} {v}", st.criterion_id);
            }
        }
    }
    let _ = writeln!(s, "config {}", t.config_hash);
    s
}

fn tree(dir: &Path, a: TreeArgs) -> Outcome {
    let cfg = tree_config(&a);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let snap = open(dir)?.snapshot();
    if let Some(id) = &a.sample {
        let trace = evaluate_tree(&snap, id, &cfg)?;
        if a.json {
            println!("{}", serde_json::to_string_pretty(&trace)?);
        } else {
            print!("{}", trace_text(&trace));
        }
        return Ok(());
    }
    let ids: Vec<String> = snap.samples().map(|s| s.sample_id.clone()).collect();
    let report = batch_tree_report(&KbScorer(&snap), &ids, &cfg)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    for t in &report.traces {
        print!("{}", trace_text(t));
    }
    let s = &report.summary;
    println!("accepted {}  rejected {}  gate failures {}", s.accepted, s.rejected, s.gate_failures);
    for (c, n) in &s.failures_by_criterion {
        println!("  {c} failed {n}");
    }
    for (id, e) in &s.errors {
        println!("  {id}: error: {e}");
    }
    Ok(())
}

fn serve(dir: &Path, a: ServeArgs) -> Outcome {
    let mut config = ServiceConfig::load(a.config.as_deref())?;
    if config.data_dir.is_none() {
        config.data_dir = Some(dir.to_path_buf());
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(vlqual_service::serve(config)).map_err(|e| anyhow!(e))?;
    Ok(())
}

fn corpus_embeddings(kb: &KnowledgeBase, model: &str) -> anyhow::Result<Vec<Embedding>> {
    let corpus = vision_corpus(kb, model);
    if corpus.is_empty() {
        bail!("no vision embeddings for model '{model}'");
    }
    Ok(corpus
        .into_iter()
        .map(|(sample, e)| Embedding { id: sample, ..e.clone() })
        .collect())
}

fn export(dir: &Path, a: ExportArgs) -> Outcome {
    let snap = open(dir)?.snapshot();
    let precision: Precision = a.precision.into();
    let text = match a.what {
        ExportWhat::Projection => {
            let rows = corpus_embeddings(&snap, &a.model)?;
            let dim = rows[0].dim;
            let mut s = String::from("sample,model");
            for d in 0..dim {
                let _ = write!(s, ",v{d}");
            }
            s.push('\n');
            for e in &rows {
                let _ = write!(s, "{},{}", e.id, e.model_id);
                for x in &e.vector {
                    let _ = write!(s, ",{x:?}");
                }
                s.push('\n');
            }
            s
        }
        ExportWhat::Matrix => {
            let m = pairwise_matrix(&corpus_embeddings(&snap, &a.model)?)?;
            let mut s = format!("sample,{}\n", m.sample_ids.join(","));
            for (id, row) in m.sample_ids.iter().zip(&m.values) {
                s.push_str(id);
                for x in row {
                    let _ = write!(s, ",{}", fmt_real(*x, precision));
                }
                s.push('\n');
            }
            s
        }
        ExportWhat::Scores => {
            let c = a.criterion.as_deref().ok_or_else(|| Failure::Usage("--what scores needs --criterion".into()))?;
            let t = snap
                .latest_score_table(c)
                .ok_or_else(|| anyhow!("no stored score table for {c}; run `vlqual score` first"))?;
            write_score_table(t, precision)
        }
        ExportWhat::Report => {
            let criteria = a.criteria.clone().unwrap_or_else(|| {
                ["EA1", "EA2", "EA3", "EA4", "EA5", "EA6"].map(String::from).to_vec()
            });
            let mut queries: Vec<Vec<String>> = criteria.iter().map(|c| vec![c.clone()]).collect();
            if a.cumulative {
                queries.extend((2..=criteria.len()).map(|n| criteria[..n].to_vec()));
            }
            let rows = retrieval_report(&snap, &queries, &a.variants, &a.models, &a.k, a.mode.into())?;
            write_report(&rows)
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(())
}

fn write_synthetic(a: SyntheticArgs) -> Outcome {
    let c = synthetic::corpus(a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let write = |name: &str, text: &str| {
        let p = a.out.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write("embeddings.interchange.jsonl", &c.embeddings)?;
    write("labels.csv", &c.labels_csv)?;
    write("criteria.json", &(serde_json::to_string_pretty(&c.criteria)? + "\n"))?;
    println!("wrote synthetic corpus (seed {}) to {}", a.seed, a.out.display());
    Ok(())
}
