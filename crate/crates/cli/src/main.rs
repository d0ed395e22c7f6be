mod args;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use args::*;
use fta::datagen::{generate_dataset, load_dataset, serialize_dataset, Interaction, SyntheticConfig};
use fta::encoder::EncoderPair;
use fta::fusion::{Embedding, Modality, ViewSet};
use fta::index::{build_index, cross_view_eval, knn, load_index, recall_at_k, save_index, Hit};
use fta::training::{bench_views, train, TrainConfig};
use fta::transport::{coupling_cost, exact_ot, factorized_coupling, negative_dot_cost, SimplexWeights};
use fta::Error;

static QUIET: AtomicBool = AtomicBool::new(false);

macro_rules! log {
    ($($arg:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            eprintln!("fta: {}", format!($($arg)*));
        }
    };
}

/// A failure carrying its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Format(_) | Error::FormatLine { .. } => EXIT_IO,
            Error::ConfigInvalid(_) => EXIT_CONFIG,
            _ => EXIT_PRECONDITION,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn emit(value: &Value) {
    let mut out = std::io::stdout().lock();
    // a closed pipe is not worth a panic
    let _ = writeln!(out, "{value}");
}

/// Reads a JSON config file. Accepts the bare section or an object holding
/// it under `section`, so one file can configure several subcommands.
fn read_section<T: DeserializeOwned>(path: &Path, section: &str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let bad = |e: serde_json::Error| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display()));
    let value: Value = serde_json::from_str(&text).map_err(bad)?;
    let sectioned = value.as_object().is_some_and(|o| !o.is_empty() && o.keys().all(|k| k == "data" || k == "train"));
    let inner = if sectioned { value.get(section).cloned().unwrap_or_else(|| json!({})) } else { value };
    serde_json::from_value(inner).map_err(bad)
}

fn load_model(path: &Path) -> CliResult<EncoderPair<f64>> {
    Ok(EncoderPair::load(path)?)
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let mut cfg: SyntheticConfig = match &a.config {
        Some(p) => read_section(p, "data")?,
        None => SyntheticConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.listings {
        cfg.num_listings = n;
    }
    if let Some(n) = a.image_views {
        cfg.image_views_n = n;
    }
    if let Some(m) = a.text_views {
        cfg.text_views_m = m;
    }
    if let Some(r) = a.interaction_rate {
        cfg.interactions_per_listing_rate = r;
    }
    cfg.validate()?;
    log!("generating {} listings (seed {})", cfg.num_listings, cfg.seed);
    let ds = generate_dataset(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    serialize_dataset(&ds.listings, &ds.interactions, &a.out)?;
    emit(&json!({
        "out": a.out,
        "listings": ds.listings.len(),
        "interactions": ds.interactions.len(),
        "config": cfg,
    }));
    Ok(())
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(p), _) => read_section(p, "train")?,
        (None, true) => TrainConfig::large_scale_preset(),
        (None, false) => TrainConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:ident) => {
            if let Some(v) = $flag {
                cfg.$field = v.into();
            }
        };
    }
    set!(a.alpha, alpha);
    set!(a.tau, temperature);
    set!(a.epochs, epochs);
    set!(a.batch, batch_size);
    set!(a.accum, grad_accum);
    set!(a.lr, learning_rate);
    set!(a.wd, weight_decay);
    set!(a.seed, seed);
    set!(a.mode, mode);
    set!(a.sampling, sampling);
    set!(a.dim, embed_dim);
    if a.hidden.is_some() {
        cfg.hidden_dim = a.hidden;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let cfg = train_config(&a)?;
    let ds = load_dataset(&a.data)?;
    log!("training on {} listings: {} epochs, batch {}, mode {:?}", ds.listings.len(), cfg.epochs, cfg.batch_size, cfg.mode);
    let started = Instant::now();
    let (enc, stats) = train(&ds.listings, &cfg)?;
    enc.save(&a.out)?;
    if let Some(p) = &a.stats {
        fs::write(p, stats.to_jsonl()).map_err(|e| io_failure(p, e))?;
    }
    emit(&json!({
        "model": a.out,
        "steps": stats.steps.len(),
        "final_loss": stats.steps.last().map(|s| s.loss),
        "epoch_losses": stats.epoch_losses,
        "rolling_draws": stats.rolling_draws,
        "seconds": started.elapsed().as_secs_f64(),
        "config": cfg,
    }));
    Ok(())
}

fn index_cmd(a: IndexArgs) -> CliResult {
    let ds = load_dataset(&a.data)?;
    let enc = load_model(&a.model)?;
    let scheme = fta::fusion::WeightScheme::new(a.alpha)?;
    let index = build_index(&ds.listings, &enc, scheme, a.modality.into(), a.views.into())?;
    save_index(&index, &a.out)?;
    log!("indexed {} listings", index.len());
    emit(&json!({
        "index": a.out,
        "entries": index.len(),
        "dim": index.dim(),
        "modality": fta::index::IndexModality::from(a.modality),
        "views": fta::index::IndexViews::from(a.views),
    }));
    Ok(())
}

fn parse_features(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Failure::new(EXIT_CONFIG, format!("bad query value {t:?}: {e}"))))
        .collect()
}

fn hits_json(hits: &[Hit]) -> Value {
    hits.iter().map(|h| json!({"id": h.id, "score": h.score})).collect()
}

fn search_cmd(a: SearchArgs) -> CliResult {
    if a.k == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--k must be positive"));
    }
    let index = load_index(&a.index)?;
    let enc = load_model(&a.model)?;
    let search = |features: &[f64]| -> CliResult<Vec<Hit>> {
        let q: Embedding<f64> = enc.text.encode(features)?;
        Ok(knn(&index, &q, a.k)?)
    };
    match (&a.query, &a.data) {
        (Some(text), _) => emit(&json!({"hits": hits_json(&search(&parse_features(text)?)?)})),
        (None, Some(dir)) => {
            let ds = load_dataset(dir)?;
            let take = a.limit.unwrap_or(ds.interactions.len());
            for (k, Interaction { query_features, clicked_id }) in ds.interactions.iter().take(take).enumerate() {
                emit(&json!({"query": k, "clicked_id": clicked_id, "hits": hits_json(&search(query_features)?)}));
            }
        }
        (None, None) => unreachable!("clap requires --query or --data"),
    }
    Ok(())
}

fn q2i(a: Q2iArgs) -> CliResult {
    if a.k.is_empty() || a.k[0] == 0 || a.k.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Failure::new(EXIT_CONFIG, format!("--k must be positive and strictly ascending, got {:?}", a.k)));
    }
    let mut index = load_index(&a.index)?;
    let enc = load_model(&a.model)?;
    let ds = load_dataset(&a.data)?;
    if a.by_category {
        // index files carry no categories
        index.attach_categories(&ds.listings);
    }
    let mut report = recall_at_k(&index, &enc.text, &ds.interactions, &a.k)?;
    if !a.by_category {
        report.per_category.clear();
    }
    emit(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn crossview(a: CrossviewArgs) -> CliResult {
    if a.k == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--k must be positive"));
    }
    let ds = load_dataset(&a.data)?;
    let enc = load_model(&a.model)?;
    let (source, target) = (fta::index::ViewRole::from(a.source), fta::index::ViewRole::from(a.target));
    let recall = cross_view_eval(&ds.listings, &enc, source, target, a.k)?;
    emit(&json!({
        "source": source.name(),
        "target": target.name(),
        "k": a.k,
        "recall": recall,
        "queries": ds.listings.len(),
    }));
    Ok(())
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> SimplexWeights<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - head;
    SimplexWeights::new(w).expect("normalized by construction")
}

fn random_views(rng: &mut ChaCha8Rng, count: usize, dim: usize, modality: Modality) -> fta::ViewSet64 {
    let views = (0..count)
        .map(|_| Embedding::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite"))
        .collect();
    ViewSet::new(views, modality).expect("non-empty, equal dims")
}

fn ot_check(a: OtCheckArgs) -> CliResult {
    if a.n == 0 || a.m == 0 || a.dim == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--n, --m and --dim must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (mut passed, mut min_gap, mut max_marginal_error) = (0usize, f64::INFINITY, 0.0f64);
    let mut failures = Vec::new();
    for trial in 0..a.trials {
        let (n, m) = (rng.random_range(1..=a.n), rng.random_range(1..=a.m));
        let images = random_views(&mut rng, n, a.dim, Modality::Image);
        let texts = random_views(&mut rng, m, a.dim, Modality::Text);
        let (w, v) = (random_simplex(&mut rng, n), random_simplex(&mut rng, m));
        let cost = negative_dot_cost(&images, &texts)?;
        let (plan, exact) = exact_ot(&w, &v, &cost)?;
        let factorized = coupling_cost(&factorized_coupling(&w, &v)?, &cost)?;
        let marginal_error = plan
            .row_sums()
            .iter()
            .zip(w.as_slice())
            .chain(plan.col_sums().iter().zip(v.as_slice()))
            .map(|(s, t)| (s - t).abs())
            .fold(0.0, f64::max);
        max_marginal_error = max_marginal_error.max(marginal_error);
        min_gap = min_gap.min(factorized - exact);
        if exact <= factorized + 1e-9 && marginal_error <= 1e-9 {
            passed += 1;
        } else {
            failures.push(json!({"trial": trial, "n": n, "m": m, "exact": exact, "factorized": factorized}));
        }
    }
    emit(&json!({
        "trials": a.trials,
        "passed": passed,
        "failed": a.trials - passed,
        "min_gap": if a.trials > 0 { json!(min_gap) } else { Value::Null },
        "max_marginal_error": max_marginal_error,
        "failures": failures,
    }));
    if passed == a.trials {
        Ok(())
    } else {
        Err(Failure::new(EXIT_PROPERTY, format!("{} of {} trials failed", a.trials - passed, a.trials)))
    }
}

fn bench(a: BenchArgs) -> CliResult {
    if a.views.is_empty() || a.views.contains(&0) {
        return Err(Failure::new(EXIT_CONFIG, "--views needs positive view counts"));
    }
    let data = SyntheticConfig { num_listings: a.batch * 2, raw_dim: 64, seed: a.seed, ..SyntheticConfig::default() };
    let cfg = TrainConfig { seed: a.seed, batch_size: a.batch, hidden_dim: Some(a.hidden).filter(|&h| h > 0), embed_dim: a.dim, ..TrainConfig::default() };
    log!("timing {} steps x {} rounds per view count", a.steps, a.rounds);
    let rows = bench_views(&a.views, &data, &cfg, a.steps, a.rounds)?;
    let times: Vec<f64> = rows.iter().map(|r| r.ms_per_step).collect();
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let max = times.iter().copied().fold(0.0, f64::max);
    let calls_equal = rows.iter().all(|r| r.fwd_calls_per_step == rows[0].fwd_calls_per_step);
    emit(&json!({
        "rows": rows,
        "spread": (max - min) / min,
        "fwd_calls_equal": calls_equal,
    }));
    if calls_equal {
        Ok(())
    } else {
        Err(Failure::new(EXIT_PROPERTY, "forward calls per step differ across view counts"))
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Index(a) => index_cmd(a),
        Command::Search(a) => search_cmd(a),
        Command::Eval(EvalCommand::Q2i(a)) => q2i(a),
        Command::Eval(EvalCommand::Crossview(a)) => crossview(a),
        Command::OtCheck(a) => ot_check(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    QUIET.store(cli.quiet, Ordering::Relaxed);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fta: error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
