use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use cac_core::augment::Augmenter;
use cac_core::cohort::{
    auto_time_cutoffs, encode_context, fit_context_encoder, greedy_site_selection, ingest_manifest, split_random,
    split_site, split_time, ContextRecord, SplitAssignment, Subset,
};
use cac_core::dsp::{load_and_normalize, AudioBuffer, Featurizer};
use cac_core::evaluation::{evaluate, label_noise_table, roc_csv, EvaluationReport, ModelColumn};
use cac_core::explain::{lime_explain, saliency, LimeConfig};
use cac_core::inference::{predict_cohort, predictions_to_jsonl, segment_waveform, ContextScorer, SampleScorer};
use cac_core::learner::{
    build_context_data, load_cough_data, train_context, train_cough, Checkpoint, TrainConfig, TrainTask,
};
use cac_core::synth::{write_corpus, SynthConfig};
use cac_core::tensor_file;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::scoring::{parse_context, resolve_checkpoints, score_request, Models};

#[derive(Debug, Parser)]
#[command(name = "cac", version, about = "Cough and context COVID screening pipeline")]
pub struct Cli {
    /// Seed for every random choice (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic burst-vs-noise corpus with a manifest.
    Synth(SynthArgs),
    /// Compute unscaled log-mel segment tensors for every recording.
    Featurize(FeaturizeArgs),
    /// Assign individuals to train/validation/test.
    Split(SplitArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Score a split subset and print the AUC report.
    Evaluate(EvaluateArgs),
    /// Saliency maps and context attributions for chosen individuals.
    Explain(ExplainArgs),
    /// Posterior label-noise rates of an imperfect lab test.
    LabelNoise(LabelNoiseArgs),
    /// Run the HTTP scoring service.
    Serve(ServeArgs),
    /// Score one individual's files exactly as the service would.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub individuals: usize,
    #[arg(long, default_value_t = 0.5)]
    pub positive_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub recordings: usize,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Strategy {
    Random,
    Time,
    Site,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    /// Train,validation,test fractions for the random strategy.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub ratios: Vec<f64>,
    /// First validation date (time strategy).
    #[arg(long)]
    pub cutoff_val: Option<NaiveDate>,
    /// First test date (time strategy).
    #[arg(long)]
    pub cutoff_test: Option<NaiveDate>,
    /// Explicit test sites (site strategy).
    #[arg(long, value_delimiter = ',')]
    pub test_sites: Vec<String>,
    /// Validation share for the time and site strategies.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Test share when cutoffs or sites are chosen automatically.
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainKind {
    Cough,
    Context,
    PretrainCough,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub kind: TrainKind,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Warm-start cough weights (e.g. from `pretrain-cough`).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Directory of background-noise WAVs for noise mixing.
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Hidden width for the context model (linear when unset).
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "test")]
    pub subset: Subset,
    #[arg(long)]
    pub cough: Option<PathBuf>,
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// Column label in the report; defaults to the split strategy.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<String>,
    #[arg(long)]
    pub cough: Option<PathBuf>,
    #[arg(long)]
    pub context: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub target_class: usize,
}

#[derive(Debug, Args)]
pub struct LabelNoiseArgs {
    #[arg(long)]
    pub sn: f64,
    #[arg(long)]
    pub sp: f64,
    #[arg(long)]
    pub prevalence: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub cough: Option<PathBuf>,
    #[arg(long)]
    pub context: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Maximum concurrent scoring jobs; defaults to the CPU count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Append request metadata (never audio) as JSON lines.
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub cough: Option<PathBuf>,
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// Up to three WAV files.
    #[arg(long = "audio")]
    pub audio: Vec<PathBuf>,
    /// JSON file holding a context block.
    #[arg(long)]
    pub context_json: Option<PathBuf>,
    #[arg(long)]
    pub request_id: Option<String>,
}

struct Ctx {
    seed: u64,
    config: RunConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out_dir(&self) -> anyhow::Result<&Path> {
        let dir = self.out.as_deref().context("--out <DIR> is required")?;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn out_file(&self) -> anyhow::Result<&Path> {
        let p = self.out.as_deref().context("--out <FILE> is required")?;
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    /// Writes to `--out` when given, otherwise prints.
    fn emit(&self, text: &str) -> anyhow::Result<()> {
        match &self.out {
            Some(_) => std::fs::write(self.out_file()?, text)?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        config,
        out: cli.out,
    };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Featurize(a) => featurize(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Explain(a) => explain(&ctx, a),
        Command::LabelNoise(a) => label_noise(&ctx, a),
        Command::Serve(a) => serve(a),
        Command::Score(a) => score(&ctx, a),
    }
}

fn synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    ensure!(a.recordings >= 1, "--recordings must be at least 1");
    let cfg = SynthConfig {
        individuals: a.individuals,
        positive_fraction: a.positive_fraction,
        recordings_per_individual: (a.recordings, a.recordings),
        seed: ctx.seed,
        ..SynthConfig::default()
    };
    let dir = ctx.out_dir()?;
    let corpus = write_corpus(dir, &cfg)?;
    println!(
        "wrote {} individuals, {} recordings to {}",
        corpus.cohort.len(),
        corpus.events.len(),
        dir.display()
    );
    Ok(())
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn featurize(ctx: &Ctx, a: FeaturizeArgs) -> anyhow::Result<()> {
    let cohort = ingest_manifest(&a.manifest)?;
    let fc = ctx.config.feature_config();
    let featurizer = Featurizer::new(fc)?;
    let dir = ctx.out_dir()?;
    let mut index = String::new();
    for rec in &cohort.records {
        for (k, path) in cohort.sample_paths(rec).iter().enumerate() {
            let buf = load_and_normalize(path)?;
            let segs = segment_waveform(&buf, &fc);
            let mut data = Vec::new();
            for seg in &segs {
                data.extend(featurizer.log_mel(seg)?.values);
            }
            let (mels, frames) = fc.patch_shape();
            let name = format!("{}_{k}.cten", safe_name(&rec.individual_id));
            tensor_file::write(dir.join(&name), &[segs.len() as u64, mels as u64, frames as u64], &data)?;
            index.push_str(&serde_json::to_string(&serde_json::json!({
                "individual_id": rec.individual_id,
                "sample": rec.cough_sample_paths[k],
                "tensor": name,
                "segments": segs.len(),
            }))?);
            index.push('\n');
        }
    }
    std::fs::write(dir.join("index.jsonl"), index)?;
    println!("featurized {} individuals into {}", cohort.len(), dir.display());
    Ok(())
}

fn split(ctx: &Ctx, a: SplitArgs) -> anyhow::Result<()> {
    let cohort = ingest_manifest(&a.manifest)?;
    let assignment = match a.strategy {
        Strategy::Random => {
            let r: [f64; 3] = a
                .ratios
                .as_slice()
                .try_into()
                .map_err(|_| anyhow::anyhow!("--ratios needs exactly three values"))?;
            split_random(&cohort, r, ctx.seed)?
        }
        Strategy::Time => {
            let (v, t) = match (a.cutoff_val, a.cutoff_test) {
                (Some(v), Some(t)) => (v, t),
                (None, None) => auto_time_cutoffs(&cohort, a.val_fraction, a.test_fraction)?,
                _ => bail!("give both --cutoff-val and --cutoff-test, or neither"),
            };
            split_time(&cohort, v, t)?
        }
        Strategy::Site => {
            let sites: BTreeSet<String> = if a.test_sites.is_empty() {
                greedy_site_selection(&cohort, a.test_fraction)
            } else {
                a.test_sites.iter().cloned().collect()
            };
            split_site(&cohort, &sites, a.val_fraction, ctx.seed)?
        }
    };
    let [tr, va, te] = assignment.sizes();
    eprintln!("train {tr}, validation {va}, test {te}");
    ctx.emit(&assignment.to_json())
}

fn read_split(path: &Path) -> anyhow::Result<SplitAssignment> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SplitAssignment::from_json(&text).with_context(|| format!("parsing split {}", path.display()))
}

fn load_noise_dir(dir: &Path) -> anyhow::Result<Vec<AudioBuffer>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no .wav files in {}", dir.display());
    paths.iter().map(|p| Ok(load_and_normalize(p)?)).collect()
}

fn train(ctx: &Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let cohort = ingest_manifest(&a.manifest)?;
    let split = read_split(&a.split)?;
    let out = ctx.out_file()?.to_path_buf();
    let flags = |mut cfg: TrainConfig| {
        cfg.seed = ctx.seed;
        if let Some(v) = a.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = a.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = a.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = a.patience {
            cfg.patience = Some(v);
        }
        cfg
    };
    let (ckpt, outcome) = match a.kind {
        TrainKind::Cough | TrainKind::PretrainCough => {
            let cfg = flags(ctx.config.cough.apply(TrainConfig::cough_default()));
            let mut augmenter = Augmenter {
                noise: ctx.config.augment.noise.unwrap_or_default(),
                mask: ctx.config.augment.mask.unwrap_or_default(),
                noise_bank: Vec::new(),
            };
            if let Some(dir) = &a.noise_dir {
                augmenter.noise_bank = load_noise_dir(dir)?;
            }
            let init = a
                .init
                .as_deref()
                .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?
                .map(|c| c.network);
            let task = if a.kind == TrainKind::Cough {
                TrainTask::CovidCough
            } else {
                TrainTask::CoughPretrain
            };
            let data = load_cough_data(&cohort, &split)?;
            train_cough(&cfg, &data, ctx.config.feature_config(), &augmenter, init, task)?
        }
        TrainKind::Context => {
            ensure!(a.init.is_none(), "--init applies to cough models only");
            let cfg = flags(ctx.config.context.apply(TrainConfig::context_default()));
            let train: Vec<ContextRecord> =
                split.members(&cohort, Subset::Train).iter().map(|r| r.context.clone()).collect();
            let encoder = fit_context_encoder(&train)?;
            let data = build_context_data(&cohort, &split, &encoder);
            train_context(&cfg, &data, &encoder, a.hidden.or(ctx.config.context_hidden))?
        }
    };
    ckpt.save(&out)?;
    println!(
        "best epoch {} of {}: validation AUC {:.4}; wrote {} ({})",
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val_auc,
        out.display(),
        ckpt.version_id()
    );
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx, a: EvaluateArgs) -> anyhow::Result<()> {
    let cohort = ingest_manifest(&a.manifest)?;
    let split = read_split(&a.split)?;
    let (cough_path, context_path) = resolve_checkpoints(a.cough, a.context);
    let models = Models::load(cough_path.as_deref(), context_path.as_deref())?;
    let cough = models.cough.as_ref().map(|c| &c.0 as &dyn SampleScorer);
    let context = models.context.as_ref().map(|c| &c.0 as &dyn ContextScorer);
    let preds = predict_cohort(cough, context, &cohort, &split, a.subset);
    let name = a.name.unwrap_or_else(|| format!("{:?}", split.strategy).to_lowercase());
    let report = evaluate(&name, &preds);
    print!("{}", EvaluationReport::render_table(std::slice::from_ref(&report)));
    if ctx.out.is_some() {
        let dir = ctx.out_dir()?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        std::fs::write(dir.join("predictions.jsonl"), predictions_to_jsonl(&preds))?;
        for m in ModelColumn::ALL {
            if let Ok(csv) = roc_csv(&preds, m) {
                std::fs::write(dir.join(format!("roc_{}.csv", format!("{m:?}").to_lowercase())), csv)?;
            }
        }
    }
    Ok(())
}

fn explain(ctx: &Ctx, a: ExplainArgs) -> anyhow::Result<()> {
    let cohort = ingest_manifest(&a.manifest)?;
    let (cough_path, context_path) = resolve_checkpoints(a.cough, a.context);
    let models = Models::load(cough_path.as_deref(), context_path.as_deref())?;
    let dir = ctx.out_dir()?;
    let lime_cfg = LimeConfig {
        seed: ctx.seed,
        ..ctx.config.lime.unwrap_or_default()
    };
    for id in &a.ids {
        let rec = cohort.get(id).with_context(|| format!("individual {id} not in manifest"))?;
        let stem = safe_name(id);
        if let Some((m, _)) = &models.cough {
            for (k, path) in cohort.sample_paths(rec).iter().enumerate() {
                let buf = load_and_normalize(path)?;
                for (s, seg) in segment_waveform(&buf, m.featurizer.config()).iter().enumerate() {
                    let patch = m.featurizer.featurize(seg)?;
                    let map = saliency(&m.net, &patch, a.target_class)?;
                    let t = map.to_tensor();
                    tensor_file::write(dir.join(format!("{stem}_{k}_{s}_saliency.cten")), &t.dims, &t.data)?;
                    std::fs::write(dir.join(format!("{stem}_{k}_{s}_saliency.pgm")), map.to_pgm())?;
                }
            }
        }
        if let Some((m, _)) = &models.context {
            let x = encode_context(&rec.context, &m.encoder);
            let attr = lime_explain(m, &x, &m.encoder, &lime_cfg)?;
            std::fs::write(
                dir.join(format!("{stem}_lime.json")),
                serde_json::to_string_pretty(&attr.to_json())?,
            )?;
            println!("{id}: surrogate R² {:.3}", attr.fidelity_r2);
            for (f, w) in attr.ranked().iter().take(5) {
                println!("  {f:<20} {w:+.4}");
            }
        }
    }
    Ok(())
}

fn label_noise(ctx: &Ctx, a: LabelNoiseArgs) -> anyhow::Result<()> {
    let table = label_noise_table(a.sn, a.sp, a.prevalence)?;
    print!("{}", table.render());
    if ctx.out.is_some() {
        std::fs::write(ctx.out_file()?, serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let (cough, context) = resolve_checkpoints(a.cough, a.context);
    ensure!(
        cough.is_some() || context.is_some(),
        "no checkpoints: pass --cough/--context or set {}",
        crate::scoring::MODEL_DIR_ENV
    );
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::service::serve(a.bind, cough, context, workers, a.audit_log))
}

fn score(ctx: &Ctx, a: ScoreArgs) -> anyhow::Result<()> {
    let (cough, context) = resolve_checkpoints(a.cough, a.context);
    let models = Models::load(cough.as_deref(), context.as_deref())?;
    let audio = a
        .audio
        .iter()
        .map(|p| std::fs::read(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let context = a
        .context_json
        .as_deref()
        .map(|p| -> anyhow::Result<_> { Ok(parse_context(&std::fs::read_to_string(p)?)?) })
        .transpose()?;
    let resp = score_request(&models, &audio, context.as_ref(), a.request_id)?;
    ctx.emit(&format!("{}\n", serde_json::to_string_pretty(&resp)?))
}
