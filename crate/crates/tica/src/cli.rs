//! Command-line interface: dataset generation, training, adaptation,
//! evaluation and the method-comparison matrix.
//!
//! Every command is deterministic given its config and seeds, and every
//! artifact embeds the resolved configuration hash.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::adapt::{
    adapt, adapt_with_hook, train_supervised, AdaptConfig, AdaptMode, Method, TrainConfig,
};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{load_dataset, write_benchmark, SamplePair};
use crate::losses::{KlMode, LossWeights};
use crate::metrics::evaluate;
use crate::model::SegModel;
use crate::optim::UpdateScope;
use crate::Real;

/// Environment variable overriding the output root directory.
pub const OUT_DIR_ENV: &str = "TICA_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "tica",
    about = "Shadow segmentation with test-time intensity consistency adaptation",
    version
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (overrides config and the TICA_OUT_DIR variable).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic benchmark dataset on disk.
    GenData(GenDataArgs),
    /// Train the segmentation model on the train split.
    Train(TrainArgs),
    /// Adapt a trained checkpoint on the (unlabeled) test split.
    Adapt(AdaptArgs),
    /// Evaluate a checkpoint on the labeled test split.
    Eval(EvalArgs),
    /// Run an adapt+eval matrix over methods and seeds.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Dataset root to write (defaults to the config's data_dir).
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub shift_gain: Option<f64>,
    #[arg(long)]
    pub shift_gamma: Option<f64>,
    /// Attenuation range as `lo,hi`.
    #[arg(long)]
    pub attenuation: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root containing `train/`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue training from an existing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Trained checkpoint to start from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root containing `test/`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Adapted checkpoint path to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One of: none, tica, tent, bn, eta.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_fg: Option<f64>,
    #[arg(long)]
    pub lambda_bg: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Update scope: all, encoder, norm_affine.
    #[arg(long)]
    pub scope: Option<String>,
    /// KL direction: sym, fwd, rev.
    #[arg(long)]
    pub kl_mode: Option<String>,
    /// Adaptation mode: continual, episodic.
    #[arg(long)]
    pub mode: Option<String>,
    /// Normalize with frozen running statistics during adaptation.
    #[arg(long)]
    pub eval_stats: bool,
    #[arg(long)]
    pub eta_entropy_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report path to write (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Directory for prediction/mask PNG dumps.
    #[arg(long)]
    pub dump_masks: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Comma-separated methods from {none, fc-only, bc-only, tica, tent, bn, eta}.
    #[arg(long, default_value = "none,tica,tent,bn,eta")]
    pub methods: String,
    /// Comma-separated adaptation seeds.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Trained checkpoint; without it, a model is trained per seed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Evaluate after every adaptation epoch up to this many epochs.
    #[arg(long)]
    pub epoch_sweep: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Output basename; writes `<out>.json` and `<out>.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Method column of the comparison matrix; fc-only / bc-only are tica with
/// degenerate weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodSpec {
    Plain(Method),
    FcOnly,
    BcOnly,
}

impl MethodSpec {
    pub fn parse(s: &str) -> Option<MethodSpec> {
        match s {
            "fc-only" | "fc_only" | "fc" => Some(MethodSpec::FcOnly),
            "bc-only" | "bc_only" | "bc" => Some(MethodSpec::BcOnly),
            other => Method::parse(other).map(MethodSpec::Plain),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MethodSpec::Plain(m) => m.as_str(),
            MethodSpec::FcOnly => "fc-only",
            MethodSpec::BcOnly => "bc-only",
        }
    }

    /// The adapt config this column runs with.
    pub fn apply(&self, base: &AdaptConfig) -> AdaptConfig {
        match self {
            MethodSpec::Plain(m) => AdaptConfig { method: *m, ..base.clone() },
            MethodSpec::FcOnly => AdaptConfig {
                method: Method::Tica,
                weights: LossWeights { lambda_fg: base.weights.lambda_fg.max(1e-12), lambda_bg: 0.0 },
                ..base.clone()
            },
            MethodSpec::BcOnly => AdaptConfig {
                method: Method::Tica,
                weights: LossWeights { lambda_fg: 0.0, lambda_bg: base.weights.lambda_bg.max(1e-12) },
                ..base.clone()
            },
        }
    }
}

/// One cell of the comparison matrix.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub seed: u64,
    pub ber_before: f64,
    pub ber_after: f64,
    pub relative_reduction: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_curve: Vec<f64>,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    pub config_hash: String,
    pub config: serde_json::Value,
}

fn resolve_out_dir(cli_flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = cli_flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(OUT_DIR_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    cfg.out_dir.clone()
}

fn load_split(cfg: &RunConfig, data: Option<&Path>, split: &str) -> anyhow::Result<Vec<SamplePair<Real>>> {
    let root = data.map(Path::to_path_buf).unwrap_or_else(|| cfg.data_dir.clone());
    let dir = root.join(split);
    load_dataset::<Real>(&dir, cfg.model.input_size, cfg.channels)
        .with_context(|| format!("loading {} split from {}", split, dir.display()))
}

fn metadata(cfg: &RunConfig, extra: serde_json::Value) -> serde_json::Value {
    let mut v = serde_json::json!({
        "config_hash": cfg.hash(),
        "config": cfg.as_json(),
    });
    if let (Some(obj), Some(extra_obj)) = (v.as_object_mut(), extra.as_object()) {
        for (k, val) in extra_obj {
            obj.insert(k.clone(), val.clone());
        }
    }
    v
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Sidecar next to a checkpoint recording training progress; lets `--resume`
/// continue the step counter.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
struct TrainSidecar {
    start_step: usize,
    steps: usize,
    epoch_losses: Vec<f64>,
    config_hash: String,
}

fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut p = ckpt.as_os_str().to_owned();
    p.push(".train.json");
    PathBuf::from(p)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.out_dir = resolve_out_dir(cli.out_dir.as_deref(), &cfg);
    match cli.cmd {
        Command::GenData(args) => cmd_gen_data(cfg, args),
        Command::Train(args) => cmd_train(cfg, args),
        Command::Adapt(args) => cmd_adapt(cfg, args),
        Command::Eval(args) => cmd_eval(cfg, args),
        Command::Compare(args) => cmd_compare(cfg, args),
    }
}

pub fn cmd_gen_data(mut cfg: RunConfig, args: GenDataArgs) -> anyhow::Result<()> {
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
    }
    if let Some(n) = args.train_count {
        cfg.synth.train_count = n;
    }
    if let Some(n) = args.test_count {
        cfg.synth.test_count = n;
    }
    if let Some(g) = args.shift_gain {
        cfg.synth.shift_gain = g;
    }
    if let Some(g) = args.shift_gamma {
        cfg.synth.shift_gamma = g;
    }
    if let Some(spec) = &args.attenuation {
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != 2 {
            bail!("--attenuation expects `lo,hi`");
        }
        cfg.synth.attenuation = (parts[0].trim().parse()?, parts[1].trim().parse()?);
    }
    let root = args.root.unwrap_or_else(|| cfg.data_dir.clone());
    let manifest = write_benchmark::<Real>(&cfg.synth, &root)?;
    println!(
        "wrote {} train / {} test samples to {}",
        manifest.train_count,
        manifest.test_count,
        root.display()
    );
    println!("train digest {}", manifest.train_digest);
    println!("test digest  {}", manifest.test_digest);
    Ok(())
}

pub fn cmd_train(mut cfg: RunConfig, args: TrainArgs) -> anyhow::Result<()> {
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    let train_set = load_split(&cfg, args.data.as_deref(), "train")?;

    let (mut model, start_step) = match &args.resume {
        Some(path) => {
            let model = checkpoint::load::<Real>(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            let side = fs::read_to_string(sidecar_path(path))
                .ok()
                .and_then(|s| serde_json::from_str::<TrainSidecar>(&s).ok())
                .unwrap_or_default();
            (model, side.start_step + side.steps)
        }
        None => (SegModel::<Real>::new(cfg.model.clone(), cfg.seed)?, 0),
    };

    let report = train_supervised(&mut model, &train_set, &cfg.train)?;
    let out = args
        .out
        .unwrap_or_else(|| cfg.out_dir.join("trained.ckpt"));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    checkpoint::save(&model, &out)?;
    let sidecar = TrainSidecar {
        start_step,
        steps: report.steps,
        epoch_losses: report.epoch_losses.clone(),
        config_hash: cfg.hash(),
    };
    write_json(&sidecar_path(&out), &sidecar)?;
    println!(
        "trained {} epochs ({} steps, counter at {}); final epoch loss {:.4}; wrote {}",
        cfg.train.epochs,
        report.steps,
        start_step + report.steps,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn apply_adapt_overrides(cfg: &mut RunConfig, args: &AdaptArgs) -> anyhow::Result<()> {
    if let Some(m) = &args.method {
        cfg.adapt.method =
            Method::parse(m).ok_or_else(|| anyhow::anyhow!("unknown method `{m}`"))?;
    }
    if let Some(e) = args.epochs {
        cfg.adapt.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.adapt.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.adapt.lr = lr;
    }
    if let Some(l) = args.lambda_fg {
        cfg.adapt.weights.lambda_fg = l;
    }
    if let Some(l) = args.lambda_bg {
        cfg.adapt.weights.lambda_bg = l;
    }
    if let Some(t) = args.threshold {
        cfg.adapt.threshold = t;
    }
    if let Some(s) = &args.scope {
        cfg.adapt.update_scope = match s.as_str() {
            "all" => UpdateScope::All,
            "encoder" => UpdateScope::Encoder,
            "norm_affine" | "norm-affine" => UpdateScope::NormAffine,
            other => bail!("unknown scope `{other}`"),
        };
    }
    if let Some(k) = &args.kl_mode {
        cfg.adapt.kl_mode = match k.as_str() {
            "sym" => KlMode::Sym,
            "fwd" => KlMode::Fwd,
            "rev" => KlMode::Rev,
            other => bail!("unknown kl mode `{other}`"),
        };
    }
    if let Some(m) = &args.mode {
        cfg.adapt.mode = match m.as_str() {
            "continual" => AdaptMode::Continual,
            "episodic" => AdaptMode::Episodic,
            other => bail!("unknown adaptation mode `{other}`"),
        };
    }
    if args.eval_stats {
        cfg.adapt.eval_stats = true;
    }
    if let Some(t) = args.eta_entropy_threshold {
        cfg.adapt.eta_entropy_threshold = t;
    }
    if let Some(s) = args.seed {
        cfg.adapt.seed = s;
    }
    Ok(())
}

pub fn cmd_adapt(mut cfg: RunConfig, args: AdaptArgs) -> anyhow::Result<()> {
    apply_adapt_overrides(&mut cfg, &args)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("adapted-{}.ckpt", cfg.adapt.method.as_str())));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }

    let mut model = checkpoint::load::<Real>(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;

    if cfg.adapt.method == Method::None {
        // baseline row: the adapted checkpoint is the input checkpoint
        checkpoint::save(&model, &out)?;
        println!("method none: copied checkpoint to {}", out.display());
        return Ok(());
    }

    let test_set = load_split(&cfg, args.data.as_deref(), "test")?;
    let images: Vec<_> = test_set.iter().map(|s| s.image.clone()).collect();
    let report = adapt(&mut model, &images, &cfg.adapt)?;
    checkpoint::save(&model, &out)?;

    let trace_path = out.with_extension("trace.jsonl");
    let mut lines = String::new();
    for rec in &report.trace {
        lines.push_str(&serde_json::to_string(rec)?);
        lines.push('\n');
    }
    fs::write(&trace_path, lines)?;
    println!(
        "adapted with {} for {} epochs over {} images; wrote {} and {}",
        cfg.adapt.method.as_str(),
        cfg.adapt.epochs,
        images.len(),
        out.display(),
        trace_path.display()
    );
    Ok(())
}

pub fn cmd_eval(mut cfg: RunConfig, args: EvalArgs) -> anyhow::Result<()> {
    if let Some(t) = args.threshold {
        cfg.adapt.threshold = t;
    }
    let test_set = load_split(&cfg, args.data.as_deref(), "test")?;
    let mut model = checkpoint::load::<Real>(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let mut report = evaluate(&mut model, &test_set, cfg.adapt.threshold as Real)?;
    report.metadata = metadata(
        &cfg,
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "threshold": cfg.adapt.threshold,
        }),
    );

    if let Some(dump) = &args.dump_masks {
        dump_predictions(&mut model, &test_set, cfg.adapt.threshold as Real, dump)?;
    }

    let out = args.out.unwrap_or_else(|| cfg.out_dir.join("ber_report.json"));
    write_json(&out, &report)?;
    println!(
        "BER {:.4} (shadow {:.4} / non-shadow {:.4}) over {} pixels; wrote {}",
        report.ber * 100.0,
        report.ber_shadow * 100.0,
        report.ber_nonshadow * 100.0,
        report.counts.total(),
        out.display()
    );
    Ok(())
}

fn dump_predictions(
    model: &mut SegModel<Real>,
    test_set: &[SamplePair<Real>],
    threshold: Real,
    dir: &Path,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    for sample in test_set {
        let pred = model.predict(&sample.image)?;
        let (h, w) = pred.dim();
        let mut prob_img = image::GrayImage::new(w as u32, h as u32);
        let mut mask_img = image::GrayImage::new(w as u32, h as u32);
        for ((r, c), &p) in pred.indexed_iter() {
            let byte = (f64::from(p).clamp(0.0, 1.0) * 255.0).round() as u8;
            prob_img.put_pixel(c as u32, r as u32, image::Luma([byte]));
            let m = if p >= threshold { 255u8 } else { 0 };
            mask_img.put_pixel(c as u32, r as u32, image::Luma([m]));
        }
        prob_img.save(dir.join(format!("{}_prob.png", sample.id)))?;
        mask_img.save(dir.join(format!("{}_mask.png", sample.id)))?;
    }
    Ok(())
}

/// Library entry point behind `tica compare`; returns the table so tests can
/// drive it directly.
pub fn run_compare(cfg: &RunConfig, args: &CompareArgs) -> anyhow::Result<CompareTable> {
    let mut specs = Vec::new();
    for name in args.methods.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let spec = MethodSpec::parse(name)
            .ok_or_else(|| anyhow::anyhow!("unknown method `{name}`"))?;
        if specs.contains(&spec) {
            eprintln!("warning: duplicate method `{name}` ignored");
            continue;
        }
        specs.push(spec);
    }
    if specs.is_empty() {
        bail!("no methods requested");
    }
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|e| anyhow::anyhow!("bad seed `{s}`: {e}")))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        bail!("no seeds requested");
    }

    let mut base_adapt = cfg.adapt.clone();
    if let Some(e) = args.epochs {
        base_adapt.epochs = e;
    }
    if let Some(lr) = args.lr {
        base_adapt.lr = lr;
    }

    let test_set = load_split(cfg, args.data.as_deref(), "test")?;
    let images: Vec<_> = test_set.iter().map(|s| s.image.clone()).collect();
    let threshold = base_adapt.threshold as Real;

    let shared = match &args.checkpoint {
        Some(path) => Some(
            checkpoint::load::<Real>(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?,
        ),
        None => None,
    };

    let mut rows = Vec::new();
    for &seed in &seeds {
        // one starting model per seed: shared checkpoint, or trained fresh
        let base_model = match &shared {
            Some(m) => m.clone(),
            None => {
                let train_set = load_split(cfg, args.data.as_deref(), "train")?;
                let mut model = SegModel::<Real>::new(cfg.model.clone(), seed)?;
                let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
                train_supervised(&mut model, &train_set, &train_cfg)?;
                model
            }
        };
        let mut eval_model = base_model.clone();
        let ber_before = evaluate(&mut eval_model, &test_set, threshold)?.ber;

        for spec in &specs {
            let adapt_cfg = spec.apply(&AdaptConfig { seed, ..base_adapt.clone() });
            let mut model = base_model.clone();
            let mut epoch_curve = Vec::new();
            match (args.epoch_sweep, adapt_cfg.method) {
                (Some(sweep), Method::Tica | Method::Tent | Method::Eta) => {
                    let sweep_cfg = AdaptConfig { epochs: sweep, ..adapt_cfg.clone() };
                    let test_ref = &test_set;
                    let mut curve_err = None;
                    adapt_with_hook(&mut model, &images, &sweep_cfg, |_, m| {
                        match evaluate(m, test_ref, threshold) {
                            Ok(rep) => epoch_curve.push(rep.ber),
                            Err(e) => curve_err = Some(e),
                        }
                    })?;
                    if let Some(e) = curve_err {
                        return Err(e.into());
                    }
                }
                _ => {
                    adapt(&mut model, &images, &adapt_cfg)?;
                }
            }
            let ber_after = evaluate(&mut model, &test_set, threshold)?.ber;
            let relative_reduction = if ber_before > 0.0 {
                (ber_before - ber_after) / ber_before
            } else {
                0.0
            };
            rows.push(CompareRow {
                method: spec.label().to_string(),
                seed,
                ber_before,
                ber_after,
                relative_reduction,
                epoch_curve: epoch_curve.clone(),
            });
        }
    }

    Ok(CompareTable {
        rows,
        config_hash: cfg.hash(),
        config: cfg.as_json(),
    })
}

/// Render the aligned plain-text table.
pub fn render_table(table: &CompareTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>6} {:>12} {:>12} {:>8}\n",
        "method", "seed", "BERx100 pre", "BERx100 post", "red%"
    ));
    for row in &table.rows {
        out.push_str(&format!(
            "{:<10} {:>6} {:>12.3} {:>12.3} {:>8.1}\n",
            row.method,
            row.seed,
            row.ber_before * 100.0,
            row.ber_after * 100.0,
            row.relative_reduction * 100.0
        ));
    }
    out
}

pub fn cmd_compare(cfg: RunConfig, args: CompareArgs) -> anyhow::Result<()> {
    let table = run_compare(&cfg, &args)?;
    let base = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("compare"));
    if let Some(parent) = base.parent() {
        fs::create_dir_all(parent)?;
    }
    let json_path = base.with_extension("json");
    let txt_path = base.with_extension("txt");
    write_json(&json_path, &table)?;
    let text = render_table(&table);
    fs::write(&txt_path, &text)?;
    print!("{text}");
    println!("wrote {} and {}", json_path.display(), txt_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_specs_parse() {
        assert_eq!(MethodSpec::parse("tica"), Some(MethodSpec::Plain(Method::Tica)));
        assert_eq!(MethodSpec::parse("fc-only"), Some(MethodSpec::FcOnly));
        assert_eq!(MethodSpec::parse("bc_only"), Some(MethodSpec::BcOnly));
        assert_eq!(MethodSpec::parse("nope"), None);
    }

    #[test]
    fn fc_only_zeroes_background_weight() {
        let base = AdaptConfig::default();
        let fc = MethodSpec::FcOnly.apply(&base);
        assert_eq!(fc.weights.lambda_bg, 0.0);
        assert!(fc.weights.lambda_fg > 0.0);
        let bc = MethodSpec::BcOnly.apply(&base);
        assert_eq!(bc.weights.lambda_fg, 0.0);
        assert!(bc.weights.lambda_bg > 0.0);
    }
}
