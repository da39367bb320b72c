use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use varigrad_core::datasets::{self, LabeledDataset, ShapeKind, SyntheticSpec, VariantKind};
use varigrad_core::geometry::{read_shape, write_jsonl};
use varigrad_core::nn::io::{load_model, save_model};
use varigrad_core::nn::{
    evaluate_dataset, train_autoencoder, train_classifier, EncoderKind, Model, ModelConfig, Task, TrainConfig,
};
use varigrad_core::varifold::{self, check_grad, default_kernel, lift_clamped};
use varigrad_core::varigrad::{raw_feature, Template};
use varigrad_core::{ConvConfig, ShapeGraph};

use crate::args::*;
use crate::manifest::{write_atomic, write_json, RunManifest};

/// A numerical check ran and did not meet its tolerance (exit code 2).
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

/// A flag combination that cannot be run (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Invariance(a) => invariance(&a),
        Command::Featurize(a) => featurize(&a),
    }
}

fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let bytes = fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    LabeledDataset::from_jsonl(&bytes).with_context(|| format!("parsing dataset {}", path.display()))
}

fn config_of<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("flags serialize")
}

fn gen(a: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        kind: match a.kind {
            Kind::Curve => ShapeKind::Curve,
            Kind::Stickfigure => ShapeKind::StickFigure,
        },
        class_count: a.classes,
        samples_per_class: a.per_class,
        vertex_range: (a.vmin, a.vmax),
        noise_scale: a.noise,
        rng_seed: a.seed,
    };
    RunManifest::new("gen", config_of(a), a.seed, &["train.jsonl", "test.jsonl"]).write(&a.out)?;
    let ds = datasets::generate(&spec)?;
    let (train, test) = datasets::split(&ds, a.test_fraction, a.seed)?;
    write_atomic(&a.out.join("train.jsonl"), &train.to_jsonl())?;
    write_atomic(&a.out.join("test.jsonl"), &test.to_jsonl())?;
    eprintln!("wrote {} train and {} test shapes to {}", train.len(), test.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct PairReport {
    index: usize,
    vertices: [usize; 2],
    max_rel_err: f64,
    max_abs_err: f64,
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(a.h > 0.0) || !(a.tol > 0.0) || a.vmin < 2 || a.vmin > a.vmax {
        return Err(usage("need h > 0, tol > 0 and 2 <= vmin <= vmax"));
    }
    RunManifest::new("gradcheck", config_of(a), a.seed, &["gradcheck.json"]).write(&a.out)?;
    let start = Instant::now();
    let pairs = (0..a.n)
        .map(|i| {
            let (g1, g2) = datasets::random_shape_pair(a.seed, i, (a.vmin, a.vmax))?;
            let k = default_kernel(&g1, a.sigma_ratio)?;
            let r = check_grad(&g1, &g2, &k, a.h)?;
            Ok(PairReport {
                index: i,
                vertices: [g1.vertex_count(), g2.vertex_count()],
                max_rel_err: r.max_rel_err,
                max_abs_err: r.max_abs_err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = pairs
        .iter()
        .max_by(|x, y| x.max_rel_err.total_cmp(&y.max_rel_err))
        .expect("n >= 1");
    let passed = worst.max_rel_err <= a.tol;
    write_json(
        &a.out.join("gradcheck.json"),
        &json!({
            "manifest": "gradcheck.manifest.json",
            "n": a.n,
            "h": a.h,
            "tol": a.tol,
            "max_rel_err": worst.max_rel_err,
            "worst_pair": worst.index,
            "passed": passed,
            "pairs": pairs,
        }),
    )?;
    eprintln!(
        "max relative error {:e} over {} pairs (worst pair {}), {:.2}s",
        worst.max_rel_err,
        a.n,
        worst.index,
        start.elapsed().as_secs_f64()
    );
    if !passed {
        return Err(NumericalFailure(format!("max relative error {:e} exceeds tolerance {:e}", worst.max_rel_err, a.tol)).into());
    }
    Ok(())
}

fn pick_template(a: &TemplateArgs, train: &LabeledDataset, seed: u64) -> Result<ShapeGraph> {
    if let Some(path) = &a.template {
        let bytes = fs::read(path).with_context(|| format!("reading template {}", path.display()))?;
        return read_shape(&bytes).with_context(|| format!("parsing template {}", path.display()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let &i = order
        .get(a.template_index)
        .ok_or_else(|| usage(format!("--template-index {} but only {} training shapes", a.template_index, train.len())))?;
    Ok(train.shapes[i].clone().with_label(None))
}

fn train(a: &TrainArgs) -> Result<()> {
    let train = read_dataset(&a.train)?;
    let test = a.test.as_deref().map(read_dataset).transpose()?;
    if train.is_empty() {
        return Err(varigrad_core::Error::EmptyDataset.into());
    }
    let template = pick_template(&a.template, &train, a.seed)?;
    let task = match a.task {
        TaskArg::Classifier => Task::Classifier,
        TaskArg::Autoencoder => Task::Autoencoder,
    };
    let encoder = match a.encoder {
        EncoderArg::Varigrad => EncoderKind::VariGrad,
        EncoderArg::Pointnet => EncoderKind::PointNet,
    };
    let mut config = ModelConfig::new(task, encoder);
    config.conv = ConvConfig {
        channels: a.channels.clone(),
        pool: a.pool,
        ..ConvConfig::default()
    };
    config.latent_dim = a.latent;
    config.sigma_ratio = a.template.sigma_ratio;
    config.seed = a.seed;
    if task == Task::Classifier {
        let mut classes = train.class_count()?;
        if let Some(t) = &test {
            classes = classes.max(t.class_count()?);
        }
        config.class_count = classes;
    }
    let tc = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        learning_rate: a.lr,
        rng_seed: a.seed,
        ..TrainConfig::default()
    };
    tc.check()?;
    RunManifest::new("train", config_of(a), a.seed, &["model", "metrics.csv", "summary.json"]).write(&a.out)?;

    let mut model = Model::from_template_shape(config, template)?;
    let report = match task {
        Task::Classifier => train_classifier(&mut model, &train, test.as_ref(), &tc)?,
        Task::Autoencoder => train_autoencoder(&mut model, &train, test.as_ref(), &tc)?,
    };
    save_model(&model, &a.out.join("model"))?;
    write_atomic(&a.out.join("metrics.csv"), report.to_csv().as_bytes())?;
    let last = |s| report.last(s).map(|m| json!({"loss": m.loss, "accuracy_or_error": m.accuracy_or_error}));
    let first = |s| report.first(s).map(|m| json!({"loss": m.loss, "accuracy_or_error": m.accuracy_or_error}));
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "manifest": "train.manifest.json",
            "task": task,
            "encoder": encoder,
            "param_count": model.param_count(),
            "feature_dim": model.feature_dim(),
            "template_vertices": model.template.vertex_count(),
            "kernel_a": model.kernel.a,
            "initial": {"train": first(datasets::Split::Train), "test": first(datasets::Split::Test)},
            "final": {"train": last(datasets::Split::Train), "test": last(datasets::Split::Test)},
            "median_seconds_per_batch": report.median_seconds_per_batch,
        }),
    )?;
    if let Some(m) = report.last(datasets::Split::Test).or(report.last(datasets::Split::Train)) {
        eprintln!(
            "epoch {}: {:?} loss {:.6} accuracy_or_error {:.6}; median {:.4}s per batch",
            m.epoch, m.split, m.loss, m.accuracy_or_error, report.median_seconds_per_batch
        );
    }
    Ok(())
}

fn variant_kind(v: VariantArg) -> VariantKind {
    match v {
        VariantArg::Identity => VariantKind::Identity,
        VariantArg::PermuteFlip => VariantKind::PermuteFlip,
        VariantArg::Full => VariantKind::Full,
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.reparam_per_shape == Some(0) {
        return Err(usage("--reparam-per-shape must be at least 1"));
    }
    let model = load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mut ds = read_dataset(&a.data)?;
    RunManifest::new("eval", config_of(a), a.seed, &["eval.json"]).write(&a.out)?;
    if let Some(per) = a.reparam_per_shape {
        ds = datasets::make_reparam_set(&ds, per, a.seed, variant_kind(a.reparam_kind))?;
    }
    let e = evaluate_dataset(&model, &ds)?;
    write_json(
        &a.out.join("eval.json"),
        &json!({
            "manifest": "eval.manifest.json",
            "task": model.config.task,
            "encoder": model.config.encoder,
            "shapes": ds.len(),
            "reparam_per_shape": a.reparam_per_shape,
            "loss": e.loss,
            "accuracy_or_error": e.accuracy_or_error,
        }),
    )?;
    eprintln!("{} shapes: loss {:.6} accuracy_or_error {:.6}", ds.len(), e.loss, e.accuracy_or_error);
    Ok(())
}

#[derive(Debug, Serialize)]
struct SpreadReport {
    model: String,
    encoder: EncoderKind,
    reconstructions: String,
    mean_pairwise_dist_sq: f64,
    mean_vertex_std: f64,
    max_vertex_std: f64,
    max_abs_deviation: f64,
}

fn spread(model: &Model, outputs: &[ShapeGraph]) -> (f64, f64, f64, f64) {
    let vfs: Vec<_> = outputs.iter().map(|o| lift_clamped(&o.vertices, &o.edges)).collect();
    let n = outputs.len();
    let pair_sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| varifold::dist_sq_varifolds(&vfs[i], &vfs[j], &model.kernel))
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let pairs = n * (n - 1) / 2;
    let mean_pair = if pairs == 0 { 0.0 } else { pair_sum / pairs as f64 };

    let v = outputs[0].vertex_count();
    let mut stds = Vec::with_capacity(v);
    let mut max_dev: f64 = 0.0;
    for i in 0..v {
        let mut mean = [0.0; 3];
        for o in outputs {
            for c in 0..3 {
                mean[c] += o.vertices[i][c] / n as f64;
            }
        }
        let var: f64 = outputs
            .iter()
            .map(|o| (0..3).map(|c| (o.vertices[i][c] - mean[c]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        stds.push(var.sqrt());
        for o in outputs {
            for c in 0..3 {
                max_dev = max_dev.max((o.vertices[i][c] - outputs[0].vertices[i][c]).abs());
            }
        }
    }
    let mean_std = stds.iter().sum::<f64>() / v as f64;
    let max_std = stds.iter().copied().fold(0.0, f64::max);
    (mean_pair, mean_std, max_std, max_dev)
}

fn invariance(a: &InvarianceArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let ds = read_dataset(&a.data)?;
    let source = ds
        .shapes
        .get(a.index)
        .cloned()
        .ok_or_else(|| usage(format!("--index {} but the dataset has {} shapes", a.index, ds.len())))?;
    let models = a
        .model
        .iter()
        .map(|p| load_model(p).with_context(|| format!("loading model {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = models.iter().find(|m| m.config.task != Task::Autoencoder) {
        bail!(usage(format!("invariance needs autoencoders, got a {:?} model", m.config.task)));
    }
    let names: Vec<String> = models
        .iter()
        .enumerate()
        .map(|(i, m)| format!("reconstructions_{i}_{}.jsonl", encoder_name(m.config.encoder)))
        .collect();
    let mut outputs: Vec<&str> = vec!["invariance.json"];
    outputs.extend(names.iter().map(String::as_str));
    RunManifest::new("invariance", config_of(a), a.seed, &outputs).write(&a.out)?;

    let variants = datasets::make_reparam_set(&LabeledDataset::new(vec![source]), a.n, a.seed, variant_kind(a.kind))?;
    let mut reports = Vec::new();
    for ((model, path), name) in models.iter().zip(&a.model).zip(&names) {
        let recon = variants
            .shapes
            .par_iter()
            .map(|g| model.reconstruct(g))
            .collect::<varigrad_core::Result<Vec<_>>>()?;
        write_atomic(&a.out.join(name), &write_jsonl(&recon))?;
        let (mean_pair, mean_std, max_std, max_dev) = spread(model, &recon);
        eprintln!(
            "{}: mean pairwise dist_sq {mean_pair:e}, mean vertex std {mean_std:e}, max deviation {max_dev:e}",
            path.display()
        );
        reports.push(SpreadReport {
            model: path.display().to_string(),
            encoder: model.config.encoder,
            reconstructions: name.clone(),
            mean_pairwise_dist_sq: mean_pair,
            mean_vertex_std: mean_std,
            max_vertex_std: max_std,
            max_abs_deviation: max_dev,
        });
    }
    write_json(
        &a.out.join("invariance.json"),
        &json!({
            "manifest": "invariance.manifest.json",
            "source_index": a.index,
            "n": a.n,
            "kind": a.kind,
            "models": reports,
        }),
    )?;
    Ok(())
}

fn encoder_name(e: EncoderKind) -> &'static str {
    match e {
        EncoderKind::VariGrad => "varigrad",
        EncoderKind::PointNet => "pointnet",
    }
}

fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    ensure!(!ds.is_empty(), varigrad_core::Error::EmptyDataset);
    let template = match &a.template {
        Some(p) => read_shape(&fs::read(p).with_context(|| format!("reading template {}", p.display()))?)?,
        None => ds.shapes[0].clone().with_label(None),
    };
    RunManifest::new("featurize", config_of(a), 0, &["features.jsonl"]).write(&a.out)?;
    let k = default_kernel(&template, a.sigma_ratio)?;
    let t = Template::new(template)?;
    let fields = ds
        .shapes
        .par_iter()
        .map(|g| raw_feature(&t, g, &k))
        .collect::<varigrad_core::Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, (g, f)) in ds.shapes.iter().zip(&fields).enumerate() {
        serde_json::to_writer(&mut out, &json!({"index": i, "label": g.label, "field": f.vectors}))?;
        out.push(b'\n');
    }
    write_atomic(&a.out.join("features.jsonl"), &out)?;
    eprintln!("wrote {} gradient fields over {} template vertices", fields.len(), t.vertex_count());
    Ok(())
}
