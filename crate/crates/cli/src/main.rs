mod settings;
mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dunet::data::{checksum, generate, label_boundary_mask, read_cloud, read_dataset, write_dataset, Family, SyntheticSpec};
use dunet::diffusion_lab::{contrast_ratio, edge_sign_experiment, DiffusionRun, DiffusivityFn};
use dunet::geometry::knn_excluding_self;
use dunet::model::{build_model, smoothness_probe, Task};
use dunet::train::{
    evaluate, evaluate_voted, load_checkpoint, log_csv, metric_name, save_checkpoint, score, split_dataset, Checkpoint,
    fit,
};
use dunet::{Error, Result};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "dunet", version, about = "Diffusion-unit point-cloud networks: data, training and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset of `.duc` files.
    GenData(GenDataArgs),
    /// Train a model and write `model.ckpt` and `metrics.csv`.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run handcrafted diffusion on a two-region cloud and log the contrast.
    Diffuse(DiffuseArgs),
    /// Measure how one linear diffusion step changes a step edge.
    EdgeExperiment(EdgeArgs),
    /// Per-point smoothness around one diffusion unit of a trained model.
    Smoothness(SmoothnessArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    family: Family,
    /// Points per cloud.
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Clouds per class (or total clouds for single-class families).
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    data: PathBuf,
    /// `key = value` file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Augmented copies averaged per cloud; defaults to the checkpoint's setting.
    #[arg(long)]
    votes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Per-cloud scores as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Diffusivity {
    Const,
    Pm,
}

#[derive(Args, Debug)]
struct DiffuseArgs {
    #[arg(long, value_enum)]
    diffusivity: Diffusivity,
    /// Perona-Malik contrast parameter.
    #[arg(long)]
    lambda: Option<f64>,
    /// Value of the constant diffusivity.
    #[arg(long, default_value_t = 1.0)]
    weight: f64,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Neighbors per point.
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EdgeArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    weights: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    points: usize,
    /// Steepness `a` of the `tanh(a x)` profile.
    #[arg(long, default_value_t = 4.0)]
    sharpness: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SmoothnessArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    cloud: PathBuf,
    /// Diffusion-unit path, e.g. `decoder/level0/du`.
    #[arg(long)]
    layer: String,
    /// Output prefix for `_before`/`_after` CSV and SVG files.
    #[arg(long)]
    out: PathBuf,
    /// Neighbors used to mark label boundaries for the summary ratio.
    #[arg(long, default_value_t = 8)]
    boundary_k: usize,
}

fn print_config(command: &str, pairs: &[(&str, String)]) {
    println!("# {command}");
    for (k, v) in pairs {
        println!("{k} = {v}");
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        family: a.family,
        points: a.n,
        per_class: a.per_class,
        noise: a.noise,
        seed: a.seed,
    };
    print_config(
        "gen-data",
        &[
            ("family", a.family.to_string()),
            ("points", a.n.to_string()),
            ("per_class", a.per_class.to_string()),
            ("noise", a.noise.to_string()),
            ("seed", a.seed.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    spec.validate()?;
    let clouds = generate(&spec)?;
    write_dataset(&clouds, &a.out)?;
    println!("wrote {} clouds to {} (checksum {:016x})", clouds.len(), a.out.display(), checksum(&clouds));
    Ok(())
}

fn check_labels(clouds: &[dunet::geometry::PointCloud], task: Task, outputs: usize) -> Result<()> {
    for c in clouds {
        let labels = c
            .labels
            .as_ref()
            .ok_or_else(|| usage(format!("cloud `{}` has no labels", c.name)))?;
        let bad = match task {
            Task::Classification => labels.first().filter(|&&l| l >= outputs),
            Task::Segmentation => labels.iter().find(|&&l| l >= outputs),
        };
        if let Some(l) = bad {
            return Err(usage(format!("cloud `{}` has label {l} but the model has {outputs} outputs", c.name)));
        }
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut s = Settings::for_task(a.task);
    if let Some(path) = &a.config {
        s.apply_file(path)?;
    }
    if let Some(v) = a.seed {
        s.train.seed = v;
    }
    if let Some(v) = a.epochs {
        s.train.epochs = v;
    }
    if let Some(v) = a.lr {
        s.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        s.train.batch_size = v;
    }
    s.apply_overrides(&a.overrides)?;
    print!("# train\n{}", s.to_text());
    println!("data = {}\nout = {}", a.data.display(), a.out.display());
    s.validate()?;

    let clouds = read_dataset(&a.data)?;
    check_labels(&clouds, a.task, s.model.outputs())?;
    let (train_set, val_set) = split_dataset(&clouds, s.train.val_fraction, s.train.seed);
    println!("{} training clouds, {} validation clouds", train_set.len(), val_set.len());
    let mut model = build_model(&s.model, s.train.seed)?;
    let report = fit(&mut model, &train_set, &val_set, &s.train)?;
    fs::create_dir_all(&a.out)?;
    let ckpt = Checkpoint {
        model,
        train: Some(s.train.clone()),
        optimizer: Some(report.optimizer.clone()),
        epoch: report.epochs as u64,
    };
    save_checkpoint(&ckpt, &a.out.join("model.ckpt"))?;
    fs::write(a.out.join("metrics.csv"), log_csv(&report.log))?;
    for split in ["train", "val"] {
        if let Some(r) = report.last(split) {
            println!("final {split}: loss {:.6} {} {:.6}", r.loss, r.metric_name, r.metric_value);
        }
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.batch_size == 0 || a.votes == Some(0) {
        return Err(usage("batch size and votes must be at least 1"));
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let train_cfg = ckpt.train.clone().unwrap_or_else(|| dunet::train::TrainConfig::for_task(ckpt.model.config.task));
    let votes = a.votes.unwrap_or(train_cfg.votes);
    let spec = train_cfg.augment.scales_only();
    let mut pairs = ckpt.model.config.pairs();
    pairs.extend([
        ("ckpt", a.ckpt.display().to_string()),
        ("data", a.data.display().to_string()),
        ("votes", votes.to_string()),
        ("seed", a.seed.to_string()),
        ("batch_size", a.batch_size.to_string()),
    ]);
    print_config("eval", &pairs);
    let model = &ckpt.model;
    let clouds = read_dataset(&a.data)?;
    check_labels(&clouds, model.config.task, model.config.outputs())?;
    let result = if votes == 1 {
        evaluate(model, &clouds, a.batch_size)?
    } else {
        evaluate_voted(model, &clouds, votes, &spec, a.seed)?
    };
    let name = metric_name(model.config.task);
    println!("loss {:.6} {name} {:.6}", result.loss, result.metric);
    if let Some(out) = &a.out {
        let mut csv = format!("cloud,{name}\n");
        for (c, l) in clouds.iter().zip(&result.logits) {
            writeln!(csv, "{},{}", c.name, score(model, std::slice::from_ref(l), &[c])?).unwrap();
        }
        fs::write(out, csv)?;
    }
    Ok(())
}

fn diffuse(a: &DiffuseArgs) -> Result<()> {
    let g = match a.diffusivity {
        Diffusivity::Const => DiffusivityFn::Constant(a.weight),
        Diffusivity::Pm => DiffusivityFn::perona_malik(
            a.lambda.ok_or_else(|| usage("--lambda is required with --diffusivity pm"))?,
        )?,
    };
    let mut pairs = vec![("diffusivity", format!("{:?}", a.diffusivity).to_lowercase())];
    match g {
        DiffusivityFn::Constant(w) => pairs.push(("weight", w.to_string())),
        DiffusivityFn::PeronaMalik { lambda } => pairs.push(("lambda", lambda.to_string())),
    }
    pairs.extend([
        ("steps", a.steps.to_string()),
        ("tau", a.tau.to_string()),
        ("k", a.k.to_string()),
        ("cloud", a.cloud.display().to_string()),
        ("out", a.out.display().to_string()),
    ]);
    print_config("diffuse", &pairs);
    if !(a.tau > 0.0 && a.tau.is_finite()) {
        return Err(usage(format!("--tau must be positive, got {}", a.tau)));
    }
    if !(a.weight >= 0.0 && a.weight.is_finite()) {
        return Err(usage(format!("--weight must be non-negative, got {}", a.weight)));
    }
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let product = a.tau * g.max_value();
    if product > 1.0 {
        return Err(Error::Stability { product });
    }
    let cloud = read_cloud(&a.cloud)?;
    let nbrs = knn_excluding_self(&cloud.positions, a.k)?;
    let run = DiffusionRun::simulate(&cloud, &nbrs, g, a.tau, a.steps, false)?;
    let ratios = contrast_ratio(&run)?;
    let mut csv = String::from("step,ratio\n");
    for (t, r) in &ratios {
        writeln!(csv, "{t},{r}").unwrap();
    }
    fs::write(&a.out, csv)?;
    if let Some((t, r)) = ratios.last() {
        println!("contrast ratio after {t} steps: {r:.6}");
    }
    Ok(())
}

fn edge_experiment(a: &EdgeArgs) -> Result<()> {
    let weights: Vec<String> = a.weights.iter().map(f64::to_string).collect();
    print_config(
        "edge-experiment",
        &[
            ("weights", weights.join(",")),
            ("points", a.points.to_string()),
            ("sharpness", a.sharpness.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    if let Some(w) = a.weights.iter().find(|w| !w.is_finite()) {
        return Err(usage(format!("weights must be finite, got {w}")));
    }
    if !(a.sharpness > 0.0 && a.sharpness.is_finite()) {
        return Err(usage(format!("--sharpness must be positive, got {}", a.sharpness)));
    }
    let rows = edge_sign_experiment(a.points, a.sharpness, &a.weights)?;
    let mut csv = String::from("w,delta_grad,sign\n");
    for r in &rows {
        writeln!(csv, "{},{},{}", r.weight, r.delta_grad, r.sign).unwrap();
    }
    fs::write(&a.out, csv)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn smoothness_cmd(a: &SmoothnessArgs) -> Result<()> {
    print_config(
        "smoothness",
        &[
            ("ckpt", a.ckpt.display().to_string()),
            ("cloud", a.cloud.display().to_string()),
            ("layer", a.layer.clone()),
            ("out", a.out.display().to_string()),
            ("boundary_k", a.boundary_k.to_string()),
        ],
    );
    if a.boundary_k == 0 {
        return Err(usage("--boundary-k must be at least 1"));
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let cloud = read_cloud(&a.cloud)?;
    let mut report = smoothness_probe(&ckpt.model, &cloud, &a.layer)?;
    let axes = svg::projection_axes(&report.positions);
    let hi = report.before.iter().chain(&report.after).fold(0.0f64, |m, v| m.max(*v));
    for (tag, values) in [("before", &report.before), ("after", &report.after)] {
        let mut csv = String::from(if report.labels.is_some() { "x,y,z,smoothness,label\n" } else { "x,y,z,smoothness\n" });
        for (i, (p, v)) in report.positions.iter().zip(values.iter()).enumerate() {
            write!(csv, "{},{},{},{v}", p[0], p[1], p[2]).unwrap();
            if let Some(l) = &report.labels {
                write!(csv, ",{}", l[i]).unwrap();
            }
            csv.push('\n');
        }
        fs::write(with_suffix(&a.out, &format!("_{tag}.csv")), csv)?;
        let title = format!("{} smoothness {tag} `{}`", cloud.name, a.layer);
        fs::write(
            with_suffix(&a.out, &format!("_{tag}.svg")),
            svg::scatter(&title, &report.positions, values, axes, (0.0, hi)),
        )?;
    }
    if report.labels.is_some() {
        let mask = label_boundary_mask(&cloud, a.boundary_k.min(cloud.len().saturating_sub(1)).max(1))?;
        report = report.with_boundary(mask)?;
        match report.ratios() {
            Ok((b, f)) => println!("boundary/interior smoothness ratio: before {b:.6}, after {f:.6}"),
            Err(e) => println!("boundary/interior ratio unavailable: {e}"),
        }
    }
    println!("wrote {} points to {}_{{before,after}}.{{csv,svg}}", report.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Diffuse(a) => diffuse(a),
        Command::EdgeExperiment(a) => edge_experiment(a),
        Command::Smoothness(a) => smoothness_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
