use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use clap::{Args, Subcommand};
use penumbra_core::diffusion::{
    cosine_schedule, generate_dataset, generate_instance, reverse_sample, train, DatasetConfig,
    DenoiserParams, Example, ModelConfig, ToyScene, TrainingConfig,
};
use penumbra_core::geometry::{Frame, PointCloud};
use penumbra_core::io::{
    cloud_to_text, load_cloud, manifest_to_csv, occupancy_to_text, ManifestRow,
};
use penumbra_core::pipeline::{corrupt, evaluate, run_pipeline, PipelineConfig};
use serde::Serialize;

use crate::common::{
    create_dir, load_image, load_scene, save_image, write_text, DatasetDir, DatasetSpec,
    DATASET_MANIFEST, DATASET_SCENE, DATASET_SPEC,
};
use crate::manifest::{beside, inside, Recorder};
use crate::Context;

#[derive(Debug, Subcommand)]
pub enum SsdCommand {
    /// Generate procedural (cloud, emitter, measurement) triples.
    DatasetGen(DatasetGenArgs),
    /// Train the conditional denoiser on a generated dataset.
    Train(TrainArgs),
    /// Draw a cloud conditioned on one measurement.
    Sample(SampleArgs),
    /// Sample, localize and reconstruct the emitter for one dataset instance.
    Pipeline(PipelineArgs),
}

pub fn run(ctx: &Context, cmd: SsdCommand) -> anyhow::Result<()> {
    match cmd {
        SsdCommand::DatasetGen(a) => dataset_gen(ctx, a),
        SsdCommand::Train(a) => train_cmd(ctx, a),
        SsdCommand::Sample(a) => sample(ctx, a),
        SsdCommand::Pipeline(a) => pipeline(ctx, a),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetGenArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Trailing instances reserved for evaluation.
    #[arg(long)]
    held_out: Option<usize>,
    /// Scene file; the built-in desk scene otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    dense_points: Option<usize>,
    #[arg(long)]
    cloud_points: Option<usize>,
    #[arg(long)]
    shape_scale: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn dataset_gen(ctx: &Context, a: DatasetGenArgs) -> anyhow::Result<()> {
    let d = &ctx.defaults.dataset;
    let mut rec = Recorder::new("ssd dataset-gen", &ctx.defaults, ctx.threads);
    rec.seed(a.seed);
    let base = DatasetConfig::default();
    let scene = match &a.scene {
        Some(p) => {
            rec.input(p);
            load_scene(p)?
        }
        None => base.scene.clone(),
    };
    let cfg = DatasetConfig {
        scene,
        dense_points: a.dense_points.unwrap_or(d.dense_points),
        cloud_points: a.cloud_points.unwrap_or(d.cloud_points),
        shape_scale: a.shape_scale.unwrap_or(d.shape_scale),
        jitter: a.jitter.unwrap_or(d.jitter),
        ..base
    };
    cfg.validate()?;
    let n = a.n.unwrap_or(d.n);
    let held_out = a.held_out.unwrap_or(d.held_out);
    if held_out >= n {
        bail!("held-out count {held_out} must be smaller than the dataset size {n}");
    }
    let spec = DatasetSpec::from_config(&cfg, n, held_out, a.seed);
    rec.config(&spec);

    let (_, items) = generate_dataset(n, &cfg, a.seed)?;
    create_dir(&a.out_dir)?;
    let mut rows = Vec::with_capacity(n);
    for it in &items {
        let row = ManifestRow {
            index: it.index,
            class: it.class.to_string(),
            cloud_path: PathBuf::from(format!("clouds/{:05}.xyz", it.index)),
            emitter_path: PathBuf::from(format!("emitters/{:05}.nlsi", it.index)),
            measurement_path: PathBuf::from(format!("measurements/{:05}.nlsi", it.index)),
            seed: it.seed,
        };
        let cloud = a.out_dir.join(&row.cloud_path);
        write_text(&cloud, &cloud_to_text(&it.cloud))?;
        let emitter = a.out_dir.join(&row.emitter_path);
        save_image(&emitter, &it.emitter)?;
        let measurement = a.out_dir.join(&row.measurement_path);
        save_image(&measurement, &it.measurement)?;
        for p in [&cloud, &emitter, &measurement] {
            rec.output(p);
        }
        rows.push(row);
    }
    for (name, text) in [
        (DATASET_SCENE, cfg.scene.to_text()),
        (DATASET_SPEC, toml::to_string(&spec)?),
        (DATASET_MANIFEST, manifest_to_csv(&rows)?),
    ] {
        let p = a.out_dir.join(name);
        write_text(&p, &text)?;
        rec.output(&p);
    }
    println!(
        "wrote {n} instances ({held_out} held out) to {}",
        a.out_dir.display()
    );
    rec.finish(&inside(&a.out_dir))
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    ema_decay: Option<f64>,
    /// Diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    /// Continue from a checkpoint instead of a fresh initialization.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write a numbered checkpoint every this many iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn train_cmd(ctx: &Context, a: TrainArgs) -> anyhow::Result<()> {
    let d = &ctx.defaults.train;
    let mut rec = Recorder::new("ssd train", &ctx.defaults, ctx.threads);
    rec.seed(a.seed);
    let data = DatasetDir::open(&a.dataset)?;
    rec.input(&a.dataset.join(DATASET_SPEC));
    rec.input(&a.dataset.join(DATASET_MANIFEST));

    let mut params = match &a.resume {
        Some(p) => {
            rec.input(p);
            DenoiserParams::load(p)
                .with_context(|| format!("cannot resume from {}", p.display()))?
        }
        None => {
            let mc = ModelConfig {
                image_width: data.config.scene.wall_res_x,
                image_height: data.config.scene.wall_res_z,
                base_channels: a.base_channels.unwrap_or(d.base_channels),
                steps: a.steps.unwrap_or(d.steps),
                ..ModelConfig::default()
            };
            DenoiserParams::new(
                mc,
                a.seed,
                a.learning_rate.unwrap_or(d.learning_rate),
                a.weight_decay.unwrap_or(d.weight_decay),
            )?
        }
    };
    if let Some(s) = a.steps {
        if s != params.config().steps {
            bail!(
                "--steps {s} does not match the checkpoint's {}",
                params.config().steps
            );
        }
    }
    let cfg = TrainingConfig {
        steps: params.config().steps,
        learning_rate: params.optimizer.lr,
        weight_decay: params.optimizer.weight_decay,
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        ema_decay: a.ema_decay.unwrap_or(d.ema_decay),
        iterations: a.iterations.unwrap_or(d.iterations),
        seed: a.seed,
    };
    cfg.validate()?;
    rec.config(serde_json::json!({ "args": &a, "training": format!("{cfg:?}"), "model": format!("{:?}", params.config()) }));

    let mut clouds = Vec::new();
    let mut images = Vec::new();
    for i in data.training() {
        let row = &data.rows[i];
        clouds.push(load_cloud(data.path(&row.cloud_path), Frame::Normalized)?);
        images.push(load_image(&data.path(&row.measurement_path))?);
    }
    let examples: Vec<Example<'_>> = clouds
        .iter()
        .zip(&images)
        .map(|(cloud, image)| Example { cloud, image })
        .collect();
    let sched = cosine_schedule(cfg.steps)?;

    create_dir(&a.out_dir)?;
    let every = a.checkpoint_every.unwrap_or(cfg.iterations).max(1);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut done = 0;
    while done < cfg.iterations {
        let chunk = every.min(cfg.iterations - done);
        // resumed or chunked runs continue the batch stream from the step count
        let part = TrainingConfig {
            iterations: chunk,
            seed: cfg.seed.wrapping_add(params.step),
            ..cfg
        };
        let mut report = |it: usize, loss: f64| {
            let global = done + it;
            if global.is_multiple_of(100) || global == cfg.iterations {
                eprintln!("iter {global} loss {loss:.4}");
            }
        };
        losses.extend(train(&examples, &mut params, &sched, &part, &mut report)?);
        done += chunk;
        if done < cfg.iterations {
            let p = a
                .out_dir
                .join(format!("checkpoint-{:06}.ssdw", params.step));
            params.save(&p)?;
            rec.output(&p);
        }
    }
    let model = a.out_dir.join("model.ssdw");
    params.save(&model)?;
    rec.output(&model);
    let mut csv = String::from("iter,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l:e}\n", i + 1));
    }
    let curve = a.out_dir.join("loss.csv");
    write_text(&curve, &csv)?;
    rec.output(&curve);
    rec.finish(&inside(&a.out_dir))
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_model(path: &Path) -> anyhow::Result<DenoiserParams> {
    DenoiserParams::load(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn sample(ctx: &Context, a: SampleArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::new("ssd sample", &ctx.defaults, ctx.threads);
    rec.config(&a);
    rec.seed(a.seed);
    let params = load_model(&a.model)?;
    rec.input(&a.model);
    let y = load_image(&a.measurement)?;
    rec.input(&a.measurement);
    let sched = cosine_schedule(params.config().steps)?;
    let cloud = reverse_sample(
        &y,
        &params,
        &sched,
        a.points.unwrap_or(ctx.defaults.sample.points),
        a.seed,
    )?;
    write_text(&a.out, &cloud_to_text(&cloud))?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset instance to reconstruct.
    #[arg(long)]
    index: usize,
    #[arg(long)]
    sbr_db: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    tv_weight: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn pipeline(ctx: &Context, a: PipelineArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::new("ssd pipeline", &ctx.defaults, ctx.threads);
    rec.config(&a);
    rec.seed(a.seed);
    let data = DatasetDir::open(&a.dataset)?;
    if a.index >= data.spec.n {
        bail!(
            "index {} out of range for {} instances",
            a.index,
            data.spec.n
        );
    }
    let params = load_model(&a.model)?;
    rec.input(&a.model);
    let sched = cosine_schedule(params.config().steps)?;
    let scene = ToyScene::new(&data.config.scene)?;
    let truth = generate_instance(&scene, &data.config, data.spec.seed, a.index)?;
    let row = &data.rows[a.index];
    let y = load_image(&data.path(&row.measurement_path))?;
    rec.input(&data.path(&row.measurement_path));
    let y = corrupt(&y, a.sbr_db, a.snr_db, a.seed)?;

    let cfg = PipelineConfig {
        points: a.points.unwrap_or(ctx.defaults.sample.points),
        tv_weight: a.tv_weight.unwrap_or(ctx.defaults.pipeline.tv_weight),
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&scene, &data.config, &params, &sched, &y, &cfg)?;
    let report = evaluate(
        &out,
        &truth,
        &scene,
        a.sbr_db.unwrap_or(f64::INFINITY),
        a.snr_db.unwrap_or(f64::INFINITY),
    )?;

    create_dir(&a.out_dir)?;
    let placed: PointCloud = out.cloud.place(data.config.shape_scale, &out.translation);
    let t = out.translation;
    let files = [
        ("cloud.xyz", cloud_to_text(&out.cloud)),
        ("placed.xyz", cloud_to_text(&placed)),
        ("translation.txt", format!("{} {} {}\n", t.x, t.y, t.z)),
        (
            "occupancy.txt",
            occupancy_to_text(&scene.grid, &out.occupancy, None),
        ),
        ("report.txt", format!("{report}\n")),
    ];
    for (name, text) in files {
        let p = a.out_dir.join(name);
        write_text(&p, &text)?;
        rec.output(&p);
    }
    let emitter = a.out_dir.join("emitter.nlsi");
    save_image(&emitter, &out.emitter)?;
    rec.output(&emitter);
    println!("{report}");
    rec.finish(&inside(&a.out_dir))
}
