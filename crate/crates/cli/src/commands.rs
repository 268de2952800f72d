use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gridmix::data::io::{load_dataset, load_geometry, load_tracks, save_dataset, write_atomic};
use gridmix::data::{
    build_example, estimate_noise, generate, resample_100ms, sequence_inputs, Dataset,
    ScenarioLabel,
};
use gridmix::features::{target_in_frame, Track};
use gridmix::inference::nms;
use gridmix::map::ScenarioGeometry;
use gridmix::metrics::evaluate;
use gridmix::mixture::{heatmap as density_heatmap, realize_params};
use gridmix::network::{
    forward, init_params, score_example, train as fit, Checkpoint, EpochLoss, ExampleSource,
    LazyExamples, ModelParams,
};

use crate::config::RunConfig;
use crate::{DatagenArgs, EvalArgs, HeatmapArgs, NoiseArgs, TrainArgs};

/// Above this many raster bytes the training set is rebuilt on demand.
const EAGER_RASTER_BYTES: usize = 1 << 30;

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    write_atomic(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn required(flag: Option<&PathBuf>, config: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or(config)
        .cloned()
        .with_context(|| format!("no {what}: pass --{what} or set paths.{what}"))
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn datagen(run: &RunConfig, out: &Path, args: &DatagenArgs) -> Result<()> {
    let mut scenario = run.scenario.clone();
    if let Some(n) = args.n_tracks {
        scenario.n_tracks = n;
    }
    let dataset = generate(&scenario)?;
    out_dir(out)?;
    let manifest = save_dataset(&dataset, out)
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    let count = |l: ScenarioLabel| dataset.items.iter().filter(|i| i.label == l).count();
    println!(
        "{} tracks ({} train, {} test; {} straight, {} turn, {} fork) -> {}",
        dataset.items.len(),
        dataset.split.train.len(),
        dataset.split.test.len(),
        count(ScenarioLabel::Straight),
        count(ScenarioLabel::Turn),
        count(ScenarioLabel::Fork),
        manifest.display()
    );
    Ok(())
}

fn loss_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,classification,regression,total\n");
    for e in curve {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.epoch, e.classification, e.regression, e.total
        );
    }
    s
}

pub fn train(run: &RunConfig, out: &Path, args: &TrainArgs) -> Result<()> {
    let mut run = run.clone();
    if let Some(p) = args.preset {
        run.preset = p;
        run.model = None;
    }
    let o = &mut run.train.optimizer;
    o.epochs = args.epochs.unwrap_or(o.epochs);
    o.learning_rate = args.learning_rate.unwrap_or(o.learning_rate);
    o.batch_size = args.batch_size.unwrap_or(o.batch_size);
    run.train.gamma = args.gamma.unwrap_or(run.train.gamma);
    run.train.validate()?;

    let path = required(args.dataset.as_ref(), run.paths.dataset.as_ref(), "dataset")?;
    let dataset = open_dataset(&path)?;
    let (params, resume, mut curve) = match &args.resume {
        Some(p) => {
            let ck = open_checkpoint(p)?;
            let adam = ck
                .adam
                .clone()
                .with_context(|| format!("{} has no optimizer state", p.display()))?;
            (ck.model()?, Some((adam, ck.epochs_completed)), ck.curve)
        }
        None => {
            let cfg = run.model_config();
            cfg.validate()?;
            let seed = cfg.seed;
            (init_params(&cfg, seed)?, None, Vec::new())
        }
    };
    let cfg = params.config().clone();
    let grid = cfg.grid()?;
    let mut indices = dataset.split.train.clone();
    if let Some(n) = args.limit {
        indices.truncate(n);
    }
    ensure!(!indices.is_empty(), "the training split is empty");
    let source = LazyExamples {
        dataset: &dataset,
        indices,
        config: run.example_config(&cfg),
        grid: grid.clone(),
        map: cfg.map_config(),
    };
    let progress = |e: &EpochLoss| {
        eprintln!(
            "epoch {}: total {:.4} (classification {:.4}, regression {:.4})",
            e.epoch,
            e.classification + e.regression,
            e.classification,
            e.regression
        )
    };
    let raster_bytes = source.len() * run.t_max * 2 * cfg.map_pixels * cfg.map_pixels;
    let outcome = if raster_bytes <= EAGER_RASTER_BYTES {
        let eager = (0..source.len())
            .map(|i| source.get(i).map(|c| c.into_owned()))
            .collect::<gridmix::Result<Vec<_>>>()?;
        fit(&eager, params, &grid, &run.train, resume, progress)?
    } else {
        fit(&source, params, &grid, &run.train, resume, progress)?
    };
    curve.extend_from_slice(&outcome.curve);

    out_dir(out)?;
    let mut ck = Checkpoint::new(
        &outcome.params,
        cfg.seed,
        Some(outcome.adam),
        outcome.epochs_completed,
    );
    ck.curve = curve;
    let ck_path = out.join("checkpoint.json");
    write(&ck_path, ck.to_json()?.as_bytes())?;
    write(&out.join("loss.csv"), loss_csv(&ck.curve).as_bytes())?;
    println!(
        "trained {} epochs, final total {:.4} -> {}",
        outcome.epochs_completed,
        ck.curve.last().map_or(f64::NAN, |e| e.total),
        ck_path.display()
    );
    Ok(())
}

fn load_model(args_path: Option<&PathBuf>, run: &RunConfig) -> Result<ModelParams> {
    let path = required(args_path, run.paths.checkpoint.as_ref(), "checkpoint")?;
    Ok(open_checkpoint(&path)?.model()?)
}

pub fn eval(run: &RunConfig, out: &Path, args: &EvalArgs) -> Result<()> {
    let params = load_model(args.checkpoint.as_ref(), run)?;
    let cfg = params.config().clone();
    let grid = cfg.grid()?;
    let path = required(args.dataset.as_ref(), run.paths.dataset.as_ref(), "dataset")?;
    let dataset = open_dataset(&path)?;
    let mut indices = dataset.split.test.clone();
    if let Some(n) = args.limit {
        indices.truncate(n);
    }
    ensure!(!indices.is_empty(), "the test split is empty");
    let ex_cfg = run.example_config(&cfg);
    let map = cfg.map_config();
    let scored = indices
        .iter()
        .map(|&i| {
            let item = &dataset.items[i];
            let ex = build_example(&item.resampled, &item.geometry, &ex_cfg, &grid, &map)?;
            score_example(&ex, &params, &grid, &run.nms)
        })
        .collect::<gridmix::Result<Vec<_>>>()?;
    let mut metrics = run.metrics;
    metrics.k = args.k.unwrap_or(metrics.k);
    let sigma_v = if args.estimate_noise {
        let raw: Vec<Track> = indices
            .iter()
            .map(|&i| dataset.items[i].raw.clone())
            .collect();
        Some(estimate_noise(&raw, &run.ransac)?.sigma_v)
    } else {
        args.sigma_v
    };
    let report = evaluate(&scored, &metrics, sigma_v)?;
    let json = serde_json::to_string_pretty(&report)?;
    out_dir(out)?;
    write(&out.join("eval.json"), json.as_bytes())?;
    println!("{json}");
    Ok(())
}

pub fn heatmap(run: &RunConfig, out: &Path, args: &HeatmapArgs) -> Result<()> {
    let params = load_model(args.checkpoint.as_ref(), run)?;
    let cfg = params.config().clone();
    let grid = cfg.grid()?;
    let tracks = load_tracks(&args.tracks)
        .with_context(|| format!("loading tracks {}", args.tracks.display()))?;
    let raw = match args.track_id {
        Some(id) => tracks
            .into_iter()
            .find(|(i, _)| *i == id)
            .map(|(_, t)| t)
            .with_context(|| format!("track {id} not in {}", args.tracks.display()))?,
        None => match tracks.into_iter().next() {
            Some((_, t)) => t,
            None => bail!("{} holds no tracks", args.tracks.display()),
        },
    };
    let track = resample_100ms(&raw)?;
    let geometry = match &args.geometry {
        Some(p) => load_geometry(p).with_context(|| format!("loading geometry {}", p.display()))?,
        None => ScenarioGeometry::default(),
    };
    let inputs = sequence_inputs(&track, &geometry, args.t, &cfg.map_config())?;
    let trace = forward(&inputs.features, &inputs.rasters, &params)?;
    let mixture = realize_params(&trace.outputs[args.t], &grid)?;
    let resolution = args.resolution.unwrap_or(run.heatmap_resolution);
    let map = density_heatmap(&mixture, grid.extent(), resolution)?;
    let predictions = nms(&mixture, &run.nms);

    out_dir(out)?;
    write(&out.join("heatmap.pgm"), &map.to_pgm())?;
    write(&out.join("heatmap.csv"), map.to_csv().as_bytes())?;
    write(
        &out.join("predictions.csv"),
        predictions.to_csv().as_bytes(),
    )?;
    let (row, col) = map.argmax();
    let [px, py] = map.pixel_center(row, col);
    let best = predictions.best();
    println!(
        "step {}: mass {:.4}, density peak at ({px:.2}, {py:.2}), top prediction ({:.2}, {:.2}) p={:.3}",
        args.t,
        map.mass(),
        best.mu[0],
        best.mu[1],
        best.confidence
    );
    if args.t + cfg.horizon < track.len() {
        let truth = target_in_frame(&track, &inputs.frames[args.t], args.t, cfg.horizon);
        println!("ground truth ({:.2}, {:.2})", truth.x, truth.y);
    }
    Ok(())
}

pub fn noise(run: &RunConfig, out: &Path, args: &NoiseArgs) -> Result<()> {
    let p = &args.tracks;
    let tracks: Vec<Track> = if p.is_dir() || p.extension().is_some_and(|e| e == "json") {
        open_dataset(p)?.items.into_iter().map(|i| i.raw).collect()
    } else {
        load_tracks(p)
            .with_context(|| format!("loading tracks {}", p.display()))?
            .into_iter()
            .map(|(_, t)| t)
            .collect()
    };
    let estimate = estimate_noise(&tracks, &run.ransac)?;
    let json = serde_json::to_string_pretty(&estimate)?;
    out_dir(out)?;
    write(&out.join("noise.json"), json.as_bytes())?;
    println!(
        "sigma_v {:.4} m over {} tracks (inlier fraction {:.3})",
        estimate.sigma_v,
        tracks.len(),
        estimate.inlier_fraction
    );
    Ok(())
}
