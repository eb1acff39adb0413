use std::fmt;
use std::path::{Path, PathBuf};

use segkit::bench::{append_csv, run_suite};
use segkit::config::{PartialConfig, RunConfig};
use segkit::datakit::{
    filter_by_coverage, load_dataset, read_raster_dir, read_tiles, split, synth_corpus, tile, write_dataset,
    write_raster_dir, TileSample,
};
use segkit::metrics::render_table;
use segkit::trainer::{load_checkpoint, train_with_progress, validate, THRESHOLD};
use segkit::viz::{compose_comparison, compose_single, pick_samples, save_canvas};
use segkit::zoo::{Family, Segmenter};
use segkit::{Error, Model32};

use crate::{BenchmarkArgs, Command, EvaluateArgs, Mode, SynthArgs, TileArgs, TrainArgs, VisualizeArgs};

pub const DEVICE_VAR: &str = "GEOSEG_DEVICE";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// 0 success, 1 I/O failure, 2 usage or validation, 3 divergence.
pub fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Core(Error::Divergence { .. }) => 3,
        CliError::Core(Error::Io { .. }) => 1,
        _ => 2,
    }
}

pub fn run(command: Command) -> Result<()> {
    let device = device()?;
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Tile(a) => cmd_tile(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Visualize(a) => cmd_visualize(a),
        Command::Benchmark(a) => cmd_benchmark(a, &device),
    }
}

fn device() -> Result<String> {
    match std::env::var(DEVICE_VAR) {
        Err(_) => Ok("cpu".into()),
        Ok(v) if v.eq_ignore_ascii_case("cpu") => Ok("cpu".into()),
        Ok(v) => Err(CliError::Usage(format!(
            "{DEVICE_VAR}={v:?} is not available; this build runs on \"cpu\" only"
        ))),
    }
}

fn resolve(config: &Option<PathBuf>, flags: PartialConfig) -> Result<RunConfig> {
    let file = match config {
        Some(path) => {
            require_file(path, "config file")?;
            PartialConfig::load(path)?
        }
        None => PartialConfig::default(),
    };
    Ok(RunConfig::layered(file, flags))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn echo_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    write_text(path, &cfg.to_toml())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = resolve(&a.common.config, a.common.layer())?;
    let pairs = synth_corpus(a.count, a.size, cfg.seed)?;
    write_raster_dir(&pairs, &a.out)?;
    println!(
        "wrote {} rasters of {}x{} to {}",
        pairs.len(),
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}

fn cmd_tile(a: TileArgs) -> Result<()> {
    let cfg = resolve(&a.common.config, a.layer())?;
    require_dir(&a.input, "input directory")?;
    let pairs = read_raster_dir(&a.input)?;
    let mut tiles = Vec::new();
    for p in &pairs {
        tiles.extend(tile(p, cfg.tile_size, cfg.tile_stride())?);
    }
    let total = tiles.len();
    let mut s = split(tiles, cfg.fractions, cfg.seed)?;
    // Only tiles used for fitting and model selection are filtered.
    s.train = filter_by_coverage(std::mem::take(&mut s.train), cfg.min_coverage);
    s.val = filter_by_coverage(std::mem::take(&mut s.val), cfg.min_coverage);
    write_dataset(&s, &a.out)?;
    echo_config(&cfg, &a.out.join("tile_config.toml"))?;
    println!(
        "{} rasters -> {total} tiles; train {} / val {} / test {} after coverage filter >= {}",
        pairs.len(),
        s.train.len(),
        s.val.len(),
        s.test.len(),
        cfg.min_coverage
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = resolve(&a.common.config, a.layer())?;
    require_dir(&cfg.data, "dataset")?;
    let arch = cfg.architecture()?;
    let tcfg = cfg.training()?;
    let data = load_dataset(&cfg.data)?;
    let model: Model32 = segkit::zoo::build_model(&arch, cfg.seed)?;
    if let Some(dir) = &tcfg.log_dir {
        echo_config(&cfg, &dir.join("config.toml"))?;
    }
    println!(
        "training {} ({} parameters) on {} tiles for {} iterations",
        arch.family.display_name(),
        model.parameter_count(),
        data.train.len(),
        tcfg.iterations
    );
    let (_, log) = train_with_progress(model, &data, &tcfg, |row| {
        if let Some(v) = row.val {
            eprintln!(
                "iter {:>6}  loss {:.4}  val F1 {:.4}  Jaccard {:.4}  kappa {:.4}",
                row.iteration, row.train_loss, v[3], v[4], v[5]
            );
        }
    })?;
    let last = log.rows.last().expect("at least one iteration");
    println!("final loss {:.4} after {} iterations", last.train_loss, last.iteration);
    if let (Some(l), Some(c)) = (&tcfg.log_dir, &tcfg.checkpoint_dir) {
        println!("log: {}  checkpoint: {}", l.display(), c.display());
    }
    Ok(())
}

fn load_split(data: &Path, split_name: &str) -> Result<Vec<TileSample>> {
    let dir = data.join(split_name);
    require_dir(&dir, "split directory")?;
    let samples = read_tiles(&dir)?;
    if samples.is_empty() {
        return Err(CliError::Core(Error::EmptyDataset(format!(
            "{} holds no tiles",
            dir.display()
        ))));
    }
    Ok(samples)
}

fn load_model(path: &Path) -> Result<Model32> {
    require_file(path, "checkpoint")?;
    Ok(load_checkpoint(path)?)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = resolve(&a.common.config, a.layer())?;
    let model = load_model(&a.checkpoint)?;
    let samples = load_split(&cfg.data, &a.split)?;
    let report = validate(&model, &samples, THRESHOLD)?;
    let label = model.family().display_name().to_string();
    print!("{}", render_table(&[(label, report)]));
    let mut record = report.to_record();
    record["model"] = model.family().name().into();
    record["checkpoint"] = a.checkpoint.display().to_string().into();
    record["split"] = a.split.clone().into();
    record["tiles"] = samples.len().into();
    let out = cfg
        .result_dir()
        .join(format!("{}_{}_metrics.json", model.family().name(), a.split));
    write_text(
        &out,
        &format!("{}\n", serde_json::to_string_pretty(&record).expect("json")),
    )?;
    println!("report: {}", out.display());
    Ok(())
}

fn cmd_visualize(a: VisualizeArgs) -> Result<()> {
    let cfg = resolve(&a.common.config, a.layer())?;
    if a.mode == Mode::Compare && a.checkpoints.len() < 2 {
        return Err(CliError::Core(Error::NeedMultipleModels(a.checkpoints.len())));
    }
    let models = a
        .checkpoints
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>>>()?;
    let samples = load_split(&cfg.data, &a.split)?;
    let picked: Vec<&TileSample> = pick_samples(samples.len(), cfg.samples, cfg.seed)
        .into_iter()
        .map(|i| &samples[i])
        .collect();
    let out_dir = cfg.result_dir();
    let mut written = Vec::new();
    match a.mode {
        Mode::Single => {
            for model in &models {
                let name = model.family().name();
                for s in &picked {
                    let path = out_dir.join(format!("{name}_{}.png", s.tile_id()));
                    save_canvas(&compose_single(&[*s], model)?, &path)?;
                    written.push(path);
                }
                let path = out_dir.join(format!("{name}_grid.png"));
                save_canvas(&compose_single(&picked, model)?, &path)?;
                written.push(path);
            }
        }
        Mode::Compare => {
            let refs: Vec<&dyn Segmenter<f32>> = models.iter().map(|m| m as &dyn Segmenter<f32>).collect();
            let ids: Vec<String> = picked.iter().map(|s| s.tile_id()).collect();
            let path = out_dir.join(format!("compare_{}.png", ids.join("-")));
            save_canvas(&compose_comparison(&picked, &refs)?, &path)?;
            written.push(path);
        }
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

fn parse_models(spec: &str) -> Result<Vec<Family>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Family::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<Family>().map_err(CliError::Core))
        .collect()
}

fn cmd_benchmark(a: BenchmarkArgs, device: &str) -> Result<()> {
    let cfg = resolve(&a.common.config, a.layer())?;
    let families = parse_models(&a.models)?;
    let settings = cfg.bench(device);
    echo_config(&cfg, &cfg.logs_dir().join("benchmark_config.toml"))?;
    let report = run_suite::<f32>(&families, &settings)?;
    let table = format!(
        "batch {} at {}x{}, {} warm-up + {} timed iterations on {device}\n{}",
        settings.batch_size,
        settings.size,
        settings.size,
        settings.warmup_iters,
        settings.timed_iters,
        report.render()
    );
    print!("{table}");
    append_csv(&cfg.logs_dir().join("benchmark.csv"), &report.records())?;
    write_text(&cfg.result_dir().join("benchmark.txt"), &table)?;
    Ok(())
}
