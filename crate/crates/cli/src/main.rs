//! `difflab`: train toy diffusion models and probe their behaviour from the command line.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use difflab::consistency::SampleGrid;
use difflab::datasets;
use difflab::diffusion::{generate, NoiseStream};
use difflab::experiment::{
    compare, config_with_overrides, metrics_csv, parse_jsonl, run_consistency, Checkpoint,
    ExperimentConfig, MetricsRow, Trainer,
};
use difflab::landscape::{
    fixed_batch, interpolate_1d, lanczos_spectrum, random_direction_pair, surface_2d, unit_grid,
    DirectionNormalization, TimestepFilter, LANDSCAPE_BATCH,
};
use difflab::models::DiffusionObjective;
use difflab::plot::{
    curve_plot, heatmap_svg, metrics_plot, parse_curve_csv, parse_grid_csv, parse_spectrum_json,
    spectrum_svg, MetricField,
};
use difflab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "difflab", version, about = "Desk-scale diffusion training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set run.total_iterations=500`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        load_config(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Args, Debug, Clone)]
struct FilterArgs {
    /// Evaluate the loss at a single timestep.
    #[arg(long, conflicts_with = "t_range")]
    t_fixed: Option<usize>,
    /// Evaluate the loss over an inclusive timestep range.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    t_range: Option<Vec<usize>>,
    /// Size of the fixed evaluation batch.
    #[arg(long, default_value_t = LANDSCAPE_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    batch_seed: u64,
}

impl FilterArgs {
    fn filter(&self) -> TimestepFilter {
        match (&self.t_fixed, &self.t_range) {
            (Some(t), _) => TimestepFilter::Fixed { t: *t },
            (None, Some(r)) => TimestepFilter::Range { lo: r[0], hi: r[1] },
            _ => TimestepFilter::All,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Normalization {
    None,
    Layerwise,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one denoiser, writing metrics and checkpoints to a directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Resume from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples from a checkpoint (EMA parameters unless `--raw`).
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2048)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train several models from distinct init seeds and score their shared-noise agreement.
    Consistency {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 3)]
        models: usize,
        /// Shared noise inputs per model.
        #[arg(long, default_value_t = 32)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss along the segment between two checkpoints.
    #[command(name = "landscape-1d")]
    Landscape1d {
        /// Anchor at alpha = 1.
        #[arg(long)]
        a: PathBuf,
        /// Anchor at alpha = 0.
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 41)]
        points: usize,
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss surface around a checkpoint along two random directions.
    #[command(name = "landscape-2d")]
    Landscape2d {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Points per axis.
        #[arg(long, default_value_t = 21)]
        grid: usize,
        /// Half-width of the grid in direction units.
        #[arg(long, default_value_t = 1.0)]
        span: f64,
        #[arg(long, value_enum, default_value_t = Normalization::Layerwise)]
        normalization: Normalization,
        #[arg(long, default_value_t = 0)]
        direction_seed: u64,
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lanczos estimate of the Hessian spectrum at a checkpoint.
    Hessian {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        probe_seed: u64,
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baseline versus accelerated training over several seeds.
    Compare {
        /// Shared config; the baseline switches accelerators off and the optimized run on.
        #[command(flatten)]
        config: ConfigArgs,
        /// Explicit baseline config (overrides the derived one).
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Explicit optimized config (overrides the derived one).
        #[arg(long)]
        optimized: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG plots from metrics logs, curves, grids or spectra.
    Plot {
        #[command(subcommand)]
        kind: PlotKind,
    },
}

#[derive(Subcommand, Debug)]
enum PlotKind {
    /// One line per `NAME=metrics.jsonl` input.
    Metrics {
        #[arg(long = "input", value_name = "NAME=PATH", required = true)]
        inputs: Vec<String>,
        #[arg(long, default_value = "sw_ema")]
        field: String,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// One line per `NAME=curve.csv` input.
    Curve {
        #[arg(long = "input", value_name = "NAME=PATH", required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    Grid {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One stem series per `NAME=spectrum.json` input.
    Spectrum {
        #[arg(long = "input", value_name = "NAME=PATH", required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => read(p)?,
        None => ExperimentConfig::default().to_json(),
    };
    config_with_overrides(&text, overrides)
}

fn named_inputs(inputs: &[String]) -> Result<Vec<(String, PathBuf)>> {
    inputs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, path)) => Ok((name.to_string(), PathBuf::from(path))),
            None => {
                let p = PathBuf::from(s);
                let name = p
                    .file_stem()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| s.clone());
                Ok((name, p))
            }
        })
        .collect()
}

fn write_metrics(dir: &Path, name: &str, rows: &[MetricsRow]) -> Result<()> {
    let jsonl: String = rows.iter().map(|r| r.to_jsonl() + "\n").collect();
    write(&dir.join(format!("{name}.jsonl")), &jsonl)?;
    write(&dir.join(format!("{name}.csv")), &metrics_csv(rows))
}

fn cmd_train(config: &ConfigArgs, resume: Option<&Path>, out: &Path) -> Result<()> {
    let mut trainer = match resume {
        Some(p) => Trainer::resume(Checkpoint::load(p)?)?,
        None => Trainer::new(config.load()?)?,
    };
    create_dir(out)?;
    write(&out.join("config.json"), &trainer.config().to_json())?;
    let metrics_path = out.join("metrics.jsonl");
    let file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut log = BufWriter::new(file);
    let mut rows = Vec::new();
    let every = trainer.config().run.checkpoint_every;
    while !trainer.finished() {
        let row = match trainer.step() {
            Ok(row) => row,
            Err(Error::Divergence { iteration, last_good }) => {
                if let Some(c) = &last_good {
                    c.save(&out.join("last_good.json"))?;
                }
                return Err(Error::Divergence { iteration, last_good });
            }
            Err(e) => return Err(e),
        };
        if let Some(row) = row {
            writeln!(log, "{}", row.to_jsonl())
                .and_then(|_| log.flush())
                .map_err(|e| Error::io(&metrics_path, e))?;
            eprintln!(
                "iter {:>7}  loss {:.5}  sw_ema {:.5}",
                row.iteration, row.train_loss, row.sw_ema
            );
            rows.push(row);
        }
        if every > 0 && trainer.iteration() % every == 0 {
            trainer
                .checkpoint()
                .save(&out.join(format!("checkpoint-{}.json", trainer.iteration())))?;
        }
    }
    trainer.checkpoint().save(&out.join("checkpoint.json"))?;
    let all = parse_jsonl(&read(&metrics_path)?, &metrics_path.display().to_string())?;
    write(&out.join("metrics.csv"), &metrics_csv(&all))
}

fn params_of(c: &Checkpoint, raw: bool) -> Vec<f64> {
    if raw {
        c.params.clone()
    } else {
        c.ema_params().to_vec()
    }
}

fn cmd_sample(checkpoint: &Path, n: usize, seed: u64, raw: bool, out: &Path) -> Result<()> {
    let c = Checkpoint::load(checkpoint)?;
    let trainer = Trainer::new(c.config.clone())?;
    let params = params_of(&c, raw);
    let samples = generate(
        &trainer.model().bind(&params),
        trainer.schedule(),
        &mut NoiseStream::seeded(seed, n),
        n,
    )?;
    write(out, &datasets::to_csv(&samples))
}

fn cmd_consistency(config: &ConfigArgs, models: usize, m: usize, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let run = run_consistency(&cfg, models, m)?;
    create_dir(out)?;
    write(
        &out.join("report.json"),
        &serde_json::to_string_pretty(&run.report).map_err(Error::from)?,
    )?;
    let grid_path = out.join("grid.bin");
    let f = fs::File::create(&grid_path).map_err(|e| Error::io(&grid_path, e))?;
    run.grid
        .write_to(BufWriter::new(f))
        .map_err(|e| Error::io(&grid_path, e))?;
    // Read back to confirm the artifact is well formed.
    let f = fs::File::open(&grid_path).map_err(|e| Error::io(&grid_path, e))?;
    SampleGrid::read_from(BufReader::new(f))?;
    println!("C = {:.3} dB over {} models, M = {m}", run.report.c_value, models);
    Ok(())
}

fn objective(c: &Checkpoint, filter: &FilterArgs) -> Result<DiffusionObjective> {
    let trainer = Trainer::new(c.config.clone())?;
    let batch = fixed_batch(
        trainer.schedule(),
        &trainer.dataset().train,
        filter.filter(),
        filter.batch,
        filter.batch_seed,
    )?;
    Ok(DiffusionObjective {
        model: trainer.model().clone(),
        batch,
    })
}

fn centred_grid(n: usize, span: f64) -> Vec<f64> {
    unit_grid(n).into_iter().map(|x| span * (2.0 * x - 1.0)).collect()
}

fn cmd_compare(
    config: &ConfigArgs,
    baseline: Option<&Path>,
    optimized: Option<&Path>,
    seeds: usize,
    out: &Path,
) -> Result<()> {
    let shared = config.load()?;
    let base = match baseline {
        Some(p) => load_config(Some(p), &config.overrides)?,
        None => shared.clone().with_accelerators(false),
    };
    let opt = match optimized {
        Some(p) => load_config(Some(p), &config.overrides)?,
        None => shared.with_accelerators(true),
    };
    let report = compare(&base, &opt, seeds)?;
    create_dir(out)?;
    for (label, runs) in [("baseline", &report.baseline), ("optimized", &report.optimized)] {
        for r in runs.iter() {
            write_metrics(out, &format!("{label}-seed{}", r.global_seed), &r.metrics)?;
        }
    }
    write(
        &out.join("report.json"),
        &serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )?;
    let fmt = |v: Option<f64>| v.map_or("censored".to_string(), |x| format!("{x:.0}"));
    println!(
        "threshold {:.5}  median iterations: baseline {}  optimized {}  ratio {}{}",
        report.threshold,
        fmt(report.median_baseline),
        fmt(report.median_optimized),
        report.ratio.map_or("n/a".to_string(), |r| format!("{r:.3}")),
        if report.low_confidence { "  (low confidence)" } else { "" }
    );
    Ok(())
}

fn cmd_plot(kind: &PlotKind) -> Result<()> {
    match kind {
        PlotKind::Metrics { inputs, field, log_y, out } => {
            let field = MetricField::parse(field)?;
            let runs = named_inputs(inputs)?
                .into_iter()
                .map(|(name, p)| Ok((name, parse_jsonl(&read(&p)?, &p.display().to_string())?)))
                .collect::<Result<Vec<_>>>()?;
            write(out, &metrics_plot(&runs, field, *log_y).to_svg())
        }
        PlotKind::Curve { inputs, out } => {
            let curves = named_inputs(inputs)?
                .into_iter()
                .map(|(name, p)| Ok((name, parse_curve_csv(&read(&p)?, &p.display().to_string())?)))
                .collect::<Result<Vec<_>>>()?;
            write(out, &curve_plot(&curves).to_svg())
        }
        PlotKind::Grid { input, out } => {
            let grid = parse_grid_csv(&read(input)?, &input.display().to_string())?;
            write(out, &heatmap_svg("loss surface", &grid))
        }
        PlotKind::Spectrum { inputs, out } => {
            let spectra = named_inputs(inputs)?
                .into_iter()
                .map(|(name, p)| {
                    Ok((name, parse_spectrum_json(&read(&p)?, &p.display().to_string())?))
                })
                .collect::<Result<Vec<_>>>()?;
            write(out, &spectrum_svg("Hessian spectrum", &spectra))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume, out } => cmd_train(&config, resume.as_deref(), &out),
        Command::Sample { checkpoint, n, seed, raw, out } => cmd_sample(&checkpoint, n, seed, raw, &out),
        Command::Consistency { config, models, m, out } => cmd_consistency(&config, models, m, &out),
        Command::Landscape1d { a, b, points, raw, filter, out } => {
            let ca = Checkpoint::load(&a)?;
            let cb = Checkpoint::load(&b)?;
            let obj = objective(&ca, &filter)?;
            let mut curve =
                interpolate_1d(&obj, &params_of(&ca, raw), &params_of(&cb, raw), &unit_grid(points))?;
            curve.timestep_filter = Some(filter.filter());
            println!("mean |second difference| = {:.6e}", curve.mean_abs_second_difference());
            write(&out, &curve.to_csv())
        }
        Command::Landscape2d { checkpoint, grid, span, normalization, direction_seed, raw, filter, out } => {
            let c = Checkpoint::load(&checkpoint)?;
            let obj = objective(&c, &filter)?;
            let theta = params_of(&c, raw);
            let norm = match normalization {
                Normalization::None => DirectionNormalization::None,
                Normalization::Layerwise => DirectionNormalization::Layerwise,
            };
            let (d1, d2) = random_direction_pair(obj.model.layout(), &theta, norm, direction_seed)?;
            let axis = centred_grid(grid, span);
            let mut surface = surface_2d(&obj, &theta, &d1, &d2, &axis, &axis)?;
            surface.timestep_filter = Some(filter.filter());
            write(&out, &surface.to_csv())
        }
        Command::Hessian { checkpoint, m, probe_seed, raw, filter, out } => {
            let c = Checkpoint::load(&checkpoint)?;
            let obj = objective(&c, &filter)?;
            let s = lanczos_spectrum(&obj, &params_of(&c, raw), m, probe_seed)?;
            println!("lambda1 {:.6}  mean {:.6}  var {:.6}", s.lambda1, s.mean_mu, s.var_sigma2);
            write(&out, &serde_json::to_string_pretty(&s).map_err(Error::from)?)
        }
        Command::Compare { config, baseline, optimized, seeds, out } => {
            cmd_compare(&config, baseline.as_deref(), optimized.as_deref(), seeds, &out)
        }
        Command::Plot { kind } => cmd_plot(&kind),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::Parse { .. } | Error::Json(_) => 2,
        Error::Divergence { .. } => 3,
        Error::Io { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
