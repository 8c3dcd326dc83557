use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use stflow_core::data::{self, dataset::parse_timestamp, prepare, prepare_fitted, FlowDataset, Frames, SynthSpec};
use stflow_core::model::{check, checkpoint, Checkpoint};
use stflow_core::tensor::Step;
use stflow_core::trainer::{self, curve_csv, HistoricalAverage, MetricsReport};
use stflow_core::{Model, ModelConfig};

use crate::config::RunConfigFile;
use crate::{CliError, ConfigArgs, VERSION};

fn header(digest: &str, seed: impl std::fmt::Display) -> String {
    format!("# stflow {} config={} seed={}\n", VERSION, digest, seed)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {}", dir.display(), e)))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfigFile, CliError> {
    RunConfigFile::load(args.config.as_deref(), &args.sets)
}

fn load_dataset(dir: Option<PathBuf>, cfg: &RunConfigFile) -> Result<FlowDataset, CliError> {
    let dir = dir
        .or_else(|| cfg.data.dir.clone())
        .ok_or_else(|| CliError::Usage("no dataset: pass --data or set data.dir".into()))?;
    Ok(FlowDataset::load(dir)?)
}

fn check_grid(model: &ModelConfig, ds: &FlowDataset) -> Result<(), CliError> {
    model.validate()?;
    let (n, m) = ds.grid();
    if model.grid != [n, m] {
        return Err(CliError::Usage(format!(
            "dataset grid is {}x{} but model.grid is {}x{}",
            n, m, model.grid[0], model.grid[1]
        )));
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--grid expects NxM, got {:?}", s));
    let (n, m) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
}

pub fn synth(
    out: &Path,
    grid: &str,
    days: usize,
    period: u32,
    seed: u64,
    noise: f64,
    hotspots: usize,
) -> Result<(), CliError> {
    let mut spec = SynthSpec::new(parse_grid(grid)?, days, period);
    if !(noise >= 0.0) {
        return Err(CliError::Usage(format!("--noise must be >= 0, got {}", noise)));
    }
    spec.noise = noise;
    spec.hotspots = hotspots;
    let ds = data::generate(&spec, seed)?;
    ds.save(out)?;
    println!("wrote {} frames of {}x{} to {}", ds.len(), spec.grid.0, spec.grid.1, out.display());
    Ok(())
}

const LOSS_PLOT: &str = "\
set datafile separator ','
set key autotitle columnhead
set xlabel 'epoch'
set ylabel 'training loss (MSE, normalized)'
set logscale y
";

pub fn train(args: &ConfigArgs, data: Option<PathBuf>, out: &Path, plot: bool) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    cfg.train.validate()?;
    let model_cfg = cfg.effective_model();
    let ds = load_dataset(data, &cfg)?;
    check_grid(&model_cfg, &ds)?;
    let prepared = prepare(&ds, model_cfg.closeness, &cfg.data.split()?)?;
    let digest = cfg.digest();
    let seeds = &cfg.train.seeds;
    eprintln!(
        "training {} replica(s): {} train / {} test samples, {} parameters",
        seeds.len(),
        prepared.train.len(),
        prepared.test.len(),
        Model::build(&model_cfg)?.num_params()
    );
    let (report, replicas) = trainer::run_replicas(&model_cfg, &cfg.train, &prepared, seeds)?;

    let config_json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    write_file(&out.join("config.json"), format!("{}\n", config_json))?;
    for r in &replicas {
        let extra = json!({
            "normalizer": prepared.normalizer,
            "weather": prepared.weather,
            "boundary": prepared.boundary,
            "run_digest": digest,
            "seed": r.seed,
        });
        let bytes = checkpoint::encode(&r.outcome.model, &extra);
        write_file(&out.join(format!("seed{}.ckpt", r.seed)), bytes)?;
        let curve = header(&digest, r.seed) + &curve_csv(&r.outcome.curve);
        write_file(&out.join(format!("loss_seed{}.csv", r.seed)), curve)?;
    }
    let seed_list = seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    write_file(&out.join("metrics.csv"), header(&digest, &seed_list) + &report.to_csv())?;
    if plot {
        let mut gp = String::from(LOSS_PLOT);
        let series: Vec<String> = seeds
            .iter()
            .map(|s| format!("'loss_seed{}.csv' using 1:2 with lines title 'seed {}'", s, s))
            .collect();
        let _ = writeln!(gp, "plot {}", series.join(", \\\n     "));
        write_file(&out.join("loss.gp"), gp)?;
    }
    print!("{}", report);
    Ok(())
}

struct Fitted {
    normalizer: data::Normalizer,
    weather: data::WeatherScaler,
    boundary: usize,
    digest: String,
    seed: u64,
}

fn fitted(ck: &Checkpoint) -> Result<Fitted, CliError> {
    fn field<T: serde::de::DeserializeOwned>(extra: &serde_json::Value, key: &str) -> Result<T, CliError> {
        let v = extra
            .get(key)
            .ok_or_else(|| CliError::Compat(format!("checkpoint lacks {:?}; was it written by `stflow train`?", key)))?;
        serde_json::from_value(v.clone()).map_err(|e| CliError::Compat(format!("checkpoint field {:?}: {}", key, e)))
    }
    Ok(Fitted {
        normalizer: field(&ck.extra, "normalizer")?,
        weather: field(&ck.extra, "weather")?,
        boundary: field(&ck.extra, "boundary")?,
        digest: field(&ck.extra, "run_digest")?,
        seed: field(&ck.extra, "seed")?,
    })
}

fn load_checkpoint(path: &Path, args: Option<&ConfigArgs>) -> Result<Checkpoint, CliError> {
    match args.filter(|a| a.config.is_some() || !a.sets.is_empty()) {
        Some(a) => Ok(checkpoint::load_for(path, &load_config(a)?.effective_model())?),
        None => Ok(checkpoint::load(path)?),
    }
}

pub fn evaluate(ck_path: &Path, data: &Path, args: &ConfigArgs, out: Option<&Path>) -> Result<(), CliError> {
    let ck = load_checkpoint(ck_path, Some(args))?;
    let f = fitted(&ck)?;
    let ds = FlowDataset::load(data)?;
    check_grid(&ck.model.config, &ds)?;
    let prepared = prepare_fitted(&ds, ck.model.config.closeness, f.boundary, f.normalizer, f.weather)?;
    let m = trainer::evaluate(&ck.model, &prepared.test, &prepared.normalizer)?;
    let report = MetricsReport::new(vec![(f.seed, m)])?;
    if let Some(out) = out {
        write_file(out, header(&f.digest, f.seed) + &report.to_csv())?;
    }
    print!("{}", report);
    Ok(())
}

pub fn predict(ck_path: &Path, data: &Path, at: &str, out: Option<&Path>) -> Result<(), CliError> {
    let ck = load_checkpoint(ck_path, None)?;
    let f = fitted(&ck)?;
    let ds = FlowDataset::load(data)?;
    check_grid(&ck.model.config, &ds)?;
    let at = parse_timestamp(at)?;
    let p = ck.model.config.closeness;
    let t = ds.index_of(at).ok_or_else(|| {
        CliError::Usage(format!(
            "{} is not a frame instant of the dataset ({} to {}, every {} min)",
            at,
            ds.timestamp(0),
            ds.timestamp(ds.len() - 1),
            ds.meta.period_minutes
        ))
    })?;
    if t < p {
        return Err(CliError::Usage(format!(
            "{} has only {} preceding frames; the model needs {}",
            at, t, p
        )));
    }
    let frames = Frames::build(&ds, &f.normalizer, &f.weather)?;
    let batch = frames.batch(&[t], p)?;
    let pred = ck.model.predict(&batch.x, &batch.e)?;
    let (n, m) = ds.grid();
    let mut csv = header(&f.digest, f.seed);
    csv += "row,col,inflow,outflow\n";
    let v = pred.data();
    for r in 0..n {
        for c in 0..m {
            let i = 2 * (r * m + c);
            let inflow = f.normalizer.denormalize(v[i] as f64);
            let outflow = f.normalizer.denormalize(v[i + 1] as f64);
            let _ = writeln!(csv, "{},{},{:.6},{:.6}", r, c, inflow, outflow);
        }
    }
    match out {
        Some(path) => write_file(path, csv),
        None => {
            print!("{}", csv);
            Ok(())
        }
    }
}

pub fn summary(args: &ConfigArgs, preset: Option<&str>, csv: Option<&Path>) -> Result<(), CliError> {
    let cfg = match preset {
        None => load_config(args)?,
        Some(_) if args.config.is_some() => {
            return Err(CliError::Usage("--preset and --config are mutually exclusive".into()))
        }
        Some(p) => {
            let base = match p {
                "taxi-bj" => ModelConfig::taxi_bj(),
                "tiny" => ModelConfig::tiny(),
                _ => ModelConfig::bike_nyc(),
            };
            RunConfigFile::with_model(&base, &args.sets)?
        }
    };
    let model_cfg = cfg.effective_model();
    let model = Model::build(&model_cfg)?;
    let s = model.summary()?;
    print!("{}", s.to_table());
    println!();
    for (block, params, flops) in s.block_totals() {
        println!("{:<10} {:>12} params {:>16} FLOPs", block, params, flops);
    }
    println!("{:<10} {:>12} params {:>16} FLOPs", "total", s.total_params, s.total_flops);
    if let Some(path) = csv {
        write_file(path, header(&cfg.digest(), model_cfg.seed) + &s.to_csv())?;
    }
    Ok(())
}

pub fn gradcheck(args: &ConfigArgs, samples: usize, seed: u64, threshold: f64) -> Result<(), CliError> {
    let model_cfg = if args.config.is_none() && args.sets.is_empty() {
        ModelConfig::tiny()
    } else {
        load_config(args)?.effective_model()
    };
    let model = Model::build(&model_cfg)?;
    let r = check::gradcheck_model(&model, samples, seed, Step::plateau())?;
    let worst = r
        .worst
        .map(|(i, e)| format!("{}[{}]", model.store.params()[i].name, e))
        .unwrap_or_else(|| "-".into());
    println!(
        "checked {} parameters: max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
        r.checked, r.max_rel_error, worst, r.analytic, r.numeric
    );
    if r.passes(threshold) {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: {:.3e} is not below {:.0e}",
            r.max_rel_error, threshold
        )))
    }
}

pub fn baseline_ha(args: &ConfigArgs, data: Option<PathBuf>, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let model_cfg = cfg.effective_model();
    let ds = load_dataset(data, &cfg)?;
    let prepared = prepare(&ds, model_cfg.closeness, &cfg.data.split()?)?;
    let ha = HistoricalAverage::fit(&prepared.test.frames, prepared.boundary)?;
    let m = ha.evaluate(&prepared.test)?;
    let report = MetricsReport::new(vec![(0, m)])?;
    if let Some(out) = out {
        write_file(out, header(&cfg.digest(), 0) + &report.to_csv())?;
    }
    print!("{}", report);
    Ok(())
}
