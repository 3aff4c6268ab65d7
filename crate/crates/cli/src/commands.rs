use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use fsnet_core::config::RunConfig;
use fsnet_core::dataset::{
    clip_seed, generate_clips, obtain_clips, to_samples, write_dataset, ClipRecord, DataConfig, MANIFEST_NAME,
};
use fsnet_core::dlnet::Rounding;
use fsnet_core::energy::{bundled_rows, check_row, count_ops, parse_rows, render_csv, render_table, EnergyReport, Verdict};
use fsnet_core::events::{generate_scene, load_events, EventFormat, LoadOptions, SyntheticSceneSpec};
use fsnet_core::mestor::{encode as mestor_encode, write_pgm, MestorStats};
use fsnet_core::network::{
    gradient_check_strided, load_checkpoint, save_checkpoint, train as run_training, verify_equivalence, Network, Task,
};
use fsnet_core::Error as CoreError;

use crate::Common;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

const EQUIVALENCE_THRESHOLD: f64 = 1e-9;
const GRADIENT_THRESHOLD: f64 = 1e-4;
const GRADIENT_STEP: f64 = 1e-4;

/// Marks errors caused by bad configuration or input, reported with exit 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Invalid(e.to_string()))
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.downcast_ref::<Invalid>().is_some()) {
        EXIT_INVALID
    } else {
        EXIT_FAILURE
    }
}

/// Config file (if any) with `--seed` applied.
fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(common: &Common, spec: Option<&Path>, count: Option<usize>, task: Option<Task>, out: &Path) -> Result<u8> {
    let mut cfg = load_config(common)?;
    if let Some(n) = count {
        cfg.data.clips = n;
    }
    if let Some(t) = task {
        cfg.train.task = t;
    }
    cfg.data.validate().map_err(invalid)?;

    let clips: Vec<ClipRecord> = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let base: SyntheticSceneSpec =
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            base.validate().map_err(invalid)?;
            let seed = common.seed.unwrap_or(base.seed);
            (0..cfg.data.clips)
                .map(|i| {
                    generate_scene(&SyntheticSceneSpec {
                        seed: clip_seed(seed, i),
                        ..base.clone()
                    })
                    .map(ClipRecord::from)
                })
                .collect::<Result<_, _>>()
                .map_err(invalid)?
        }
        None => generate_clips(&cfg.data, cfg.train.task).map_err(invalid)?,
    };
    write_dataset(out, &clips)?;
    let events: usize = clips.iter().map(|c| c.stream.len()).sum();
    println!("wrote {} clips ({events} events) to {}", clips.len(), out.display());
    Ok(0)
}

pub struct EncodeArgs {
    pub input: PathBuf,
    pub geometry: Option<(u32, u32)>,
    pub reorder_window: u64,
    pub bins: Option<usize>,
    pub dt_us: Option<f64>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EncodeStats {
    source: String,
    width: usize,
    height: usize,
    bins: usize,
    #[serde(flatten)]
    stats: MestorStats,
    /// Kept pixels over pixels that saw any event.
    kept_pixel_ratio: f64,
}

pub fn encode(common: &Common, args: &EncodeArgs) -> Result<u8> {
    let mut cfg = load_config(common)?;
    if let Some(n) = args.bins {
        cfg.mestor.n_bins = n;
    }
    if let Some(dt) = args.dt_us {
        cfg.mestor.dt_us = Some(dt);
    }
    cfg.mestor.validate().map_err(invalid)?;
    let format = EventFormat::from_path(&args.input);
    let geometry = match (args.geometry, format) {
        (Some(g), _) => Some(g),
        (None, EventFormat::Csv) => Some((cfg.data.width, cfg.data.height)),
        (None, EventFormat::Evt1) => None,
    };
    let opts = LoadOptions {
        geometry,
        reorder_window: args.reorder_window,
    };
    let stream = load_events(&args.input, format, &opts).map_err(|e| match e {
        CoreError::Io { .. } => anyhow!(e),
        other => invalid(other),
    })?;
    let frame = mestor_encode(&stream, &cfg.mestor).map_err(invalid)?;

    create_dir(&args.out)?;
    for (name, values) in frame.channels() {
        write_pgm(&args.out.join(format!("{name}.pgm")), values, frame.width, frame.height)?;
    }
    let stats = EncodeStats {
        source: args.input.display().to_string(),
        width: frame.width,
        height: frame.height,
        bins: cfg.mestor.n_bins,
        kept_pixel_ratio: if frame.stats.event_pixels == 0 {
            0.0
        } else {
            frame.stats.kept_pixels as f64 / frame.stats.event_pixels as f64
        },
        stats: frame.stats,
    };
    write_json(&args.out.join("stats.json"), &stats)?;
    println!(
        "{} events, {} event pixels, {} kept -> {}",
        stats.stats.event_count,
        stats.stats.event_pixels,
        stats.stats.kept_pixels,
        args.out.display()
    );
    Ok(0)
}

pub fn train(
    common: &Common,
    data: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    task: Option<Task>,
    out: &Path,
) -> Result<u8> {
    let mut cfg = load_config(common)?;
    if let Some(dir) = data {
        cfg.data.dir = Some(dir);
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = lr {
        cfg.train.optimizer.lr = lr;
    }
    if let Some(t) = task {
        cfg.train.task = t;
    }
    cfg.validate().map_err(invalid)?;
    if let Some(dir) = &cfg.data.dir {
        if !dir.join(MANIFEST_NAME).is_file() {
            return Err(invalid(format!("dataset missing: no {MANIFEST_NAME} in {}", dir.display())));
        }
    }

    let task = cfg.train.task;
    let clips = obtain_clips(&cfg.data, task)?;
    if clips.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    if clips.iter().any(|c| (c.stream.width, c.stream.height) != (cfg.data.width, cfg.data.height)) {
        return Err(invalid(format!(
            "clips do not match the configured {}x{} geometry",
            cfg.data.width, cfg.data.height
        )));
    }
    let samples = to_samples(&clips, &cfg.mestor, task, cfg.loss.spike_map).map_err(invalid)?;
    let net = Network::new(cfg.architecture()?, cfg.network_seed())?;

    create_dir(out)?;
    let log_path = out.join("metrics.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut log_err = None;
    let outcome = run_training(net, &samples, &cfg.train, &cfg.loss.st_iou(), |r| {
        let score = match (r.accuracy, r.mean_iou) {
            (Some(a), _) => format!("accuracy {a:.4}"),
            (_, Some(c)) => format!("mean CIoU {c:.4}"),
            _ => String::new(),
        };
        eprintln!("epoch {:>3}  loss {:.5}  {score}  fr {:.4}  {:.1}s", r.epoch, r.loss, r.firing_rate, r.wall_time_s);
        let line = serde_json::to_string(r).map_err(anyhow::Error::from);
        if let Err(e) = line.and_then(|l| writeln!(log, "{l}").map_err(anyhow::Error::from)) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.context(format!("writing {}", log_path.display())));
    }
    log.flush()?;

    let resolved = serde_json::to_value(&cfg)?;
    save_checkpoint(&out.join("model.ckpt"), &outcome.net, outcome.log.len(), Some(resolved))?;
    write_json(&out.join("config.json"), &cfg)?;
    if let Some(reason) = outcome.diverged {
        eprintln!("training diverged: {reason}; kept the weights from the start of that epoch");
        return Ok(EXIT_DIVERGED);
    }
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} epochs; final loss {:.5}; checkpoint {}",
            last.epoch,
            last.loss,
            out.join("model.ckpt").display()
        );
    } else {
        println!("no epochs run; checkpoint {}", out.join("model.ckpt").display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct VerifyReport {
    rounding: Rounding,
    equivalence_samples: usize,
    max_discrepancy: f64,
    /// False when the rounding mode makes the two passes differ by design.
    equivalence_checked: bool,
    equivalence_pass: bool,
    gradient_samples: usize,
    gradient_max_rel_err: f64,
    gradient_worst_parameter: String,
    gradient_parameters_checked: usize,
    gradient_skipped: usize,
    gradient_pass: bool,
}

pub struct VerifyArgs {
    pub samples: usize,
    pub grad_samples: usize,
    pub grad_params: usize,
}

pub fn verify(common: &Common, checkpoint: Option<&Path>, args: &VerifyArgs, out: Option<&Path>) -> Result<u8> {
    let (samples, grad_samples) = (args.samples, args.grad_samples);
    let cfg = load_config(common)?;
    cfg.validate().map_err(invalid)?;
    let net = match checkpoint {
        Some(path) => load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?.0,
        None => Network::new(cfg.architecture()?, cfg.network_seed())?,
    };
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let rounding = net.arch.rounding;
    let discrepancy = verify_equivalence(&net, samples, seed)?;
    let checked = rounding == Rounding::Floor;
    let stride = match args.grad_params {
        0 => 1,
        cap => net.parameter_count().div_ceil(cap).max(1),
    };
    let relaxed = net.with_rounding(Rounding::Identity);
    let grad = gradient_check_strided(&relaxed, grad_samples, seed, GRADIENT_STEP, 0.0, stride)?;

    let report = VerifyReport {
        rounding,
        equivalence_samples: samples,
        max_discrepancy: discrepancy,
        equivalence_checked: checked,
        equivalence_pass: !checked || discrepancy < EQUIVALENCE_THRESHOLD,
        gradient_samples: grad_samples,
        gradient_max_rel_err: grad.max_rel_err,
        gradient_worst_parameter: grad.worst_parameter.clone(),
        gradient_parameters_checked: grad.parameters_checked,
        gradient_skipped: grad.skipped,
        gradient_pass: grad.max_rel_err < GRADIENT_THRESHOLD,
    };
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    if checked {
        println!(
            "dual-mode max discrepancy {discrepancy:.3e} over {samples} inputs (threshold {EQUIVALENCE_THRESHOLD:.0e}): {}",
            verdict(report.equivalence_pass)
        );
    } else {
        println!(
            "dual-mode max discrepancy {discrepancy:.3e} over {samples} inputs; equivalence check skipped: \
             rounding is {rounding:?}, only floor rounding matches spike mode"
        );
    }
    println!(
        "gradient max relative error {:.3e} over {} parameters, {} skipped at clip edges (threshold {GRADIENT_THRESHOLD:.0e}): {}",
        grad.max_rel_err,
        grad.parameters_checked,
        grad.skipped,
        verdict(report.gradient_pass)
    );
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok(if report.equivalence_pass && report.gradient_pass { 0 } else { EXIT_VERIFY })
}

fn read_rows(path: &Path) -> Result<Vec<fsnet_core::energy::EnergyRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let text = if value.is_array() { text } else { format!("[{text}]") };
    parse_rows(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn energy(
    common: &Common,
    rows: Option<&Path>,
    checkpoint: Option<&Path>,
    tolerance: Option<f64>,
    out: Option<&Path>,
) -> Result<u8> {
    let cfg = load_config(common)?;
    let tolerance = tolerance.unwrap_or(cfg.energy.tolerance);
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(invalid("tolerance must be >= 0"));
    }
    let rows = match rows.or(cfg.energy.rows.as_deref()) {
        Some(path) => read_rows(path)?,
        None => bundled_rows(),
    };
    let checks: Vec<_> = rows.iter().map(|r| check_row(r, tolerance)).collect();
    let table = render_table(&checks);
    print!("{table}");

    let measured = match checkpoint {
        Some(path) => {
            let (net, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            let input = net.arch.input;
            let data = DataConfig {
                clips: cfg.energy.samples.max(1),
                width: input.w as u32,
                height: input.h as u32,
                ..cfg.data.clone()
            };
            let clips = generate_clips(&data, cfg.train.task).map_err(invalid)?;
            let batch: Vec<_> = to_samples(&clips, &cfg.mestor, Task::Classification, cfg.loss.spike_map)
                .map_err(invalid)?
                .into_iter()
                .map(|s| s.input)
                .collect();
            let report = EnergyReport::from_counts(count_ops(&net, &batch)?);
            println!(
                "measured on {} clips: OP_AC {} fr {:.4} sp {:.4} K {}; ANN {:.4e} mJ, LIF {:.4e} mJ, FSN {:.4e} mJ",
                batch.len(),
                report.counts.op_ac,
                report.counts.fr,
                report.counts.sp,
                report.counts.k,
                report.ann_j * 1e3,
                report.lif_j * 1e3,
                report.fsn_j * 1e3
            );
            Some(report)
        }
        None => None,
    };

    if let Some(dir) = out {
        create_dir(dir)?;
        fs::write(dir.join("energy.txt"), &table)?;
        fs::write(dir.join("energy.csv"), render_csv(&checks))?;
        if let Some(r) = &measured {
            write_json(&dir.join("measured.json"), r)?;
        }
    }
    let outside = checks.iter().filter(|c| c.verdict == Verdict::Outside).count();
    if outside > 0 {
        eprintln!("{outside} row(s) outside the {:.1}% tolerance", tolerance * 100.0);
        return Ok(EXIT_VERIFY);
    }
    Ok(0)
}
