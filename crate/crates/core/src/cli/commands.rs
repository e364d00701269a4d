use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ablate::{concat_label, sse_label, Variant};
use super::checkpoint::{load_params, save_params};
use super::cubefile::{io_context, read_cube, CubeFile};
use super::manifest::{Manifest, ManifestRow};
use super::{AblateArgs, DehazeArgs, EvalArgs, SensitivityArgs, SynthArgs, TrainArgs};
use crate::error::{Error, Result};
use crate::fixture::desk_wavelengths;
use crate::haze::{generate_pairs, synthesize, CirrusPatch, PairConfig, Split};
use crate::hsi::{rgb_composite, Augmentation, HsiCube, WavelengthTable};
use crate::metrics::{fmt_value, MetricReport, MetricWindows};
use crate::network::{forward, ModelParams, NetConfig};
use crate::training::{
    split_dataset, train_loop, write_history, Dataset, EpochRecord, Sample, TrainConfig,
    TrainOutcome, DEFAULT_SPLIT,
};

/// Contents of a `--config` TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Band count is always taken from the data.
    pub network: NetConfig,
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_context(e, p))?;
                toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
            }
        }
    }
}

fn write_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn hsif_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_context(e, dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hsif"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("no .hsif files in {}", dir.display())));
    }
    Ok(files)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let clean_files = hsif_files(&args.clean)?;
    let mut cleans = Vec::new();
    let mut wavelengths = None;
    for p in &clean_files {
        let f = CubeFile::read(p)?;
        if wavelengths.is_none() {
            wavelengths = f.wavelengths.clone();
        }
        cleans.push(f.cube);
    }
    let wl = match wavelengths {
        Some(w) => WavelengthTable::with_visible_edge(w)?,
        None => desk_wavelengths(cleans[0].bands())?,
    };
    let patches = hsif_files(&args.cirrus)?
        .iter()
        .map(|p| CirrusPatch::from_cube(&read_cube(p)?))
        .collect::<Result<Vec<_>>>()?;
    let config = PairConfig {
        alphas: args.alphas.clone(),
        gamma: args.gamma,
        augmentations: if args.no_augment {
            vec![Augmentation::Identity]
        } else {
            Augmentation::ALL.to_vec()
        },
        seed: args.seed,
        ..PairConfig::default()
    };
    let pairs = generate_pairs(&cleans, &patches, &wl, &config)?;

    let pair_dir = args.out.join("pairs");
    let pattern_dir = args.out.join("patterns");
    fs::create_dir_all(&pair_dir)?;
    fs::create_dir_all(&pattern_dir)?;
    for (j, p) in patches.iter().enumerate() {
        CubeFile::new(p.to_cube()).write(&pattern_dir.join(format!("pattern_{j}.hsif")))?;
    }
    let centers = wl.centers().to_vec();
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let clean = format!("pairs/{}_clean.hsif", pair.id);
        let hazy = format!("pairs/{}_hazy.hsif", pair.id);
        CubeFile::with_wavelengths(pair.clean.clone(), centers.clone())?.write(&args.out.join(&clean))?;
        CubeFile::with_wavelengths(pair.hazy.clone(), centers.clone())?.write(&args.out.join(&hazy))?;
        rows.push(ManifestRow {
            pair_id: pair.id,
            clean,
            hazy,
            alpha: pair.alpha,
            pattern: format!("patterns/pattern_{}.hsif", pair.pattern_index),
            split: pair.split,
        });
    }
    let manifest = Manifest {
        dir: args.out.clone(),
        rows,
    };
    let path = args.out.join("manifest.csv");
    manifest.write(&path)?;
    writeln!(out, "pairs={}", pairs.len()).map_err(write_err)?;
    writeln!(out, "manifest={}", path.display()).map_err(write_err)?;
    Ok(())
}

/// Train/val/test samples loaded from a manifest.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub wavelengths: WavelengthTable,
}

impl ExperimentData {
    /// Uses the manifest's split labels; when no row is labeled `val`, re-splits
    /// all pairs 90/5/5 with `seed`.
    pub fn from_manifest(manifest: &Manifest, seed: u64) -> Result<Self> {
        let wavelengths = manifest.wavelengths()?;
        let load = |split: Split| -> Result<Vec<Sample>> {
            manifest.rows_in(split).map(|r| manifest.load_sample(r)).collect()
        };
        let val = load(Split::Val)?;
        if val.is_empty() {
            let all = manifest
                .rows
                .iter()
                .map(|r| manifest.load_sample(r))
                .collect::<Result<Vec<_>>>()?;
            let s = split_dataset(&all, DEFAULT_SPLIT, seed)?;
            return Ok(Self {
                train: s.train,
                val: s.val,
                test: s.test,
                wavelengths,
            });
        }
        Ok(Self {
            train: load(Split::Train)?,
            val,
            test: load(Split::Test)?,
            wavelengths,
        })
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn dataset(&self) -> Dataset {
        Dataset {
            train: self.train.clone(),
            val: self.val.clone(),
            wavelengths: self.wavelengths.clone(),
        }
    }

    /// Test split, or validation when no test pairs exist.
    pub fn held_out(&self) -> &[Sample] {
        if self.test.is_empty() {
            &self.val
        } else {
            &self.test
        }
    }
}

fn epoch_line(r: &EpochRecord) -> String {
    format!(
        "epoch={} lr={} train_total={:.6} train_rmrae={:.6} train_sparsity={:.6} val_rmrae={:.6}",
        r.epoch, r.lr, r.train_total, r.train_rmrae, r.train_sparsity, r.val_rmrae
    )
}

fn train_with(
    data: &ExperimentData,
    net: &NetConfig,
    train: &TrainConfig,
    out: &mut dyn Write,
) -> Result<TrainOutcome> {
    let net = NetConfig {
        bands: data.bands(),
        ..net.clone()
    };
    let init = ModelParams::init(&net, train.seed)?;
    let mut failed = None;
    let outcome = train_loop(init, &data.dataset(), train, |r| {
        if failed.is_none() {
            failed = writeln!(out, "{}", epoch_line(r)).err();
        }
    })?;
    if let Some(e) = failed {
        return Err(write_err(e));
    }
    Ok(outcome)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(m) = args.max_epochs {
        cfg.training.max_epochs = m;
    }
    let manifest = Manifest::read(&args.data)?;
    let data = ExperimentData::from_manifest(&manifest, cfg.training.seed)?;
    let outcome = train_with(&data, &cfg.network, &cfg.training, out)?;
    save_params(&args.out, &outcome.params)?;
    let history = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    let file = fs::File::create(&history).map_err(|e| io_context(e, &history))?;
    write_history(file, &outcome.history)?;
    if let Some(b) = outcome.best_epoch {
        writeln!(out, "best_epoch={b}").map_err(write_err)?;
    }
    writeln!(out, "checkpoint={}", args.out.display()).map_err(write_err)?;
    writeln!(out, "history={}", history.display()).map_err(write_err)?;
    Ok(())
}

/// Raw network output. Not clamped: a clamp can zero whole spectra, which SAM rejects.
pub fn dehaze_cube(hazy: &HsiCube, params: &ModelParams) -> Result<HsiCube> {
    forward(hazy, params)
}

/// Parses `r,g,b` 1-based band numbers into 0-based indices.
pub fn parse_rgb(s: &str, bands: usize) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!("--rgb expects three band numbers, got '{s}'")));
    }
    let mut idx = [0usize; 3];
    for (slot, p) in idx.iter_mut().zip(parts) {
        let b: usize = p
            .parse()
            .map_err(|_| Error::Parameter(format!("band number '{p}' is not a positive integer")))?;
        if b == 0 || b > bands {
            return Err(Error::dim(format!("band {b} outside 1..={bands}")));
        }
        *slot = b - 1;
    }
    Ok(idx)
}

pub fn cmd_dehaze(args: &DehazeArgs, out: &mut dyn Write) -> Result<()> {
    let input = CubeFile::read(&args.input)?;
    let params = load_params(&args.ckpt)?;
    if input.cube.bands() != params.config.bands {
        return Err(Error::dim(format!(
            "{} has {} bands, checkpoint expects {}",
            args.input.display(),
            input.cube.bands(),
            params.config.bands
        )));
    }
    let rgb = args
        .composite
        .as_ref()
        .map(|_| parse_rgb(&args.rgb, input.cube.bands()))
        .transpose()?;
    let start = Instant::now();
    let y = dehaze_cube(&input.cube, &params)?;
    let seconds = start.elapsed().as_secs_f64();
    CubeFile {
        cube: y.clone(),
        wavelengths: input.wavelengths,
    }
    .write(&args.out)?;
    if let (Some(path), Some([r, g, b])) = (&args.composite, rgb) {
        let img = rgb_composite(&y, r, g, b)?;
        image::save_buffer(path, &img.pixels, img.width as u32, img.height as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    writeln!(out, "time={seconds:.6}").map_err(write_err)?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let reference = read_cube(&args.reference)?;
    let estimate = read_cube(&args.estimate)?;
    let defaults = MetricWindows::default();
    let windows = MetricWindows {
        uiqi: args.uiqi_window.unwrap_or(defaults.uiqi),
        ssim: args.ssim_window.unwrap_or(defaults.ssim),
    };
    let report = MetricReport::compute(&reference, &estimate, windows)?;
    write!(out, "{}", report.to_key_values()).map_err(write_err)?;
    if let Some(path) = &args.csv {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_context(e, path))?;
        if fresh {
            writeln!(f, "{}", MetricReport::csv_header())?;
        }
        writeln!(f, "{}", report.to_csv_row())?;
    }
    Ok(())
}

fn mean_report(reports: &[MetricReport], windows: MetricWindows) -> MetricReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    MetricReport {
        psnr: avg(|r| r.psnr),
        uiqi: avg(|r| r.uiqi),
        sam: avg(|r| r.sam),
        ssim: avg(|r| r.ssim),
        mrae: avg(|r| r.mrae),
        rmrae: avg(|r| r.rmrae),
        n_skipped_windows: reports.iter().map(|r| r.n_skipped_windows).sum(),
        windows,
    }
}

/// Mean metrics of the dehazed output and of the hazy input over `samples`,
/// with windows fitted to the image size.
pub fn held_out_report(params: &ModelParams, samples: &[Sample]) -> Result<(MetricReport, MetricReport)> {
    if samples.is_empty() {
        return Err(Error::Parameter("no held-out pairs to score".into()));
    }
    let windows = MetricWindows::fitted(samples[0].clean.height(), samples[0].clean.width());
    let mut dehazed = Vec::new();
    let mut hazy = Vec::new();
    for s in samples {
        let y = dehaze_cube(&s.hazy, params)?;
        dehazed.push(MetricReport::compute(&s.clean, &y, windows)?);
        hazy.push(MetricReport::compute(&s.clean, &s.hazy, windows)?);
    }
    Ok((mean_report(&dehazed, windows), mean_report(&hazy, windows)))
}

pub const ABLATION_HEADER: &str = "variant,abs,sse,concat,loss,val_rmrae,psnr,uiqi,sam,ssim";

/// Scores of one trained variant.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub net: NetConfig,
    pub sparsity: bool,
    /// Best validation rMRAE reached during training.
    pub val_rmrae: f64,
    /// Mean held-out metrics of the best checkpoint.
    pub report: MetricReport,
}

impl AblationRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            if self.net.abs { "on" } else { "off" },
            sse_label(self.net.sse),
            concat_label(self.net.concat),
            if self.sparsity { "rmrae+sparsity" } else { "rmrae" },
            fmt_value(self.val_rmrae),
            fmt_value(self.report.psnr),
            fmt_value(self.report.uiqi),
            fmt_value(self.report.sam),
            fmt_value(self.report.ssim),
        )
    }
}

/// Trains one variant from the shared base configuration and scores it.
pub fn run_variant(
    variant: Variant,
    data: &ExperimentData,
    base: &RunConfig,
    out: &mut dyn Write,
) -> Result<(AblationRow, TrainOutcome)> {
    let (net, train) = variant.configure(&base.network, &base.training);
    let outcome = train_with(data, &net, &train, out)?;
    let val_rmrae = outcome
        .history
        .iter()
        .map(|r| r.val_rmrae)
        .fold(f64::INFINITY, f64::min);
    let val_rmrae = if val_rmrae.is_finite() {
        val_rmrae
    } else {
        crate::training::evaluate_rmrae(&outcome.params, &data.val)?
    };
    let (report, _) = held_out_report(&outcome.params, data.held_out())?;
    let row = AblationRow {
        variant,
        net: outcome.params.config.clone(),
        sparsity: train.sparsity,
        val_rmrae,
        report,
    };
    Ok((row, outcome))
}

pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let variants = Variant::parse_list(&args.variants)?;
    let mut base = RunConfig::load(args.config.as_deref())?;
    if let Some(m) = args.max_epochs {
        base.training.max_epochs = m;
    }
    let manifest = Manifest::read(&args.data)?;
    let data = ExperimentData::from_manifest(&manifest, base.training.seed)?;
    let mut lines = vec![ABLATION_HEADER.to_string()];
    for v in variants {
        writeln!(out, "variant={v}").map_err(write_err)?;
        let (row, _) = run_variant(v, &data, &base, &mut std::io::sink())?;
        let line = row.to_csv();
        writeln!(out, "{line}").map_err(write_err)?;
        lines.push(line);
    }
    fs::write(&args.out, lines.join("\n") + "\n").map_err(|e| io_context(e, &args.out))?;
    Ok(())
}

/// One sensitivity trial.
#[derive(Debug, Clone)]
pub struct SensitivityRow {
    pub trial: usize,
    pub pair_id: usize,
    pub alpha: f64,
    pub report: MetricReport,
}

type MetricGetter = fn(&MetricReport) -> f64;

const SENSITIVITY_METRICS: [(&str, MetricGetter); 6] = [
    ("psnr", |r| r.psnr),
    ("uiqi", |r| r.uiqi),
    ("sam", |r| r.sam),
    ("ssim", |r| r.ssim),
    ("mrae", |r| r.mrae),
    ("rmrae", |r| r.rmrae),
];

/// Draws `trials` haze levels, re-synthesizes a random pair at each and scores the checkpoint.
pub fn sensitivity_trials(
    manifest: &Manifest,
    params: &ModelParams,
    trials: usize,
    seed: u64,
    gamma: f64,
) -> Result<Vec<SensitivityRow>> {
    if trials == 0 {
        return Err(Error::Parameter("sensitivity needs at least one trial".into()));
    }
    let wl = manifest.wavelengths()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let alpha = rng.random_range(0.5..=1.0);
        let row = &manifest.rows[rng.random_range(0..manifest.rows.len())];
        let clean = read_cube(&manifest.resolve(&row.clean))?;
        let patch = CirrusPatch::from_cube(&read_cube(&manifest.resolve(&row.pattern))?)?;
        let (hazy, _) = synthesize(&clean, &patch, &wl, alpha, gamma)?;
        let y = dehaze_cube(&hazy, params)?;
        let windows = MetricWindows::fitted(clean.height(), clean.width());
        rows.push(SensitivityRow {
            trial,
            pair_id: row.pair_id,
            alpha,
            report: MetricReport::compute(&clean, &y, windows)?,
        });
    }
    Ok(rows)
}

/// Per-trial rows followed by `mean` and population `std` rows.
pub fn sensitivity_csv(rows: &[SensitivityRow]) -> String {
    let mut s = String::from("trial,pair_id,alpha");
    for (k, _) in SENSITIVITY_METRICS {
        s.push(',');
        s.push_str(k);
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{}", r.trial, r.pair_id, r.alpha));
        for (_, f) in SENSITIVITY_METRICS {
            s.push(',');
            s.push_str(&fmt_value(f(&r.report)));
        }
        s.push('\n');
    }
    let mut columns: Vec<Vec<f64>> = vec![rows.iter().map(|r| r.alpha).collect()];
    for (_, f) in SENSITIVITY_METRICS {
        columns.push(rows.iter().map(|r| f(&r.report)).collect());
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = columns.iter().map(|v| v.iter().sum::<f64>() / n).collect();
    let stds: Vec<f64> = columns
        .iter()
        .zip(&means)
        .map(|(v, m)| (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
        .collect();
    for (label, values) in [("mean", &means), ("std", &stds)] {
        s.push_str(label);
        s.push(',');
        for v in values {
            s.push(',');
            s.push_str(&fmt_value(*v));
        }
        s.push('\n');
    }
    s
}

pub fn cmd_sensitivity(args: &SensitivityArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::read(&args.data)?;
    let params = load_params(&args.ckpt)?;
    let rows = sensitivity_trials(&manifest, &params, args.trials, args.seed, args.gamma)?;
    let csv = sensitivity_csv(&rows);
    fs::write(&args.out, &csv).map_err(|e| io_context(e, &args.out))?;
    for line in csv.lines().rev().take(2).collect::<Vec<_>>().into_iter().rev() {
        writeln!(out, "{line}").map_err(write_err)?;
    }
    Ok(())
}
