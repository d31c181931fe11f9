//! Benchmark driver: corpus ingestion, experiment configuration, ablation
//! grids, metric aggregation, significance testing and report emission.
//!
//! Configuration is a single JSON document so ablation grids are
//! reviewable artifacts. The row grid is (image x sigma x method x seed);
//! rows are emitted in lexicographic order of that tuple regardless of
//! execution order, and a rerun of the same config produces a
//! byte-identical `report.csv`. Wall-clock runtimes are inherently
//! nondeterministic and therefore appear only in `report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{load_pgm, ImageGrid};
use crate::loss::{LossConfig, TermValues};
use crate::metrics::{paired_t_test, psnr, ssim, SsimParams};
use crate::nlm::{nlm_denoise, NlmParams};
use crate::noise::{add_awgn, estimate_sigma, generate_phantom, NoiseModel, PhantomSpec};
use crate::optim::{denoise, OptimizationTrace, OptimizerConfig};
use crate::segment::{felzenszwalb_segment, piecewise_target, SegmentationParams};

/// Everything one `denoise` CLI invocation needs; all sections default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseJobConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub segmentation: SegmentationParams,
}

/// Runs segmentation on the noisy observation, builds the piecewise
/// target, and optimizes the decomposition. The target is skipped when
/// the piecewise term is disabled.
pub fn run_whiteprior(
    x: &ImageGrid,
    job: &DenoiseJobConfig,
) -> Result<(crate::loss::DecompositionState, OptimizationTrace)> {
    let m_target = if job.loss.weight_pc > 0.0 {
        let labels = felzenszwalb_segment(x, &job.segmentation);
        piecewise_target(x, &labels)?
    } else {
        x.clone()
    };
    denoise(x, &job.loss, &job.optimizer, &m_target)
}

/// The five loss configurations of the ablation study, derived from a base
/// config by zeroing weights: rec+pc, rec+pc+tv, rec+pc+tv+ac,
/// rec+pc+tv+st, and the full set.
pub fn ablation_grid(base: &LossConfig) -> Vec<LossConfig> {
    let zeroed = |ac: bool, st: bool, tv: bool| {
        let mut config = base.clone();
        if ac {
            config.weight_ac = 0.0;
        }
        if st {
            config.weight_st = 0.0;
        }
        if tv {
            config.weight_tv = 0.0;
        }
        config
    };
    vec![
        zeroed(true, true, true),
        zeroed(true, true, false),
        zeroed(false, true, false),
        zeroed(true, false, false),
        base.clone(),
    ]
}

fn default_phantom_width() -> usize {
    128
}

fn default_phantom_region_count() -> usize {
    5
}

fn default_phantom_levels() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

/// Where clean images come from: a directory of PGM files or a batch of
/// generated phantoms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CorpusSpec {
    Dir {
        path: PathBuf,
    },
    Phantoms {
        count: usize,
        #[serde(default = "default_phantom_width")]
        width: usize,
        #[serde(default = "default_phantom_width")]
        height: usize,
        #[serde(default = "default_phantom_region_count")]
        region_count: usize,
        #[serde(default = "default_phantom_levels")]
        intensity_levels: Vec<f64>,
        #[serde(default)]
        seed: u64,
    },
}

fn default_whiteprior_name() -> String {
    "whiteprior".into()
}

fn default_nlm_name() -> String {
    "nlm".into()
}

fn default_patch_radius() -> usize {
    3
}

fn default_search_radius() -> usize {
    10
}

/// A benchmark method: the prior-driven decomposition with its full
/// configuration, or the NLM baseline. `sigma` values here are on the
/// 8-bit scale, matching the CLI convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MethodSpec {
    Whiteprior {
        #[serde(default = "default_whiteprior_name")]
        name: String,
        #[serde(default)]
        loss: LossConfig,
        #[serde(default)]
        optimizer: OptimizerConfig,
        #[serde(default)]
        segmentation: SegmentationParams,
    },
    Nlm {
        #[serde(default = "default_nlm_name")]
        name: String,
        /// 8-bit-scale noise level; blind-estimated per image if absent.
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default = "default_patch_radius")]
        patch_radius: usize,
        #[serde(default = "default_search_radius")]
        search_radius: usize,
        /// Weight decay override; defaults to 0.55 sigma.
        #[serde(default)]
        filter_h: Option<f64>,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &str {
        match self {
            MethodSpec::Whiteprior { name, .. } => name,
            MethodSpec::Nlm { name, .. } => name,
        }
    }
}

/// The full experiment grid. Sigmas are on the 8-bit scale (e.g. 25 means
/// 25/255 of full range).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub sigmas: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidParameter(
                "sigmas, methods and seeds must all be non-empty".into(),
            ));
        }
        if let Some(&bad) = self.sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma values must be positive and finite, got {bad}"
            )));
        }
        if let CorpusSpec::Phantoms { count, .. } = &self.corpus {
            if *count == 0 {
                return Err(Error::EmptyCorpus);
            }
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        names.sort_unstable();
        for pair in names.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::DuplicateMethodName(pair[0].to_string()));
            }
        }
        Ok(())
    }
}

/// One (image, sigma, method, seed) result.
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub image: String,
    pub sigma: f64,
    pub method: String,
    pub seed: u64,
    /// `None` means success; `Some` carries the failure message.
    pub failure: Option<String>,
    pub psnr: f64,
    pub ssim: f64,
    /// Blind noise estimate on the 8-bit scale.
    pub sigma_hat: f64,
    /// Final per-term losses; absent for baselines and failures.
    pub final_terms: Option<TermValues>,
    pub runtime_seconds: f64,
}

/// Mean/std aggregate over the successful rows of one (sigma, method).
#[derive(Debug, Clone)]
pub struct AggregateRecord {
    pub sigma: f64,
    pub method: String,
    pub count: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

/// Paired t-test between the PSNR lists of two methods at one sigma.
#[derive(Debug, Clone)]
pub struct TTestRecord {
    pub sigma: f64,
    pub method_a: String,
    pub method_b: String,
    pub pairs: usize,
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkReport {
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<AggregateRecord>,
    pub ttests: Vec<TTestRecord>,
}

type CorpusEntry = (String, std::result::Result<ImageGrid, String>);

fn load_corpus(corpus: &CorpusSpec) -> Result<Vec<CorpusEntry>> {
    match corpus {
        CorpusSpec::Dir { path } => {
            let mut names: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .map(|ext| ext.eq_ignore_ascii_case("pgm"))
                        .unwrap_or(false)
                })
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            Ok(names
                .into_iter()
                .map(|p| {
                    let name = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.to_string_lossy().into_owned());
                    // a corrupt file must not take the whole batch down
                    let image = load_pgm(&p).map_err(|e| e.to_string());
                    (name, image)
                })
                .collect())
        }
        CorpusSpec::Phantoms {
            count,
            width,
            height,
            region_count,
            intensity_levels,
            seed,
        } => {
            if *count == 0 {
                return Err(Error::EmptyCorpus);
            }
            (0..*count)
                .map(|i| {
                    let spec = PhantomSpec {
                        width: *width,
                        height: *height,
                        region_count: *region_count,
                        intensity_levels: intensity_levels.clone(),
                        seed: seed.wrapping_add(i as u64),
                    };
                    Ok((format!("phantom_{i:03}"), Ok(generate_phantom(&spec)?)))
                })
                .collect()
        }
    }
}

struct CellOutcome {
    psnr: f64,
    ssim: f64,
    final_terms: Option<TermValues>,
}

fn run_method_cell(
    method: &MethodSpec,
    clean: &ImageGrid,
    noisy: &ImageGrid,
    sigma_hat_unit: f64,
    cell_seed: u64,
) -> Result<CellOutcome> {
    let estimate = match method {
        MethodSpec::Whiteprior {
            loss,
            optimizer,
            segmentation,
            ..
        } => {
            // the configured seed is mixed with the cell seed so different
            // noise realizations see different draw schedules
            let mut optimizer = *optimizer;
            optimizer.seed ^= cell_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let job = DenoiseJobConfig {
                loss: loss.clone(),
                optimizer,
                segmentation: *segmentation,
            };
            let (state, trace) = run_whiteprior(noisy, &job)?;
            let terms = trace.records.last().map(|r| r.terms);
            return Ok(CellOutcome {
                psnr: psnr(&state.signal.clamped01(), clean, 1.0)?,
                ssim: ssim(&state.signal.clamped01(), clean, &SsimParams::default())?,
                final_terms: terms,
            });
        }
        MethodSpec::Nlm {
            sigma,
            patch_radius,
            search_radius,
            filter_h,
            ..
        } => {
            let sigma_unit = sigma.map(|s| s / 255.0).unwrap_or(sigma_hat_unit);
            let mut params = NlmParams::for_sigma(sigma_unit);
            params.patch_radius = *patch_radius;
            params.search_radius = *search_radius;
            if let Some(h) = filter_h {
                params.filter_h = *h;
            }
            nlm_denoise(noisy, &params)?
        }
    };
    Ok(CellOutcome {
        psnr: psnr(&estimate.clamped01(), clean, 1.0)?,
        ssim: ssim(&estimate.clamped01(), clean, &SsimParams::default())?,
        final_terms: None,
    })
}

/// Runs the full experiment grid and writes `report.csv` and `report.json`
/// into `out_dir`. Per-image failures are recorded as failed rows; only
/// configuration problems abort the batch.
pub fn run_benchmark(config: &ExperimentConfig, out_dir: &Path) -> Result<BenchmarkReport> {
    config.validate()?;
    let mut images = load_corpus(&config.corpus)?;
    images.sort_by(|a, b| a.0.cmp(&b.0));

    let mut sigmas = config.sigmas.clone();
    sigmas.sort_by(|a, b| a.partial_cmp(b).expect("validated finite"));
    let mut methods: Vec<&MethodSpec> = config.methods.iter().collect();
    methods.sort_by_key(|m| m.name().to_string());
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();

    let mut cells = Vec::new();
    for (image_name, clean) in &images {
        for &sigma in &sigmas {
            for method in &methods {
                for &seed in &seeds {
                    let start = Instant::now();
                    let outcome = clean.as_ref().map_err(|e| e.clone()).and_then(|clean| {
                        let model = NoiseModel {
                            sigma: sigma / 255.0,
                            seed,
                        };
                        let noisy = add_awgn(clean, &model).map_err(|e| e.to_string())?;
                        let sigma_hat = estimate_sigma(&noisy).map_err(|e| e.to_string())?;
                        run_method_cell(method, clean, &noisy, sigma_hat, seed)
                            .map(|outcome| (outcome, sigma_hat))
                            .map_err(|e| e.to_string())
                    });
                    let runtime_seconds = start.elapsed().as_secs_f64();
                    let record = match outcome {
                        Ok((outcome, sigma_hat)) => CellRecord {
                            image: image_name.clone(),
                            sigma,
                            method: method.name().to_string(),
                            seed,
                            failure: None,
                            psnr: outcome.psnr,
                            ssim: outcome.ssim,
                            sigma_hat: sigma_hat * 255.0,
                            final_terms: outcome.final_terms,
                            runtime_seconds,
                        },
                        Err(message) => CellRecord {
                            image: image_name.clone(),
                            sigma,
                            method: method.name().to_string(),
                            seed,
                            failure: Some(message),
                            psnr: f64::NAN,
                            ssim: f64::NAN,
                            sigma_hat: f64::NAN,
                            final_terms: None,
                            runtime_seconds,
                        },
                    };
                    cells.push(record);
                }
            }
        }
    }

    let aggregates = aggregate(&cells, &sigmas, &methods);
    let ttests = pairwise_ttests(&cells, &sigmas, &methods);

    let report = BenchmarkReport {
        cells,
        aggregates,
        ttests,
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("report.csv");
    fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = out_dir.join("report.json");
    let json_text = serde_json::to_string_pretty(&report.to_json())
        .expect("report JSON serialization cannot fail");
    fs::write(&json_path, json_text).map_err(|e| Error::io(&json_path, e))?;

    Ok(report)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(
    cells: &[CellRecord],
    sigmas: &[f64],
    methods: &[&MethodSpec],
) -> Vec<AggregateRecord> {
    let mut out = Vec::new();
    for &sigma in sigmas {
        for method in methods {
            let psnrs: Vec<f64> = cells
                .iter()
                .filter(|c| c.sigma == sigma && c.method == method.name() && c.failure.is_none())
                .map(|c| c.psnr)
                .collect();
            let ssims: Vec<f64> = cells
                .iter()
                .filter(|c| c.sigma == sigma && c.method == method.name() && c.failure.is_none())
                .map(|c| c.ssim)
                .collect();
            let (psnr_mean, psnr_std) = mean_std(&psnrs);
            let (ssim_mean, ssim_std) = mean_std(&ssims);
            out.push(AggregateRecord {
                sigma,
                method: method.name().to_string(),
                count: psnrs.len(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
            });
        }
    }
    out
}

fn pairwise_ttests(
    cells: &[CellRecord],
    sigmas: &[f64],
    methods: &[&MethodSpec],
) -> Vec<TTestRecord> {
    let mut out = Vec::new();
    for &sigma in sigmas {
        for (i, method_a) in methods.iter().enumerate() {
            for method_b in methods.iter().skip(i + 1) {
                // pair rows by (image, seed), keeping only cells where both
                // methods succeeded
                let collect = |name: &str| -> BTreeMap<(String, u64), f64> {
                    cells
                        .iter()
                        .filter(|c| c.sigma == sigma && c.method == name && c.failure.is_none())
                        .map(|c| ((c.image.clone(), c.seed), c.psnr))
                        .collect()
                };
                let scores_a = collect(method_a.name());
                let scores_b = collect(method_b.name());
                let mut list_a = Vec::new();
                let mut list_b = Vec::new();
                for (key, &a) in &scores_a {
                    if let Some(&b) = scores_b.get(key) {
                        list_a.push(a);
                        list_b.push(b);
                    }
                }
                let record = match paired_t_test(&list_a, &list_b) {
                    Ok(result) => TTestRecord {
                        sigma,
                        method_a: method_a.name().to_string(),
                        method_b: method_b.name().to_string(),
                        pairs: list_a.len(),
                        t_statistic: result.t_statistic,
                        degrees_of_freedom: result.degrees_of_freedom,
                        p_value: result.p_value,
                        failure: None,
                    },
                    Err(e) => TTestRecord {
                        sigma,
                        method_a: method_a.name().to_string(),
                        method_b: method_b.name().to_string(),
                        pairs: list_a.len(),
                        t_statistic: f64::NAN,
                        degrees_of_freedom: 0,
                        p_value: f64::NAN,
                        failure: Some(e.to_string()),
                    },
                };
                out.push(record);
            }
        }
    }
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

fn json_num(v: f64) -> Value {
    if v.is_nan() {
        Value::Null
    } else if v.is_infinite() {
        json!(if v > 0.0 { "inf" } else { "-inf" })
    } else {
        json!(v)
    }
}

impl BenchmarkReport {
    /// Single-table CSV with one header row; `kind` distinguishes cell,
    /// aggregate and t-test rows. Runtime is deliberately absent so reruns
    /// are byte-identical.
    pub fn to_csv(&self) -> String {
        const HEADER: [&str; 23] = [
            "kind",
            "image",
            "sigma",
            "method",
            "method_b",
            "seed",
            "status",
            "psnr",
            "ssim",
            "sigma_hat",
            "loss_rec",
            "loss_ac",
            "loss_st",
            "loss_pc",
            "loss_tv",
            "psnr_mean",
            "psnr_std",
            "ssim_mean",
            "ssim_std",
            "n",
            "t_stat",
            "df",
            "p_value",
        ];
        let mut out = HEADER.join(",");
        out.push('\n');

        let mut push_row = |fields: [String; 23]| {
            let escaped: Vec<String> = fields.iter().map(|f| csv_escape(f)).collect();
            out.push_str(&escaped.join(","));
            out.push('\n');
        };
        let empty = String::new;

        for c in &self.cells {
            let status = c
                .failure
                .as_deref()
                .map(|m| format!("failed: {m}"))
                .unwrap_or_else(|| "ok".into());
            let terms = c.final_terms;
            let term =
                |get: fn(&TermValues) -> f64| terms.map(|t| csv_num(get(&t))).unwrap_or_default();
            push_row([
                "cell".into(),
                c.image.clone(),
                csv_num(c.sigma),
                c.method.clone(),
                empty(),
                c.seed.to_string(),
                status,
                csv_num(c.psnr),
                csv_num(c.ssim),
                csv_num(c.sigma_hat),
                term(|t| t.rec),
                term(|t| t.ac),
                term(|t| t.st),
                term(|t| t.pc),
                term(|t| t.tv),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
            ]);
        }
        for a in &self.aggregates {
            push_row([
                "aggregate".into(),
                empty(),
                csv_num(a.sigma),
                a.method.clone(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                csv_num(a.psnr_mean),
                csv_num(a.psnr_std),
                csv_num(a.ssim_mean),
                csv_num(a.ssim_std),
                a.count.to_string(),
                empty(),
                empty(),
                empty(),
            ]);
        }
        for t in &self.ttests {
            let status = t
                .failure
                .as_deref()
                .map(|m| format!("failed: {m}"))
                .unwrap_or_else(|| "ok".into());
            push_row([
                "ttest".into(),
                empty(),
                csv_num(t.sigma),
                t.method_a.clone(),
                t.method_b.clone(),
                empty(),
                status,
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                empty(),
                t.pairs.to_string(),
                csv_num(t.t_statistic),
                t.degrees_of_freedom.to_string(),
                csv_num(t.p_value),
            ]);
        }
        out
    }

    /// Same content nested by method, plus per-cell runtimes.
    pub fn to_json(&self) -> Value {
        let mut methods: BTreeMap<String, Value> = BTreeMap::new();
        let method_names: std::collections::BTreeSet<String> =
            self.cells.iter().map(|c| c.method.clone()).collect();
        for name in method_names {
            let cells: Vec<Value> = self
                .cells
                .iter()
                .filter(|c| c.method == name)
                .map(|c| {
                    json!({
                        "image": c.image,
                        "sigma": json_num(c.sigma),
                        "seed": c.seed,
                        "status": c.failure.as_deref().map(|m| format!("failed: {m}")).unwrap_or_else(|| "ok".into()),
                        "psnr": json_num(c.psnr),
                        "ssim": json_num(c.ssim),
                        "sigma_hat": json_num(c.sigma_hat),
                        "final_losses": c.final_terms.map(|t| json!({
                            "rec": json_num(t.rec),
                            "ac": json_num(t.ac),
                            "st": json_num(t.st),
                            "pc": json_num(t.pc),
                            "tv": json_num(t.tv),
                        })).unwrap_or(Value::Null),
                        "runtime_seconds": json_num(c.runtime_seconds),
                    })
                })
                .collect();
            let aggregates: Vec<Value> = self
                .aggregates
                .iter()
                .filter(|a| a.method == name)
                .map(|a| {
                    json!({
                        "sigma": json_num(a.sigma),
                        "n": a.count,
                        "psnr_mean": json_num(a.psnr_mean),
                        "psnr_std": json_num(a.psnr_std),
                        "ssim_mean": json_num(a.ssim_mean),
                        "ssim_std": json_num(a.ssim_std),
                    })
                })
                .collect();
            methods.insert(name, json!({ "cells": cells, "aggregates": aggregates }));
        }
        let ttests: Vec<Value> = self
            .ttests
            .iter()
            .map(|t| {
                json!({
                    "sigma": json_num(t.sigma),
                    "method_a": t.method_a,
                    "method_b": t.method_b,
                    "pairs": t.pairs,
                    "t_statistic": json_num(t.t_statistic),
                    "degrees_of_freedom": t.degrees_of_freedom,
                    "p_value": json_num(t.p_value),
                    "status": t.failure.as_deref().map(|m| format!("failed: {m}")).unwrap_or_else(|| "ok".into()),
                })
            })
            .collect();
        json!({ "methods": methods, "ttests": ttests })
    }
}
