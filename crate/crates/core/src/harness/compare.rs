//! Multi-method comparisons on one shared dataset, and noise-level sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::methods::{infer, InferenceInput, MethodSpec, StoppingMode};
use crate::metrics::{psnr, ssim, Summary};
use crate::nn::ParamVector;

use super::config::{ExperimentConfig, NoiseParams};
use super::dataset::synthesize;
use super::experiment::{
    create_dir, execute, load_images, prepare_data, write_csv, write_evaluation_artifacts,
    write_training_artifacts, MetricRow, Model, RunRecord,
};

/// Column order of comparison tables.
pub const VARIANT_COLUMNS: [&str; 7] = [
    "NN2Is[y]", "NN2Is[z]", "NN2I[y]", "NN2I[z]", "NN2N[y]", "NN2N[z]", "N2I",
];

#[derive(Clone, Debug)]
pub struct Comparison {
    pub records: Vec<RunRecord>,
}

impl Comparison {
    pub fn rows(&self) -> Vec<&MetricRow> {
        self.records.iter().flat_map(|r| &r.metrics).collect()
    }

    pub fn table(&self) -> Vec<TableRow> {
        comparison_table(&self.rows())
    }
}

/// Trains every method on bitwise-identical data. With `out` set, each run
/// is persisted under `out/<run id>` plus `comparison_long.csv` and
/// `comparison_table.csv` in `out`.
pub fn compare_methods(
    base: &ExperimentConfig,
    methods: &[MethodSpec],
    out: Option<&Path>,
) -> Result<Comparison> {
    let data = prepare_data(base)?;
    let mut records = Vec::with_capacity(methods.len());
    for method in methods {
        let mut cfg = base.clone();
        cfg.method = method.clone();
        cfg.validate()?;
        let run = execute(&cfg, &data)?;
        if let Some(dir) = out {
            let run_dir = dir.join(cfg.run_id());
            create_dir(&run_dir)?;
            write_training_artifacts(&run_dir, &cfg, &run.state)?;
            write_evaluation_artifacts(&run_dir, &run.record, &run.reconstructions)?;
        }
        log::info!("{} done", cfg.run_id());
        records.push(run.record);
    }
    let cmp = Comparison { records };
    if let Some(dir) = out {
        let rows: Vec<MetricRow> = cmp.rows().into_iter().cloned().collect();
        write_csv(&dir.join("comparison_long.csv"), &rows)?;
        write_table(&dir.join("comparison_table.csv"), &cmp.table())?;
    }
    Ok(cmp)
}

/// One line of the wide comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub stopping: StoppingMode,
    pub metric: &'static str,
    pub statistic: &'static str,
    /// Keyed by variant label; missing variants are absent.
    pub values: BTreeMap<String, f64>,
}

/// Mean, std and median of PSNR and SSIM per stopping mode and variant.
pub fn comparison_table(rows: &[&MetricRow]) -> Vec<TableRow> {
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = groups
            .entry((r.stopping.to_string(), r.variant()))
            .or_default();
        e.0.push(r.psnr);
        e.1.push(r.ssim);
    }
    let mut out = Vec::new();
    for stopping in [StoppingMode::LastEpoch, StoppingMode::PsnrOracle] {
        for (metric, pick) in [("psnr", 0), ("ssim", 1)] {
            for statistic in ["mean", "std", "median"] {
                let mut values = BTreeMap::new();
                for ((s, variant), (p, q)) in &groups {
                    if *s != stopping.to_string() {
                        continue;
                    }
                    let summary = Summary::of(if pick == 0 { p } else { q });
                    let v = match statistic {
                        "mean" => summary.mean,
                        "std" => summary.std,
                        _ => summary.median,
                    };
                    values.insert(variant.clone(), v);
                }
                if !values.is_empty() {
                    out.push(TableRow {
                        stopping,
                        metric,
                        statistic,
                        values,
                    });
                }
            }
        }
    }
    out
}

pub fn write_table(path: &Path, table: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["stopping", "metric", "statistic"];
    header.extend(VARIANT_COLUMNS);
    w.write_record(&header)?;
    for row in table {
        let mut rec = vec![
            row.stopping.to_string(),
            row.metric.into(),
            row.statistic.into(),
        ];
        rec.extend(VARIANT_COLUMNS.iter().map(|c| {
            row.values
                .get(*c)
                .map(|v| v.to_string())
                .unwrap_or_default()
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))
}

/// How the noise amplitude is set for each swept correlation length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAmplitude {
    /// Keep `delta`. With a unit-sum kernel, wider kernels then give weaker
    /// per-pixel noise.
    #[default]
    FixedDelta,
    /// Rescale `delta` so interior pixels keep the test noise's standard
    /// deviation; only the correlation length changes.
    MatchedStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub delta: f64,
    pub inference: InferenceInput,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

/// Re-synthesizes the test split with each correlation length in `sigmas`
/// (same images and seed, amplitude per `amplitude`) and evaluates `params`
/// on it. The test sigma itself always reproduces the run's own test data.
pub fn robustness_sweep(
    cfg: &ExperimentConfig,
    params: &ParamVector,
    sigmas: &[f64],
    amplitude: SweepAmplitude,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let images = load_images(cfg)?;
    let (n_train, n_val, n_test) = cfg.dataset.split.counts(images.len());
    let first = n_train + n_val;
    let test_images = &images[first..first + n_test];
    let geometry = cfg.geometry()?;
    let model = Model::new(cfg, &geometry)?;
    let base = cfg.noise.test();
    let mut out = Vec::new();
    for &sigma in sigmas {
        let params_for_sigma = if sigma == base.sigma {
            base
        } else {
            let mut p = NoiseParams {
                sigma,
                kernel_radius: None,
                ..base
            };
            if amplitude == SweepAmplitude::MatchedStd {
                let target = base.spec(cfg.seed)?.pixel_std()?;
                let unit = NoiseParams { delta: 1.0, ..p }
                    .spec(cfg.seed)?
                    .pixel_std()?;
                p.delta = target / unit;
            }
            p
        };
        let noise = params_for_sigma.spec(cfg.seed)?;
        let test = synthesize(test_images, &geometry, &noise, first as u64)?;
        for inference in cfg.method.inference_variants() {
            let spec = cfg.method.clone().with_inference(inference);
            let (mut p, mut s) = (Vec::new(), Vec::new());
            for sample in &test {
                let recon = infer(
                    params,
                    &spec,
                    sample.y(),
                    sample.sample_id(),
                    model.ctx(&noise),
                )?;
                p.push(psnr(&recon, sample.clean()?, None)?);
                s.push(ssim(&recon, sample.clean()?, None)?);
            }
            let (ps, ss) = (Summary::of(&p), Summary::of(&s));
            out.push(SweepRow {
                sigma,
                delta: noise.delta,
                inference,
                psnr_mean: ps.mean,
                psnr_std: ps.std,
                ssim_mean: ss.mean,
                ssim_std: ss.std,
            });
        }
    }
    Ok(out)
}
