//! Synthetic ensemble-postprocessing data generation and the parameter
//! sensitivity experiment.
//!
//! Each regression pair is built from a freshly drawn random Gaussian: s
//! ensemble members flattened into the feature vector, one more draw morphed
//! elementwise into the target. The sensitivity experiment scores a grid of
//! deliberately mis-specified bivariate Gaussians against a shared sample of
//! the true distribution.

use crate::distributions::{Distribution, MvGaussian};
use crate::error::{Error, Result};
use crate::io::{self, Csv};
use crate::linalg::SymMatrix;
use crate::mscores::{self, ConditionalSpec};
use crate::rng::{self, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Elementwise target morph applied after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morph {
    /// y = 2 y' + 2
    Affine,
    /// y = y'^2
    Square,
}

impl Morph {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Morph::Affine => 2.0 * v + 2.0,
            Morph::Square => v * v,
        }
    }
}

fn default_version() -> u32 {
    1
}

fn default_ensemble_size() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub d: usize,
    #[serde(default = "default_ensemble_size")]
    pub s: usize,
    pub morph: Morph,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.s < 1 {
            return Err(Error::Config(format!(
                "d = {} and s = {} must be positive",
                self.d, self.s
            )));
        }
        if self.sizes.n_train == 0 || self.sizes.n_val == 0 || self.sizes.n_test == 0 {
            return Err(Error::Config("all split sizes must be positive".into()));
        }
        Ok(())
    }

    /// The Gauss-2D benchmark configuration (p = 40, d = 2, 6K/2K/2K).
    pub fn gauss_2d(seed: u64) -> Self {
        Self {
            version: 1,
            d: 2,
            s: 20,
            morph: Morph::Affine,
            sizes: SplitSizes {
                n_train: 6000,
                n_val: 2000,
                n_test: 2000,
            },
            seed,
        }
    }
}

/// Aligned feature/target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn target_dim(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// One (x, y) regression pair: s ensemble members from a random Gaussian,
/// flattened, plus an i.i.d. morphed target draw.
pub fn generate_pair(morph: Morph, d: usize, s: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mu: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    // random Cholesky lower matrix with |diagonal|
    let mut lower = vec![0.0; d * d];
    for j in 0..d {
        for l in 0..=j {
            let v: f64 = rng.sample(StandardNormal);
            lower[j * d + l] = if l == j { v.abs().max(1e-12) } else { v };
        }
    }
    let draw = |rng: &mut Rng, out: &mut Vec<f64>| {
        let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for i in 0..d {
            let mut acc = mu[i];
            for k in 0..=i {
                acc += lower[i * d + k] * z[k];
            }
            out.push(acc);
        }
    };
    let mut x = Vec::with_capacity(d * s);
    for _ in 0..s {
        draw(rng, &mut x);
    }
    let mut y_raw = Vec::with_capacity(d);
    draw(rng, &mut y_raw);
    let y = y_raw.iter().map(|&v| morph.apply(v)).collect();
    (x, y)
}

/// Generate the train/val/test splits. Deterministic in the config seed.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<DatasetSplits> {
    cfg.validate()?;
    let mut r = rng::from_seed(rng::substream(cfg.seed, "data"));
    let mut take = |n: usize| {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let (xi, yi) = generate_pair(cfg.morph, cfg.d, cfg.s, &mut r);
            x.push(xi);
            y.push(yi);
        }
        Dataset { x, y }
    };
    Ok(DatasetSplits {
        train: take(cfg.sizes.n_train),
        val: take(cfg.sizes.n_val),
        test: take(cfg.sizes.n_test),
    })
}

fn dataset_to_csv(ds: &Dataset) -> Csv {
    let p = ds.input_dim();
    let d = ds.target_dim();
    let names: Vec<String> = (0..p)
        .map(|i| format!("x_{i}"))
        .chain((0..d).map(|i| format!("y_{i}")))
        .collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header);
    for (x, y) in ds.x.iter().zip(&ds.y) {
        let mut row = x.clone();
        row.extend_from_slice(y);
        csv.row_f64(&row);
    }
    csv
}

/// Write train.csv / val.csv / test.csv plus a dataset.json sidecar with the
/// generating config and seed.
pub fn write_dataset(dir: &Path, splits: &DatasetSplits, cfg: &SynthConfig) -> Result<()> {
    dataset_to_csv(&splits.train).write(&dir.join("train.csv"))?;
    dataset_to_csv(&splits.val).write(&dir.join("val.csv"))?;
    dataset_to_csv(&splits.test).write(&dir.join("test.csv"))?;
    let sidecar = serde_json::json!({
        "version": 1,
        "seed": cfg.seed,
        "config": cfg,
    });
    io::atomic_write(
        &dir.join("dataset.json"),
        (serde_json::to_string_pretty(&sidecar)? + "\n").as_bytes(),
    )?;
    Ok(())
}

fn split_columns(header: &[String], rows: Vec<Vec<f64>>, path: &Path) -> Result<Dataset> {
    let p = header.iter().filter(|h| h.starts_with("x_")).count();
    let d = header.iter().filter(|h| h.starts_with("y_")).count();
    if p + d != header.len() || d == 0 {
        return Err(Error::Config(format!(
            "{}: expected x_* and y_* columns, got {:?}",
            path.display(),
            header
        )));
    }
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for row in rows {
        x.push(row[..p].to_vec());
        y.push(row[p..].to_vec());
    }
    Ok(Dataset { x, y })
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let (header, rows) = io::read_csv_f64(path)?;
    split_columns(&header, rows, path)
}

pub fn read_dataset_dir(dir: &Path) -> Result<DatasetSplits> {
    Ok(DatasetSplits {
        train: read_dataset_file(&dir.join("train.csv"))?,
        val: read_dataset_file(&dir.join("val.csv"))?,
        test: read_dataset_file(&dir.join("test.csv"))?,
    })
}

// ---------------------------------------------------------------------------
// Sensitivity experiment
// ---------------------------------------------------------------------------

/// Which parameter of the predicted distribution deviates from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Mu,
    Sigma,
    Rho,
}

/// Scoring rules the sensitivity experiment compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensRule {
    Ccrps,
    Es,
    Logs,
}

impl SensRule {
    pub fn name(self) -> &'static str {
        match self {
            SensRule::Ccrps => "ccrps",
            SensRule::Es => "es",
            SensRule::Logs => "logs",
        }
    }
}

pub const SENS_MU_TRUE: f64 = 1.0;
pub const SENS_SIGMA_TRUE: f64 = 1.0;
pub const SENS_RHO_TRUE: f64 = 0.4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub axis: Axis,
    /// Deviation grid; defaults to 30 evenly spaced points.
    pub grid: Vec<f64>,
    /// Observations drawn from the true distribution, shared by the whole
    /// grid (common random numbers sharpen the curve comparison).
    pub n: usize,
    /// Monte-Carlo sample count per Energy Score evaluation.
    pub n_mc: usize,
    pub rules: Vec<SensRule>,
    pub seed: u64,
}

impl SensitivityConfig {
    pub fn new(axis: Axis, seed: u64) -> Self {
        Self {
            axis,
            grid: default_grid(axis),
            n: 5000,
            n_mc: 1000,
            rules: vec![SensRule::Logs, SensRule::Es, SensRule::Ccrps],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.grid.is_empty() {
            return Err(Error::Config("sensitivity needs n > 0 and a non-empty grid".into()));
        }
        if self.axis == Axis::Rho {
            for &dev in &self.grid {
                let rho = SENS_RHO_TRUE + dev;
                if rho.abs() >= 1.0 {
                    return Err(Error::Config(format!(
                        "rho deviation {dev} leaves (-1, 1)"
                    )));
                }
            }
        }
        if self.axis == Axis::Sigma {
            for &dev in &self.grid {
                if SENS_SIGMA_TRUE + dev <= 0.0 {
                    return Err(Error::Config(format!(
                        "sigma deviation {dev} gives a non-positive scale"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn default_grid(axis: Axis) -> Vec<f64> {
    let half = match axis {
        Axis::Mu | Axis::Sigma => 0.5,
        Axis::Rho => 0.4,
    };
    let n = 30;
    (0..n)
        .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
        .collect()
}

/// The true data distribution of the experiment:
/// N((1, -1), [[1, 0.8], [0.8, 4]]).
pub fn sensitivity_truth() -> MvGaussian {
    MvGaussian::new(
        vec![SENS_MU_TRUE, -1.0],
        SymMatrix::from_rows(&[vec![1.0, 0.8], vec![0.8, 4.0]]).unwrap(),
    )
    .expect("fixed SPD matrix")
}

/// The predicted distribution at one grid point: the named parameter moves
/// by `deviation`, covariance entry 2 rho sigma.
pub fn sensitivity_predicted(axis: Axis, deviation: f64) -> Result<MvGaussian> {
    let (mu1, sigma, rho) = match axis {
        Axis::Mu => (SENS_MU_TRUE + deviation, SENS_SIGMA_TRUE, SENS_RHO_TRUE),
        Axis::Sigma => (SENS_MU_TRUE, SENS_SIGMA_TRUE + deviation, SENS_RHO_TRUE),
        Axis::Rho => (SENS_MU_TRUE, SENS_SIGMA_TRUE, SENS_RHO_TRUE + deviation),
    };
    let cov = 2.0 * rho * sigma;
    let top_left = sigma * sigma;
    MvGaussian::new(
        vec![mu1, -1.0],
        SymMatrix::from_rows(&[vec![top_left, cov], vec![cov, 4.0]])?,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub deviation: f64,
    pub rule: SensRule,
    pub mean_score: f64,
    pub std_err: f64,
}

/// Mean score against the shared observation sample at every grid point,
/// for every requested rule.
///
/// The CCRPS rule uses the both-directions singleton specification
/// {(0, {1}), (1, {0})} and reports the per-term average, which puts the
/// three rules on comparable scales.
pub fn sensitivity_curve(cfg: &SensitivityConfig) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let truth = sensitivity_truth();
    let mut data_rng = rng::from_seed(rng::substream(cfg.seed, "data"));
    let observations: Vec<Vec<f64>> = (0..cfg.n).map(|_| truth.sample(&mut data_rng)).collect();
    let spec = ConditionalSpec::new(vec![(0, vec![1]), (1, vec![0])], 2)?;
    let q = spec.len() as f64;

    let mut out = Vec::with_capacity(cfg.rules.len() * cfg.grid.len());
    for &rule in &cfg.rules {
        for &dev in &cfg.grid {
            let predicted = Distribution::MvGaussian(sensitivity_predicted(cfg.axis, dev)?);
            let stats = match rule {
                SensRule::Ccrps => mscores::mean_score(
                    |_, y| Ok(mscores::ccrps(&predicted, &spec, y)?.value / q),
                    &observations,
                )?,
                SensRule::Logs => mscores::mean_score(
                    |_, y| mscores::log_score(&predicted, y),
                    &observations,
                )?,
                SensRule::Es => mscores::mean_score(
                    |i, y| {
                        // per-observation substream, identical across grid
                        // points so the curves share Monte-Carlo noise
                        let mut r = rng::from_seed(rng::substream_indexed(
                            cfg.seed, "mc-eval", i as u64,
                        ));
                        mscores::energy_score(&predicted, y, 1.0, cfg.n_mc, &mut r)
                    },
                    &observations,
                )?,
            };
            out.push(CurvePoint {
                deviation: dev,
                rule,
                mean_score: stats.mean,
                std_err: stats.std_err,
            });
        }
    }
    Ok(out)
}

pub fn curve_to_csv(points: &[CurvePoint]) -> Csv {
    let mut csv = Csv::new(&["deviation", "rule", "mean_score", "std_err"]);
    for p in points {
        csv.row(&[
            io::fmt_f64(p.deviation),
            p.rule.name().to_string(),
            io::fmt_f64(p.mean_score),
            io::fmt_f64(p.std_err),
        ]);
    }
    csv
}
