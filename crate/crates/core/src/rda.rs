//! Representation agent: draws feature matrices from a pluggable source,
//! runs them through the sign-split/quantize/entropy pipeline at a chosen
//! control parameter, and measures the resulting rate and distortion.
//!
//! Measurements are collected into an [`ExperienceTable`], the memory the
//! admission planner consults.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{pack_stream, unpack_stream, BitStream, ControlParameter};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::svid::{approximation_error, reconstruct, svid_decompose};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind<T> {
    /// i.i.d. `N(0, scale²)` entries, seeded per draw index.
    SyntheticGaussian {
        seed: u64,
        rows: usize,
        cols: usize,
        scale: f64,
    },
    /// The same matrix for every index, e.g. a replayed feature dump.
    Fixed { matrix: Matrix<T>, path: Option<PathBuf> },
}

/// Deterministic stand-in for the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSource<T> {
    kind: SourceKind<T>,
}

impl<T: Scalar> FeatureSource<T> {
    pub fn gaussian(seed: u64, rows: usize, cols: usize, scale: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("source shape {rows}x{cols} must be positive")));
        }
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::invalid(format!("source scale {scale} must be finite and >= 0")));
        }
        Ok(Self {
            kind: SourceKind::SyntheticGaussian {
                seed,
                rows,
                cols,
                scale,
            },
        })
    }

    pub fn fixed(matrix: Matrix<T>) -> Self {
        Self {
            kind: SourceKind::Fixed { matrix, path: None },
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self {
            kind: SourceKind::Fixed {
                matrix: Matrix::read_file(path)?,
                path: Some(path.to_path_buf()),
            },
        })
    }

    pub fn kind(&self) -> &SourceKind<T> {
        &self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        match &self.kind {
            SourceKind::SyntheticGaussian { rows, cols, .. } => (*rows, *cols),
            SourceKind::Fixed { matrix, .. } => (matrix.rows(), matrix.cols()),
        }
    }

    pub fn max_rank(&self) -> usize {
        let (m, n) = self.shape();
        m.min(n)
    }

    pub fn draw(&self, index: u64) -> Matrix<T> {
        match &self.kind {
            SourceKind::SyntheticGaussian {
                seed,
                rows,
                cols,
                scale,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(index);
                let data = (0..rows * cols)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::from_f64_lossy(z * scale)
                    })
                    .collect();
                Matrix::new(*rows, *cols, data).expect("finite gaussian draws")
            }
            SourceKind::Fixed { matrix, .. } => matrix.clone(),
        }
    }
}

/// Maps a control parameter (or its distortion) to task accuracy in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum AccuracyModel {
    /// `acc_min + (acc_max - acc_min) * exp(-slope * nmse)`.
    Synthetic { acc_max: f64, acc_min: f64, slope: f64 },
    /// Measured accuracies per control parameter.
    Calibration(BTreeMap<ControlParameter, f64>),
}

impl Default for AccuracyModel {
    fn default() -> Self {
        AccuracyModel::Synthetic {
            acc_max: 0.95,
            acc_min: 0.10,
            slope: 20.0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CalibrationRow {
    r: usize,
    q: u8,
    accuracy: f64,
}

impl AccuracyModel {
    pub fn synthetic(acc_max: f64, acc_min: f64, slope: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&acc_min) || !(0.0..=1.0).contains(&acc_max) || acc_min > acc_max {
            return Err(Error::invalid(format!(
                "accuracy bounds must satisfy 0 <= acc_min <= acc_max <= 1, got {acc_min}, {acc_max}"
            )));
        }
        if !slope.is_finite() || slope < 0.0 {
            return Err(Error::invalid(format!("slope {slope} must be finite and >= 0")));
        }
        Ok(AccuracyModel::Synthetic {
            acc_max,
            acc_min,
            slope,
        })
    }

    pub fn calibration(entries: impl IntoIterator<Item = (ControlParameter, f64)>) -> Result<Self> {
        let map: BTreeMap<_, _> = entries.into_iter().collect();
        if let Some((theta, acc)) = map.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("calibration accuracy {acc} at {theta} outside [0, 1]")));
        }
        Ok(AccuracyModel::Calibration(map))
    }

    /// Reads a calibration CSV with columns `r,q,accuracy`.
    pub fn read_calibration(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut entries = Vec::new();
        for row in rdr.deserialize::<CalibrationRow>() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            entries.push((ControlParameter::new(row.r, row.q)?, row.accuracy));
        }
        Self::calibration(entries)
    }

    pub fn evaluate(&self, theta: ControlParameter, nmse: f64) -> Result<f64> {
        match self {
            AccuracyModel::Synthetic {
                acc_max,
                acc_min,
                slope,
            } => {
                if nmse.is_nan() || nmse < 0.0 {
                    return Err(Error::invalid(format!("nmse {nmse} must be >= 0")));
                }
                Ok((acc_min + (acc_max - acc_min) * (-slope * nmse).exp()).clamp(0.0, 1.0))
            }
            AccuracyModel::Calibration(map) => map
                .get(&theta)
                .copied()
                .ok_or_else(|| Error::invalid(format!("no calibration entry for {theta}"))),
        }
    }

    /// Largest accuracy the model can report.
    pub fn max_accuracy(&self) -> f64 {
        match self {
            AccuracyModel::Synthetic { acc_max, .. } => *acc_max,
            AccuracyModel::Calibration(map) => map.values().copied().fold(0.0, f64::max),
        }
    }
}

/// Measured rate/distortion at one control parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperienceRecord {
    pub theta: ControlParameter,
    pub mean_bits: f64,
    pub mean_nmse: f64,
    pub accuracy: f64,
    pub sample_count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExperienceRow {
    r: usize,
    q: u8,
    mean_bits: f64,
    mean_nmse: f64,
    accuracy: f64,
    sample_count: u64,
}

/// Experience memory, kept sorted by `(r, q)` with one record per
/// parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperienceTable {
    records: Vec<ExperienceRecord>,
}

impl ExperienceTable {
    pub fn new(mut records: Vec<ExperienceRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.theta);
        if records.windows(2).any(|w| w[0].theta == w[1].theta) {
            return Err(Error::invalid("duplicate control parameter in experience table"));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ExperienceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, theta: ControlParameter) -> Option<&ExperienceRecord> {
        self.records
            .binary_search_by_key(&theta, |r| r.theta)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Folds a new measurement in as a sample-weighted average and
    /// re-evaluates its accuracy.
    pub fn absorb(&mut self, m: ExperienceRecord, model: &AccuracyModel) -> Result<()> {
        match self.records.binary_search_by_key(&m.theta, |r| r.theta) {
            Ok(i) => {
                let old = self.records[i];
                let total = old.sample_count + m.sample_count;
                let (wo, wm) = (old.sample_count as f64, m.sample_count as f64);
                let mean_bits = (old.mean_bits * wo + m.mean_bits * wm) / total as f64;
                let mean_nmse = (old.mean_nmse * wo + m.mean_nmse * wm) / total as f64;
                self.records[i] = ExperienceRecord {
                    theta: m.theta,
                    mean_bits,
                    mean_nmse,
                    accuracy: model.evaluate(m.theta, mean_nmse)?,
                    sample_count: total,
                };
            }
            Err(i) => self.records.insert(i, m),
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.records {
            wtr.serialize(ExperienceRow {
                r: r.theta.rank(),
                q: r.theta.qbits(),
                mean_bits: r.mean_bits,
                mean_nmse: r.mean_nmse,
                accuracy: r.accuracy,
                sample_count: r.sample_count,
            })?;
        }
        if self.records.is_empty() {
            wtr.write_record(["r", "q", "mean_bits", "mean_nmse", "accuracy", "sample_count"])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut records = Vec::new();
        for row in rdr.deserialize::<ExperienceRow>() {
            let row = row.map_err(|e| Error::invalid(format!("experience csv: {e}")))?;
            records.push(ExperienceRecord {
                theta: ControlParameter::new(row.r, row.q)?,
                mean_bits: row.mean_bits,
                mean_nmse: row.mean_nmse,
                accuracy: row.accuracy,
                sample_count: row.sample_count,
            });
        }
        Self::new(records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::csv(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

fn check_theta<T: Scalar>(src: &FeatureSource<T>, theta: ControlParameter) -> Result<()> {
    if theta.rank() > src.max_rank() {
        return Err(Error::InvalidRank {
            rank: theta.rank(),
            max: src.max_rank(),
        });
    }
    Ok(())
}

/// Encodes source sample `index` at `theta`.
pub fn rda_encode<T: Scalar>(index: u64, src: &FeatureSource<T>, theta: ControlParameter) -> Result<BitStream> {
    check_theta(src, theta)?;
    let z = src.draw(index);
    pack_stream(&svid_decompose(&z, theta.rank())?, theta.qbits())
}

pub fn rda_decode<T: Scalar>(s: &BitStream) -> Result<Matrix<T>> {
    reconstruct(&unpack_stream::<T>(s)?)
}

/// Rate and distortion of one encoded sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeasurement {
    pub bits: u64,
    pub nmse: f64,
}

pub fn measure_sample<T: Scalar>(index: u64, src: &FeatureSource<T>, theta: ControlParameter) -> Result<SampleMeasurement> {
    let z = src.draw(index);
    let stream = rda_encode(index, src, theta)?;
    let zhat = rda_decode::<T>(&stream)?;
    Ok(SampleMeasurement {
        bits: stream.total_bits(),
        nmse: approximation_error(&z, &zhat)?.nmse.to_f64_lossy(),
    })
}

/// Averages rate and distortion over samples `0..n_samples`.
pub fn measure<T: Scalar>(
    src: &FeatureSource<T>,
    theta: ControlParameter,
    n_samples: usize,
    model: &AccuracyModel,
) -> Result<ExperienceRecord> {
    measure_range(src, theta, 0, n_samples, model)
}

/// Averages rate and distortion over samples `start..start + n_samples`.
/// Samples run in parallel and are reduced in index order.
pub fn measure_range<T: Scalar>(
    src: &FeatureSource<T>,
    theta: ControlParameter,
    start: u64,
    n_samples: usize,
    model: &AccuracyModel,
) -> Result<ExperienceRecord> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    check_theta(src, theta)?;
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| measure_sample(start + k, src, theta))
        .collect::<Result<Vec<_>>>()?;
    let n = n_samples as f64;
    let mean_bits = samples.iter().map(|s| s.bits as f64).sum::<f64>() / n;
    let mean_nmse = samples.iter().map(|s| s.nmse).sum::<f64>() / n;
    Ok(ExperienceRecord {
        theta,
        mean_bits,
        mean_nmse,
        accuracy: model.evaluate(theta, mean_nmse)?,
        sample_count: n_samples as u64,
    })
}

/// Measures every `(r, q)` pair of the grid.
pub fn profile_grid<T: Scalar>(
    src: &FeatureSource<T>,
    ranks: &[usize],
    qbits: &[u8],
    n_samples: usize,
    model: &AccuracyModel,
) -> Result<ExperienceTable> {
    if ranks.is_empty() || qbits.is_empty() {
        return Err(Error::invalid("rank and qbits grids must be nonempty"));
    }
    let mut thetas = Vec::with_capacity(ranks.len() * qbits.len());
    for &r in ranks {
        for &q in qbits {
            thetas.push(ControlParameter::new(r, q)?);
        }
    }
    thetas.sort();
    thetas.dedup();
    let records = thetas
        .into_par_iter()
        .map(|theta| measure(src, theta, n_samples, model))
        .collect::<Result<Vec<_>>>()?;
    ExperienceTable::new(records)
}

/// Bits per pixel of an RGB image: `bits / (3 * height * width)`.
pub fn bpp(total_bits: f64, height: u32, width: u32) -> Result<f64> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    if !(total_bits >= 0.0) {
        return Err(Error::invalid("bit count must be >= 0"));
    }
    Ok(total_bits / (3.0 * f64::from(height) * f64::from(width)))
}
