//! Confidence-calibration analytics: equal-width binning, per-bin
//! accuracy/confidence, expected calibration error, reliability-diagram
//! records, and sigmoid temperature scaling fitted by golden-section search.

use thiserror::Error;

use crate::objectives::{weighted_bce, ObjectiveError, DEFAULT_BCE_EPS, DEFAULT_BCE_WEIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("prediction set is empty")]
    Empty,
    #[error("field lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabel(f64),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("sample count {n} does not match binned total {binned}")]
    CountMismatch { n: usize, binned: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("temperature fitting needs logits")]
    MissingLogits,
    #[error("temperature fitting needs both classes present")]
    SingleClassLabels,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Uncalibrated probabilities with their binary labels, plus the raw logits
/// when temperature scaling is wanted.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    p_hat: Vec<f64>,
    labels: Vec<f64>,
    logits: Option<Vec<f64>>,
}

impl PredictionSet {
    pub fn new(
        p_hat: Vec<f64>,
        labels: Vec<f64>,
        logits: Option<Vec<f64>>,
    ) -> Result<Self, CalibrationError> {
        if p_hat.is_empty() {
            return Err(CalibrationError::Empty);
        }
        if p_hat.len() != labels.len() {
            return Err(CalibrationError::LengthMismatch {
                left: p_hat.len(),
                right: labels.len(),
            });
        }
        if let Some(l) = &logits {
            if l.len() != p_hat.len() {
                return Err(CalibrationError::LengthMismatch {
                    left: p_hat.len(),
                    right: l.len(),
                });
            }
        }
        for &p in &p_hat {
            if !(0.0..=1.0).contains(&p) {
                return Err(CalibrationError::ProbabilityOutOfRange(p));
            }
        }
        for &l in &labels {
            if l != 0.0 && l != 1.0 {
                return Err(CalibrationError::NonBinaryLabel(l));
            }
        }
        Ok(Self {
            p_hat,
            labels,
            logits,
        })
    }

    pub fn len(&self) -> usize {
        self.p_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hat.is_empty()
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }
}

/// Per-bin tallies over the equal-width partition of (0, 1]. `acc`/`conf`
/// are `None` for empty bins.
#[derive(Debug, Clone)]
pub struct CalibrationBins {
    boundaries: Vec<f64>,
    counts: Vec<usize>,
    acc: Vec<Option<f64>>,
    conf: Vec<Option<f64>>,
}

impl CalibrationBins {
    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    /// Boundaries a_1..a_{M+1}, from 0 to 1.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn acc(&self) -> &[Option<f64>] {
        &self.acc
    }

    pub fn conf(&self) -> &[Option<f64>] {
        &self.conf
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Index of the bin containing `p` under the (a_m, a_{m+1}] convention;
/// exact zero goes to the first bin.
fn bin_index(boundaries: &[f64], p: f64) -> usize {
    if p <= boundaries[1] {
        return 0;
    }
    // First boundary >= p, minus one: the left-open interval containing p.
    let idx = boundaries.partition_point(|&b| b < p);
    (idx - 1).min(boundaries.len() - 2)
}

/// Partition predictions into `m` equal-width bins and tally per-bin count,
/// mean label (accuracy), and mean probability (confidence).
pub fn bin_stats(preds: &PredictionSet, m: usize) -> Result<CalibrationBins, CalibrationError> {
    if m == 0 {
        return Err(CalibrationError::ZeroBins);
    }
    let boundaries: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
    let mut counts = vec![0usize; m];
    let mut label_sum = vec![0.0; m];
    let mut prob_sum = vec![0.0; m];
    for (&p, &label) in preds.p_hat().iter().zip(preds.labels()) {
        let b = bin_index(&boundaries, p);
        counts[b] += 1;
        label_sum[b] += label;
        prob_sum[b] += p;
    }
    let acc = counts
        .iter()
        .zip(&label_sum)
        .map(|(&c, &s)| (c > 0).then(|| s / c as f64))
        .collect();
    let conf = counts
        .iter()
        .zip(&prob_sum)
        .map(|(&c, &s)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(CalibrationBins {
        boundaries,
        counts,
        acc,
        conf,
    })
}

/// Expected calibration error: the bin-count-weighted mean |acc − conf|.
/// Empty bins contribute nothing.
pub fn ece(bins: &CalibrationBins, n: usize) -> Result<f64, CalibrationError> {
    let binned = bins.total();
    if binned != n || n == 0 {
        return Err(CalibrationError::CountMismatch { n, binned });
    }
    let mut total = 0.0;
    for ((&count, acc), conf) in bins.counts().iter().zip(bins.acc()).zip(bins.conf()) {
        if let (Some(a), Some(c)) = (acc, conf) {
            total += (count as f64 / n as f64) * (a - c).abs();
        }
    }
    Ok(total)
}

/// One reliability-diagram record per nonempty bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityRecord {
    pub midpoint: f64,
    pub acc: f64,
    pub conf: f64,
    /// acc − conf; zero on the diagonal.
    pub gap: f64,
    pub count: usize,
}

pub fn reliability_data(bins: &CalibrationBins) -> Vec<ReliabilityRecord> {
    let mut records = Vec::new();
    for i in 0..bins.bin_count() {
        if let (Some(acc), Some(conf)) = (bins.acc()[i], bins.conf()[i]) {
            records.push(ReliabilityRecord {
                midpoint: 0.5 * (bins.boundaries()[i] + bins.boundaries()[i + 1]),
                acc,
                conf,
                gap: acc - conf,
                count: bins.counts()[i],
            });
        }
    }
    records
}

/// Sigmoid of logit/t per entry.
pub fn apply_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>, CalibrationError> {
    if t <= 0.0 {
        return Err(CalibrationError::NonPositiveTemperature(t));
    }
    Ok(logits.iter().map(|z| sigmoid(z / t)).collect())
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Search interval and tolerance for [`fit_temperature`].
#[derive(Debug, Clone)]
pub struct TemperatureFitOptions {
    pub t_min: f64,
    pub t_max: f64,
    pub tol: f64,
}

impl Default for TemperatureFitOptions {
    fn default() -> Self {
        Self {
            t_min: 0.05,
            t_max: 20.0,
            tol: 1e-4,
        }
    }
}

/// Fit the temperature minimizing the weighted BCE of
/// sigmoid(logit/T) against the labels, by golden-section search (the 1-D
/// objective is empirically unimodal).
pub fn fit_temperature(
    preds: &PredictionSet,
    opts: &TemperatureFitOptions,
) -> Result<f64, CalibrationError> {
    let logits = preds.logits().ok_or(CalibrationError::MissingLogits)?;
    let has_pos = preds.labels().contains(&1.0);
    let has_neg = preds.labels().contains(&0.0);
    if !has_pos || !has_neg {
        return Err(CalibrationError::SingleClassLabels);
    }

    let objective = |t: f64| -> Result<f64, CalibrationError> {
        let probs = apply_temperature(logits, t)?;
        Ok(weighted_bce(
            preds.labels(),
            &probs,
            DEFAULT_BCE_WEIGHT,
            DEFAULT_BCE_EPS,
        )?)
    };

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = opts.t_min;
    let mut b = opts.t_max;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    while (b - a).abs() > opts.tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d)?;
        }
    }
    Ok(0.5 * (a + b))
}
