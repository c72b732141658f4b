//! Diagonal Gaussian algebra: closed-form KL, reparameterized sampling,
//! posterior aggregation, and the per-category gold banks.
//!
//! Variances are carried as log-variances throughout, clamped to
//! `[LOGVAR_MIN, LOGVAR_MAX]` at construction.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, thiserror::Error)]
pub enum GaussianError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
    #[error("cannot aggregate an empty set of posteriors")]
    EmptyAggregate,
    #[error("slice {name:?} [{start}, {end}) outside dimension {dim}")]
    SliceOutOfRange {
        name: String,
        start: usize,
        end: usize,
        dim: usize,
    },
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("invalid gold bank: {0}")]
    Bank(String),
    #[error("gold bank has no category {0}")]
    MissingCategory(usize),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    logvar: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self, GaussianError> {
        if mean.len() != logvar.len() {
            return Err(GaussianError::DimMismatch(mean.len(), logvar.len()));
        }
        if let Some(i) = mean
            .iter()
            .zip(&logvar)
            .position(|(m, v)| !m.is_finite() || v.is_nan())
        {
            return Err(GaussianError::NonFinite(i));
        }
        let logvar = logvar
            .into_iter()
            .map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
            .collect();
        Ok(Self { mean, logvar })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    /// Same variance `var` and mean `mean` in every coordinate.
    pub fn isotropic(dim: usize, mean: f64, var: f64) -> Result<Self, GaussianError> {
        Self::new(vec![mean; dim], vec![var.ln(); dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn logvar(&self) -> &[f64] {
        &self.logvar
    }

    pub fn variance(&self) -> Vec<f64> {
        self.logvar.iter().map(|v| v.exp()).collect()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.logvar.iter().map(|v| (0.5 * v).exp()).collect()
    }

    /// Restriction to the coordinates of `s`.
    pub fn slice(&self, s: &PartitionSlice) -> Result<Self, GaussianError> {
        let end = s.start + s.length;
        if end > self.dim() {
            return Err(GaussianError::SliceOutOfRange {
                name: s.name.clone(),
                start: s.start,
                end,
                dim: self.dim(),
            });
        }
        Ok(Self {
            mean: self.mean[s.start..end].to_vec(),
            logvar: self.logvar[s.start..end].to_vec(),
        })
    }
}

/// One coordinate's share of KL(p || q).
#[inline]
fn kl_term(p_mean: f64, p_logvar: f64, q_mean: f64, q_logvar: f64) -> f64 {
    let x = p_logvar - q_logvar;
    let d = p_mean - q_mean;
    // expm1(x) - x is exactly 0 at x = 0 and never rounds below 0
    0.5 * ((x.exp_m1() - x) + d * d * (-q_logvar).exp())
}

/// KL(p || q) over raw parameter slices of equal length.
pub fn kl_parts(p_mean: &[f64], p_logvar: &[f64], q_mean: &[f64], q_logvar: &[f64]) -> f64 {
    debug_assert!(p_mean.len() == q_mean.len() && p_logvar.len() == q_logvar.len());
    p_mean
        .iter()
        .zip(p_logvar)
        .zip(q_mean.iter().zip(q_logvar))
        .map(|((&pm, &pv), (&qm, &qv))| kl_term(pm, pv, qm, qv))
        .sum()
}

/// Gradients of `scale * KL(p || q)` accumulated into the four buffers.
#[allow(clippy::too_many_arguments)]
pub fn kl_parts_backward(
    p_mean: &[f64],
    p_logvar: &[f64],
    q_mean: &[f64],
    q_logvar: &[f64],
    scale: f64,
    d_p_mean: &mut [f64],
    d_p_logvar: &mut [f64],
    d_q_mean: &mut [f64],
    d_q_logvar: &mut [f64],
) {
    for i in 0..p_mean.len() {
        let inv_q = (-q_logvar[i]).exp();
        let d = p_mean[i] - q_mean[i];
        let ratio = (p_logvar[i] - q_logvar[i]).exp();
        d_p_mean[i] += scale * d * inv_q;
        d_q_mean[i] -= scale * d * inv_q;
        d_p_logvar[i] += scale * 0.5 * (ratio - 1.0);
        d_q_logvar[i] += scale * 0.5 * (1.0 - ratio - d * d * inv_q);
    }
}

/// Closed-form KL(p || q) between diagonal Gaussians.
pub fn kl_diag(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64, GaussianError> {
    if p.dim() != q.dim() {
        return Err(GaussianError::DimMismatch(p.dim(), q.dim()));
    }
    Ok(kl_parts(&p.mean, &p.logvar, &q.mean, &q.logvar))
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparam_sample(g: &DiagonalGaussian, noise: &[f64]) -> Result<Vec<f64>, GaussianError> {
    if noise.len() != g.dim() {
        return Err(GaussianError::DimMismatch(g.dim(), noise.len()));
    }
    Ok(g.mean
        .iter()
        .zip(&g.logvar)
        .zip(noise)
        .map(|((m, v), e)| m + (0.5 * v).exp() * e)
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Average of means and average of variances.
    #[default]
    MeanOfMoments,
    /// Moment-matched mixture: variance includes the spread of the means.
    Mixture,
}

pub fn aggregate_posteriors(
    gs: &[DiagonalGaussian],
    mode: Aggregation,
) -> Result<DiagonalGaussian, GaussianError> {
    let first = gs.first().ok_or(GaussianError::EmptyAggregate)?;
    let dim = first.dim();
    if let Some(g) = gs.iter().find(|g| g.dim() != dim) {
        return Err(GaussianError::DimMismatch(dim, g.dim()));
    }
    if gs.len() == 1 {
        return Ok(first.clone());
    }
    let n = gs.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    let mut second = vec![0.0; dim];
    for g in gs {
        for i in 0..dim {
            let v = g.logvar[i].exp();
            mean[i] += g.mean[i];
            var[i] += v;
            second[i] += v + g.mean[i] * g.mean[i];
        }
    }
    for i in 0..dim {
        mean[i] /= n;
        var[i] = match mode {
            Aggregation::MeanOfMoments => var[i] / n,
            Aggregation::Mixture => (second[i] / n - mean[i] * mean[i]).max(f64::MIN_POSITIVE),
        };
    }
    DiagonalGaussian::new(mean, var.into_iter().map(f64::ln).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSlice {
    pub name: String,
    pub start: usize,
    pub length: usize,
}

impl PartitionSlice {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.length
    }
}

/// Contiguous split of the latent coordinates into named slices.
///
/// A slice named [`COMMON_SLICE`] is left unconstrained by gold Gaussians.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPartition {
    slices: Vec<PartitionSlice>,
}

pub const COMMON_SLICE: &str = "common";

impl LatentPartition {
    pub fn new(slices: Vec<PartitionSlice>, dim: usize) -> Result<Self, GaussianError> {
        let p = Self { slices };
        p.validate(dim)?;
        Ok(p)
    }

    /// Builds consecutive slices from `(name, length)` pairs.
    pub fn from_lengths(parts: &[(&str, usize)], dim: usize) -> Result<Self, GaussianError> {
        let mut start = 0;
        let slices = parts
            .iter()
            .map(|&(name, length)| {
                let s = PartitionSlice {
                    name: name.to_string(),
                    start,
                    length,
                };
                start += length;
                s
            })
            .collect();
        Self::new(slices, dim)
    }

    /// Parses `"50:50:100"` against names `common:action:emotion` (or the
    /// given names).
    pub fn from_ratio_str(ratios: &str, names: &[&str], dim: usize) -> Result<Self, GaussianError> {
        let lengths: Vec<usize> = ratios
            .split(':')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| GaussianError::Partition(format!("{ratios:?}: {e}")))?;
        if lengths.len() != names.len() {
            return Err(GaussianError::Partition(format!(
                "{ratios:?} has {} parts, expected {}",
                lengths.len(),
                names.len()
            )));
        }
        let parts: Vec<(&str, usize)> = names.iter().copied().zip(lengths).collect();
        Self::from_lengths(&parts, dim)
    }

    pub fn validate(&self, dim: usize) -> Result<(), GaussianError> {
        let mut next = 0;
        for (i, s) in self.slices.iter().enumerate() {
            if s.length == 0 {
                return Err(GaussianError::Partition(format!("slice {:?} is empty", s.name)));
            }
            if s.start != next {
                return Err(GaussianError::Partition(format!(
                    "slice {:?} starts at {} but previous slice ends at {next}",
                    s.name, s.start
                )));
            }
            if self.slices[..i].iter().any(|o| o.name == s.name) {
                return Err(GaussianError::Partition(format!("duplicate slice {:?}", s.name)));
            }
            next += s.length;
        }
        if next != dim {
            return Err(GaussianError::Partition(format!(
                "slice lengths sum to {next}, latent dimension is {dim}"
            )));
        }
        Ok(())
    }

    pub fn slices(&self) -> &[PartitionSlice] {
        &self.slices
    }

    pub fn dim(&self) -> usize {
        self.slices.iter().map(|s| s.length).sum()
    }

    /// Slices that receive a gold constraint.
    pub fn constrained(&self) -> impl Iterator<Item = &PartitionSlice> {
        self.slices.iter().filter(|s| s.name != COMMON_SLICE)
    }
}

/// Frozen per-category gold Gaussians for one label.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldBank {
    dim: usize,
    categories: Vec<DiagonalGaussian>,
    partition: Option<LatentPartition>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    dim: usize,
    partition: Option<Vec<PartitionSlice>>,
    categories: Vec<BankEntry>,
}

#[derive(Serialize, Deserialize)]
struct BankEntry {
    id: usize,
    mean: Vec<f64>,
    logvar: Vec<f64>,
}

impl GoldBank {
    pub fn new(
        categories: Vec<DiagonalGaussian>,
        partition: Option<LatentPartition>,
    ) -> Result<Self, GaussianError> {
        let dim = categories
            .first()
            .ok_or_else(|| GaussianError::Bank("no categories".into()))?
            .dim();
        if let Some(g) = categories.iter().find(|g| g.dim() != dim) {
            return Err(GaussianError::DimMismatch(dim, g.dim()));
        }
        if let Some(p) = &partition {
            p.validate(dim)?;
        }
        Ok(Self {
            dim,
            categories,
            partition,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn partition(&self) -> Option<&LatentPartition> {
        self.partition.as_ref()
    }

    pub fn get(&self, category: usize) -> Result<&DiagonalGaussian, GaussianError> {
        self.categories
            .get(category)
            .ok_or(GaussianError::MissingCategory(category))
    }

    pub fn categories(&self) -> &[DiagonalGaussian] {
        &self.categories
    }

    pub fn to_json(&self) -> String {
        let file = BankFile {
            dim: self.dim,
            partition: self.partition.as_ref().map(|p| p.slices.clone()),
            categories: self
                .categories
                .iter()
                .enumerate()
                .map(|(id, g)| BankEntry {
                    id,
                    mean: g.mean.clone(),
                    logvar: g.logvar.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("bank serializes");
        s.push('\n');
        s
    }

    /// Parses a bank; `expected_dim` rejects banks built for another latent size.
    pub fn from_json(text: &str, expected_dim: Option<usize>) -> Result<Self, GaussianError> {
        let file: BankFile =
            serde_json::from_str(text).map_err(|e| GaussianError::Bank(e.to_string()))?;
        if let Some(d) = expected_dim {
            if file.dim != d {
                return Err(GaussianError::Bank(format!(
                    "bank dim {} does not match latent dim {d}",
                    file.dim
                )));
            }
        }
        let k = file.categories.len();
        let mut slots: Vec<Option<DiagonalGaussian>> = vec![None; k];
        for entry in file.categories {
            if entry.mean.len() != file.dim || entry.logvar.len() != file.dim {
                return Err(GaussianError::Bank(format!(
                    "category {} has vectors of length {}/{} but dim is {}",
                    entry.id,
                    entry.mean.len(),
                    entry.logvar.len(),
                    file.dim
                )));
            }
            let slot = slots
                .get_mut(entry.id)
                .ok_or_else(|| GaussianError::Bank(format!("category id {} out of range 0..{k}", entry.id)))?;
            if slot.is_some() {
                return Err(GaussianError::Bank(format!("category id {} repeated", entry.id)));
            }
            *slot = Some(DiagonalGaussian::new(entry.mean, entry.logvar)?);
        }
        let categories = slots
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.ok_or(GaussianError::MissingCategory(id)))
            .collect::<Result<Vec<_>, _>>()?;
        let partition = file
            .partition
            .map(|slices| LatentPartition::new(slices, file.dim))
            .transpose()?;
        Self::new(categories, partition)
    }

    pub fn save(&self, path: &Path) -> Result<(), GaussianError> {
        std::fs::write(path, self.to_json()).map_err(|source| GaussianError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self, GaussianError> {
        let text = std::fs::read_to_string(path).map_err(|source| GaussianError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, expected_dim)
    }
}

/// k-th element of `0, 1, -1, 2, -2, ...`.
fn stepped_mean(k: usize) -> f64 {
    let step = k.div_ceil(2) as f64;
    match k {
        0 => 0.0,
        _ if k % 2 == 1 => step,
        _ => -step,
    }
}

/// Constructed gold Gaussians: category k gets every mean coordinate equal to
/// the k-th element of `0, 1, -1, 2, -2, ...` and every variance equal to
/// `k + 1`.
pub fn math_gold_bank(num_categories: usize, dim: usize) -> Result<GoldBank, GaussianError> {
    let categories = (0..num_categories.max(1))
        .map(|k| DiagonalGaussian::isotropic(dim, stepped_mean(k), (k + 1) as f64))
        .collect::<Result<Vec<_>, _>>()?;
    GoldBank::new(categories, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(mean: &[f64], logvar: &[f64]) -> DiagonalGaussian {
        DiagonalGaussian::new(mean.to_vec(), logvar.to_vec()).unwrap()
    }

    #[test]
    fn logvar_is_clamped() {
        let x = g(&[0.0, 0.0], &[-100.0, 100.0]);
        assert_eq!(x.logvar(), &[LOGVAR_MIN, LOGVAR_MAX]);
        assert!(DiagonalGaussian::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(DiagonalGaussian::new(vec![0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn kl_known_values() {
        let p = g(&[1.0], &[0.0]);
        let q = g(&[0.0], &[0.0]);
        assert_eq!(kl_diag(&p, &q).unwrap(), 0.5);
        assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
        let p4 = g(&[1.0; 4], &[0.0; 4]);
        let q4 = g(&[0.0; 4], &[0.0; 4]);
        assert_eq!(kl_diag(&p4, &q4).unwrap(), 2.0);
        assert!(matches!(
            kl_diag(&p, &q4),
            Err(GaussianError::DimMismatch(1, 4))
        ));
    }

    #[test]
    fn reparam_examples() {
        let x = g(&[0.5, -1.0], &[0.3, 2.0]);
        assert_eq!(reparam_sample(&x, &[0.0, 0.0]).unwrap(), x.mean());
        let y = g(&[0.0], &[4f64.ln()]);
        assert!((reparam_sample(&y, &[1.0]).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!(reparam_sample(&y, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let a = g(&[0.0], &[1f64.ln()]);
        let b = g(&[2.0], &[3f64.ln()]);
        assert!(matches!(
            aggregate_posteriors(&[], Aggregation::MeanOfMoments),
            Err(GaussianError::EmptyAggregate)
        ));
        assert_eq!(aggregate_posteriors(std::slice::from_ref(&a), Aggregation::MeanOfMoments).unwrap(), a);
        let agg = aggregate_posteriors(&[a.clone(), b.clone()], Aggregation::MeanOfMoments).unwrap();
        assert_eq!(agg.mean(), &[1.0]);
        assert!((agg.logvar()[0] - 2f64.ln()).abs() < 1e-15);
        // mixture: E[var + mean^2] - mean^2 = (1 + 0 + 3 + 4) / 2 - 1 = 3
        let mix = aggregate_posteriors(&[a, b], Aggregation::Mixture).unwrap();
        assert!((mix.variance()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn math_bank_grid() {
        let bank = math_gold_bank(3, 2).unwrap();
        let means: Vec<&[f64]> = bank.categories().iter().map(|c| c.mean()).collect();
        assert_eq!(means, vec![&[0.0, 0.0][..], &[1.0, 1.0][..], &[-1.0, -1.0][..]]);
        let vars: Vec<Vec<f64>> = bank.categories().iter().map(|c| c.variance()).collect();
        for (k, v) in vars.iter().enumerate() {
            for x in v {
                assert!((x - (k + 1) as f64).abs() < 1e-12);
            }
        }
        let one = math_gold_bank(1, 3).unwrap();
        assert_eq!(one.get(0).unwrap(), &DiagonalGaussian::standard(3));
        let five = math_gold_bank(5, 1).unwrap();
        let m: Vec<f64> = five.categories().iter().map(|c| c.mean()[0]).collect();
        assert_eq!(m, vec![0.0, 1.0, -1.0, 2.0, -2.0]);
    }

    #[test]
    fn slicing() {
        let x = g(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.2, 0.3, 0.4]);
        let full = PartitionSlice { name: "all".into(), start: 0, length: 4 };
        assert_eq!(x.slice(&full).unwrap(), x);
        let tail = PartitionSlice { name: "t".into(), start: 2, length: 2 };
        let s = x.slice(&tail).unwrap();
        assert_eq!(s.mean(), &[3.0, 4.0]);
        assert_eq!(s.logvar(), &[0.3, 0.4]);
        let bad = PartitionSlice { name: "b".into(), start: 3, length: 2 };
        assert!(matches!(x.slice(&bad), Err(GaussianError::SliceOutOfRange { .. })));
    }

    #[test]
    fn partition_validation() {
        assert!(LatentPartition::from_ratio_str("50:50:100", &["common", "action", "emotion"], 200).is_ok());
        assert!(LatentPartition::from_ratio_str("50:50:50", &["common", "action", "emotion"], 200).is_err());
        assert!(LatentPartition::from_ratio_str("50:150", &["common", "action", "emotion"], 200).is_err());
        let p = LatentPartition::from_lengths(&[("common", 2), ("emotion", 3)], 5).unwrap();
        assert_eq!(p.constrained().map(|s| s.name.as_str()).collect::<Vec<_>>(), vec!["emotion"]);
        let overlapping = vec![
            PartitionSlice { name: "a".into(), start: 0, length: 3 },
            PartitionSlice { name: "b".into(), start: 2, length: 3 },
        ];
        assert!(LatentPartition::new(overlapping, 5).is_err());
    }

    #[test]
    fn bank_file_round_trip_and_errors() {
        let bank = GoldBank::new(
            vec![g(&[0.1, 1.0 / 3.0], &[-0.7, 2.5]), g(&[-1e-17, 7.25], &[0.0, -3.3])],
            Some(LatentPartition::from_lengths(&[("common", 1), ("emotion", 1)], 2).unwrap()),
        )
        .unwrap();
        let text = bank.to_json();
        assert_eq!(GoldBank::from_json(&text, Some(2)).unwrap(), bank);
        assert!(GoldBank::from_json(&text, Some(200)).is_err());
        let missing = r#"{"dim": 1, "partition": null, "categories": [{"id": 0, "mean": [0], "logvar": [0]}, {"id": 0, "mean": [1], "logvar": [0]}]}"#;
        assert!(GoldBank::from_json(missing, None).is_err());
        let gap = r#"{"dim": 1, "partition": null, "categories": [{"id": 1, "mean": [0], "logvar": [0]}, {"id": 1, "mean": [0], "logvar": [0]}]}"#;
        let err = GoldBank::from_json(gap, None).unwrap_err().to_string();
        assert!(err.contains('1'), "{err}");
        let hole = r#"{"dim": 1, "partition": null, "categories": [{"id": 1, "mean": [0], "logvar": [0]}, {"id": 2, "mean": [0], "logvar": [0]}]}"#;
        assert!(GoldBank::from_json(hole, None).is_err());
    }

    proptest! {
        #[test]
        fn kl_nonnegative(
            pm in -5.0f64..5.0, pv in -3.0f64..3.0, qm in -5.0f64..5.0, qv in -3.0f64..3.0,
        ) {
            let p = g(&[pm], &[pv]);
            let q = g(&[qm], &[qv]);
            prop_assert!(kl_diag(&p, &q).unwrap() >= 0.0);
            prop_assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn kl_additive_over_slices(
            params in proptest::collection::vec((-5.0f64..5.0, -3.0f64..3.0, -5.0f64..5.0, -3.0f64..3.0), 2..12),
            cut in 1usize..11,
        ) {
            let cut = cut.min(params.len() - 1);
            let p = g(&params.iter().map(|t| t.0).collect::<Vec<_>>(), &params.iter().map(|t| t.1).collect::<Vec<_>>());
            let q = g(&params.iter().map(|t| t.2).collect::<Vec<_>>(), &params.iter().map(|t| t.3).collect::<Vec<_>>());
            let head = PartitionSlice { name: "h".into(), start: 0, length: cut };
            let tail = PartitionSlice { name: "t".into(), start: cut, length: params.len() - cut };
            let total = kl_diag(&p, &q).unwrap();
            let split = kl_diag(&p.slice(&head).unwrap(), &q.slice(&head).unwrap()).unwrap()
                + kl_diag(&p.slice(&tail).unwrap(), &q.slice(&tail).unwrap()).unwrap();
            prop_assert!((total - split).abs() <= 1e-12 * total.abs().max(1e-300));
        }
    }
}
