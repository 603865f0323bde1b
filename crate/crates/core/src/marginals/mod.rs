//! Private k-way marginal release.
//!
//! A dataset is a multiset of binary feature vectors. Its order-k parity
//! tensor `Σ_e m(e)·e^{⊗k}` holds the answer to every parity query of size at
//! most k: entry `α` counts the records with all features in `α` set, and
//! because `e_i² = e_i` on binary data a repeated index reads a lower-order
//! query.
//!
//! Three releases are provided:
//! - [`release_even_k`]: normalise, flatten the order-k tensor to an
//!   `n^{k/2} × n^{k/2}` matrix, add noise once and project onto
//!   `{M ⪰ 0, Tr M ≤ 1}`.
//! - [`release_threshold_baseline`]: noise, then keep only the `m·t^k`
//!   largest-magnitude entries (for t-sparse data).
//! - [`release_gaussian_only`]: the plain Gaussian mechanism.
//!
//! Released tensors are always in raw count units.

mod sparse_norm;

pub use sparse_norm::{sparse_injective_norm_oracle, sparse_norm_bound, SearchBudget, SparseNormEstimate};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::engine::perturb_and_project_with;
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::mechanism::{calibrate_sigma, NoiseSource, PrivacyParams, RandomStream, StreamNoise};
use crate::projections::ConvexSet;

/// Largest tensor (in entries) any operation will allocate.
pub const MAX_TENSOR_ENTRIES: u64 = 100_000_000;

/// One distinct record: the indices of its nonzero features and how many
/// users hold it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryRecord {
    pub support: Vec<usize>,
    pub multiplicity: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryDataset {
    n_features: usize,
    records: Vec<BinaryRecord>,
    sparsity: Option<usize>,
}

impl BinaryDataset {
    /// Builds a dataset from dense 0/1 rows with multiplicities.
    pub fn from_rows(n_features: usize, rows: Vec<(Vec<u8>, u64)>, sparsity: Option<usize>) -> Result<Self> {
        let mut records = Vec::with_capacity(rows.len());
        for (row, (values, multiplicity)) in rows.into_iter().enumerate() {
            if values.len() != n_features {
                return Err(Error::InvalidRow {
                    row,
                    message: format!("has {} values, expected {n_features}", values.len()),
                });
            }
            let mut support = Vec::new();
            for (j, &v) in values.iter().enumerate() {
                match v {
                    0 => {}
                    1 => support.push(j),
                    other => {
                        return Err(Error::InvalidRow {
                            row,
                            message: format!("value {other} in column {j} is not 0 or 1"),
                        })
                    }
                }
            }
            records.push(BinaryRecord { support, multiplicity });
        }
        Self::from_records(n_features, records, sparsity)
    }

    /// Builds a dataset from supports. Supports are sorted and must be
    /// duplicate-free and in range.
    pub fn from_records(n_features: usize, records: Vec<BinaryRecord>, sparsity: Option<usize>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidInput("datasets need at least one feature".into()));
        }
        let mut clean = Vec::with_capacity(records.len());
        for (row, mut rec) in records.into_iter().enumerate() {
            rec.support.sort_unstable();
            if rec.support.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidRow {
                    row,
                    message: "repeated feature index".into(),
                });
            }
            if let Some(&last) = rec.support.last() {
                if last >= n_features {
                    return Err(Error::IndexOutOfRange {
                        index: last,
                        side: n_features,
                    });
                }
            }
            if let Some(t) = sparsity {
                if rec.support.len() > t {
                    return Err(Error::NotSparse {
                        record: row,
                        nonzeros: rec.support.len(),
                        sparsity: t,
                    });
                }
            }
            clean.push(rec);
        }
        Ok(BinaryDataset {
            n_features,
            records: clean,
            sparsity,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn records(&self) -> &[BinaryRecord] {
        &self.records
    }

    pub fn sparsity(&self) -> Option<usize> {
        self.sparsity
    }

    /// Number of users `m = Σ m(e)`.
    pub fn size(&self) -> u64 {
        self.records.iter().map(|r| r.multiplicity).sum()
    }

    /// Largest support among records with positive multiplicity.
    pub fn max_support(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.multiplicity > 0)
            .map(|r| r.support.len())
            .max()
            .unwrap_or(0)
    }

    /// Adjacent dataset: one user holding record `index` is replaced by a user
    /// holding `replacement`.
    pub fn swap_one(&self, index: usize, replacement: Vec<usize>) -> Result<BinaryDataset> {
        let rec = self
            .records
            .get(index)
            .ok_or(Error::IndexOutOfRange {
                index,
                side: self.records.len(),
            })?;
        if rec.multiplicity == 0 {
            return Err(Error::InvalidInput(format!("record {index} has no users")));
        }
        let mut records = self.records.clone();
        records[index].multiplicity -= 1;
        records.push(BinaryRecord {
            support: replacement,
            multiplicity: 1,
        });
        BinaryDataset::from_records(self.n_features, records, self.sparsity)
    }
}

/// A parity query: the set of features that must all be 1 (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityQuery {
    alpha: Vec<usize>,
}

impl ParityQuery {
    pub fn new(mut alpha: Vec<usize>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidInput("parity query needs at least one feature".into()));
        }
        alpha.sort_unstable();
        if alpha.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("parity query features must be distinct".into()));
        }
        Ok(ParityQuery { alpha })
    }

    pub fn alpha(&self) -> &[usize] {
        &self.alpha
    }
}

/// How stored tensor values relate to raw counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TensorScale {
    Identity,
    /// `stored = raw / (records · base^{k/2})`.
    Normalized { records: f64, base: f64 },
}

impl TensorScale {
    /// Multiplier taking stored values back to raw counts.
    pub fn to_raw_factor(&self, order: usize) -> f64 {
        match *self {
            TensorScale::Identity => 1.0,
            TensorScale::Normalized { records, base } => records * base.powf(order as f64 / 2.0),
        }
    }
}

/// An order-k tensor over `side` features, flat in lexicographic index order.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTensor {
    pub order: usize,
    pub side: usize,
    pub values: Vec<f64>,
    pub scale: TensorScale,
}

impl MarginalTensor {
    pub fn zeros(order: usize, side: usize) -> Result<Self> {
        let len = checked_len(side, order)?;
        Ok(MarginalTensor {
            order,
            side,
            values: vec![0.0; len],
            scale: TensorScale::Identity,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat_index(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.order {
            return Err(Error::ShapeMismatch(format!(
                "multi-index of length {} for an order-{} tensor",
                multi.len(),
                self.order
            )));
        }
        let mut flat = 0usize;
        for &i in multi {
            if i >= self.side {
                return Err(Error::IndexOutOfRange { index: i, side: self.side });
            }
            flat = flat * self.side + i;
        }
        Ok(flat)
    }

    pub fn get(&self, multi: &[usize]) -> Result<f64> {
        Ok(self.values[self.flat_index(multi)?])
    }

    /// Values in raw count units.
    pub fn raw_values(&self) -> Vec<f64> {
        let f = self.scale.to_raw_factor(self.order);
        if f == 1.0 {
            self.values.clone()
        } else {
            self.values.iter().map(|v| v * f).collect()
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Even-order flattening to an `n^{k/2} × n^{k/2}` matrix. The flat
    /// lexicographic layout is already the row-major layout of that matrix.
    pub fn flatten(&self) -> Result<SymMatrix> {
        if !self.order.is_multiple_of(2) {
            return Err(Error::OddOrder(self.order));
        }
        let rows = self.side.pow((self.order / 2) as u32);
        SymMatrix::from_row_major(rows, self.values.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReleaseMethod {
    EvenFlatten,
    Threshold,
    Gaussian,
}

#[derive(Clone, Debug)]
pub struct MarginalRelease {
    /// Released tensor in raw count units.
    pub tensor: MarginalTensor,
    /// `(ε, δ)` as supplied, with the sensitivity the method derived from the
    /// dataset in the units the noise was added in.
    pub params: PrivacyParams,
    pub method: ReleaseMethod,
    /// Noise standard deviation in the units the noise was added in.
    pub sigma: f64,
    /// The same standard deviation expressed in raw count units.
    pub sigma_raw: f64,
}

fn checked_len(side: usize, order: usize) -> Result<usize> {
    let entries = (side as u128).checked_pow(order as u32).unwrap_or(u128::MAX);
    if entries > MAX_TENSOR_ENTRIES as u128 {
        return Err(Error::SizeGuard {
            entries,
            limit: MAX_TENSOR_ENTRIES,
        });
    }
    Ok(entries as usize)
}

/// `T = Σ_e m(e)·e^{⊗k}`, unscaled.
pub fn parity_tensor(data: &BinaryDataset, k: usize) -> Result<MarginalTensor> {
    if k == 0 {
        return Err(Error::InvalidInput("order k must be >= 1".into()));
    }
    let n = data.n_features();
    let mut tensor = MarginalTensor::zeros(k, n)?;
    let mut digits = vec![0usize; k];
    for rec in data.records() {
        let s = rec.support.len();
        if s == 0 || rec.multiplicity == 0 {
            continue;
        }
        let weight = rec.multiplicity as f64;
        // Odometer over support^k.
        digits.iter_mut().for_each(|d| *d = 0);
        'odometer: loop {
            let flat = digits.iter().fold(0usize, |acc, &d| acc * n + rec.support[d]);
            tensor.values[flat] += weight;
            let mut pos = k;
            loop {
                if pos == 0 {
                    break 'odometer;
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < s {
                    break;
                }
                digits[pos] = 0;
            }
        }
    }
    Ok(tensor)
}

/// Reads a parity query from the tensor, padding `alpha` with its last index
/// up to the tensor order, and returns the answer in raw count units.
pub fn answer_parity_query(tensor: &MarginalTensor, query: &ParityQuery) -> Result<f64> {
    let alpha = query.alpha();
    if alpha.len() > tensor.order {
        return Err(Error::InvalidInput(format!(
            "query of size {} exceeds tensor order {}",
            alpha.len(),
            tensor.order
        )));
    }
    let mut multi = alpha.to_vec();
    let last = *alpha.last().expect("queries are nonempty");
    multi.resize(tensor.order, last);
    Ok(tensor.get(&multi)? * tensor.scale.to_raw_factor(tensor.order))
}

fn require_users(data: &BinaryDataset) -> Result<f64> {
    let m = data.size();
    if m == 0 {
        return Err(Error::InvalidInput("dataset has no records".into()));
    }
    Ok(m as f64)
}

/// Even-k release through flattening.
///
/// `T* = (1/m)·Σ m(e)·(e/√n)^{⊗k}` has flattening in `{M ⪰ 0, Tr M ≤ 1}`,
/// and one user swap moves it by at most `2/m` in ℓ2, which is the
/// sensitivity used (the sensitivity in `params` is ignored).
pub fn release_even_k(
    data: &BinaryDataset,
    k: usize,
    params: &PrivacyParams,
    stream: RandomStream,
) -> Result<MarginalRelease> {
    release_even_k_with(data, k, params, &mut StreamNoise::new(stream))
}

pub fn release_even_k_with<N: NoiseSource>(
    data: &BinaryDataset,
    k: usize,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<MarginalRelease> {
    if k == 0 || !k.is_multiple_of(2) {
        return Err(Error::OddOrder(k));
    }
    let m = require_users(data)?;
    let n = data.n_features() as f64;
    let raw = parity_tensor(data, k)?;
    let factor = m * n.powf(k as f64 / 2.0);
    let normalized = MarginalTensor {
        values: raw.values.iter().map(|v| v / factor).collect(),
        scale: TensorScale::Normalized { records: m, base: n },
        ..raw
    };
    let flat = normalized.flatten()?;
    let norm_params = params.with_sensitivity(2.0 / m)?;
    let out = perturb_and_project_with(&flat, &ConvexSet::PsdTrace(1.0), &norm_params, noise)?;
    let values = out.point.as_slice().iter().map(|v| v * factor).collect();
    Ok(MarginalRelease {
        tensor: MarginalTensor {
            order: k,
            side: data.n_features(),
            values,
            scale: TensorScale::Identity,
        },
        params: norm_params,
        method: ReleaseMethod::EvenFlatten,
        sigma: out.sigma_used,
        sigma_raw: out.sigma_used * factor,
    })
}

/// Raw-count ℓ2 sensitivity `2·t^{k/2}` of the order-k tensor when every
/// record has at most `t` nonzeros.
pub fn raw_sensitivity(t: usize, k: usize) -> f64 {
    2.0 * (t as f64).powf(k as f64 / 2.0)
}

fn noisy_raw<N: NoiseSource>(
    data: &BinaryDataset,
    k: usize,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<(MarginalTensor, f64)> {
    let mut tensor = parity_tensor(data, k)?;
    let sigma = calibrate_sigma(params);
    let w = noise.flat(tensor.len(), sigma);
    tensor.values.iter_mut().zip(w).for_each(|(v, z)| *v += z);
    Ok((tensor, sigma.sigma()))
}

/// Gaussian noise on the raw tensor, then everything but the `m·t^k` largest
/// magnitudes is zeroed. Ties at the cut keep the lexicographically smaller
/// index.
pub fn release_threshold_baseline(
    data: &BinaryDataset,
    k: usize,
    t: usize,
    params: &PrivacyParams,
    stream: RandomStream,
) -> Result<MarginalRelease> {
    release_threshold_baseline_with(data, k, t, params, &mut StreamNoise::new(stream))
}

pub fn release_threshold_baseline_with<N: NoiseSource>(
    data: &BinaryDataset,
    k: usize,
    t: usize,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<MarginalRelease> {
    if t == 0 {
        return Err(Error::InvalidInput("sparsity t must be >= 1".into()));
    }
    for (record, rec) in data.records().iter().enumerate() {
        if rec.support.len() > t {
            return Err(Error::NotSparse {
                record,
                nonzeros: rec.support.len(),
                sparsity: t,
            });
        }
    }
    let m = data.size();
    let raw_params = params.with_sensitivity(raw_sensitivity(t, k))?;
    let (mut tensor, sigma) = noisy_raw(data, k, &raw_params, noise)?;
    let keep = (m as u128).saturating_mul((t as u128).saturating_pow(k as u32));
    keep_largest(&mut tensor.values, keep.min(usize::MAX as u128) as usize);
    Ok(MarginalRelease {
        tensor,
        params: raw_params,
        method: ReleaseMethod::Threshold,
        sigma,
        sigma_raw: sigma,
    })
}

fn keep_largest(values: &mut [f64], keep: usize) {
    if keep >= values.len() {
        return;
    }
    let by_rank = |a: &usize, b: &usize| -> Ordering {
        values[*b]
            .abs()
            .total_cmp(&values[*a].abs())
            .then_with(|| a.cmp(b))
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    if keep > 0 {
        order.select_nth_unstable_by(keep - 1, by_rank);
    }
    let dropped: Vec<usize> = order[keep..].to_vec();
    for i in dropped {
        values[i] = 0.0;
    }
}

/// The Gaussian mechanism on the raw tensor with sensitivity `2·t_eff^{k/2}`,
/// where `t_eff` is the declared sparsity or `n` for dense data.
pub fn release_gaussian_only(
    data: &BinaryDataset,
    k: usize,
    params: &PrivacyParams,
    stream: RandomStream,
) -> Result<MarginalRelease> {
    release_gaussian_only_with(data, k, params, &mut StreamNoise::new(stream))
}

pub fn release_gaussian_only_with<N: NoiseSource>(
    data: &BinaryDataset,
    k: usize,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<MarginalRelease> {
    let t_eff = data.sparsity().unwrap_or(data.n_features());
    let raw_params = params.with_sensitivity(raw_sensitivity(t_eff, k))?;
    let (tensor, sigma) = noisy_raw(data, k, &raw_params, noise)?;
    Ok(MarginalRelease {
        tensor,
        params: raw_params,
        method: ReleaseMethod::Gaussian,
        sigma,
        sigma_raw: sigma,
    })
}

/// `(1/n^k)·Σ_α (released_α − truth_α)²` in raw count units.
pub fn avg_query_sq_error(released: &MarginalRelease, truth: &MarginalTensor) -> Result<f64> {
    tensor_sq_error(&released.tensor, truth)
}

pub fn tensor_sq_error(a: &MarginalTensor, b: &MarginalTensor) -> Result<f64> {
    if a.order != b.order || a.side != b.side {
        return Err(Error::ShapeMismatch(format!(
            "order {} side {} vs order {} side {}",
            a.order, a.side, b.order, b.side
        )));
    }
    let (ra, rb) = (a.raw_values(), b.raw_values());
    let total: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(total / ra.len() as f64)
}
