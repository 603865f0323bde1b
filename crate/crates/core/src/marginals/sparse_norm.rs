//! Brute-force sparse injective norm.
//!
//! Computes `max{⟨A, x^{⊗k}⟩ : ‖x‖₂ = 1, ‖x‖₀ ≤ t}` by enumerating supports
//! of size `t` and maximising on each with a shifted power iteration. Used to
//! check the bound `‖A‖_∞·t^{k/2}` on explicit sparse vectors.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::MarginalTensor;
use crate::error::{Error, Result};
use crate::mechanism::RandomStream;

#[derive(Clone, Copy, Debug)]
pub struct SearchBudget {
    /// Enumerate every support when `C(n, t)` is at most this.
    pub max_exhaustive_supports: u64,
    /// Supports drawn at random otherwise.
    pub random_supports: usize,
    /// Random starting points per support, on top of the deterministic ones.
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub stream: RandomStream,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_exhaustive_supports: 10_000,
            random_supports: 2_000,
            restarts: 8,
            max_iters: 2_000,
            tol: 1e-8,
            stream: RandomStream::new(0x5eed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SparseNormEstimate {
    /// Best value found; a lower bound on the maximum, exact up to the
    /// iteration tolerance when `exhaustive` is set.
    pub value: f64,
    pub maximizer: Vec<f64>,
    pub supports_searched: usize,
    pub exhaustive: bool,
    /// Set when the support count exceeded the exhaustive budget and only a
    /// random sample was searched.
    pub budget_exceeded: bool,
}

/// `‖A‖_∞·t^{k/2}`.
pub fn sparse_norm_bound(a: &MarginalTensor, t: usize) -> f64 {
    a.max_abs() * (t as f64).powf(a.order as f64 / 2.0)
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// The tensor restricted to `support^k`, flat over local indices.
struct Restricted {
    order: usize,
    size: usize,
    values: Vec<f64>,
}

impl Restricted {
    fn new(a: &MarginalTensor, support: &[usize]) -> Self {
        let s = support.len();
        let k = a.order;
        let len = s.pow(k as u32);
        let mut values = Vec::with_capacity(len);
        for local in 0..len {
            let mut rem = local;
            let mut digits = vec![0usize; k];
            for d in digits.iter_mut().rev() {
                *d = rem % s;
                rem /= s;
            }
            let global = digits.iter().fold(0usize, |acc, &d| acc * a.side + support[d]);
            values.push(a.values[global]);
        }
        Restricted { order: k, size: s, values }
    }

    /// Value `⟨A, x^{⊗k}⟩` and gradient.
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (k, s) = (self.order, self.size);
        let mut value = 0.0;
        let mut grad = vec![0.0; s];
        let mut digits = vec![0usize; k];
        for &a in &self.values {
            if a != 0.0 {
                let prod: f64 = digits.iter().map(|&d| x[d]).product();
                value += a * prod;
                for p in 0..k {
                    let partial: f64 = digits
                        .iter()
                        .enumerate()
                        .filter(|&(q, _)| q != p)
                        .map(|(_, &d)| x[d])
                        .product();
                    grad[digits[p]] += a * partial;
                }
            }
            for d in digits.iter_mut().rev() {
                *d += 1;
                if *d < s {
                    break;
                }
                *d = 0;
            }
        }
        (value, grad)
    }
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Shifted power iteration `x ← normalize(∇f(x) + shift·x)` with the shift
/// doubled whenever a step fails to increase `f`.
fn ascend(r: &Restricted, start: Vec<f64>, budget: &SearchBudget) -> (f64, Vec<f64>) {
    let mut x = start;
    let (mut fx, mut grad) = r.eval(&x);
    let mut shift = 1e-3 * r.values.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
    for _ in 0..budget.max_iters {
        let mut stepped = None;
        for _ in 0..60 {
            let candidate = grad.iter().zip(&x).map(|(g, xi)| g + shift * xi).collect();
            if let Some(y) = normalize(candidate) {
                let (fy, gy) = r.eval(&y);
                if fy >= fx {
                    stepped = Some((y, fy, gy));
                    break;
                }
            }
            shift *= 2.0;
        }
        let Some((y, fy, gy)) = stepped else { break };
        let moved: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let gain = fy - fx;
        x = y;
        fx = fy;
        grad = gy;
        if gain <= budget.tol * (1.0 + fx.abs()) && moved <= budget.tol.sqrt() {
            break;
        }
        shift = (shift * 0.5).max(1e-12);
    }
    (fx, x)
}

fn search_support(r: &Restricted, budget: &SearchBudget, stream: RandomStream) -> (f64, Vec<f64>) {
    let s = r.size;
    let mut starts: Vec<Vec<f64>> = (0..s)
        .map(|i| (0..s).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    starts.push(vec![1.0 / (s as f64).sqrt(); s]);
    let mut rng = stream.rng();
    for _ in 0..budget.restarts {
        let g: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(g) = normalize(g) {
            starts.push(g);
        }
    }
    let mut best = (f64::NEG_INFINITY, vec![0.0; s]);
    for start in starts {
        let (v, x) = ascend(r, start, budget);
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}

/// Sparse injective norm of `a` over `t`-sparse unit vectors.
pub fn sparse_injective_norm_oracle(
    a: &MarginalTensor,
    t: usize,
    budget: &SearchBudget,
) -> Result<SparseNormEstimate> {
    let n = a.side;
    if t == 0 || t > n {
        return Err(Error::InvalidInput(format!("sparsity t = {t} must lie in [1, {n}]")));
    }
    if a.order == 0 {
        return Err(Error::InvalidInput("tensor order must be >= 1".into()));
    }
    let total = binomial(n as u64, t as u64);
    let exhaustive = total <= budget.max_exhaustive_supports;
    let supports: Vec<Vec<usize>> = if exhaustive {
        combinations(n, t)
    } else {
        let mut rng = budget.stream.substream(u64::MAX).rng();
        (0..budget.random_supports)
            .map(|_| {
                let mut s = sample(&mut rng, n, t).into_vec();
                s.sort_unstable();
                s
            })
            .collect()
    };

    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    for (i, support) in supports.iter().enumerate() {
        let restricted = Restricted::new(a, support);
        let (v, x) = search_support(&restricted, budget, budget.stream.substream(i as u64));
        if v > best.0 {
            let mut full = vec![0.0; n];
            for (local, &g) in support.iter().enumerate() {
                full[g] = x[local];
            }
            best = (v, full);
        }
    }
    Ok(SparseNormEstimate {
        value: best.0,
        maximizer: best.1,
        supports_searched: supports.len(),
        exhaustive,
        budget_exceeded: !exhaustive,
    })
}

/// All `t`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..t).collect();
    loop {
        out.push(current.clone());
        let mut i = t;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < n - t + i {
                break;
            }
        }
        current[i] += 1;
        for j in (i + 1)..t {
            current[j] = current[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::TensorScale;

    fn tensor(order: usize, side: usize, values: Vec<f64>) -> MarginalTensor {
        MarginalTensor {
            order,
            side,
            values,
            scale: TensorScale::Identity,
        }
    }

    #[test]
    fn basis_tensor_is_tight() {
        let mut values = vec![0.0; 27];
        values[0] = 1.0;
        let a = tensor(3, 3, values);
        let est = sparse_injective_norm_oracle(&a, 1, &SearchBudget::default()).unwrap();
        assert!((est.value - 1.0).abs() < 1e-8);
        assert!(est.exhaustive);
        assert!((est.value - sparse_norm_bound(&a, 1)).abs() < 1e-8);
    }

    #[test]
    fn all_ones_matrix_two_sparse() {
        let a = tensor(2, 3, vec![1.0; 9]);
        let est = sparse_injective_norm_oracle(&a, 2, &SearchBudget::default()).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "{}", est.value);
        assert_eq!(est.supports_searched, 3);
        assert_eq!(est.maximizer.iter().filter(|v| v.abs() > 1e-6).count(), 2);
    }

    #[test]
    fn rank_one_closed_form() {
        // A = u⊗u⊗u with u = (3, 4)/5 has maximum 1 at x = u.
        let u = [0.6, 0.8];
        let mut values = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    values.push(u[i] * u[j] * u[l]);
                }
            }
        }
        let est = sparse_injective_norm_oracle(&tensor(3, 2, values), 2, &SearchBudget::default()).unwrap();
        assert!((est.value - 1.0).abs() < 1e-7, "{}", est.value);
    }

    #[test]
    fn combinations_enumerates_all() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(binomial(8, 3), 56);
        assert_eq!(binomial(60, 30), 118264581564861424);
    }

    #[test]
    fn random_supports_flag_budget() {
        let a = tensor(2, 6, vec![0.5; 36]);
        let budget = SearchBudget {
            max_exhaustive_supports: 3,
            random_supports: 5,
            ..SearchBudget::default()
        };
        let est = sparse_injective_norm_oracle(&a, 2, &budget).unwrap();
        assert!(est.budget_exceeded && !est.exhaustive);
        assert_eq!(est.supports_searched, 5);
        assert!((est.value - 1.0).abs() < 1e-7);
    }
}
