//! k-nearest-neighbour mutual information estimators.
//!
//! Both estimators standardise their continuous input (zero mean, unit
//! population variance) and add a tiny deterministic jitter before the
//! neighbour search, so tied values (one-hot columns, discretised answers)
//! get well-defined neighbour distances.
//!
//! * [`mi_continuous`]: Kraskov–Stögbauer–Grassberger estimator #1 with the
//!   Chebyshev metric in the joint space.
//! * [`mi_discrete_target`]: Ross's estimator for a continuous variable against a
//!   discrete label.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use statrs::function::gamma::digamma;

#[derive(Debug, Error, PartialEq)]
pub enum MiError {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("invalid estimator config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    pub n_neighbors: usize,
    /// Jitter amplitude relative to the largest standardised magnitude.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            n_neighbors: 3,
            noise_scale: 1e-10,
            seed: 424_989,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<(), MiError> {
        if self.n_neighbors < 1 {
            return Err(MiError::BadConfig("n_neighbors must be at least 1"));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(MiError::BadConfig("noise_scale must be non-negative"));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw keyed by (seed, row, value bits). Keying on the value
/// rather than on argument position keeps `mi(x, y) == mi(y, x)` exact.
fn jitter_normal(seed: u64, row: usize, value: f64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(row as u64 ^ splitmix64(value.to_bits())));
    let h2 = splitmix64(h);
    let u1 = ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A standardised, jittered column with a sorted copy for range counting.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    values: Vec<f64>,
    sorted: Vec<f64>,
    /// Row indices ordered by (value, row).
    order: Vec<usize>,
    constant: bool,
}

impl Prepared {
    pub(crate) fn new(x: &[f64], cfg: &MiConfig) -> Prepared {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let constant = !(std > 0.0) || x.iter().all(|&v| v == x[0]);
        let mut values: Vec<f64> = if constant {
            vec![0.0; x.len()]
        } else {
            x.iter().map(|v| (v - mean) / std).collect()
        };
        let amplitude = cfg.noise_scale * values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if amplitude > 0.0 {
            for (row, (z, &raw)) in values.iter_mut().zip(x).enumerate() {
                *z += amplitude * jitter_normal(cfg.seed, row, raw);
            }
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&i| values[i]).collect();
        Prepared {
            values,
            sorted,
            order,
            constant,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.values.len()
    }

    /// Number of points (self included) with |v − center| < radius.
    fn count_strictly_within(&self, center: f64, radius: f64) -> usize {
        let lo = self.sorted.partition_point(|&v| center - v >= radius);
        let hi = self.sorted.partition_point(|&v| v - center < radius);
        hi.saturating_sub(lo)
    }

    /// Number of points (self included) with |v − center| <= 0.
    fn count_ties(&self, center: f64) -> usize {
        let lo = self.sorted.partition_point(|&v| v < center);
        let hi = self.sorted.partition_point(|&v| v <= center);
        hi - lo
    }
}

/// Largest value kept in a bounded set of the k smallest distances.
struct KSmallest {
    k: usize,
    items: Vec<f64>,
}

impl KSmallest {
    fn new(k: usize) -> Self {
        KSmallest {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1]
        }
    }

    fn offer(&mut self, d: f64) {
        if d >= self.bound() {
            return;
        }
        let pos = self.items.partition_point(|&v| v <= d);
        self.items.insert(pos, d);
        self.items.truncate(self.k);
    }
}

/// Chebyshev distance to the k-th nearest neighbour of every point in (x, y).
fn joint_kth_distances(x: &Prepared, y: &Prepared, k: usize) -> Vec<f64> {
    let n = x.len();
    let mut rank = vec![0usize; n];
    for (r, &i) in x.order.iter().enumerate() {
        rank[i] = r;
    }
    (0..n)
        .map(|i| {
            let (xi, yi) = (x.values[i], y.values[i]);
            let mut best = KSmallest::new(k);
            let p = rank[i];
            let (mut left, mut right) = (p, p + 1);
            let (mut left_open, mut right_open) = (p > 0, right < n);
            while left_open || right_open {
                if left_open {
                    let j = x.order[left - 1];
                    let dx = xi - x.values[j];
                    if dx.abs() >= best.bound() {
                        left_open = false;
                    } else {
                        best.offer(dx.abs().max((yi - y.values[j]).abs()));
                        left -= 1;
                        left_open = left > 0;
                    }
                }
                if right_open {
                    let j = x.order[right];
                    let dx = x.values[j] - xi;
                    if dx.abs() >= best.bound() {
                        right_open = false;
                    } else {
                        best.offer(dx.abs().max((yi - y.values[j]).abs()));
                        right += 1;
                        right_open = right < n;
                    }
                }
            }
            best.bound()
        })
        .collect()
}

/// KSG estimator #1 on prepared columns, clamped at zero.
pub(crate) fn ksg_prepared(x: &Prepared, y: &Prepared, k: usize) -> f64 {
    if x.constant || y.constant {
        return 0.0;
    }
    let n = x.len();
    let eps = joint_kth_distances(x, y, k);
    let mut acc = 0.0;
    for i in 0..n {
        let self_hit = usize::from(eps[i] > 0.0);
        let nx = x.count_strictly_within(x.values[i], eps[i]) - self_hit;
        let ny = y.count_strictly_within(y.values[i], eps[i]) - self_hit;
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    let mi = digamma(k as f64) + digamma(n as f64) - acc / n as f64;
    mi.max(0.0)
}

/// Mutual information (nats) between two continuous samples.
pub fn mi_continuous(x: &[f64], y: &[f64], cfg: &MiConfig) -> Result<f64, MiError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(MiError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < cfg.n_neighbors + 1 {
        return Err(MiError::TooFewSamples {
            needed: cfg.n_neighbors + 1,
            found: x.len(),
        });
    }
    Ok(ksg_prepared(&Prepared::new(x, cfg), &Prepared::new(y, cfg), cfg.n_neighbors))
}

/// Mutual information (nats) between a continuous sample and a binary label.
///
/// Points whose class has a single member are skipped, as in Ross (2014).
pub fn mi_discrete_target(x: &[f64], labels: &[bool], cfg: &MiConfig) -> Result<f64, MiError> {
    cfg.validate()?;
    if x.len() != labels.len() {
        return Err(MiError::LengthMismatch(x.len(), labels.len()));
    }
    if x.len() < 2 {
        return Err(MiError::TooFewSamples { needed: 2, found: x.len() });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(MiError::DegenerateLabels);
    }
    let all = Prepared::new(x, cfg);
    if all.constant {
        return Ok(0.0);
    }

    let mut class_sorted: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for &i in &all.order {
        class_sorted[usize::from(labels[i])].push(all.values[i]);
    }

    let (mut used, mut sum_k, mut sum_label, mut sum_m) = (0usize, 0.0, 0.0, 0.0);
    for (i, &label) in labels.iter().enumerate() {
        let members = &class_sorted[usize::from(label)];
        let size = members.len();
        if size < 2 {
            continue;
        }
        let k = cfg.n_neighbors.min(size - 1);
        let xi = all.values[i];
        let radius = kth_within_class(members, xi, k);
        let m = if radius > 0.0 {
            all.count_strictly_within(xi, radius)
        } else {
            all.count_ties(xi)
        };
        used += 1;
        sum_k += digamma(k as f64);
        sum_label += digamma(size as f64);
        sum_m += digamma(m as f64);
    }
    if used == 0 {
        return Err(MiError::TooFewSamples { needed: 2, found: 1 });
    }
    let u = used as f64;
    let mi = digamma(u) + (sum_k - sum_label - sum_m) / u;
    Ok(mi.max(0.0))
}

/// Distance from `center` (a member of `sorted`) to its k-th nearest other member.
fn kth_within_class(sorted: &[f64], center: f64, k: usize) -> f64 {
    let n = sorted.len();
    // Any one copy of `center` stands for the point itself.
    let p = sorted.partition_point(|&v| v < center);
    let (mut left, mut right) = (p, p + 1);
    let mut d = 0.0;
    for _ in 0..k {
        let dl = if left > 0 { center - sorted[left - 1] } else { f64::INFINITY };
        let dr = if right < n { sorted[right] - center } else { f64::INFINITY };
        if dl <= dr {
            d = dl;
            left -= 1;
        } else {
            d = dr;
            right += 1;
        }
    }
    d
}


/// The estimators evaluate ψ at integers and need it to ~1e-12.
#[cfg(test)]
mod digamma_tests {
    use super::digamma;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn value_at_one() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-10);
    }

    #[test]
    fn value_at_half() {
        // ψ(1/2) = −γ − 2 ln 2
        let expect = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5) - expect).abs() < 1e-10);
    }

    #[test]
    fn recurrence() {
        for x in [0.5, 1.0, 2.0, 10.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn harmonic_numbers() {
        // ψ(n) = H_{n-1} − γ
        let mut h = 0.0;
        for n in 1..200u32 {
            assert!((digamma(n as f64) - (h - EULER_GAMMA)).abs() < 1e-12, "n = {n}");
            h += 1.0 / n as f64;
        }
    }
}
