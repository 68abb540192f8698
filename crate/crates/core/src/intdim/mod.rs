//! Intrinsic dimension of point clouds.
//!
//! Levina-Bickel: with `T_j(i)` the distance from point `i` to its `j`-th
//! nearest neighbour,
//!
//! ```text
//! S = (1/N) Σᵢ (1/(k−2)) Σ_{j<k} ln(T_k(i) / T_j(i))      raw estimate = 1/S
//! ```
//!
//! Correlation dimension: slope of `ln C(r)` against `ln r`, where `C(r)` is
//! the fraction of point pairs closer than `r`.

mod knn;

use nnkit::par::{map_range, Parallelism};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Dataset, Split};
use crate::stage1::sample_refs;

pub use knn::{knn_brute, knn_kdtree, knn_with};

/// Points closer than this are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdError {
    #[error("k must be >= {min}, got {k}")]
    SmallK { k: usize, min: usize },
    #[error("{n} points cannot supply {k} neighbours each (need at least k+1)")]
    TooFewPoints { n: usize, k: usize },
    #[error("correlation dimension needs at least {min} points, got {n}")]
    TooFewForCd { n: usize, min: usize },
    #[error("zero neighbour distance at point {0}")]
    ZeroDistance(usize),
    #[error("only {0} usable radius bins (need 5)")]
    FewBins(usize),
    #[error("rows have different lengths")]
    Ragged,
    #[error("non-finite coordinate in row {0}")]
    NonFinite(usize),
    #[error("invalid fit range: {0}")]
    FitRange(String),
    #[error("no samples in split")]
    Empty,
}

pub type Result<T> = std::result::Result<T, IdError>;

/// N points in ℝᴰ, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(IdError::Ragged);
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(IdError::NonFinite(i));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Drops every point lying within [`DUPLICATE_TOL`] of an earlier point.
    /// Returns the reduced cloud and the number removed.
    pub fn dedup(&self, mode: Parallelism) -> (PointCloud, usize) {
        let n = self.len();
        if n < 2 {
            return (self.clone(), 0);
        }
        let tol2 = DUPLICATE_TOL * DUPLICATE_TOL;
        let nearest = knn_kdtree(self, 1, mode);
        let candidates: Vec<usize> = (0..n).filter(|&i| nearest[i][0] <= DUPLICATE_TOL).collect();
        let mut drop = vec![false; n];
        for (a, &i) in candidates.iter().enumerate() {
            if candidates[..a]
                .iter()
                .any(|&j| !drop[j] && knn::dist2(self.point(i), self.point(j)) <= tol2)
            {
                drop[i] = true;
            }
        }
        let removed = drop.iter().filter(|&&d| d).count();
        if removed == 0 {
            return (self.clone(), 0);
        }
        let mut data = Vec::with_capacity((n - removed) * self.dim);
        for i in (0..n).filter(|&i| !drop[i]) {
            data.extend_from_slice(self.point(i));
        }
        (
            PointCloud {
                dim: self.dim,
                data,
            },
            removed,
        )
    }

    /// Copy with every coordinate z-scored (constant coordinates centred only).
    pub fn standardized(&self) -> PointCloud {
        let n = self.len() as f64;
        let mut data = self.data.clone();
        for c in 0..self.dim {
            let mean = (0..self.len()).map(|i| self.point(i)[c]).sum::<f64>() / n;
            let var = (0..self.len())
                .map(|i| (self.point(i)[c] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                data[i * self.dim + c] = (data[i * self.dim + c] - mean) / sd;
            }
        }
        PointCloud {
            dim: self.dim,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnBackend {
    #[default]
    BruteForce,
    KdTree,
}

/// Sorted distances to the `k` nearest other points, one row per point.
pub fn knn_distances(
    cloud: &PointCloud,
    k: usize,
    backend: KnnBackend,
    mode: Parallelism,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(IdError::SmallK { k, min: 1 });
    }
    if cloud.len() < k + 1 {
        return Err(IdError::TooFewPoints { n: cloud.len(), k });
    }
    Ok(match backend {
        KnnBackend::BruteForce => knn_brute(cloud, k, mode),
        KnnBackend::KdTree => knn_kdtree(cloud, k, mode),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if s.len() % 2 == 1 {
            s[s.len() / 2]
        } else {
            0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2])
        };
        Summary {
            mean,
            std,
            min: s[0],
            median,
            max: s[s.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub method: String,
    pub raw: f64,
    pub rounded: usize,
    /// Neighbour counts used (one for plain LB, the band for averaged LB).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub k: Vec<usize>,
    pub n: usize,
    pub duplicates_removed: usize,
    /// Mean log-ratio `S` for Levina-Bickel (the estimate before inversion).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_log_ratio: Option<f64>,
    /// Per-point statistic: local mean log-ratio (LB) or nothing (CD).
    #[serde(skip)]
    pub local: Vec<f64>,
    pub local_summary: Summary,
    /// CD only: the fitted radius window.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub radius_range: Option<[f64; 2]>,
}

/// Nearest even integer, ties upward, never below 2.
pub fn round_to_even(raw: f64) -> usize {
    let half = raw / 2.0;
    let f = half.floor();
    let r = if half - f >= 0.5 { f + 1.0 } else { f };
    ((2.0 * r) as usize).max(2)
}

fn lb_from_knn(knn: &[Vec<f64>], k: usize) -> Result<(f64, Vec<f64>)> {
    let mut local = Vec::with_capacity(knn.len());
    for (i, row) in knn.iter().enumerate() {
        let tk = row[k - 1];
        if row[..k].iter().any(|&t| t <= 0.0) {
            return Err(IdError::ZeroDistance(i));
        }
        let s: f64 = row[..k - 1].iter().map(|&tj| (tk / tj).ln()).sum();
        local.push(s / (k - 2) as f64);
    }
    let s = local.iter().sum::<f64>() / local.len() as f64;
    Ok((s, local))
}

fn prepare(cloud: &PointCloud, k: usize, mode: Parallelism) -> Result<(PointCloud, usize)> {
    if k < 3 {
        return Err(IdError::SmallK { k, min: 3 });
    }
    let (c, removed) = cloud.dedup(mode);
    if removed > 0 {
        log::warn!("removed {removed} duplicate points");
    }
    if c.len() < k + 1 {
        return Err(IdError::TooFewPoints { n: c.len(), k });
    }
    Ok((c, removed))
}

/// Levina-Bickel estimate with a single neighbour count `k ≥ 3`.
pub fn estimate_id_lb(cloud: &PointCloud, k: usize, mode: Parallelism) -> Result<IdEstimate> {
    let (c, removed) = prepare(cloud, k, mode)?;
    let knn = knn_distances(&c, k, KnnBackend::BruteForce, mode)?;
    lb_estimate("levina-bickel", &knn, k, removed)
}

fn lb_estimate(method: &str, knn: &[Vec<f64>], k: usize, removed: usize) -> Result<IdEstimate> {
    let (s, local) = lb_from_knn(knn, k)?;
    let raw = 1.0 / s;
    Ok(IdEstimate {
        method: method.to_string(),
        raw,
        rounded: round_to_even(raw),
        k: vec![k],
        n: knn.len(),
        duplicates_removed: removed,
        mean_log_ratio: Some(s),
        local_summary: Summary::of(&local),
        local,
        radius_range: None,
    })
}

/// Mean of the Levina-Bickel raw estimates over `k_lo..=k_hi`.
pub fn estimate_id_lb_band(
    cloud: &PointCloud,
    k_lo: usize,
    k_hi: usize,
    mode: Parallelism,
) -> Result<IdEstimate> {
    if k_lo > k_hi {
        return Err(IdError::SmallK { k: k_hi, min: k_lo });
    }
    let (c, removed) = prepare(cloud, k_lo, mode)?;
    if c.len() < k_hi + 1 {
        return Err(IdError::TooFewPoints {
            n: c.len(),
            k: k_hi,
        });
    }
    let knn = knn_distances(&c, k_hi, KnnBackend::BruteForce, mode)?;
    let mut raws = Vec::new();
    let mut local = vec![0.0; knn.len()];
    for k in k_lo..=k_hi {
        let (s, l) = lb_from_knn(&knn, k)?;
        raws.push(1.0 / s);
        for (a, b) in local.iter_mut().zip(l) {
            *a += b / (k_hi - k_lo + 1) as f64;
        }
    }
    let raw = raws.iter().sum::<f64>() / raws.len() as f64;
    Ok(IdEstimate {
        method: "levina-bickel-band".to_string(),
        raw,
        rounded: round_to_even(raw),
        k: (k_lo..=k_hi).collect(),
        n: c.len(),
        duplicates_removed: removed,
        mean_log_ratio: None,
        local_summary: Summary::of(&local),
        local,
        radius_range: None,
    })
}

/// Radius window for the correlation-dimension fit, as percentiles of the
/// pairwise distance distribution, split into log-spaced bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitRange {
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub bins: usize,
}

impl Default for FitRange {
    fn default() -> Self {
        Self {
            low_percentile: 1.0,
            high_percentile: 10.0,
            bins: 20,
        }
    }
}

/// Minimum cloud size for the correlation dimension.
pub const CD_MIN_POINTS: usize = 100;

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Grassberger-Procaccia correlation dimension.
pub fn estimate_id_cd(
    cloud: &PointCloud,
    range: &FitRange,
    mode: Parallelism,
) -> Result<IdEstimate> {
    if !(0.0 < range.low_percentile
        && range.low_percentile < range.high_percentile
        && range.high_percentile <= 100.0)
    {
        return Err(IdError::FitRange(format!(
            "need 0 < low < high <= 100, got {}..{}",
            range.low_percentile, range.high_percentile
        )));
    }
    let (c, removed) = cloud.dedup(mode);
    let n = c.len();
    if n < CD_MIN_POINTS {
        return Err(IdError::TooFewForCd {
            n,
            min: CD_MIN_POINTS,
        });
    }
    let rows = map_range(n, mode, |i| {
        (i + 1..n)
            .map(|j| knn::dist2(c.point(i), c.point(j)).sqrt())
            .collect::<Vec<f64>>()
    });
    let mut d: Vec<f64> = rows.into_iter().flatten().collect();
    d.sort_by(f64::total_cmp);
    let r_lo = percentile(&d, range.low_percentile);
    let r_hi = percentile(&d, range.high_percentile);
    let pairs = d.len() as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    if r_lo > 0.0 && r_hi > r_lo {
        for b in 0..range.bins {
            let t = if range.bins == 1 {
                0.0
            } else {
                b as f64 / (range.bins - 1) as f64
            };
            let r = (r_lo.ln() + t * (r_hi.ln() - r_lo.ln())).exp();
            let count = d.partition_point(|&x| x < r);
            if count > 0 {
                xs.push(r.ln());
                ys.push((count as f64 / pairs).ln());
            }
        }
    }
    if xs.len() < 5 {
        return Err(IdError::FewBins(xs.len()));
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let raw = sxy / sxx;
    Ok(IdEstimate {
        method: "correlation-dimension".to_string(),
        raw,
        rounded: round_to_even(raw),
        k: Vec::new(),
        n,
        duplicates_removed: removed,
        mean_log_ratio: None,
        local: Vec::new(),
        local_summary: Summary::default(),
        radius_range: Some([r_lo, r_hi]),
    })
}

/// Levina-Bickel on flattened input frame pairs of a split: the baseline
/// the latent-space estimate is compared with. Distances are computed
/// exactly on the stored 8-bit values and scaled to the [0, 1] range.
pub fn estimate_on_raw_frames(
    data: &Dataset,
    split: Split,
    k: usize,
    max_n: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<IdEstimate> {
    if k < 3 {
        return Err(IdError::SmallK { k, min: 3 });
    }
    let refs = sample_refs(data, split, max_n, seed);
    if refs.is_empty() {
        return Err(IdError::Empty);
    }
    let mut points: Vec<Vec<u8>> = refs
        .iter()
        .map(|r| {
            let mut v = data.frame_bytes(r.traj, r.t).to_vec();
            v.extend_from_slice(data.frame_bytes(r.traj, r.t + 1));
            v
        })
        .collect();
    // exact byte duplicates are the only possible sub-tolerance pairs
    let before = points.len();
    let mut seen = std::collections::HashSet::new();
    points.retain(|p| seen.insert(p.clone()));
    let removed = before - points.len();
    if removed > 0 {
        log::warn!("removed {removed} duplicate frame pairs");
    }
    if points.len() < k + 1 {
        return Err(IdError::TooFewPoints { n: points.len(), k });
    }
    let knn = knn_with(
        points.len(),
        k,
        |i, j| {
            let s: u64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(&a, &b)| {
                    let d = a.abs_diff(b) as u64;
                    d * d
                })
                .sum();
            s as f64 / (255.0 * 255.0)
        },
        mode,
    );
    lb_estimate("raw-frames-LB", &knn, k, removed)
}
