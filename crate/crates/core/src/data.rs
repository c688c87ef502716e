//! Seeded toy datasets: six 2-D densities and 1-D Gaussian data.
//!
//! The 2-D parametrizations follow the conventions common in EBM and flow
//! toy-data code (before rescaling):
//!
//! | name | construction |
//! |------|--------------|
//! | `2spirals` | `r = √U·3π`, arm `(−r cos r + U/2, r sin r + U/2)` and its negation, `/3`, plus `N(0, 0.1²)` |
//! | `8gaussians` | centers `2·(cos kπ/4, sin kπ/4)`, isotropic std `0.25` |
//! | `checkerboard` | `x₁ ~ U(−2,2)`, `x₂ = U − 2B + (⌊x₁⌋ mod 2)`, `B ~ Bern(½)`, times 2 |
//! | `circles` | radii 1 and ½ at evenly spaced angles, `N(0, 0.08²)` noise, times 3 |
//! | `moons` | `(cos t, sin t)` and `(1 − cos t, ½ − sin t)` at evenly spaced `t ∈ [0, π]`, `N(0, 0.1²)` noise, times 2, shifted by `(−1, −0.2)` |
//! | `swissroll` | `t ~ U(1.5π, 4.5π)`, `(t cos t, t sin t) + N(0, I)`, `/5` |
//!
//! Every 2-D dataset lies in `[−4.5, 4.5]²` up to Gaussian tails beyond six
//! standard deviations.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use crate::dense::DenseArray;
use crate::error::{contract, Error, Result};
use crate::rng::RngStream;
use crate::special::{cos, sin, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dataset {
    TwoSpirals,
    EightGaussians,
    Checkerboard,
    Circles,
    Moons,
    Swissroll,
    Gaussian1d,
}

impl Dataset {
    pub const TOY_2D: [Dataset; 6] = [
        Dataset::TwoSpirals,
        Dataset::EightGaussians,
        Dataset::Checkerboard,
        Dataset::Circles,
        Dataset::Moons,
        Dataset::Swissroll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::TwoSpirals => "2spirals",
            Dataset::EightGaussians => "8gaussians",
            Dataset::Checkerboard => "checkerboard",
            Dataset::Circles => "circles",
            Dataset::Moons => "moons",
            Dataset::Swissroll => "swissroll",
            Dataset::Gaussian1d => "gaussian1d",
        }
    }

    pub fn dim(self) -> usize {
        if self == Dataset::Gaussian1d {
            1
        } else {
            2
        }
    }

    /// Half-width of the documented square bounding box of a 2-D dataset.
    pub const BOX: f64 = 4.5;

    /// Population mean (the symmetry center where one exists).
    pub fn center(self, theta_star: f64) -> Vec<f64> {
        match self {
            Dataset::Moons => alloc::vec![0.0, 0.3],
            // E[t cos t] = 2 and E[t sin t] = 2/(3π) for t ~ U(1.5π, 4.5π).
            Dataset::Swissroll => alloc::vec![2.0 / 5.0, 2.0 / (3.0 * PI) / 5.0],
            Dataset::Gaussian1d => alloc::vec![theta_star],
            _ => alloc::vec![0.0, 0.0],
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::TOY_2D
            .iter()
            .chain([Dataset::Gaussian1d].iter())
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub dataset: Dataset,
    pub n: usize,
    pub seed: u64,
    /// Mean of `gaussian1d`; ignored by the 2-D datasets.
    pub theta_star: f64,
}

impl DatasetSpec {
    pub fn new(dataset: Dataset, n: usize, seed: u64) -> Self {
        Self { dataset, n, seed, theta_star: 16.0 }
    }
}

/// Stream id reserved for dataset generation.
const DATA_STREAM: u64 = 0xDA7A;

pub fn generate(spec: &DatasetSpec) -> Result<DenseArray> {
    contract!(spec.n > 0, "dataset size must be positive");
    let mut rng = RngStream::new(spec.seed, DATA_STREAM);
    let n = spec.n;
    let r = &mut rng;
    let pts = match spec.dataset {
        Dataset::Gaussian1d => {
            let data = (0..n).map(|_| spec.theta_star + r.normal()).collect();
            return Ok(DenseArray::matrix(n, 1, data));
        }
        Dataset::TwoSpirals => two_spirals(r, n),
        Dataset::EightGaussians => (0..n)
            .map(|_| {
                let k = r.below(8) as f64;
                let (c, s) = (cos(k * PI / 4.0), sin(k * PI / 4.0));
                [2.0 * c + 0.25 * r.normal(), 2.0 * s + 0.25 * r.normal()]
            })
            .collect(),
        Dataset::Checkerboard => (0..n)
            .map(|_| {
                let x1 = r.uniform() * 4.0 - 2.0;
                let x2 = r.uniform() - 2.0 * r.below(2) as f64 + (libm::floor(x1) as i64).rem_euclid(2) as f64;
                [2.0 * x1, 2.0 * x2]
            })
            .collect(),
        Dataset::Circles => {
            let n_out = n / 2;
            let mut v = ring(n_out, 1.0);
            v.extend(ring(n - n_out, 0.5));
            v.iter().map(|p| [3.0 * (p[0] + 0.08 * r.normal()), 3.0 * (p[1] + 0.08 * r.normal())]).collect()
        }
        Dataset::Moons => {
            let n_out = n / 2;
            let n_in = n - n_out;
            let mut v: Vec<[f64; 2]> = (0..n_out).map(|i| arc(i, n_out)).map(|t| [cos(t), sin(t)]).collect();
            v.extend((0..n_in).map(|i| arc(i, n_in)).map(|t| [1.0 - cos(t), 0.5 - sin(t)]));
            v.iter().map(|p| [2.0 * (p[0] + 0.1 * r.normal()) - 1.0, 2.0 * (p[1] + 0.1 * r.normal()) - 0.2]).collect()
        }
        Dataset::Swissroll => (0..n)
            .map(|_| {
                let t = 1.5 * PI * (1.0 + 2.0 * r.uniform());
                [(t * cos(t) + r.normal()) / 5.0, (t * sin(t) + r.normal()) / 5.0]
            })
            .collect(),
    };
    let mut pts: Vec<[f64; 2]> = pts;
    shuffle(&mut pts, r);
    Ok(DenseArray::matrix(n, 2, pts.into_iter().flatten().collect()))
}

fn two_spirals(r: &mut RngStream, n: usize) -> Vec<[f64; 2]> {
    let half = n / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = sqrt(r.uniform()) * 3.0 * PI;
        let arm = [-cos(t) * t + 0.5 * r.uniform(), sin(t) * t + 0.5 * r.uniform()];
        let sign = if i < half { 1.0 } else { -1.0 };
        out.push([sign * arm[0] / 3.0 + 0.1 * r.normal(), sign * arm[1] / 3.0 + 0.1 * r.normal()]);
    }
    out
}

/// Evenly spaced points on a circle, starting at angle 0.
fn ring(count: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / count as f64;
            [radius * cos(t), radius * sin(t)]
        })
        .collect()
}

/// Evenly spaced angle `i` of `count` on `[0, π]`, endpoints included.
fn arc(i: usize, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        PI * i as f64 / (count - 1) as f64
    }
}

fn shuffle<T>(v: &mut [T], r: &mut RngStream) {
    for i in (1..v.len()).rev() {
        let j = r.below(i + 1);
        v.swap(i, j);
    }
}
