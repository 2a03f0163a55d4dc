use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::numerics::RngStream;

/// Radius on which mixture centers are placed, and of the ring.
pub const TOY_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    TwoMoons,
    /// `k` isotropic components on a circle of radius [`TOY_RADIUS`].
    GaussianMixture(usize),
    Ring,
}

impl ToyKind {
    /// Mixture centers; empty for the other shapes.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        match *self {
            ToyKind::GaussianMixture(k) => (0..k)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / k as f64;
                    [TOY_RADIUS * a.cos(), TOY_RADIUS * a.sin()]
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Population mean of the noiseless shape.
    pub fn mean(&self) -> [f64; 2] {
        match *self {
            // outer arc mean (0, 2/π), inner arc mean (1, 1/2 − 2/π)
            ToyKind::TwoMoons => [0.5, 0.25],
            ToyKind::GaussianMixture(_) | ToyKind::Ring => [0.0, 0.0],
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToyKind::TwoMoons => write!(f, "two-moons"),
            ToyKind::GaussianMixture(k) => write!(f, "gaussian-mixture-{k}"),
            ToyKind::Ring => write!(f, "ring"),
        }
    }
}

impl FromStr for ToyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "two-moons" => Ok(ToyKind::TwoMoons),
            "ring" => Ok(ToyKind::Ring),
            _ => s
                .strip_prefix("gaussian-mixture-")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(ToyKind::GaussianMixture)
                .ok_or_else(|| format!("unknown toy dataset '{s}'")),
        }
    }
}

/// A finite sample of equal-length vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Vec<f64>>) -> Result<Self, String> {
        let dim = samples.first().map(Vec::len).ok_or("dataset is empty")?;
        if samples
            .iter()
            .any(|s| s.len() != dim || s.iter().any(|v| !v.is_finite()))
        {
            return Err("samples must be finite and of equal length".into());
        }
        Ok(Self {
            name: name.into(),
            dim,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fixed split: the last 10% (at least one sample) is held out.
    pub fn split(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        let held = (self.len() / 10).max(1).min(self.len() - 1);
        self.samples.split_at(self.len() - held)
    }
}

/// Two-dimensional toy sample. Mixture components are assigned round-robin.
pub fn make_toy_2d(kind: ToyKind, count: usize, noise_std: f64, rng: &mut RngStream) -> Result<Dataset, String> {
    if count < 2 {
        return Err("toy datasets need at least two samples".into());
    }
    let centers = kind.centers();
    let samples = (0..count)
        .map(|i| {
            let base = match kind {
                ToyKind::TwoMoons => {
                    let t = PI * rng.uniform();
                    if i % 2 == 0 {
                        [t.cos(), t.sin()]
                    } else {
                        [1.0 - t.cos(), 0.5 - t.sin()]
                    }
                }
                ToyKind::GaussianMixture(k) => centers[i % k],
                ToyKind::Ring => {
                    let a = 2.0 * PI * rng.uniform();
                    [TOY_RADIUS * a.cos(), TOY_RADIUS * a.sin()]
                }
            };
            if noise_std > 0.0 {
                vec![base[0] + noise_std * rng.normal(), base[1] + noise_std * rng.normal()]
            } else {
                base.to_vec()
            }
        })
        .collect();
    Dataset::new(kind.to_string(), samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_mixture_sits_on_centers() {
        let d = make_toy_2d(ToyKind::GaussianMixture(2), 10, 0.0, &mut RngStream::new(1, 0)).unwrap();
        let c = ToyKind::GaussianMixture(2).centers();
        for (i, s) in d.samples.iter().enumerate() {
            assert_eq!(s.as_slice(), c[i % 2].as_slice());
        }
    }

    #[test]
    fn two_moons_mean() {
        let d = make_toy_2d(ToyKind::TwoMoons, 1000, 0.05, &mut RngStream::new(2, 0)).unwrap();
        let m = ToyKind::TwoMoons.mean();
        for k in 0..2 {
            let mean = d.samples.iter().map(|s| s[k]).sum::<f64>() / 1000.0;
            assert!((mean - m[k]).abs() < 0.1, "{k}: {mean}");
        }
    }

    #[test]
    fn deterministic_and_parseable() {
        for kind in [ToyKind::TwoMoons, ToyKind::GaussianMixture(3), ToyKind::Ring] {
            let a = make_toy_2d(kind, 50, 0.1, &mut RngStream::new(3, 1)).unwrap();
            let b = make_toy_2d(kind, 50, 0.1, &mut RngStream::new(3, 1)).unwrap();
            assert_eq!(a, b);
            assert_eq!(kind.to_string().parse::<ToyKind>().unwrap(), kind);
        }
        assert!("gaussian-mixture-0".parse::<ToyKind>().is_err());
        assert!(make_toy_2d(ToyKind::Ring, 1, 0.0, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn split_keeps_last_tenth() {
        let d = Dataset::new("x", (0..20).map(|i| vec![i as f64]).collect()).unwrap();
        let (train, held) = d.split();
        assert_eq!(train.len(), 18);
        assert_eq!(held[0], vec![18.0]);
    }
}
