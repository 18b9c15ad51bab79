//! Reference estimators: uniform (US), stratified by block (STS), and the two
//! measure-biased variants (MV over all values, MVB within regions).
//!
//! Each estimator is a streaming fold over samples; the `run_*` helpers wire
//! them to a dataset.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockstore::{derive_seed, domain, draw_uniform, BlockManifest, BlockReader};
use crate::error::{invalid, Error, Result};
use crate::leverage::{DataBoundaries, Region};
use crate::preestimation::allocate_proportional;
use crate::scalar::{CompensatedSum, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Us,
    Sts,
    Mv,
    Mvb,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Us, Method::Sts, Method::Mv, Method::Mvb];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Us => "US",
            Method::Sts => "STS",
            Method::Mv => "MV",
            Method::Mvb => "MVB",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "US" => Ok(Method::Us),
            "STS" => Ok(Method::Sts),
            "MV" => Ok(Method::Mv),
            "MVB" => Ok(Method::Mvb),
            _ => Err(invalid(format!("unknown baseline '{s}' (expected US, STS, MV or MVB)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult<T> {
    pub method: Method,
    pub answer: T,
    pub samples_used: u64,
}

/// Running arithmetic mean.
#[derive(Clone, Debug)]
pub struct MeanFold<T: Scalar> {
    n: u64,
    sum: CompensatedSum<T>,
}

impl<T: Scalar> Default for MeanFold<T> {
    fn default() -> Self {
        Self {
            n: 0,
            sum: CompensatedSum::default(),
        }
    }
}

impl<T: Scalar> MeanFold<T> {
    pub fn push(&mut self, a: T) {
        self.n += 1;
        self.sum.add(a);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn finish(&self) -> Result<T> {
        if self.n == 0 {
            return Err(Error::EmptyStream);
        }
        Ok(self.sum.value() / T::from_count(self.n))
    }
}

/// Running `Σa²` and `Σa` over positive values.
#[derive(Clone, Debug)]
pub struct MvFold<T: Scalar> {
    n: u64,
    sum: CompensatedSum<T>,
    sum2: CompensatedSum<T>,
}

impl<T: Scalar> Default for MvFold<T> {
    fn default() -> Self {
        Self {
            n: 0,
            sum: CompensatedSum::default(),
            sum2: CompensatedSum::default(),
        }
    }
}

impl<T: Scalar> MvFold<T> {
    pub fn push(&mut self, a: T) -> Result<()> {
        if !(a > T::zero()) {
            return Err(Error::NonPositiveValue(a.to_f64_lossy()));
        }
        self.n += 1;
        self.sum2.add(a.clone() * a.clone());
        self.sum.add(a);
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn finish(&self) -> Result<T> {
        if self.n == 0 {
            return Err(Error::EmptyStream);
        }
        Ok(self.sum2.value() / self.sum.value())
    }
}

/// One [`MvFold`] per region, mixed by region sample share.
#[derive(Clone, Debug)]
pub struct MvbFold<T: Scalar> {
    boundaries: DataBoundaries<T>,
    regions: [MvFold<T>; 5],
}

impl<T: Scalar> MvbFold<T> {
    pub fn new(boundaries: DataBoundaries<T>) -> Self {
        Self {
            boundaries,
            regions: std::array::from_fn(|_| MvFold::default()),
        }
    }

    pub fn push(&mut self, a: T) -> Result<()> {
        let r = self.boundaries.classify(&a);
        self.regions[r.index()].push(a)
    }

    pub fn count(&self) -> u64 {
        self.regions.iter().map(MvFold::count).sum()
    }

    /// `n_r / n` for each region, in [`Region::ALL`] order.
    pub fn weights(&self) -> Vec<T> {
        let n = T::from_count(self.count());
        self.regions
            .iter()
            .map(|f| T::from_count(f.count()) / n.clone())
            .collect()
    }

    pub fn finish(&self) -> Result<T> {
        let n = self.count();
        if n == 0 {
            return Err(Error::EmptyStream);
        }
        let n = T::from_count(n);
        let mut total = T::zero();
        for f in self.regions.iter().filter(|f| f.count() > 0) {
            total = total + T::from_count(f.count()) / n.clone() * f.finish()?;
        }
        Ok(total)
    }

    pub fn region_count(&self, region: Region) -> u64 {
        self.regions[region.index()].count()
    }
}

pub fn uniform_estimate<T: Scalar>(samples: impl IntoIterator<Item = T>) -> Result<T> {
    let mut f = MeanFold::default();
    samples.into_iter().for_each(|a| f.push(a));
    f.finish()
}

/// `Σ mean_j |B_j| / M` over per-block sample sets.
pub fn stratified_estimate<T: Scalar>(blocks: &[Vec<T>], sizes: &[u64], total: u64) -> Result<T> {
    if blocks.len() != sizes.len() {
        return Err(Error::Mismatch(format!(
            "{} sample sets for {} blocks",
            blocks.len(),
            sizes.len()
        )));
    }
    let means = blocks
        .iter()
        .map(|b| uniform_estimate(b.iter().cloned()))
        .collect::<Result<Vec<_>>>()?;
    crate::aggregate::summarize(&means, sizes, total)
}

/// `Σa² / Σa`.
pub fn mv_estimate<T: Scalar>(samples: impl IntoIterator<Item = T>) -> Result<T> {
    let mut f = MvFold::default();
    for a in samples {
        f.push(a)?;
    }
    f.finish()
}

/// `Σ_r (n_r / n) · Σ_{a∈r} a² / Σ_{a∈r} a` over the five regions.
pub fn mvb_estimate<T: Scalar>(samples: impl IntoIterator<Item = T>, boundaries: &DataBoundaries<T>) -> Result<T> {
    let mut f = MvbFold::new(boundaries.clone());
    for a in samples {
        f.push(a)?;
    }
    f.finish()
}

/// Rows drawn uniformly over the whole dataset, with replacement.
pub fn draw_global(manifest: &BlockManifest, n: u64, seed: u64) -> Result<impl Iterator<Item = Result<f64>>> {
    let mut readers = manifest
        .blocks
        .iter()
        .map(BlockReader::open)
        .collect::<Result<Vec<_>>>()?;
    let mut ends = Vec::with_capacity(readers.len());
    let mut acc = 0u64;
    for r in &readers {
        acc += r.rows();
        ends.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(move |_| {
        let g = rng.random_range(0..acc);
        let j = ends.partition_point(|&end| end <= g);
        let start = if j == 0 { 0 } else { ends[j - 1] };
        readers[j].read_row(g - start)
    }))
}

/// Runs one baseline with a budget of `samples` draws.
///
/// MVB needs `boundaries`; the others ignore it.
pub fn run_baseline(
    manifest: &BlockManifest,
    method: Method,
    samples: u64,
    seed: u64,
    boundaries: Option<&DataBoundaries<f64>>,
) -> Result<BaselineResult<f64>> {
    if samples == 0 {
        return Err(invalid("a baseline needs at least one sample"));
    }
    let answer = match method {
        Method::Us => {
            let mut f = MeanFold::default();
            for a in draw_global(manifest, samples, derive_seed(seed, domain::US, 0, 0))? {
                f.push(a?);
            }
            f.finish()?
        }
        Method::Sts => {
            let alloc = allocate_proportional(samples, &manifest.sizes());
            if alloc.contains(&0) {
                return Err(invalid(format!(
                    "{samples} samples cannot cover all {} blocks",
                    manifest.block_count()
                )));
            }
            let means = manifest
                .blocks
                .par_iter()
                .zip(alloc.par_iter())
                .enumerate()
                .map(|(j, (b, &n))| {
                    let mut f = MeanFold::default();
                    let seed = derive_seed(seed, domain::STS, j as u64, 0);
                    for a in draw_uniform(b, j as u64, n, seed)? {
                        f.push(a?);
                    }
                    f.finish()
                })
                .collect::<Result<Vec<_>>>()?;
            crate::aggregate::summarize(&means, &manifest.sizes(), manifest.total)?
        }
        Method::Mv => {
            let mut f = MvFold::default();
            for a in draw_global(manifest, samples, derive_seed(seed, domain::MV, 0, 0))? {
                f.push(a?)?;
            }
            f.finish()?
        }
        Method::Mvb => {
            let b = boundaries.ok_or_else(|| invalid("MVB needs data boundaries"))?;
            let mut f = MvbFold::new(b.clone());
            for a in draw_global(manifest, samples, derive_seed(seed, domain::MVB, 0, 0))? {
                f.push(a?)?;
            }
            f.finish()?
        }
    };
    Ok(BaselineResult {
        method,
        answer,
        samples_used: samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn ints(xs: &[i64]) -> Vec<Q> {
        xs.iter().map(|&x| Q::from_integer(x)).collect()
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_estimate(ints(&[2, 4, 6, 8, 20])).unwrap(), Q::from_integer(8));
        assert_eq!(
            uniform_estimate(ints(&[2, 3, 4, 5, 6, 7, 8, 15])).unwrap(),
            Q::new(25, 4)
        );
        assert_eq!(uniform_estimate([3.5; 9]).unwrap(), 3.5);
        assert!(matches!(uniform_estimate(Vec::<f64>::new()), Err(Error::EmptyStream)));
    }

    #[test]
    fn stratified_examples() {
        let blocks = vec![vec![0.0; 4], vec![10.0; 4]];
        assert_eq!(stratified_estimate(&blocks, &[50, 50], 100).unwrap(), 5.0);
        let blocks = vec![ints(&[1, 3]), ints(&[10])];
        assert_eq!(stratified_estimate(&blocks, &[1, 3], 4).unwrap(), Q::new(32, 4));
        assert!(stratified_estimate(&blocks, &[4], 4).is_err());
        assert!(stratified_estimate(&[vec![1.0], vec![]], &[1, 1], 2).is_err());
    }

    #[test]
    fn mv_examples() {
        assert_eq!(mv_estimate([4.0; 6]).unwrap(), 4.0);
        assert_eq!(mv_estimate(ints(&[1, 2, 3])).unwrap(), Q::new(14, 6));
        assert!(matches!(mv_estimate([1.0, 0.0]), Err(Error::NonPositiveValue(_))));
        assert!(matches!(mv_estimate([1.0, -2.0]), Err(Error::NonPositiveValue(_))));
    }

    #[test]
    fn mvb_single_region_reduces_to_mv() {
        let b = DataBoundaries::from_cuts(0.0, 1.0, 2.0, 100.0).unwrap();
        let xs = [10.0, 20.0, 35.0, 50.0];
        assert_eq!(mvb_estimate(xs, &b).unwrap(), mv_estimate(xs).unwrap());
    }

    #[test]
    fn mvb_mixes_regions_by_share() {
        let b = DataBoundaries::from_cuts(
            Q::from_integer(1),
            Q::from_integer(3),
            Q::from_integer(5),
            Q::from_integer(20),
        )
        .unwrap();
        let xs = ints(&[2, 2, 4, 6, 30]);
        let mut f = MvbFold::new(b.clone());
        xs.iter().for_each(|a| f.push(*a).unwrap());
        assert_eq!(f.weights().iter().sum::<Q>(), Q::from_integer(1));
        assert_eq!(f.region_count(Region::Small), 2);
        // S: 2/5·2, N: 1/5·4, L: 1/5·6, TL: 1/5·30
        let want = Q::new(4, 5) + Q::new(4, 5) + Q::new(6, 5) + Q::new(30, 5);
        assert_eq!(mvb_estimate(xs, &b).unwrap(), want);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("XYZ".parse::<Method>().is_err());
    }
}
