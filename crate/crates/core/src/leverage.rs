//! Region classification, streaming region moments and the leverage-based
//! linear estimator.
//!
//! Samples are classified against four cut points around the initial sketch.
//! Only the small (`S`) and large (`L`) regions take part in estimation, and
//! each of them is summarised by `(count, Σa, Σa², Σa³)`. Those eight numbers
//! determine the leverage-weighted estimate as an affine function
//! `μ̂(α) = k·α + c` of the leverage degree, so no sample is ever stored.
//!
//! [`leverage_probabilities`] evaluates the same estimator the long way, one
//! sample at a time, and serves as the reference for the closed form.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{CompensatedSum, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    TooSmall,
    Small,
    Normal,
    Large,
    TooLarge,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::TooSmall,
        Region::Small,
        Region::Normal,
        Region::Large,
        Region::TooLarge,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Region::TooSmall => "TS",
            Region::Small => "S",
            Region::Normal => "N",
            Region::Large => "L",
            Region::TooLarge => "TL",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Cut points `sketch0 ∓ p2·σ`, `sketch0 ∓ p1·σ`, ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataBoundaries<T> {
    pub cut_ts_s: T,
    pub cut_s_n: T,
    pub cut_n_l: T,
    pub cut_l_tl: T,
}

impl<T: Scalar> DataBoundaries<T> {
    pub fn new(sketch0: T, sigma: T, p1: T, p2: T) -> Result<Self> {
        if !(p1 > T::zero() && p1 < p2) {
            return Err(invalid(format!("boundary factors need 0 < p1 < p2, got {p1} and {p2}")));
        }
        if !(sigma > T::zero()) {
            return Err(invalid(format!(
                "boundaries need a positive standard deviation, got {sigma}"
            )));
        }
        let near = p1 * sigma.clone();
        let far = p2 * sigma;
        Self::from_cuts(
            sketch0.clone() - far.clone(),
            sketch0.clone() - near.clone(),
            sketch0.clone() + near,
            sketch0 + far,
        )
    }

    pub fn from_cuts(cut_ts_s: T, cut_s_n: T, cut_n_l: T, cut_l_tl: T) -> Result<Self> {
        if !(cut_ts_s < cut_s_n && cut_s_n < cut_n_l && cut_n_l < cut_l_tl) {
            return Err(invalid("boundary cut points must be strictly increasing"));
        }
        Ok(Self {
            cut_ts_s,
            cut_s_n,
            cut_n_l,
            cut_l_tl,
        })
    }

    /// `TS` and `TL` are closed at their cut, `N` is closed on both sides,
    /// `S` and `L` are open.
    pub fn classify(&self, value: &T) -> Region {
        if *value <= self.cut_ts_s {
            Region::TooSmall
        } else if *value < self.cut_s_n {
            Region::Small
        } else if *value <= self.cut_n_l {
            Region::Normal
        } else if *value < self.cut_l_tl {
            Region::Large
        } else {
            Region::TooLarge
        }
    }

    pub fn shifted(&self, d: T) -> Self {
        Self {
            cut_ts_s: self.cut_ts_s.clone() + d.clone(),
            cut_s_n: self.cut_s_n.clone() + d.clone(),
            cut_n_l: self.cut_n_l.clone() + d.clone(),
            cut_l_tl: self.cut_l_tl.clone() + d,
        }
    }
}

/// Count and first three power sums of the values seen in one region.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionAccumulator<T> {
    count: u64,
    sum: CompensatedSum<T>,
    sum2: CompensatedSum<T>,
    sum3: CompensatedSum<T>,
}

impl<T: Scalar> Default for RegionAccumulator<T> {
    fn default() -> Self {
        Self {
            count: 0,
            sum: CompensatedSum::default(),
            sum2: CompensatedSum::default(),
            sum3: CompensatedSum::default(),
        }
    }
}

impl<T: Scalar> RegionAccumulator<T> {
    pub fn from_parts(count: u64, sum: T, sum2: T, sum3: T) -> Self {
        Self {
            count,
            sum: CompensatedSum::from_value(sum),
            sum2: CompensatedSum::from_value(sum2),
            sum3: CompensatedSum::from_value(sum3),
        }
    }

    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a T>) -> Self
    where
        T: 'a,
    {
        let mut acc = Self::default();
        values.into_iter().for_each(|v| acc.push(v.clone()));
        acc
    }

    pub fn push(&mut self, a: T) {
        let a2 = a.clone() * a.clone();
        let a3 = a2.clone() * a.clone();
        self.count += 1;
        self.sum.add(a);
        self.sum2.add(a2);
        self.sum3.add(a3);
    }

    /// Functional form of [`push`](Self::push).
    pub fn accumulate(mut self, a: T) -> Self {
        self.push(a);
        self
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum.merge(&other.sum);
        self.sum2.merge(&other.sum2);
        self.sum3.merge(&other.sum3);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> T {
        self.sum.value()
    }

    pub fn sum2(&self) -> T {
        self.sum2.value()
    }

    pub fn sum3(&self) -> T {
        self.sum3.value()
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// `|S| / |L|`.
pub fn deviation_degree(u: u64, v: u64) -> Result<f64> {
    if v == 0 {
        return Err(Error::NoLargeSamples);
    }
    Ok(u as f64 / v as f64)
}

/// Maps the deviation degree to the leverage allocating parameter `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSelector {
    /// Open band around 1 where `q = 1`.
    pub neutral: (f64, f64),
    /// Open band (minus `neutral`) where the moderate factor applies.
    pub moderate: (f64, f64),
    pub moderate_factor: f64,
    pub strong_factor: f64,
}

impl Default for QSelector {
    fn default() -> Self {
        Self {
            neutral: (0.97, 1.03),
            moderate: (0.94, 1.06),
            moderate_factor: 5.0,
            strong_factor: 10.0,
        }
    }
}

impl QSelector {
    pub fn validate(&self) -> Result<()> {
        let (nl, nh) = self.neutral;
        let (ml, mh) = self.moderate;
        if !(0.0 <= ml && ml <= nl && nl < 1.0 && 1.0 < nh && nh <= mh) {
            return Err(invalid("q bands must nest around 1"));
        }
        if !(self.moderate_factor > 0.0 && self.strong_factor > 0.0) {
            return Err(invalid("q factors must be positive"));
        }
        Ok(())
    }

    pub fn select(&self, dev: f64) -> f64 {
        let inside = |(lo, hi): (f64, f64)| dev > lo && dev < hi;
        let factor = if inside(self.neutral) {
            return 1.0;
        } else if inside(self.moderate) {
            self.moderate_factor
        } else {
            self.strong_factor
        };
        // More small samples than large: shrink the small-region share.
        if dev > 1.0 {
            1.0 / factor
        } else {
            factor
        }
    }
}

/// [`QSelector::select`] with the default bands.
pub fn select_q(dev: f64) -> f64 {
    QSelector::default().select(dev)
}

/// `μ̂(α) = k·α + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimator<T> {
    pub k: T,
    pub c: T,
}

impl<T: Scalar> LinearEstimator<T> {
    pub fn evaluate(&self, alpha: &T) -> T {
        self.k.clone() * alpha.clone() + self.c.clone()
    }
}

/// Closed-form `(k, c)` from the two region accumulators.
///
/// `c` is the unweighted mean of `S ∪ L`. `k` is the leverage-weighted mean
/// minus `c`, where the small region receives the share `q·u / (q·u + v)` of
/// the leverage mass and the large region the rest.
pub fn linear_estimator<T: Scalar>(
    acc_s: &RegionAccumulator<T>,
    acc_l: &RegionAccumulator<T>,
    q: T,
) -> Result<LinearEstimator<T>> {
    if acc_s.is_empty() || acc_l.is_empty() {
        return Err(Error::Degenerate("both regions need at least one sample"));
    }
    if !(q > T::zero()) {
        return Err(invalid(format!("q must be positive, got {q}")));
    }
    let u = T::from_count(acc_s.count());
    let v = T::from_count(acc_l.count());
    let (sx, sx2, sx3) = (acc_s.sum(), acc_s.sum2(), acc_s.sum3());
    let (sy, sy2, sy3) = (acc_l.sum(), acc_l.sum2(), acc_l.sum3());
    let total2 = sx2.clone() + sy2.clone();
    let small_den = u.clone() * total2.clone() - sx2;
    if small_den.is_zero() || sy2.is_zero() {
        return Err(Error::Degenerate("all squared mass at zero"));
    }
    let c = (sx.clone() + sy) / (u.clone() + v.clone());
    let qu = q * u;
    let small = (total2 * sx - sx3) / ((T::one() + v.clone() / qu.clone()) * small_den);
    let large = v.clone() * sy3 / ((qu + v) * sy2);
    Ok(LinearEstimator {
        k: small + large - c.clone(),
        c,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeverageRow<T> {
    pub value: T,
    pub region: Region,
    pub h: T,
    pub raw_lev: T,
    pub fac: T,
    pub norm_lev: T,
    pub prob: T,
}

/// Per-sample leverage pipeline evaluated at one leverage degree.
#[derive(Clone, Debug, PartialEq)]
pub struct LeverageTable<T> {
    pub alpha: T,
    pub q: T,
    pub rows: Vec<LeverageRow<T>>,
}

impl<T: Scalar> LeverageTable<T> {
    pub fn probability_sum(&self) -> T {
        self.rows.iter().fold(T::zero(), |acc, r| acc + r.prob.clone())
    }

    /// `Σ prob·value`.
    pub fn estimate(&self) -> T {
        self.rows
            .iter()
            .fold(T::zero(), |acc, r| acc + r.prob.clone() * r.value.clone())
    }

    pub fn leverage_sum(&self, region: Region) -> T {
        self.rows
            .iter()
            .filter(|r| r.region == region)
            .fold(T::zero(), |acc, r| acc + r.norm_lev.clone())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "region", "h", "raw_lev", "fac", "norm_lev", "prob"])?;
        for r in &self.rows {
            w.write_record([
                r.value.to_string(),
                r.region.to_string(),
                r.h.to_string(),
                r.raw_lev.to_string(),
                r.fac.to_string(),
                r.norm_lev.to_string(),
                r.prob.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Sample-by-sample leverage probabilities for the small set `xs` and large set `ys`.
///
/// Raw leverage is `1 - h` for small samples and `h` for large ones, with
/// `h = a² / Σa²`. Each region is divided by its normalisation factor so the
/// region leverage sums stand in the ratio `q·u / v` and add up to one; the
/// probability mixes that with the uniform weight `1 / (u + v)`.
pub fn leverage_probabilities<T: Scalar>(xs: &[T], ys: &[T], q: T, alpha: T) -> Result<LeverageTable<T>> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Degenerate("both regions need at least one sample"));
    }
    if !(alpha > -T::one() && alpha < T::one()) {
        return Err(invalid(format!("leverage degree must lie in (-1, 1), got {alpha}")));
    }
    if !(q > T::zero()) {
        return Err(invalid(format!("q must be positive, got {q}")));
    }
    let sq = |s: &[T]| s.iter().fold(T::zero(), |acc, a| acc + a.clone() * a.clone());
    let (sx2, sy2) = (sq(xs), sq(ys));
    let total2 = sx2.clone() + sy2.clone();
    let u = T::from_count(xs.len() as u64);
    let v = T::from_count(ys.len() as u64);
    if (u.clone() * total2.clone() - sx2.clone()).is_zero() || sy2.is_zero() {
        return Err(Error::Degenerate("all squared mass at zero"));
    }

    let fac_x = (u.clone() + v.clone() / q.clone()) * (T::one() - sx2 / (u.clone() * total2.clone()));
    let fac_y = (q.clone() * u.clone() / v.clone() + T::one()) * (sy2 / total2.clone());
    let uniform = (T::one() - alpha.clone()) / (u + v);

    let row = |a: &T, region: Region| {
        let h = a.clone() * a.clone() / total2.clone();
        let (raw, fac) = match region {
            Region::Small => (T::one() - h.clone(), fac_x.clone()),
            _ => (h.clone(), fac_y.clone()),
        };
        let norm = raw.clone() / fac.clone();
        LeverageRow {
            value: a.clone(),
            region,
            h,
            raw_lev: raw,
            fac,
            prob: alpha.clone() * norm.clone() + uniform.clone(),
            norm_lev: norm,
        }
    };
    let rows = xs
        .iter()
        .map(|a| row(a, Region::Small))
        .chain(ys.iter().map(|a| row(a, Region::Large)))
        .collect();
    Ok(LeverageTable { alpha, q, rows })
}
