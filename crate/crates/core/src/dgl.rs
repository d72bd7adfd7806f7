//! The DGL robust M-ary hypothesis test over a discrete alphabet.
//!
//! Given nominal histograms `Q_1..Q_M`, the test builds one Scheffé set per
//! pair `i < j`, `A_ij = {q : Q_i(q) >= Q_j(q)}`, and tabulates the nominal
//! mass `Q_m(A_ij)` of every set under every hypothesis. A sequence of cells
//! with empirical measure `mu_n` is assigned to the hypothesis minimizing
//! `t(m) = max_ij |Q_m(A_ij) - mu_n(A_ij)|`.
//!
//! Masses are exact sums over the discrete alphabet, so
//! `Q_i(A_ij) - Q_j(A_ij)` equals the total variation `V(Q_i, Q_j)`.

use bitvec::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::Histogram;

/// Index of the pair `(i, j)`, `0 <= i < j < m`, in lexicographic order.
pub fn pair_index(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)` with `i < j < m`, in the order used by [`pair_index`].
pub fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (i + 1..m).map(move |j| (i, j)))
}

/// The `M(M-1)/2` Scheffé sets, one membership mask per hypothesis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheffeFamily {
    m: usize,
    alphabet_size: usize,
    sets: Vec<BitVec>,
}

impl ScheffeFamily {
    pub fn hypotheses(&self) -> usize {
        self.m
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Mask of `A_ij` for 0-based hypotheses `i < j`.
    pub fn set(&self, i: usize, j: usize) -> &BitSlice {
        &self.sets[pair_index(i, j, self.m)]
    }

    pub fn sets(&self) -> &[BitVec] {
        &self.sets
    }
}

fn check_hypotheses(hists: &[Histogram]) -> Result<()> {
    if hists.len() < 2 {
        return Err(Error::input(format!(
            "the test needs at least two hypotheses, got {}",
            hists.len()
        )));
    }
    let spec = hists[0].spec();
    if hists.iter().any(|h| h.spec() != spec) {
        return Err(Error::input(
            "hypothesis histograms use different alphabets",
        ));
    }
    Ok(())
}

/// Nonzero cells of a histogram in ascending order.
fn support(h: &Histogram) -> Vec<(usize, f64)> {
    h.mass()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(q, &p)| (q, p))
        .collect()
}

/// Builds `A_ij = {q : Q_i(q) >= Q_j(q)}` for every pair; ties are members.
pub fn build_scheffe_sets(hists: &[Histogram]) -> Result<ScheffeFamily> {
    check_hypotheses(hists)?;
    let m = hists.len();
    let size = hists[0].mass().len();
    let supports: Vec<_> = hists.par_iter().map(support).collect();
    // Outside supp(Q_j) the comparison holds trivially, so only those cells
    // need a look.
    let sets = pairs(m)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, j)| {
            let mut set = bitvec![1; size];
            let qi = hists[i].mass();
            for &(q, pj) in &supports[j] {
                set.set(q, qi[q] >= pj);
            }
            set
        })
        .collect();
    Ok(ScheffeFamily {
        m,
        alphabet_size: size,
        sets,
    })
}

/// Nominal masses `P_A(m, i, j) = Q_m(A_ij)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalTable {
    m: usize,
    /// `values[pair * m + hypothesis]`
    values: Vec<f64>,
}

impl NominalTable {
    /// `Q_m(A_ij)` for 0-based `m` and pair `i < j`.
    pub fn get(&self, m: usize, i: usize, j: usize) -> f64 {
        self.values[pair_index(i, j, self.m) * self.m + m]
    }

    pub fn hypotheses(&self) -> usize {
        self.m
    }

    /// Masses of one pair's set under every hypothesis.
    pub fn pair_row(&self, pair: usize) -> &[f64] {
        &self.values[pair * self.m..(pair + 1) * self.m]
    }
}

pub fn build_nominal_table(hists: &[Histogram], family: &ScheffeFamily) -> Result<NominalTable> {
    check_hypotheses(hists)?;
    let m = hists.len();
    if family.m != m || family.alphabet_size != hists[0].mass().len() {
        return Err(Error::input(format!(
            "family built for {} hypotheses over {} cells, table asked for {m} over {}",
            family.m,
            family.alphabet_size,
            hists[0].mass().len()
        )));
    }
    let supports: Vec<_> = hists.par_iter().map(support).collect();
    // Summing over each support in ascending order gives the same value as
    // summing over all members of the set (the skipped terms are zeros).
    let values = family
        .sets
        .par_iter()
        .flat_map_iter(|set| {
            supports.iter().map(move |sup| {
                let mass: f64 = sup.iter().filter(|(q, _)| set[*q]).map(|(_, p)| p).sum();
                // rounding can push a full-support sum a hair past 1
                mass.min(1.0)
            })
        })
        .collect();
    Ok(NominalTable { m, values })
}

/// Fraction of `cells` that fall inside `mask`.
pub fn empirical_measure(cells: &[u32], mask: &BitSlice) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::input("empirical measure of an empty sequence"));
    }
    let inside = cells.iter().filter(|&&c| mask[c as usize]).count();
    Ok(inside as f64 / cells.len() as f64)
}

/// Outcome of testing one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionStats {
    /// 1-based region index.
    pub chosen_label: usize,
    /// `t(m)` for every hypothesis, 0-based.
    pub scores: Vec<f64>,
    /// `mu_n(A_ij)` in pair order.
    pub pair_measures: Vec<f64>,
}

/// Scores this close are tied and go to the smaller index. Nominal masses are
/// float sums, so two scores that are equal as fractions can differ by a few
/// ulps; distinct fractions with realistic denominators differ by far more.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Runs the test on a sequence of cell ids.
pub fn classify(
    cells: &[u32],
    family: &ScheffeFamily,
    table: &NominalTable,
) -> Result<DecisionStats> {
    if cells.is_empty() {
        return Err(Error::input("cannot classify an empty sequence"));
    }
    if family.m != table.m {
        return Err(Error::input(
            "Scheffé family and nominal table disagree on M",
        ));
    }
    let m = family.m;

    // Collapse the sequence to (cell, count) so each set is probed once per
    // distinct cell rather than once per pixel.
    let mut sorted = cells.to_vec();
    sorted.sort_unstable();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &c in &sorted {
        let c = c as usize;
        if c >= family.alphabet_size {
            return Err(Error::input(format!(
                "cell {c} outside alphabet of {}",
                family.alphabet_size
            )));
        }
        match runs.last_mut() {
            Some((last, n)) if *last == c => *n += 1,
            _ => runs.push((c, 1)),
        }
    }
    let n = cells.len() as f64;

    let mut scores = vec![0.0f64; m];
    let mut pair_measures = Vec::with_capacity(family.sets.len());
    for (p, set) in family.sets.iter().enumerate() {
        let inside: usize = runs.iter().filter(|(c, _)| set[*c]).map(|(_, k)| k).sum();
        let mu = inside as f64 / n;
        pair_measures.push(mu);
        for (score, nominal) in scores.iter_mut().zip(table.pair_row(p)) {
            *score = score.max((nominal - mu).abs());
        }
    }

    let mut chosen = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[chosen] - TIE_TOLERANCE {
            chosen = k;
        }
    }
    Ok(DecisionStats {
        chosen_label: chosen + 1,
        scores,
        pair_measures,
    })
}

/// Scheffé family and nominal table for a fixed set of hypotheses.
#[derive(Debug, Clone)]
pub struct DglTest {
    family: ScheffeFamily,
    table: NominalTable,
}

impl DglTest {
    pub fn new(hists: &[Histogram]) -> Result<Self> {
        let family = build_scheffe_sets(hists)?;
        let table = build_nominal_table(hists, &family)?;
        Ok(DglTest { family, table })
    }

    pub fn family(&self) -> &ScheffeFamily {
        &self.family
    }

    pub fn table(&self) -> &NominalTable {
        &self.table
    }

    pub fn hypotheses(&self) -> usize {
        self.family.m
    }

    pub fn classify(&self, cells: &[u32]) -> Result<DecisionStats> {
        classify(cells, &self.family, &self.table)
    }
}

/// Inputs of the finite-sample error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Number of hypotheses `M`.
    pub m: usize,
    /// `|X|`.
    pub alphabet_size: usize,
    /// Test-sequence length (superpixel size).
    pub n: usize,
    /// Smallest training-set size.
    pub n_min: usize,
    /// `n_min / n`.
    pub alpha: f64,
    /// Minimum pairwise total variation between the sources.
    pub v_min: f64,
    /// Robustness margin, carried for reporting only.
    pub delta: Option<f64>,
}

impl BoundParams {
    pub fn new(m: usize, alphabet_size: usize, n: usize, n_min: usize, v_min: f64) -> Result<Self> {
        let p = BoundParams {
            m,
            alphabet_size,
            n,
            n_min,
            alpha: n_min as f64 / n.max(1) as f64,
            v_min,
            delta: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with `alpha` given directly; `n_min` is derived from it.
    pub fn with_alpha(
        m: usize,
        alphabet_size: usize,
        n: usize,
        alpha: f64,
        v_min: f64,
    ) -> Result<Self> {
        let p = BoundParams {
            m,
            alphabet_size,
            n,
            n_min: (alpha * n as f64).round() as usize,
            alpha,
            v_min,
            delta: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.alphabet_size == 0 || self.n == 0 {
            return Err(Error::input(
                "bounds need M >= 2, a non-empty alphabet and n >= 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.v_min) {
            return Err(Error::input(format!("v_min {} outside [0, 1]", self.v_min)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::input(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn ln_m_minus_one(&self) -> f64 {
        ((self.m - 1) as f64).ln()
    }
}

/// A bound value `2M exp(-n * rate)`; `rate` is the (possibly negative) exponent per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub value: f64,
    pub rate: f64,
}

impl ErrorBound {
    /// A bound at or above 1 says nothing about the error probability.
    pub fn is_vacuous(&self) -> bool {
        self.value >= 1.0
    }
}

fn bound_from_rate(p: &BoundParams, rate: f64) -> ErrorBound {
    ErrorBound {
        value: (2.0 * p.m as f64 * (-(p.n as f64) * rate).exp()).max(0.0),
        rate,
    }
}

/// `2M exp(-n (a v^2 / (2 (2 + sqrt a)^2) - max{2 ln(M-1)/n, |X| ln2 / n}))`.
pub fn error_bound_primary(p: &BoundParams) -> ErrorBound {
    let n = p.n as f64;
    let sa = p.alpha.sqrt();
    let gain = p.alpha * p.v_min * p.v_min / (2.0 * (2.0 + sa).powi(2));
    let penalty = f64::max(
        2.0 * p.ln_m_minus_one() / n,
        p.alphabet_size as f64 * std::f64::consts::LN_2 / n,
    );
    bound_from_rate(p, gain - penalty)
}

/// `2M exp(-n (2 a v^2 / (3|X| + 2 sqrt a)^2 - max{2 ln(M-1)/n, ln|X| / n}))`.
pub fn error_bound_alternate(p: &BoundParams) -> ErrorBound {
    let n = p.n as f64;
    let sa = p.alpha.sqrt();
    let x = p.alphabet_size as f64;
    let gain = 2.0 * p.alpha * p.v_min * p.v_min / (3.0 * x + 2.0 * sa).powi(2);
    let penalty = f64::max(2.0 * p.ln_m_minus_one() / n, x.ln() / n);
    bound_from_rate(p, gain - penalty)
}

/// Superpixel size beyond which the primary bound's exponent is claimed
/// positive: `ceil(2 (1 + sqrt a)^2 |X| ln 2 / (a v^2))`.
pub fn min_superpixel_size(p: &BoundParams) -> Result<usize> {
    if !(p.v_min > 0.0) {
        return Err(Error::input(
            "v_min = 0: no superpixel size gives a positive exponent",
        ));
    }
    if !(p.alpha > 0.0) {
        return Err(Error::input("alpha must be positive"));
    }
    let sa = p.alpha.sqrt();
    let n = 2.0 * (1.0 + sa).powi(2) * p.alphabet_size as f64 * std::f64::consts::LN_2
        / (p.alpha * p.v_min * p.v_min);
    Ok(n.ceil() as usize)
}

/// Smallest integer `n` (at fixed `alpha`) for which the exponent of
/// [`error_bound_primary`] is strictly positive.
pub fn primary_exponent_threshold(p: &BoundParams) -> Result<usize> {
    if !(p.v_min > 0.0) {
        return Err(Error::input(
            "v_min = 0: no superpixel size gives a positive exponent",
        ));
    }
    let sa = p.alpha.sqrt();
    let gain = p.alpha * p.v_min * p.v_min / (2.0 * (2.0 + sa).powi(2));
    let penalty = f64::max(
        2.0 * p.ln_m_minus_one(),
        p.alphabet_size as f64 * std::f64::consts::LN_2,
    );
    let mut n = (penalty / gain).floor().max(1.0) as usize;
    // step past rounding at the boundary
    while n as f64 * gain - penalty <= 0.0 {
        n += 1;
    }
    while n > 1 && (n - 1) as f64 * gain - penalty > 0.0 {
        n -= 1;
    }
    Ok(n)
}
