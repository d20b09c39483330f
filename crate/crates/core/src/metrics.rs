//! Correlation, significance, RMSE and word-pair match scoring.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect_space::Dimension;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("zero variance in the {0} list")]
    ZeroVariance(&'static str),
    #[error("non-finite value in input")]
    NotFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub dimension: Dimension,
    pub rho: f64,
    pub n: usize,
    pub p: f64,
}

fn check_pair(xs: &[f64], ys: &[f64], min: usize) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < min {
        return Err(MetricsError::TooFew {
            needed: min,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|x| !x.is_finite()) {
        return Err(MetricsError::NotFinite);
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_pair(xs, ys, 2)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("first"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of the t-test on a correlation coefficient, df = n - 2.
///
/// With t² = rho²(n-2)/(1-rho²) the two-tailed tail mass is the regularized
/// incomplete beta I_{1-rho²}(df/2, 1/2).
pub fn p_value(rho: f64, n: usize) -> Result<f64, MetricsError> {
    if n < 3 {
        return Err(MetricsError::TooFew { needed: 3, got: n });
    }
    if !rho.is_finite() {
        return Err(MetricsError::NotFinite);
    }
    let r2 = rho * rho;
    if r2 >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let p = statrs::function::beta::beta_reg(df / 2.0, 0.5, 1.0 - r2);
    Ok(p.clamp(0.0, 1.0))
}

pub fn correlate(dimension: Dimension, xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, MetricsError> {
    check_pair(xs, ys, 3)?;
    let rho = pearson(xs, ys)?;
    Ok(CorrelationResult {
        dimension,
        rho,
        n: xs.len(),
        p: p_value(rho, xs.len())?,
    })
}

/// Root-mean-square error. Both lists must already share a scale.
pub fn rmse(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_pair(xs, ys, 1)?;
    let sq: f64 = xs.iter().zip(ys).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / xs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchGrade {
    Complete,
    Partial,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub grade: MatchGrade,
    pub common: BTreeSet<String>,
    pub hallucinated: BTreeSet<String>,
}

/// Lowercase, map `_` to space and collapse whitespace.
pub fn normalize_word(w: &str) -> String {
    w.replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Order-insensitive comparison of a predicted word pair with an expert pair.
/// Out-of-list predictions are flagged and can never match.
pub fn match_score<S: AsRef<str>>(
    predicted: (&str, &str),
    expert: (&str, &str),
    allowed: &[S],
) -> MatchResult {
    let allowed: BTreeSet<String> = allowed.iter().map(|w| normalize_word(w.as_ref())).collect();
    let pred: BTreeSet<String> = [predicted.0, predicted.1].into_iter().map(normalize_word).collect();
    let exp: BTreeSet<String> = [expert.0, expert.1].into_iter().map(normalize_word).collect();
    let hallucinated: BTreeSet<String> = pred.iter().filter(|w| !allowed.contains(*w)).cloned().collect();
    let common: BTreeSet<String> = pred
        .intersection(&exp)
        .filter(|w| !hallucinated.contains(*w))
        .cloned()
        .collect();
    let grade = match common.len() {
        0 => MatchGrade::None,
        n if n >= 2 => MatchGrade::Complete,
        _ => MatchGrade::Partial,
    };
    MatchResult {
        grade,
        common,
        hallucinated,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchTally {
    pub complete: usize,
    pub partial: usize,
    pub none: usize,
}

impl MatchTally {
    pub fn total(&self) -> usize {
        self.complete + self.partial + self.none
    }

    pub fn add(&mut self, grade: MatchGrade) {
        match grade {
            MatchGrade::Complete => self.complete += 1,
            MatchGrade::Partial => self.partial += 1,
            MatchGrade::None => self.none += 1,
        }
    }
}

pub fn tally_matches<'a>(results: impl IntoIterator<Item = &'a MatchResult>) -> MatchTally {
    let mut t = MatchTally::default();
    for r in results {
        t.add(r.grade);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-tailed p by direct quadrature of the t-density.
    ///
    /// Substituting t = sqrt(df)·tan(θ) turns the unnormalised density into
    /// cos^(df-1)(θ) on [0, π/2), so no gamma functions are involved.
    pub(crate) fn p_value_quadrature(rho: f64, n: usize) -> f64 {
        let df = (n - 2) as f64;
        let t = rho.abs() * (df / (1.0 - rho * rho)).sqrt();
        let theta = (t / df.sqrt()).atan();
        let f = |x: f64| x.cos().powf(df - 1.0);
        let inner = simpson(&f, 0.0, theta, 20_000);
        let whole = simpson(&f, 0.0, std::f64::consts::FRAC_PI_2, 20_000);
        1.0 - inner / whole
    }

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn pearson_identity_and_reflection() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(MetricsError::ZeroVariance("first")));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(MetricsError::TooFew { .. })));
    }

    #[test]
    fn p_value_cases() {
        assert!((p_value(0.0, 20).unwrap() - 1.0).abs() < 1e-12);
        assert!(p_value(0.93, 20).unwrap() < 0.001);
        assert_eq!(p_value(1.0, 10).unwrap(), 0.0);
        assert_eq!(p_value(-1.0, 10).unwrap(), 0.0);
        assert!(matches!(p_value(0.5, 2), Err(MetricsError::TooFew { .. })));
    }

    #[test]
    fn p_value_matches_quadrature() {
        let oracle = p_value_quadrature(0.5, 10);
        assert!((p_value(0.5, 10).unwrap() - oracle).abs() < 1e-6, "{oracle}");
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(rmse(&[0.0], &[]), Err(MetricsError::LengthMismatch { .. })));
    }

    fn words() -> Vec<&'static str> {
        vec!["enjoyment", "excited", "triumphant", "vigorous", "alert", "serious", "confused", "controlling", "mildly annoyed"]
    }

    #[test]
    fn match_grades() {
        let w = words();
        assert_eq!(match_score(("enjoyment", "excited"), ("excited", "enjoyment"), &w).grade, MatchGrade::Complete);
        let r = match_score(("triumphant", "excited"), ("triumphant", "vigorous"), &w);
        assert_eq!(r.grade, MatchGrade::Partial);
        assert_eq!(r.common.iter().collect::<Vec<_>>(), ["triumphant"]);
        assert_eq!(match_score(("alert", "serious"), ("confused", "controlling"), &w).grade, MatchGrade::None);
    }

    #[test]
    fn hallucinated_words_never_match() {
        let w = words();
        let r = match_score(("relaxed", "enjoyment"), ("relaxed", "enjoyment"), &w);
        assert_eq!(r.grade, MatchGrade::Partial);
        assert!(r.hallucinated.contains("relaxed"));
        let r = match_score(("Mildly_Annoyed", "alert"), ("mildly annoyed", "alert"), &w);
        assert_eq!(r.grade, MatchGrade::Complete);
    }

    #[test]
    fn tally_cases() {
        assert_eq!(tally_matches(&[]), MatchTally::default());
        let w = words();
        let c = match_score(("alert", "serious"), ("serious", "alert"), &w);
        assert_eq!(tally_matches([&c]), MatchTally { complete: 1, partial: 0, none: 0 });
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-10.0..10.0f64, 3..40),
            noise in proptest::collection::vec(-1.0..1.0f64, 40),
            a in 0.01..100.0f64,
            b in -50.0..50.0f64,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| x + e).collect();
            let base = match pearson(&xs, &ys) { Ok(r) => r, Err(_) => return Ok(()) };
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let r = pearson(&scaled, &ys).unwrap();
            prop_assert!((r - base).abs() < 1e-12);
            let flipped: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
            prop_assert!((pearson(&flipped, &ys).unwrap() + base).abs() < 1e-12);
        }

        #[test]
        fn p_value_monotone(r1 in 0.0..0.99f64, r2 in 0.0..0.99f64, n in 3usize..200) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(p_value(hi, n).unwrap() <= p_value(lo, n).unwrap() + 1e-15);
            if hi > 0.0 {
                prop_assert!(p_value(hi, n + 1).unwrap() <= p_value(hi, n).unwrap() + 1e-15);
            }
        }

        #[test]
        fn rmse_symmetric(xs in proptest::collection::vec(0.0..1.0f64, 1..30), shift in -0.5..0.5f64) {
            let ys: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            prop_assert_eq!(rmse(&xs, &ys).unwrap(), rmse(&ys, &xs).unwrap());
            prop_assert!(rmse(&xs, &ys).unwrap() >= 0.0);
        }

        #[test]
        fn match_order_insensitive(i in 0usize..9, j in 0usize..9, k in 0usize..9, l in 0usize..9) {
            let w = words();
            let a = match_score((w[i], w[j]), (w[k], w[l]), &w);
            let b = match_score((w[j], w[i]), (w[l], w[k]), &w);
            prop_assert_eq!(a, b);
        }
    }
}
