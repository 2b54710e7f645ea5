//! Accuracy and consistency metrics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::lie::{ExtendedPose, Tangent};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `Log(T_hat T^-1)`.
pub fn pose_error(estimate: &ExtendedPose, truth: &ExtendedPose) -> Tangent {
    (*estimate * truth.inverse()).log()
}

/// `sqrt(mean(x_k^2))`.
pub fn rms<I: IntoIterator<Item = f64>>(values: I) -> Result<f64, EvalError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok((sum / n as f64).sqrt())
}

/// Root mean of `e^T e` over the sequence.
pub fn rmse(errors: &[Tangent]) -> Result<f64, EvalError> {
    rms(errors.iter().map(|e| e.norm()))
}

pub fn position_rmse(errors: &[Tangent]) -> Result<f64, EvalError> {
    rms(errors.iter().map(|e| e.fixed_rows::<3>(6).norm()))
}

pub fn attitude_rmse(errors: &[Tangent]) -> Result<f64, EvalError> {
    rms(errors.iter().map(|e| e.fixed_rows::<3>(0).norm()))
}

/// `e^T P^-1 e`.
pub fn nees(e: &DVector<f64>, p: &DMatrix<f64>) -> Result<f64, EvalError> {
    if p.nrows() != e.len() || p.ncols() != e.len() {
        return Err(EvalError::Dimension(format!("{} vs {}x{}", e.len(), p.nrows(), p.ncols())));
    }
    let ch = p.clone().cholesky().ok_or(EvalError::NotPositiveDefinite)?;
    Ok(e.dot(&ch.solve(e)))
}

/// Two-sided bounds on the trial-averaged NEES.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeesBand {
    pub lower: f64,
    pub upper: f64,
}

/// Band containing the average of `trials` NEES values of dimension
/// `dim` with probability `confidence`.
pub fn nees_band(dim: usize, trials: usize, confidence: f64) -> NeesBand {
    let dof = (dim * trials) as f64;
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    let tail = (1.0 - confidence) / 2.0;
    NeesBand {
        lower: chi.inverse_cdf(tail) / trials as f64,
        upper: chi.inverse_cdf(1.0 - tail) / trials as f64,
    }
}

pub const NEES_CONFIDENCE: f64 = 0.9973;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeesPoint {
    pub step: usize,
    pub mean: f64,
    pub per_dof: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Averages per-step NEES across trials of equal length.
pub fn average_nees(trials: &[Vec<f64>], dim: usize) -> Result<Vec<NeesPoint>, EvalError> {
    let first = trials.first().ok_or(EvalError::Empty)?;
    if trials.iter().any(|t| t.len() != first.len()) {
        return Err(EvalError::Dimension("trials differ in length".into()));
    }
    let band = nees_band(dim, trials.len(), NEES_CONFIDENCE);
    Ok((0..first.len())
        .map(|k| {
            let mean = trials.iter().map(|t| t[k]).sum::<f64>() / trials.len() as f64;
            NeesPoint {
                step: k,
                mean,
                per_dof: mean / dim as f64,
                lower: band.lower,
                upper: band.upper,
            }
        })
        .collect())
}

/// Time average of the per-dof NEES after dropping the leading
/// `discard` fraction of the stream.
pub fn settled_per_dof_nees(stream: &[NeesPoint], discard: f64) -> Result<f64, EvalError> {
    let start = ((stream.len() as f64) * discard).floor() as usize;
    let tail = &stream[start.min(stream.len())..];
    if tail.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(tail.iter().map(|p| p.per_dof).sum::<f64>() / tail.len() as f64)
}

pub fn write_nees_csv<W: Write>(out: W, stream: &[NeesPoint], time_step: f64) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "time_s", "nees", "nees_per_dof", "band_lower", "band_upper"])?;
    for p in stream {
        w.write_record([
            p.step.to_string(),
            (p.step as f64 * time_step).to_string(),
            p.mean.to_string(),
            p.per_dof.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(proposed - comparison) / comparison` in percent.
pub fn percentage_change(proposed: f64, comparison: f64) -> f64 {
    (proposed - comparison) / comparison * 100.0
}

/// Position aRMSE per mode for one team size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeArmse {
    pub robots: usize,
    pub centralized: Option<f64>,
    pub no_passive: Option<f64>,
    pub proposed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub robots: usize,
    pub centralized: Option<f64>,
    pub no_passive: Option<f64>,
    pub proposed: f64,
    pub change_vs_centralized: Option<f64>,
    pub change_vs_no_passive: Option<f64>,
}

pub fn comparison_table(results: &[ModeArmse]) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            robots: r.robots,
            centralized: r.centralized,
            no_passive: r.no_passive,
            proposed: r.proposed,
            change_vs_centralized: r.centralized.map(|c| percentage_change(r.proposed, c)),
            change_vs_no_passive: r.no_passive.map(|c| percentage_change(r.proposed, c)),
        })
        .collect();
    rows.sort_by_key(|r| r.robots);
    rows
}

pub const COMPARISON_COLUMNS: [&str; 6] = [
    "robots",
    "centralized_armse_m",
    "no_passive_armse_m",
    "proposed_armse_m",
    "change_vs_centralized_pct",
    "change_vs_no_passive_pct",
];

pub fn write_comparison_csv<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<(), EvalError> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.robots.to_string(),
            opt(r.centralized),
            opt(r.no_passive),
            r.proposed.to_string(),
            opt(r.change_vs_centralized),
            opt(r.change_vs_no_passive),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width rendering of the comparison table.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let opt = |v: Option<f64>, digits: usize| match v {
        Some(x) => format!("{x:.digits$}"),
        None => "-".into(),
    };
    let mut s = format!(
        "{:>6} | {:>8} {:>10} {:>8} | {:>8} {:>10}\n",
        "robots", "centr.", "no passive", "proposed", "centr. %", "no pass. %"
    );
    for r in rows {
        s += &format!(
            "{:>6} | {:>8} {:>10} {:>8.3} | {:>8} {:>10}\n",
            r.robots,
            opt(r.centralized, 3),
            opt(r.no_passive, 3),
            r.proposed,
            opt(r.change_vs_centralized, 2),
            opt(r.change_vs_no_passive, 2),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_errors(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tangent> {
        (0..n).map(|_| Tangent::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[Tangent::zeros(); 4]).unwrap(), 0.0);
        let mut e = Tangent::zeros();
        e[2] = 0.3;
        e[7] = 0.4;
        assert!((rmse(&[e; 10]).unwrap() - 0.5).abs() < 1e-15);
        assert!((position_rmse(&[e; 3]).unwrap() - 0.4).abs() < 1e-15);
        assert!((attitude_rmse(&[e; 3]).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(rmse(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn rmse_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let errors = random_errors(&mut rng, 257);
        let mut sum = 0.0;
        for e in &errors {
            for k in 0..9 {
                sum += e[k] * e[k];
            }
        }
        let brute = (sum / 257.0).sqrt();
        assert!((rmse(&errors).unwrap() - brute).abs() < 1e-14);
    }

    #[test]
    fn rmse_sign_and_order_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let errors = random_errors(&mut rng, 64);
        let flipped: Vec<_> = errors.iter().map(|e| -e).collect();
        let mut shuffled = errors.clone();
        shuffled.reverse();
        shuffled.swap(3, 40);
        let base = rmse(&errors).unwrap();
        assert!((rmse(&flipped).unwrap() - base).abs() < 1e-15);
        assert!((rmse(&shuffled).unwrap() - base).abs() < 1e-14);
    }

    #[test]
    fn pose_error_of_identical_poses() {
        let t = ExtendedPose::exp(&Tangent::from_fn(|i, _| 0.1 * i as f64));
        assert!(pose_error(&t, &t).norm() < 1e-14);
        let xi = Tangent::from_fn(|i, _| 0.01 * (i as f64 - 4.0));
        let perturbed = ExtendedPose::exp(&xi) * t;
        assert!((pose_error(&perturbed, &t) - xi).norm() < 1e-12);
    }

    #[test]
    fn nees_cases() {
        assert_eq!(nees(&DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap(), 0.0);
        let p = DMatrix::from_element(1, 1, 4.0);
        assert!((nees(&DVector::from_element(1, 6.0), &p).unwrap() - 9.0).abs() < 1e-12);
        assert!(nees(&DVector::zeros(2), &p).is_err());
        assert!(nees(&DVector::zeros(1), &DMatrix::from_element(1, 1, -1.0)).is_err());
    }

    #[test]
    fn nees_congruence_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let p = &a * a.transpose() + DMatrix::identity(5, 5) * 0.1;
        let m = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(5, 5) * 2.0;
        let e = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let base = nees(&e, &p).unwrap();
        let moved = nees(&(&m * &e), &(&m * &p * m.transpose())).unwrap();
        assert!((base - moved).abs() < 1e-9 * base);
    }

    #[test]
    fn band_for_five_hundred_trials() {
        // Wilson-Hilferty cube-root approximation at z = 3
        let wh = |dof: f64, z: f64| dof * (1.0 - 2.0 / (9.0 * dof) + z * (2.0 / (9.0 * dof)).sqrt()).powi(3);
        let band = nees_band(9, 500, NEES_CONFIDENCE);
        assert!((band.lower - wh(4500.0, -3.0) / 500.0).abs() < 0.005, "{}", band.lower);
        assert!((band.upper - wh(4500.0, 3.0) / 500.0).abs() < 0.005, "{}", band.upper);
        assert!(band.lower < 8.49 && band.upper > 9.53);
    }

    #[test]
    fn consistent_gaussian_errors_fall_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(9, 9, |_, _| rng.random_range(-1.0..1.0));
        let p = &a * a.transpose() + DMatrix::identity(9, 9) * 0.05;
        let l = p.clone().cholesky().unwrap().l();
        let steps = 20;
        let trials: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                (0..steps)
                    .map(|_| {
                        let z = DVector::from_fn(9, |_, _| rng.sample::<f64, _>(StandardNormal));
                        nees(&(&l * z), &p).unwrap()
                    })
                    .collect()
            })
            .collect();
        let stream = average_nees(&trials, 9).unwrap();
        let inside = stream.iter().filter(|s| s.mean >= s.lower && s.mean <= s.upper).count();
        assert!(inside >= steps - 1);
        let settled = settled_per_dof_nees(&stream, 0.2).unwrap();
        assert!((settled - 1.0).abs() < 0.03);
    }

    #[test]
    fn table_percentages() {
        assert!((percentage_change(0.263, 0.486) - (-45.88)).abs() < 0.01);
        let rows = comparison_table(&[
            ModeArmse {
                robots: 4,
                centralized: Some(0.2),
                no_passive: Some(0.2),
                proposed: 0.2,
            },
            ModeArmse {
                robots: 3,
                centralized: Some(0.277),
                no_passive: Some(0.486),
                proposed: 0.263,
            },
        ]);
        assert_eq!(rows[0].robots, 3);
        assert!((rows[0].change_vs_centralized.unwrap() - (-5.05)).abs() < 0.01);
        assert!((rows[0].change_vs_no_passive.unwrap() - (-45.88)).abs() < 0.01);
        assert_eq!(rows[1].change_vs_centralized, Some(0.0));
        assert_eq!(rows[1].change_vs_no_passive, Some(0.0));
    }

    #[test]
    fn toy_streams_against_hand_table() {
        // three trials per mode, position errors constant along each trial
        let trial = |v: f64| {
            let mut e = Tangent::zeros();
            e[6] = v;
            vec![e; 5]
        };
        let armse = |vals: [f64; 3]| vals.iter().map(|v| position_rmse(&trial(*v)).unwrap()).sum::<f64>() / 3.0;
        let rows = comparison_table(&[ModeArmse {
            robots: 3,
            centralized: Some(armse([0.3, 0.2, 0.4])),
            no_passive: Some(armse([0.5, 0.6, 0.7])),
            proposed: armse([0.2, 0.3, 0.1]),
        }]);
        let r = rows[0];
        assert!((r.proposed - 0.2).abs() < 1e-15);
        assert!((r.change_vs_centralized.unwrap() - (-33.333333333333336)).abs() < 1e-9);
        assert!((r.change_vs_no_passive.unwrap() - (-66.66666666666667)).abs() < 1e-9);
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("robots,centralized_armse_m"));
        assert_eq!(text.lines().count(), 2);
        assert!(format_comparison(&rows).contains("-66.67"));
    }
}
