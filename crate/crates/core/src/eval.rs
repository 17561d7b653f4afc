//! Landmark localization metrics.
//!
//! The error of one landmark is the Euclidean distance in mm between predicted
//! and ground-truth positions (voxel difference scaled by spacing). MAE is the
//! mean of these distances and RMSE their quadratic mean; the MAE std is taken
//! over the pooled landmark-sample population and the RMSE std over per-sample
//! RMSE values. Pairs where either side is flagged out-of-bounds are excluded
//! and counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{Group, LandmarkSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkError {
    pub sample: usize,
    pub id: u32,
    pub distance_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub count: usize,
    pub mae: f64,
    pub mae_std: f64,
    pub rmse: f64,
    pub rmse_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub errors: Vec<LandmarkError>,
    pub overall: Aggregate,
    /// Only groups with at least one evaluated landmark.
    pub groups: Vec<Aggregate>,
    pub samples: usize,
    pub excluded: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut s = 0.0;
    let mut n = 0;
    for x in xs {
        s += x;
        n += 1;
    }
    (if n > 0 { s / n as f64 } else { 0.0 }, n)
}

fn population_std(xs: &[f64], m: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn aggregate(name: &str, errors: &[&LandmarkError]) -> Aggregate {
    let d: Vec<f64> = errors.iter().map(|e| e.distance_mm).collect();
    let (mae, count) = mean(d.iter().copied());
    let (ms, _) = mean(d.iter().map(|x| x * x));
    let rmse = ms.sqrt();
    let mut samples: Vec<usize> = errors.iter().map(|e| e.sample).collect();
    samples.sort_unstable();
    samples.dedup();
    let per_sample: Vec<f64> = samples
        .iter()
        .map(|&s| mean(errors.iter().filter(|e| e.sample == s).map(|e| e.distance_mm.powi(2))).0.sqrt())
        .collect();
    let (ps_mean, _) = mean(per_sample.iter().copied());
    Aggregate {
        name: name.to_string(),
        count,
        mae,
        mae_std: population_std(&d, mae),
        rmse,
        rmse_std: population_std(&per_sample, ps_mean),
    }
}

pub fn distance_mm(a: [f64; 3], b: [f64; 3], spacing: [f64; 3]) -> f64 {
    (0..3).map(|i| ((a[i] - b[i]) * spacing[i]).powi(2)).sum::<f64>().sqrt()
}

pub fn evaluate(pred: &[LandmarkSet], gt: &[LandmarkSet], spacing: [f64; 3], groups: &[Group]) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::IdMismatch(format!("{} predicted samples vs {} ground truth", pred.len(), gt.len())));
    }
    let mut errors = Vec::new();
    let mut excluded = 0;
    for (s, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.ids() != g.ids() {
            return Err(Error::IdMismatch(format!("sample {s}: landmark ids differ")));
        }
        for (lp, lg) in p.points().iter().zip(g.points()) {
            if lp.oob || lg.oob {
                excluded += 1;
                continue;
            }
            errors.push(LandmarkError { sample: s, id: lg.id, distance_mm: distance_mm(lp.p, lg.p, spacing) });
        }
    }
    if errors.is_empty() {
        return Err(Error::EmptySet);
    }
    let all: Vec<&LandmarkError> = errors.iter().collect();
    let overall = aggregate("Overall", &all);
    let groups = groups
        .iter()
        .filter_map(|g| {
            let members: Vec<&LandmarkError> = errors.iter().filter(|e| g.ids.contains(&e.id)).collect();
            (!members.is_empty()).then(|| aggregate(&g.name, &members))
        })
        .collect();
    Ok(EvalReport { errors, overall, groups, samples: pred.len(), excluded })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::Parse(format!("unknown table format {other:?}"))),
        }
    }
}

pub fn report_to_table(r: &EvalReport, format: TableFormat) -> String {
    let rows = r.groups.iter().chain(std::iter::once(&r.overall));
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("group,count,mae_mm,mae_std_mm,rmse_mm,rmse_std_mm\n");
            for a in rows {
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    a.name, a.count, a.mae, a.mae_std, a.rmse, a.rmse_std
                );
            }
        }
        TableFormat::Markdown => {
            out.push_str("| Subanatomy | MAE (mm) | RMSE (mm) |\n");
            out.push_str("|---|---|---|\n");
            for a in rows {
                let _ = writeln!(
                    out,
                    "| {} | {:.2} ± {:.2} | {:.2} ± {:.2} |",
                    a.name, a.mae, a.mae_std, a.rmse, a.rmse_std
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{table1_groups, Landmark};
    use proptest::prelude::*;

    fn set(points: &[[f64; 3]]) -> LandmarkSet {
        LandmarkSet::from_points(points)
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let g = set(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let r = evaluate(&[g.clone()], &[g], [1.0; 3], &[]).unwrap();
        assert_eq!(r.overall.mae, 0.0);
        assert_eq!(r.overall.rmse, 0.0);
    }

    #[test]
    fn spacing_scales_offsets() {
        let r = evaluate(&[set(&[[3.0, 0.0, 0.0]])], &[set(&[[0.0, 0.0, 0.0]])], [2.2, 1.0, 1.0], &[]).unwrap();
        assert!((r.overall.mae - 6.6).abs() < 1e-9);
        assert!((r.overall.rmse - 6.6).abs() < 1e-9);
    }

    #[test]
    fn two_distances() {
        let r = evaluate(
            &[set(&[[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]])],
            &[set(&[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])],
            [1.0; 3],
            &[],
        )
        .unwrap();
        assert!((r.overall.mae - 2.0).abs() < 1e-9);
        assert!((r.overall.rmse - 8f64.sqrt()).abs() < 1e-9);
        assert!((r.overall.rmse - 2.8284).abs() < 1e-4);
    }

    #[test]
    fn oob_pairs_are_excluded_and_counted() {
        let gt = set(&[[0.0; 3], [1.0; 3]]);
        let pred = LandmarkSet::new(vec![Landmark::new(1, [1.0, 0.0, 0.0]), Landmark { id: 2, p: [50.0; 3], oob: true }])
            .unwrap();
        let r = evaluate(&[pred], &[gt], [1.0; 3], &[]).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.overall.count, 1);
        assert_eq!(r.overall.mae, 1.0);
    }

    #[test]
    fn mismatches_and_empties() {
        let a = set(&[[0.0; 3]]);
        let b = LandmarkSet::new(vec![Landmark::new(2, [0.0; 3])]).unwrap();
        assert!(matches!(evaluate(&[a.clone()], &[b], [1.0; 3], &[]), Err(Error::IdMismatch(_))));
        assert!(matches!(evaluate(&[a.clone()], &[], [1.0; 3], &[]), Err(Error::IdMismatch(_))));
        assert!(matches!(evaluate(&[], &[], [1.0; 3], &[]), Err(Error::EmptySet)));
    }

    fn table1_pair(shift: f64) -> (LandmarkSet, LandmarkSet) {
        let gt: Vec<[f64; 3]> = (0..88).map(|i| [i as f64 % 10.0, 1.0, 2.0]).collect();
        let pred: Vec<[f64; 3]> = gt.iter().enumerate().map(|(i, p)| [p[0] + shift * (i % 3) as f64, p[1], p[2]]).collect();
        (set(&pred), set(&gt))
    }

    #[test]
    fn table_has_seven_groups_plus_overall() {
        let (p, g) = table1_pair(0.5);
        let r = evaluate(&[p], &[g], [1.0; 3], &table1_groups()).unwrap();
        let md = report_to_table(&r, TableFormat::Markdown);
        assert_eq!(md.lines().count(), 2 + 8);
        assert!(md.contains("| Temporal Lobe |"));
        let csv = report_to_table(&r, TableFormat::Csv);
        assert_eq!(csv.lines().count(), 1 + 8);
        assert_eq!(md, report_to_table(&r, TableFormat::Markdown));
    }

    #[test]
    fn no_groups_gives_overall_only() {
        let (p, g) = table1_pair(1.0);
        let r = evaluate(&[p], &[g], [1.0; 3], &[]).unwrap();
        let csv = report_to_table(&r, TableFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("Overall,"));
    }

    #[test]
    fn groups_average_back_to_overall() {
        let (p1, g1) = table1_pair(0.7);
        let (p2, g2) = table1_pair(1.3);
        let r = evaluate(&[p1, p2], &[g1, g2], [2.2, 1.0, 1.0], &table1_groups()).unwrap();
        let n: usize = r.groups.iter().map(|g| g.count).sum();
        assert_eq!(n, r.overall.count);
        let mae = r.groups.iter().map(|g| g.mae * g.count as f64).sum::<f64>() / n as f64;
        let ms = r.groups.iter().map(|g| g.rmse.powi(2) * g.count as f64).sum::<f64>() / n as f64;
        assert!((mae - r.overall.mae).abs() < 1e-12);
        assert!((ms.sqrt() - r.overall.rmse).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let (p1, g1) = table1_pair(0.7);
        let (p2, g2) = table1_pair(1.3);
        let a = evaluate(&[p1.clone(), p2.clone()], &[g1.clone(), g2.clone()], [1.0; 3], &table1_groups()).unwrap();
        let b = evaluate(&[p2, p1], &[g2, g1], [1.0; 3], &table1_groups()).unwrap();
        assert!((a.overall.mae - b.overall.mae).abs() < 1e-12);
        assert!((a.overall.rmse - b.overall.rmse).abs() < 1e-12);
        for (x, y) in a.groups.iter().zip(&b.groups) {
            assert!((x.mae - y.mae).abs() < 1e-12);
            assert!((x.rmse_std - y.rmse_std).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(points in proptest::collection::vec(
            (proptest::array::uniform3(0.0f64..30.0), proptest::array::uniform3(0.0f64..30.0)), 1..40)) {
            let pred: Vec<[f64; 3]> = points.iter().map(|x| x.0).collect();
            let gt: Vec<[f64; 3]> = points.iter().map(|x| x.1).collect();
            let r = evaluate(&[set(&pred)], &[set(&gt)], [2.2, 1.0, 1.0], &[]).unwrap();
            prop_assert!(r.overall.mae >= 0.0);
            prop_assert!(r.overall.rmse >= r.overall.mae - 1e-12);
        }
    }
}
