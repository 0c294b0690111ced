//! Scoring predicted distributions against human targets, aggregation,
//! intergroup disagreement and data-scaling fits.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{kl_forward, wasserstein, MetricConfig};
use crate::survey::{Distribution, Question, Subpopulation, SurveyDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub group: String,
    pub question_id: String,
    pub wave: String,
    pub wd: f64,
    pub kl: f64,
}

/// A `(group, question)` pair that produced no record, with the cause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub group: String,
    pub question_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// Group-major, then question order as requested.
    pub records: Vec<EvalRecord>,
    pub skipped: Vec<SkippedPair>,
}

/// Predicts a distribution for a group and question.
pub trait Predictor: Sync {
    fn predict(&self, group: &Subpopulation, question: &Question) -> Result<Distribution>;
}

impl<F> Predictor for F
where
    F: Fn(&Subpopulation, &Question) -> Result<Distribution> + Sync,
{
    fn predict(&self, group: &Subpopulation, question: &Question) -> Result<Distribution> {
        self(group, question)
    }
}

/// Scores `predictor` on every `(group, question)` pair using `workers`
/// threads. Output order never depends on completion order.
pub fn evaluate(
    dataset: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
    predictor: &dyn Predictor,
    method: &str,
    cfg: &MetricConfig,
    workers: usize,
) -> Result<EvalOutcome> {
    let pairs: Vec<(&Subpopulation, &Question)> = groups
        .iter()
        .flat_map(|g| questions.iter().map(move |q| (*g, *q)))
        .collect();

    let score = |(g, q): (&Subpopulation, &Question)| -> std::result::Result<EvalRecord, SkippedPair> {
        let skip = |reason: String| SkippedPair {
            group: g.label(),
            question_id: q.id.clone(),
            reason,
        };
        let human = dataset
            .weighted_distribution(g, q)
            .map_err(|e| skip(format!("no human target: {e}")))?;
        let predicted = predictor
            .predict(g, q)
            .map_err(|e| skip(format!("predictor failed: {e}")))?;
        let wd = wasserstein(&human, &predicted, q, cfg).map_err(|e| skip(e.to_string()))?;
        let kl = kl_forward(&human, &predicted, cfg).map_err(|e| skip(e.to_string()))?;
        Ok(EvalRecord {
            method: method.to_string(),
            group: g.label(),
            question_id: q.id.clone(),
            wave: q.wave.clone(),
            wd,
            kl,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("worker pool", e.to_string()))?;
    let results: Vec<_> = pool.install(|| pairs.par_iter().map(|p| score(*p)).collect());

    let mut outcome = EvalOutcome::default();
    for r in results {
        match r {
            Ok(rec) => outcome.records.push(rec),
            Err(s) => {
                log::warn!("skipped {} / {}: {}", s.group, s.question_id, s.reason);
                outcome.skipped.push(s);
            }
        }
    }
    if outcome.records.is_empty() && !pairs.is_empty() {
        return Err(Error::AllPairsFailed(pairs.len()));
    }
    Ok(outcome)
}

/// Writes records as CSV with a fixed float format.
pub fn write_records_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "group", "question_id", "wave", "wd", "kl"])?;
    for r in records {
        w.write_record([
            r.method.as_str(),
            r.group.as_str(),
            r.question_id.as_str(),
            r.wave.as_str(),
            &format!("{:.12}", r.wd),
            &format!("{:.12}", r.kl),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<records csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateBy {
    Overall,
    Group,
    Wave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: String,
    pub n: usize,
    pub mean_wd: f64,
    pub mean_kl: f64,
}

/// Unweighted means of `wd` and `kl` per bucket; buckets sorted by key.
/// The overall bucket is the flat mean over all records.
pub fn aggregate(records: &[EvalRecord], by: AggregateBy) -> Vec<AggregateRow> {
    let mut buckets: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for r in records {
        let key = match by {
            AggregateBy::Overall => "overall",
            AggregateBy::Group => r.group.as_str(),
            AggregateBy::Wave => r.wave.as_str(),
        };
        let e = buckets.entry(key).or_default();
        e.0 += 1;
        e.1 += r.wd;
        e.2 += r.kl;
    }
    buckets
        .into_iter()
        .map(|(k, (n, wd, kl))| AggregateRow {
            key: k.to_string(),
            n,
            mean_wd: wd / n as f64,
            mean_kl: kl / n as f64,
        })
        .collect()
}

/// Share of the zero-shot-to-lower-bound gap closed by `ours`.
pub fn relative_improvement(lower: f64, zero_shot: f64, ours: f64) -> Result<f64> {
    if !(zero_shot > lower) {
        return Err(Error::DegenerateGap { lower, zero_shot });
    }
    Ok((zero_shot - ours) / (zero_shot - lower))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Human,
    Model,
}

/// Per-group distributions keyed by question id, in axis order.
pub type GroupDistributions = Vec<(String, HashMap<String, Distribution>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementMatrix {
    pub axis: Vec<String>,
    /// `values[t][s]`: mean distance between target `t` and source `s`.
    pub values: Vec<Vec<f64>>,
    pub source_kind: SourceKind,
}

impl DisagreementMatrix {
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.axis.len();
        (0..n).all(|i| (0..n).all(|j| (self.values[i][j] - self.values[j][i]).abs() <= tol))
    }

    pub fn has_zero_diagonal(&self, tol: f64) -> bool {
        (0..self.axis.len()).all(|i| self.values[i][i].abs() <= tol)
    }
}

/// Mean Wasserstein distance between every target group and every source
/// group over the questions both cover.
pub fn intergroup_matrix(
    targets: &GroupDistributions,
    sources: &GroupDistributions,
    questions: &[&Question],
    source_kind: SourceKind,
    cfg: &MetricConfig,
) -> Result<DisagreementMatrix> {
    let axis: Vec<String> = targets.iter().map(|(g, _)| g.clone()).collect();
    let source_axis: Vec<&String> = sources.iter().map(|(g, _)| g).collect();
    if axis.iter().collect::<Vec<_>>() != source_axis {
        return Err(Error::invalid(
            "disagreement matrix",
            "target and source groups must share one axis",
        ));
    }
    let mut values = vec![vec![0.0; axis.len()]; axis.len()];
    for (t, (tg, tdists)) in targets.iter().enumerate() {
        for (s, (sg, sdists)) in sources.iter().enumerate() {
            let mut total = 0.0;
            let mut n = 0usize;
            for q in questions {
                if let (Some(a), Some(b)) = (tdists.get(&q.id), sdists.get(&q.id)) {
                    total += wasserstein(a, b, q, cfg)?;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::invalid(
                    "disagreement matrix",
                    format!("no shared questions between `{tg}` and `{sg}`"),
                ));
            }
            values[t][s] = total / n as f64;
        }
    }
    Ok(DisagreementMatrix {
        axis,
        values,
        source_kind,
    })
}

/// Human distributions for each group, keyed by question id; questions
/// without data for a group are left out of that group's map.
pub fn human_distributions(
    dataset: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
) -> Result<GroupDistributions> {
    let mut out = Vec::new();
    for g in groups {
        let mut m = HashMap::new();
        for q in questions {
            match dataset.weighted_distribution(g, q) {
                Ok(d) => {
                    m.insert(q.id.clone(), d);
                }
                Err(Error::NoData { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        out.push((g.label(), m));
    }
    Ok(out)
}

/// Least-squares line through `(log10 fraction, log10 wd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    /// Fitted WD at `fraction`.
    pub fn predict(&self, fraction: f64) -> Result<f64> {
        if !(fraction > 0.0) {
            return Err(Error::invalid("fraction", format!("{fraction} must be positive")));
        }
        Ok(10f64.powf(self.intercept + self.slope * fraction.log10()))
    }

    /// Residuals in log10 space, one per point.
    pub fn residuals(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|(f, w)| w.log10() - (self.intercept + self.slope * f.log10()))
            .collect()
    }
}

pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    for &(f, w) in points {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid("scaling point", format!("fraction {f} is outside (0, 1]")));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::invalid("scaling point", format!("wd {w} must be positive")));
        }
    }
    let xs: Vec<f64> = points.iter().map(|(f, _)| f.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, w)| w.log10()).collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if points.len() < 2 || sxx == 0.0 {
        return Err(Error::invalid("scaling points", "need at least two distinct fractions"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    Ok(ScalingFit {
        slope,
        intercept: mean_y - slope * mean_x,
        points: points.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(group: &str, wave: &str, wd: f64) -> EvalRecord {
        EvalRecord {
            method: "m".into(),
            group: group.into(),
            question_id: "q".into(),
            wave: wave.into(),
            wd,
            kl: wd * 2.0,
        }
    }

    #[test]
    fn aggregate_buckets() {
        let recs = vec![
            rec("g1", "W1", 0.1),
            rec("g1", "W2", 0.2),
            rec("g2", "W1", 0.6),
        ];
        let by_group = aggregate(&recs, AggregateBy::Group);
        assert_eq!(by_group[0].key, "g1");
        assert!((by_group[0].mean_wd - 0.15).abs() < 1e-12);
        let overall = aggregate(&recs, AggregateBy::Overall);
        // Flat mean 0.3, not the mean of group means 0.375.
        assert!((overall[0].mean_wd - 0.3).abs() < 1e-12);
        let by_wave = aggregate(&recs, AggregateBy::Wave);
        assert_eq!(by_wave.len(), 2);
        assert!((by_wave[0].mean_wd - 0.35).abs() < 1e-12);
        assert!((by_wave[1].mean_kl - 0.4).abs() < 1e-12);
        assert!(aggregate(&[], AggregateBy::Group).is_empty());
    }

    #[test]
    fn relative_improvement_rows() {
        let v = relative_improvement(0.023, 0.185, 0.096).unwrap();
        assert!((v * 100.0 - 54.9).abs() < 0.1);
        let v = relative_improvement(0.021, 0.169, 0.103).unwrap();
        assert!((v * 100.0 - 44.6).abs() < 0.1);
        assert_eq!(relative_improvement(0.02, 0.2, 0.2).unwrap(), 0.0);
        assert!(matches!(
            relative_improvement(0.2, 0.2, 0.1),
            Err(Error::DegenerateGap { .. })
        ));
    }

    #[test]
    fn two_point_scaling_fit() {
        let fit = fit_scaling(&[(1.0, 1.0), (0.1, 2.0)]).unwrap();
        assert!((fit.slope + 2f64.log10()).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!((fit.predict(0.1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_fit_errors() {
        assert!(fit_scaling(&[(0.5, 0.1)]).is_err());
        assert!(fit_scaling(&[(0.5, 0.1), (0.5, 0.2)]).is_err());
        assert!(fit_scaling(&[(0.5, 0.0), (1.0, 0.2)]).is_err());
        assert!(fit_scaling(&[(1.5, 0.1), (1.0, 0.2)]).is_err());
    }
}
