//! Trajectory accuracy and robustness metrics.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{alignment_rmse, umeyama_sim3};
use crate::types::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub tau: f64,
    pub delta_r_max: f64,
    pub l_max: f64,
    pub runs: u32,
    /// Association tolerance in seconds; `None` means half a frame period.
    pub assoc_tolerance: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            tau: 0.10,
            delta_r_max: 0.15,
            l_max: 0.10,
            runs: 10,
            assoc_tolerance: None,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::validation("metrics config", msg));
        if !(self.tau >= 0.0) {
            return bad(format!("tau {} < 0", self.tau));
        }
        if !(0.0..=1.0).contains(&self.delta_r_max) {
            return bad(format!("delta_r_max {} outside [0, 1]", self.delta_r_max));
        }
        if !(self.l_max > 0.0) {
            return bad(format!("l_max {} <= 0", self.l_max));
        }
        if self.runs < 1 {
            return bad("runs must be >= 1".into());
        }
        if let Some(t) = self.assoc_tolerance {
            if !(t >= 0.0) {
                return bad(format!("assoc_tolerance {t} < 0"));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, fps: f64) -> f64 {
        self.assoc_tolerance.unwrap_or(0.5 / fps)
    }
}

/// Position pairs `(estimated, ground truth)` matched by nearest timestamp.
pub fn associate(
    est: &Trajectory,
    gt: &Trajectory,
    tolerance: f64,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut e = Vec::new();
    let mut g = Vec::new();
    for p in &est.poses {
        if let Some(q) = gt.nearest(p.timestamp, tolerance) {
            e.push(p.translation);
            g.push(q.translation);
        }
    }
    (e, g)
}

/// RMSE of positions after similarity alignment; `None` is Unknown.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Option<f64> {
    let (e, g) = associate(est, gt, tolerance);
    if e.len() < 3 {
        return None;
    }
    let sim = umeyama_sim3(&e, &g).ok()?;
    Some(alignment_rmse(&sim, &e, &g))
}

pub fn tracking_rate(traj: &Trajectory) -> Result<f64> {
    if traj.total_frames == 0 {
        return Err(Error::validation("trajectory", "total_frames is 0"));
    }
    Ok(traj.tracked_frames as f64 / traj.total_frames as f64)
}

pub fn is_valid(ate: Option<f64>, tracking_rate: f64, r_gt: f64, cfg: &MetricsConfig) -> bool {
    ate.is_some() && tracking_rate >= r_gt - cfg.delta_r_max
}

/// The raw ATE when valid, otherwise the worst valid peer ATE scaled by
/// `1 + tau` (or `l_max * (1 + tau)` without peers).
pub fn compute_penalized(ate: Option<f64>, valid: bool, peers: &[f64], cfg: &MetricsConfig) -> f64 {
    match ate {
        Some(a) if valid => a,
        _ => {
            let worst = peers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let base = if worst.is_finite() { worst } else { cfg.l_max };
            base * (1.0 + cfg.tau)
        }
    }
}

pub fn is_success(ate: Option<f64>, tracking_rate: f64, r_gt: f64, cfg: &MetricsConfig) -> bool {
    matches!(ate, Some(a) if a <= cfg.l_max) && tracking_rate >= r_gt - cfg.delta_r_max
}

/// Median of a slice; even lengths average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub ate: Option<f64>,
    pub tracking_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub ate: Option<f64>,
    pub tracking_rate: f64,
    pub unknown_fraction: f64,
    pub runs: u32,
}

/// Componentwise median over runs. Unknown ATEs are left out of the ATE
/// median; when more than half are Unknown the median is Unknown.
pub fn aggregate_runs(runs: &[RunResult]) -> Result<RunAggregate> {
    if runs.is_empty() {
        return Err(Error::validation("runs", "no runs to aggregate"));
    }
    let known: Vec<f64> = runs.iter().filter_map(|r| r.ate).collect();
    let unknown = runs.len() - known.len();
    let rates: Vec<f64> = runs.iter().map(|r| r.tracking_rate).collect();
    Ok(RunAggregate {
        ate: if 2 * unknown > runs.len() {
            None
        } else {
            median(&known)
        },
        tracking_rate: median(&rates).expect("nonempty"),
        unknown_fraction: unknown as f64 / runs.len() as f64,
        runs: runs.len() as u32,
    })
}

pub fn success_rate(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::validation("success rate", "no sequences"));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Runs of one system on one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRuns {
    pub system: String,
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRuns {
    pub sequence: String,
    pub r_gt: f64,
    pub systems: Vec<SystemRuns>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEval {
    pub sequence: String,
    pub ate_rmse: Option<f64>,
    pub tracking_rate: f64,
    pub r_gt: f64,
    pub valid: bool,
    pub penalized_ate: f64,
    pub success: bool,
    pub unknown_fraction: f64,
    pub runs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    pub average_penalized_ate: f64,
    pub success_rate: f64,
    pub sequences: Vec<SequenceEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub systems: Vec<SystemReport>,
}

/// Evaluates every system on every sequence. The penalty peers of a system
/// are the valid median ATEs of the other systems on the same sequence.
/// Systems and sequences are reported in name order.
pub fn evaluate(inputs: &[SequenceRuns], cfg: &MetricsConfig) -> Result<Report> {
    cfg.validate()?;
    let mut per_system: BTreeMap<String, Vec<SequenceEval>> = BTreeMap::new();
    let mut ordered: Vec<&SequenceRuns> = inputs.iter().collect();
    ordered.sort_by(|a, b| a.sequence.cmp(&b.sequence));
    for seq in ordered {
        let mut aggs = Vec::with_capacity(seq.systems.len());
        for s in &seq.systems {
            let agg = aggregate_runs(&s.runs).map_err(|e| {
                Error::validation("runs", format!("{}/{}: {e}", seq.sequence, s.system))
            })?;
            let valid = is_valid(agg.ate, agg.tracking_rate, seq.r_gt, cfg);
            aggs.push((s.system.as_str(), agg, valid));
        }
        for (i, &(name, agg, valid)) in aggs.iter().enumerate() {
            let peers: Vec<f64> = aggs
                .iter()
                .enumerate()
                .filter(|&(j, (_, _, v))| j != i && *v)
                .filter_map(|(_, (_, a, _))| a.ate)
                .collect();
            let eval = SequenceEval {
                sequence: seq.sequence.clone(),
                ate_rmse: agg.ate,
                tracking_rate: agg.tracking_rate,
                r_gt: seq.r_gt,
                valid,
                penalized_ate: compute_penalized(agg.ate, valid, &peers, cfg),
                success: is_success(agg.ate, agg.tracking_rate, seq.r_gt, cfg),
                unknown_fraction: agg.unknown_fraction,
                runs: agg.runs,
            };
            per_system.entry(name.to_owned()).or_default().push(eval);
        }
    }
    let systems = per_system
        .into_iter()
        .map(|(system, sequences)| {
            let n = sequences.len() as f64;
            let flags: Vec<bool> = sequences.iter().map(|s| s.success).collect();
            Ok(SystemReport {
                average_penalized_ate: sequences.iter().map(|s| s.penalized_ate).sum::<f64>() / n,
                success_rate: success_rate(&flags)?,
                system,
                sequences,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Report { systems })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Pose;
    use nalgebra::UnitQuaternion;

    fn line(n: usize) -> Trajectory {
        let poses = (0..n)
            .map(|i| {
                let t = i as f64 / 30.0;
                Pose::new(
                    t,
                    Vector3::new(t, (3.0 * t).sin(), 0.5 * t * t),
                    UnitQuaternion::identity(),
                )
            })
            .collect();
        Trajectory::new(poses).unwrap()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let gt = line(50);
        assert!(ate_rmse(&gt, &gt, 1.0 / 60.0).unwrap() < 1e-12);
    }

    #[test]
    fn too_few_associations_is_unknown() {
        let gt = line(50);
        let est = line(2);
        assert_eq!(ate_rmse(&est, &gt, 1.0 / 60.0), None);
        let mut shifted = line(10);
        for p in &mut shifted.poses {
            p.timestamp += 100.0;
        }
        assert_eq!(ate_rmse(&shifted, &gt, 1.0 / 60.0), None);
    }

    #[test]
    fn tracking_rate_examples() {
        let mut t = line(3);
        for (tracked, want) in [(500, 1.0), (250, 0.5), (0, 0.0)] {
            t.tracked_frames = tracked;
            t.total_frames = 500;
            assert_eq!(tracking_rate(&t).unwrap(), want);
        }
        t.total_frames = 0;
        t.tracked_frames = 0;
        assert!(tracking_rate(&t).is_err());
    }

    #[test]
    fn validity_rule() {
        let c = MetricsConfig::default();
        assert!(is_valid(Some(0.01), 0.95, 1.0, &c));
        assert!(!is_valid(Some(0.01), 0.80, 1.0, &c));
        assert!(!is_valid(None, 1.0, 1.0, &c));
    }

    #[test]
    fn penalty_rule() {
        let c = MetricsConfig::default();
        assert_eq!(compute_penalized(Some(0.02), true, &[0.5], &c), 0.02);
        let p = compute_penalized(None, false, &[0.02, 0.05], &c);
        assert!((p - 0.055).abs() <= f64::EPSILON * 0.055);
        let p = compute_penalized(Some(0.3), false, &[], &c);
        assert!((p - 0.11).abs() <= f64::EPSILON * 0.11);
    }

    #[test]
    fn success_rule() {
        let c = MetricsConfig::default();
        assert!(is_success(Some(0.05), 0.99, 1.0, &c));
        assert!(!is_success(Some(0.15), 1.0, 1.0, &c));
        assert!(!is_success(None, 1.0, 1.0, &c));
        assert!(!is_success(Some(0.05), 0.8, 1.0, &c));
    }

    #[test]
    fn aggregation_examples() {
        let r = |a: Option<f64>| RunResult {
            ate: a,
            tracking_rate: 1.0,
        };
        let agg = aggregate_runs(&[r(Some(0.01)), r(Some(0.02)), r(Some(0.03))]).unwrap();
        assert_eq!(agg.ate, Some(0.02));
        let agg = aggregate_runs(&[r(Some(0.01)), r(Some(0.03))]).unwrap();
        assert_eq!(agg.ate, Some(0.02));
        let mut runs = vec![r(None); 6];
        runs.extend((0..4).map(|i| r(Some(i as f64))));
        let agg = aggregate_runs(&runs).unwrap();
        assert_eq!(agg.ate, None);
        assert_eq!(agg.unknown_fraction, 0.6);
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn success_rate_examples() {
        assert_eq!(success_rate(&[true; 8]).unwrap(), 1.0);
        let mixed = [true, true, false, true, false, true, false, true];
        assert_eq!(success_rate(&mixed).unwrap(), 0.625);
        assert_eq!(success_rate(&[false; 8]).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_uses_other_systems_as_peers() {
        let run = |a: Option<f64>, rate: f64| RunResult {
            ate: a,
            tracking_rate: rate,
        };
        let inputs = vec![SequenceRuns {
            sequence: "s1".into(),
            r_gt: 1.0,
            systems: vec![
                SystemRuns {
                    system: "b".into(),
                    runs: vec![run(None, 0.2)],
                },
                SystemRuns {
                    system: "a".into(),
                    runs: vec![run(Some(0.04), 1.0)],
                },
            ],
        }];
        let rep = evaluate(&inputs, &MetricsConfig::default()).unwrap();
        assert_eq!(rep.systems[0].system, "a");
        assert_eq!(rep.systems[0].sequences[0].penalized_ate, 0.04);
        assert!(rep.systems[0].sequences[0].success);
        let b = &rep.systems[1].sequences[0];
        assert!(!b.valid && !b.success);
        assert!((b.penalized_ate - 0.044).abs() < 1e-15);
    }
}
