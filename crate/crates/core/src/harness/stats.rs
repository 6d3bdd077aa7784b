//! Summary statistics over experiment rows: per-interaction mean ± SE across
//! seeds and paired t-tests between blocks or between experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::io::RecordRow;
use super::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LaneProgress,
    ReverseTime,
    Yielded,
    RobotReturn,
    HumanReturn,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::LaneProgress,
        Metric::ReverseTime,
        Metric::Yielded,
        Metric::RobotReturn,
        Metric::HumanReturn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LaneProgress => "lane_progress",
            Metric::ReverseTime => "reverse_time",
            Metric::Yielded => "yielded",
            Metric::RobotReturn => "robot_return",
            Metric::HumanReturn => "human_return",
        }
    }

    pub fn of(self, row: &RecordRow) -> f64 {
        match self {
            Metric::LaneProgress => row.lane_progress,
            Metric::ReverseTime => row.reverse_time,
            Metric::Yielded => f64::from(u8::from(row.yielded)),
            Metric::RobotReturn => row.robot_return,
            Metric::HumanReturn => row.human_return,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Metric> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown metric `{s}`")))
    }
}

/// Sample mean with standard error `sd / sqrt(n)`; a single value has SE 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(values: &[f64]) -> Result<MeanSe> {
    let n = values.len();
    if n == 0 {
        return Err(HarnessError::InsufficientData("mean of an empty sample".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(MeanSe { mean, se, n })
}

/// Outcome of a two-sided paired t-test on `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PairedTest {
    Computed {
        mean_difference: f64,
        t: f64,
        dof: usize,
        p_value: f64,
    },
    /// Every difference is the same, so t is undefined.
    Degenerate { mean_difference: f64 },
}

impl PairedTest {
    pub fn mean_difference(&self) -> f64 {
        match *self {
            PairedTest::Computed { mean_difference, .. } | PairedTest::Degenerate { mean_difference } => {
                mean_difference
            }
        }
    }

    pub fn p_value(&self) -> Option<f64> {
        match *self {
            PairedTest::Computed { p_value, .. } => Some(p_value),
            PairedTest::Degenerate { .. } => None,
        }
    }

    /// True when `a` is larger than `b` on average and the test rejects at `alpha`.
    pub fn greater_at(&self, alpha: f64) -> bool {
        self.mean_difference() > 0.0 && self.p_value().is_some_and(|p| p < alpha)
    }

    pub fn less_at(&self, alpha: f64) -> bool {
        self.mean_difference() < 0.0 && self.p_value().is_some_and(|p| p < alpha)
    }
}

impl fmt::Display for PairedTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PairedTest::Computed { mean_difference, t, dof, p_value } => {
                write!(f, "diff {mean_difference:.4}, t({dof}) = {t:.3}, p = {p_value:.3e}")
            }
            PairedTest::Degenerate { mean_difference } => {
                write!(f, "diff {mean_difference:.4}, degenerate: zero variance")
            }
        }
    }
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(HarnessError::InsufficientData(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(HarnessError::InsufficientData(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let MeanSe { mean, se, .. } = mean_se(&d)?;
    if se == 0.0 || !se.is_finite() {
        return Ok(PairedTest::Degenerate { mean_difference: mean });
    }
    let t = mean / se;
    let dof = n - 1;
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("dof >= 1");
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(PairedTest::Computed {
        mean_difference: mean,
        t,
        dof,
        p_value,
    })
}

/// Rows regrouped per seed (first-appearance order), each sorted by
/// interaction. Every seed must have the same interaction count.
pub fn by_seed(rows: &[RecordRow]) -> Result<Vec<(u64, Vec<&RecordRow>)>> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<u64, Vec<&RecordRow>> = BTreeMap::new();
    for r in rows {
        let g = groups.entry(r.seed).or_default();
        if g.is_empty() {
            order.push(r.seed);
        }
        g.push(r);
    }
    let mut out = Vec::with_capacity(order.len());
    for seed in order {
        let mut g = groups.remove(&seed).unwrap_or_default();
        g.sort_by_key(|r| r.interaction);
        out.push((seed, g));
    }
    if let Some((_, first)) = out.first() {
        let n = first.len();
        if let Some((seed, g)) = out.iter().find(|(_, g)| g.len() != n) {
            return Err(HarnessError::InsufficientData(format!(
                "seed {seed} has {} interactions, expected {n}",
                g.len()
            )));
        }
    }
    Ok(out)
}

/// Per-seed mean of `metric` over interactions `[lo, hi)`, keyed by seed.
pub fn seed_means(rows: &[RecordRow], metric: Metric, lo: usize, hi: usize) -> Result<Vec<(u64, f64)>> {
    by_seed(rows)?
        .into_iter()
        .map(|(seed, g)| {
            let v: Vec<f64> = g
                .iter()
                .filter(|r| r.interaction >= lo && r.interaction < hi)
                .map(|r| metric.of(r))
                .collect();
            Ok((seed, mean_se(&v)?.mean))
        })
        .collect()
}

/// Paired comparison of two experiments run on the same seeds: per-seed
/// means of `metric` over all interactions, tested as `a - b`.
pub fn compare_by_seed(a: &[RecordRow], b: &[RecordRow], metric: Metric) -> Result<PairedTest> {
    let a = seed_means(a, metric, 0, usize::MAX)?;
    let b: BTreeMap<u64, f64> = seed_means(b, metric, 0, usize::MAX)?.into_iter().collect();
    if a.len() != b.len() {
        return Err(HarnessError::InsufficientData("experiments cover different seeds".into()));
    }
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(a.len());
    for (seed, x) in a {
        let y = b.get(&seed).ok_or_else(|| {
            HarnessError::InsufficientData(format!("seed {seed} missing from the second experiment"))
        })?;
        xs.push(x);
        ys.push(*y);
    }
    paired_t_test(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment_id: String,
    pub metric: Metric,
    pub seeds: Vec<u64>,
    pub interactions: usize,
    pub per_interaction: Vec<MeanSe>,
    pub block: usize,
    pub first_block: MeanSe,
    pub last_block: MeanSe,
    /// Last block minus first block, paired by seed; absent with one seed.
    pub block_comparison: Option<PairedTest>,
}

pub fn summarize(rows: &[RecordRow], metric: Metric, block: usize) -> Result<Summary> {
    let groups = by_seed(rows)?;
    let interactions = groups.first().map_or(0, |(_, g)| g.len());
    if interactions == 0 {
        return Err(HarnessError::InsufficientData("no interactions to summarize".into()));
    }
    let block = block.clamp(1, interactions);
    let per_interaction = (0..interactions)
        .map(|i| {
            let v: Vec<f64> = groups.iter().map(|(_, g)| metric.of(g[i])).collect();
            mean_se(&v)
        })
        .collect::<Result<Vec<_>>>()?;
    let block_mean = |lo: usize| -> Result<Vec<f64>> {
        groups
            .iter()
            .map(|(_, g)| Ok(mean_se(&g[lo..lo + block].iter().map(|r| metric.of(r)).collect::<Vec<_>>())?.mean))
            .collect()
    };
    let first = block_mean(0)?;
    let last = block_mean(interactions - block)?;
    let block_comparison = match paired_t_test(&last, &first) {
        Ok(t) => Some(t),
        Err(HarnessError::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Summary {
        experiment_id: rows[0].experiment_id.clone(),
        metric,
        seeds: groups.iter().map(|(s, _)| *s).collect(),
        interactions,
        per_interaction,
        block,
        first_block: mean_se(&first)?,
        last_block: mean_se(&last)?,
        block_comparison,
    })
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "experiment {}: {}", self.experiment_id, self.metric)?;
        writeln!(f, "seeds {} x interactions {}", self.seeds.len(), self.interactions)?;
        let n1 = if self.seeds.len() == 1 { " (n=1)" } else { "" };
        writeln!(
            f,
            "first {} mean {:.4} se {:.4}{n1}",
            self.block, self.first_block.mean, self.first_block.se
        )?;
        writeln!(
            f,
            "last {} mean {:.4} se {:.4}{n1}",
            self.block, self.last_block.mean, self.last_block.se
        )?;
        match &self.block_comparison {
            Some(t) => writeln!(f, "last - first: {t}")?,
            None => writeln!(f, "last - first: not enough seeds for a paired test")?,
        }
        writeln!(f, "interaction mean se")?;
        for (i, m) in self.per_interaction.iter().enumerate() {
            writeln!(f, "{i} {:.4} {:.4}", m.mean, m.se)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(seed: u64, interaction: usize, lp: f64) -> RecordRow {
        RecordRow {
            experiment_id: "t".into(),
            seed,
            env: crate::world::EnvKind::Highway,
            controller: crate::influence::ControllerKind::Stackelberg,
            human: crate::humans::HumanKind::Memory,
            interaction,
            lane_progress: lp,
            reverse_time: 0.0,
            yielded: false,
            robot_return: 0.0,
            human_return: 0.0,
            belief_h0: None,
            belief_h1: None,
        }
    }

    #[test]
    fn mean_and_standard_error() {
        let m = mean_se(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_relative_eq!(m.se, 0.5773502691896258, epsilon = 1e-12);
        let one = mean_se(&[4.5]).unwrap();
        assert_eq!((one.mean, one.se, one.n), (4.5, 0.0, 1));
        assert!(mean_se(&[]).is_err());
    }

    // Reference values from scipy.stats.ttest_rel.
    #[test]
    fn paired_t_matches_reference() {
        let cases: [(&[f64], &[f64], f64, f64); 3] = [
            (&[2., 4., 3., 6., 9.], &[1., 2., 3., 4., 5.], 2.7136021011998723, 0.05333826104568904),
            (&[5.1, 6.0, 7.2, 8.1], &[1., 2., 3., 4.2], 62.742330208560034, 8.920553380527958e-06),
            (
                &[0.3, 0.1, 0.25, 0.4, 0.2, 0.35],
                &[0.5, 0.45, 0.6, 0.42, 0.7, 0.55],
                -3.980932816182223,
                0.010520951800702883,
            ),
        ];
        for (a, b, t_ref, p_ref) in cases {
            match paired_t_test(a, b).unwrap() {
                PairedTest::Computed { t, p_value, dof, .. } => {
                    assert_relative_eq!(t, t_ref, max_relative = 1e-10);
                    assert_relative_eq!(p_value, p_ref, max_relative = 1e-6);
                    assert_eq!(dof, a.len() - 1);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let t = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t, PairedTest::Degenerate { mean_difference: 1.0 });
        assert_eq!(t.to_string(), "diff 1.0000, degenerate: zero variance");
        assert!(!t.greater_at(0.05));
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(
            paired_t_test(&[1.0], &[2.0]),
            Err(HarnessError::InsufficientData(_))
        ));
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn summary_blocks_and_single_seed() {
        let rows: Vec<RecordRow> = (0..4).map(|i| row(7, i, i as f64)).collect();
        let s = summarize(&rows, Metric::LaneProgress, 2).unwrap();
        assert_eq!(s.first_block.mean, 0.5);
        assert_eq!(s.last_block.mean, 2.5);
        assert_eq!(s.per_interaction[3], MeanSe { mean: 3.0, se: 0.0, n: 1 });
        assert!(s.block_comparison.is_none());
        assert!(s.to_string().contains("(n=1)"));
    }

    #[test]
    fn summary_pairs_blocks_by_seed() {
        let mut rows = Vec::new();
        for (seed, bump) in [(1, 1.0), (2, 2.0), (3, 4.0)] {
            for i in 0..3 {
                rows.push(row(seed, i, if i == 2 { bump } else { 0.0 }));
            }
        }
        let s = summarize(&rows, Metric::LaneProgress, 1).unwrap();
        let reference = paired_t_test(&[1.0, 2.0, 4.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.block_comparison, Some(reference));
        assert_eq!(s.seeds, vec![1, 2, 3]);
        assert_relative_eq!(s.per_interaction[2].mean, 7.0 / 3.0);
    }

    #[test]
    fn uneven_seeds_rejected() {
        let rows = vec![row(1, 0, 0.0), row(1, 1, 0.0), row(2, 0, 0.0)];
        assert!(summarize(&rows, Metric::LaneProgress, 1).is_err());
        assert!(summarize(&[], Metric::LaneProgress, 1).is_err());
    }

    #[test]
    fn compare_pairs_on_seed_not_position() {
        let a = vec![row(1, 0, 1.0), row(2, 0, 5.0), row(3, 0, 2.0)];
        let b = vec![row(3, 0, 1.5), row(1, 0, 0.0), row(2, 0, 3.0)];
        let t = compare_by_seed(&a, &b, Metric::LaneProgress).unwrap();
        assert_eq!(t, paired_t_test(&[1.0, 5.0, 2.0], &[0.0, 3.0, 1.5]).unwrap());
    }
}
