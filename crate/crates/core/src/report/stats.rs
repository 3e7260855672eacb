use serde::{Deserialize, Serialize};

use crate::error::{AttackError, Result};
use crate::oracle::MeanRewardEstimate;
use crate::search::Individual;

/// Quantile by linear interpolation between order statistics: position
/// `h = (n − 1)·p` in the sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary plus mean of one ε's cumulative rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub eps: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub n_episodes: usize,
}

impl BoxStats {
    pub fn from_rewards(eps: f64, rewards: &[f64]) -> Result<Self> {
        if rewards.is_empty() {
            return Err(AttackError::arg("box statistics need at least one reward"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(AttackError::arg("rewards must be finite"));
        }
        let mut sorted = rewards.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            eps,
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean: MeanRewardEstimate::from_rewards(rewards)?.mean,
            n_episodes: rewards.len(),
        })
    }

    pub const CSV_HEADER: &'static str = "eps,min,q1,median,q3,max,mean,n_episodes";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.eps, self.min, self.q1, self.median, self.q3, self.max, self.mean, self.n_episodes
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorBins {
    pub label: String,
    /// `bins + 1` edges spanning `[-ε, ε]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Per-actuator distribution of δ over a DE population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorHistogram {
    pub eps: f64,
    pub actuators: Vec<ActuatorBins>,
}

impl ActuatorHistogram {
    pub const CSV_HEADER: &'static str = "actuator,bin_lo,bin_hi,count";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for a in &self.actuators {
            for (k, c) in a.counts.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", a.label, a.edges[k], a.edges[k + 1], c));
            }
        }
        out
    }

    /// Median δ of each actuator over the population.
    pub fn medians(population: &[Individual]) -> Vec<f64> {
        let n = population.first().map_or(0, |i| i.delta.len());
        (0..n)
            .map(|j| {
                let mut xs: Vec<f64> = population.iter().map(|i| i.delta.as_slice()[j]).collect();
                xs.sort_by(f64::total_cmp);
                quantile_sorted(&xs, 0.5)
            })
            .collect()
    }
}

/// Histograms the final population actuator by actuator over `[-ε, ε]`.
pub fn actuator_histogram(
    population: &[Individual],
    eps: f64,
    bins: usize,
    labels: &[String],
) -> Result<ActuatorHistogram> {
    let Some(first) = population.first() else {
        return Err(AttackError::arg("population is empty"));
    };
    if bins == 0 {
        return Err(AttackError::arg("need at least one bin"));
    }
    let n = first.delta.len();
    if labels.len() != n {
        return Err(AttackError::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    if population.iter().any(|i| i.delta.len() != n) {
        return Err(AttackError::arg("population members differ in length"));
    }
    let edges: Vec<f64> = (0..=bins).map(|k| -eps + 2.0 * eps * k as f64 / bins as f64).collect();
    let actuators = (0..n)
        .map(|j| {
            let mut counts = vec![0usize; bins];
            for ind in population {
                let x = ind.delta.as_slice()[j];
                let k = if eps > 0.0 {
                    (((x + eps) / (2.0 * eps)) * bins as f64)
                        .floor()
                        .clamp(0.0, (bins - 1) as f64) as usize
                } else {
                    0
                };
                counts[k] += 1;
            }
            ActuatorBins {
                label: labels[j].clone(),
                edges: edges.clone(),
                counts,
            }
        })
        .collect();
    Ok(ActuatorHistogram { eps, actuators })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::TorquePerturbation;

    #[test]
    fn quantiles_interpolate() {
        let s = BoxStats::from_rewards(0.1, &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.n_episodes, 4);
        let one = BoxStats::from_rewards(0.0, &[7.0]).unwrap();
        assert_eq!(
            (one.min, one.q1, one.median, one.q3, one.max),
            (7.0, 7.0, 7.0, 7.0, 7.0)
        );
        assert!(BoxStats::from_rewards(0.0, &[]).is_err());
    }

    #[test]
    fn identical_population_fills_one_bin() {
        let ind = Individual {
            delta: TorquePerturbation::new(vec![0.12, -0.5, 0.5], 0.5).unwrap(),
            fitness: 1.0,
        };
        let pop = vec![ind; 120];
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let h = actuator_histogram(&pop, 0.5, 10, &labels).unwrap();
        for a in &h.actuators {
            assert_eq!(a.counts.iter().filter(|&&c| c > 0).count(), 1);
            assert_eq!(a.counts.iter().sum::<usize>(), 120);
            assert_eq!(a.edges.first(), Some(&-0.5));
            assert_eq!(a.edges.last(), Some(&0.5));
        }
        assert_eq!(h.actuators[1].counts[0], 120);
        assert_eq!(h.actuators[2].counts[9], 120);
        assert!(h.to_csv().starts_with("actuator,bin_lo,bin_hi,count\na,-0.5,-0.4,0\n"));
    }

    #[test]
    fn empty_population_is_rejected() {
        assert!(matches!(
            actuator_histogram(&[], 0.5, 4, &[]),
            Err(AttackError::Argument(_))
        ));
    }
}
