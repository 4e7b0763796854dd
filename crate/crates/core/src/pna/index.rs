use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the distance between two phase offsets is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Shortest way round a cycle of length P.
    Periodic,
    /// Plain |i − j|, used for the aperiodic bucket.
    Absolute,
}

/// Distance between offsets `i` and `j` on a cycle of length `p`.
pub fn periodic_distance(i: usize, j: usize, p: usize) -> Result<usize> {
    if i >= p || j >= p {
        return Err(Error::invalid(format!(
            "offsets ({i}, {j}) out of range for period {p}"
        )));
    }
    let d = i.abs_diff(j);
    Ok(d.min(p - d))
}

/// Pairwise distances for one period, from which the closer and farther sets
/// of every (query, key) pair follow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulationIndex {
    period: usize,
    mode: DistanceMode,
    dist: Vec<usize>,
    levels: usize,
}

impl ModulationIndex {
    pub fn new(period: usize, mode: DistanceMode) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid(
                "modulation index needs a period of at least 1",
            ));
        }
        let mut dist = Vec::with_capacity(period * period);
        for m in 0..period {
            for s in 0..period {
                dist.push(match mode {
                    DistanceMode::Periodic => periodic_distance(m, s, period)?,
                    DistanceMode::Absolute => m.abs_diff(s),
                });
            }
        }
        let levels = dist.iter().max().map_or(1, |&d| d + 1);
        Ok(Self {
            period,
            mode,
            dist,
            levels,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn mode(&self) -> DistanceMode {
        self.mode
    }

    /// Number of distinct distance values, `max distance + 1`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn distance(&self, m: usize, s: usize) -> usize {
        self.dist[m * self.period + s]
    }

    /// Distances from query `m` to every key.
    pub fn row(&self, m: usize) -> &[usize] {
        &self.dist[m * self.period..(m + 1) * self.period]
    }

    /// Keys strictly closer to `m` than `n` is, together with `n` itself.
    pub fn closer(&self, m: usize, n: usize) -> Vec<usize> {
        let d = self.distance(m, n);
        (0..self.period)
            .filter(|&s| s == n || self.distance(m, s) < d)
            .collect()
    }

    /// Keys strictly farther from `m` than `n` is, together with `n` itself.
    pub fn farther(&self, m: usize, n: usize) -> Vec<usize> {
        let d = self.distance(m, n);
        (0..self.period)
            .filter(|&s| s == n || self.distance(m, s) > d)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert_eq!(periodic_distance(0, 12, 24).unwrap(), 12);
        assert_eq!(periodic_distance(0, 23, 24).unwrap(), 1);
        assert_eq!(periodic_distance(5, 5, 7).unwrap(), 0);
        assert!(matches!(
            periodic_distance(3, 0, 3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sets_for_period_two() {
        let ix = ModulationIndex::new(2, DistanceMode::Periodic).unwrap();
        assert_eq!(ix.closer(0, 1), vec![0, 1]);
        assert_eq!(ix.farther(0, 1), vec![1]);
        assert_eq!(ix.closer(0, 0), vec![0]);
        assert_eq!(ix.farther(0, 0), vec![0, 1]);
    }

    #[test]
    fn equal_distances_modulate_neither_side() {
        let ix = ModulationIndex::new(3, DistanceMode::Periodic).unwrap();
        assert_eq!(ix.distance(0, 1), ix.distance(0, 2));
        assert_eq!(ix.closer(0, 1), vec![0, 1]);
        assert!(!ix.farther(0, 1).contains(&2));
    }

    #[test]
    fn absolute_mode() {
        let ix = ModulationIndex::new(3, DistanceMode::Absolute).unwrap();
        assert_eq!(ix.closer(0, 2), vec![0, 1, 2]);
        assert_eq!(ix.levels(), 3);
        assert_eq!(ix.distance(2, 0), 2);
        let one = ModulationIndex::new(1, DistanceMode::Absolute).unwrap();
        assert_eq!(one.closer(0, 0), vec![0]);
        assert!(ModulationIndex::new(0, DistanceMode::Periodic).is_err());
    }
}
