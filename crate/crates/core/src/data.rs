//! Right-censored two-sample survival data: ingestion, order statistics,
//! exact/censored count arrays, at-risk processes, and a reference
//! Kaplan-Meier estimator.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::Group;

/// One right-censored observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Observed time `min(Y, C)`; must be positive and finite.
    pub time: f64,
    /// `true` when the event was observed exactly, `false` when censored.
    pub event: bool,
    pub group: Group,
}

impl Observation {
    pub fn new(time: f64, event: bool, group: Group) -> Result<Self> {
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::domain(format!(
                "observation times must be positive and finite, got {time}"
            )));
        }
        Ok(Self { time, event, group })
    }
}

/// Reverse-cumulative counts and at-risk values at a query time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountsAt {
    /// `n̄^(e)`: exact observations at or after the query's partition time.
    pub exact_rev: [u64; 2],
    /// `n̄^(c)`: censored observations at or after the query's partition time.
    pub censored_rev: [u64; 2],
    /// `R_j(t) = #{observations in group j with time >= t}`.
    pub at_risk: [u64; 2],
}

/// Immutable two-sample dataset with derived count structures.
///
/// Distinct sorted times `T_1 < ... < T_k` carry per-group exact and
/// censored counts; ties within and across groups aggregate. The sentinels
/// `T_0 = 0` and `T_{k+1} = inf` (zero counts) are implicit in the queries.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    observations: Vec<Observation>,
    times: Vec<f64>,
    exact: Vec<[u64; 2]>,
    censored: Vec<[u64; 2]>,
    exact_rev: Vec<[u64; 2]>,
    censored_rev: Vec<[u64; 2]>,
    n: [u64; 2],
}

impl SurvivalDataset {
    /// Builds the derived count arrays. Empty datasets are allowed (the
    /// posterior then reduces to the prior); CSV ingestion is stricter.
    pub fn new(mut observations: Vec<Observation>) -> Result<Self> {
        observations.sort_by(|a, b| {
            a.time
                .partial_cmp(&b.time)
                .unwrap()
                .then(a.group.index().cmp(&b.group.index()))
                .then(a.event.cmp(&b.event))
        });
        let mut times: Vec<f64> = Vec::new();
        let mut exact: Vec<[u64; 2]> = Vec::new();
        let mut censored: Vec<[u64; 2]> = Vec::new();
        let mut n = [0u64; 2];
        for obs in &observations {
            n[obs.group.index()] += 1;
            if times.last() != Some(&obs.time) {
                times.push(obs.time);
                exact.push([0, 0]);
                censored.push([0, 0]);
            }
            let slot = if obs.event { &mut exact } else { &mut censored };
            slot.last_mut().unwrap()[obs.group.index()] += 1;
        }
        let mut exact_rev = exact.clone();
        let mut censored_rev = censored.clone();
        for i in (0..times.len().saturating_sub(1)).rev() {
            for j in 0..2 {
                exact_rev[i][j] += exact_rev[i + 1][j];
                censored_rev[i][j] += censored_rev[i + 1][j];
            }
        }
        Ok(Self { observations, times, exact, censored, exact_rev, censored_rev, n })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Parses `time,event,group` rows; `event` is 0 (censored) or 1 (exact),
    /// `group` is 1 or 2. Errors carry the offending line number. Both
    /// groups must be nonempty.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::CsvParse { line: 1, message: e.to_string() })?
            .clone();
        let col = |name: &str| -> Result<usize> {
            headers.iter().position(|h| h.eq_ignore_ascii_case(name)).ok_or_else(|| {
                Error::CsvParse { line: 1, message: format!("missing column `{name}`") }
            })
        };
        let (time_col, event_col, group_col) = (col("time")?, col("event")?, col("group")?);

        let mut observations = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::CsvParse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |idx: usize| -> Result<&str> {
                record.get(idx).ok_or_else(|| Error::CsvParse {
                    line,
                    message: format!("row has {} fields, expected at least {}", record.len(), idx + 1),
                })
            };
            let time: f64 = field(time_col)?.parse().map_err(|e| Error::CsvParse {
                line,
                message: format!("bad time: {e}"),
            })?;
            let event: u8 = field(event_col)?.parse().map_err(|e| Error::CsvParse {
                line,
                message: format!("bad event flag: {e}"),
            })?;
            if event > 1 {
                return Err(Error::CsvParse {
                    line,
                    message: format!("event must be 0 or 1, got {event}"),
                });
            }
            let group: u8 = field(group_col)?.parse().map_err(|e| Error::CsvParse {
                line,
                message: format!("bad group: {e}"),
            })?;
            let group = Group::from_label(group)
                .map_err(|e| Error::CsvParse { line, message: e.to_string() })?;
            observations.push(
                Observation::new(time, event == 1, group)
                    .map_err(|e| Error::CsvParse { line, message: e.to_string() })?,
            );
        }
        let data = Self::new(observations)?;
        for g in Group::BOTH {
            if data.n[g.index()] == 0 {
                return Err(Error::EmptyGroup(g.label()));
            }
        }
        Ok(data)
    }

    pub fn write_csv(&self, mut writer: impl std::io::Write) -> Result<()> {
        writeln!(writer, "time,event,group")?;
        for obs in &self.observations {
            writeln!(writer, "{},{},{}", obs.time, obs.event as u8, obs.group.label())?;
        }
        Ok(())
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Distinct sorted observation times `T_1 < ... < T_k`.
    pub fn distinct_times(&self) -> &[f64] {
        &self.times
    }

    pub fn group_sizes(&self) -> [u64; 2] {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn max_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Exact counts `n^(e)_{i,j}` at distinct time index `i`.
    pub fn exact_counts(&self, i: usize) -> [u64; 2] {
        self.exact[i]
    }

    /// Censored counts `n^(c)_{i,j}` at distinct time index `i`.
    pub fn censored_counts(&self, i: usize) -> [u64; 2] {
        self.censored[i]
    }

    /// Distinct times with at least one exact observation, with their
    /// per-group exact counts.
    pub fn exact_sites(&self) -> impl Iterator<Item = (f64, [u64; 2])> + '_ {
        self.times
            .iter()
            .zip(self.exact.iter())
            .filter(|(_, c)| c[0] + c[1] > 0)
            .map(|(&t, &c)| (t, c))
    }

    fn first_index_at_or_after(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x < t)
    }

    /// `R_j(t) = #{observations in group j with time >= t}`.
    pub fn at_risk(&self, t: f64) -> [u64; 2] {
        if t <= 0.0 {
            return self.n;
        }
        match self.first_index_at_or_after(t) {
            i if i >= self.times.len() => [0, 0],
            i => [
                self.exact_rev[i][0] + self.censored_rev[i][0],
                self.exact_rev[i][1] + self.censored_rev[i][1],
            ],
        }
    }

    /// `#{observations in group j with time > s}`; the at-risk value on any
    /// interval `(s, next breakpoint]`.
    pub fn at_risk_after(&self, s: f64) -> [u64; 2] {
        match self.times.partition_point(|&x| x <= s) {
            i if i >= self.times.len() => [0, 0],
            i => [
                self.exact_rev[i][0] + self.censored_rev[i][0],
                self.exact_rev[i][1] + self.censored_rev[i][1],
            ],
        }
    }

    /// Reverse-cumulative counts for the partition interval containing `t`,
    /// plus the at-risk values `R_j(t)`.
    pub fn counts_at(&self, t: f64) -> CountsAt {
        let i = self.first_index_at_or_after(t.max(0.0));
        let (exact_rev, censored_rev) = if i >= self.times.len() {
            ([0, 0], [0, 0])
        } else {
            (self.exact_rev[i], self.censored_rev[i])
        };
        CountsAt { exact_rev, censored_rev, at_risk: self.at_risk(t) }
    }

    /// Product-limit estimator for one group.
    pub fn kaplan_meier(&self, group: Group) -> KmCurve {
        let g = group.index();
        let mut times = Vec::new();
        let mut survival = Vec::new();
        let mut s = 1.0;
        for (i, &t) in self.times.iter().enumerate() {
            let d = self.exact[i][g];
            if d == 0 {
                continue;
            }
            let r = self.exact_rev[i][g] + self.censored_rev[i][g];
            s *= 1.0 - d as f64 / r as f64;
            times.push(t);
            survival.push(s);
        }
        KmCurve { group, times, survival }
    }

    /// Order-statistic quantile of the pooled observed times
    /// (`q = 1` returns the maximum).
    pub fn pooled_quantile(&self, q: f64) -> Result<f64> {
        if !(0.0 < q && q <= 1.0) {
            return Err(Error::domain(format!("quantile level must be in (0, 1], got {q}")));
        }
        let mut pooled: Vec<f64> =
            self.observations.iter().map(|o| o.time).collect();
        if pooled.is_empty() {
            return Err(Error::domain("cannot take quantiles of an empty dataset".to_string()));
        }
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((q * pooled.len() as f64).ceil() as usize).clamp(1, pooled.len()) - 1;
        Ok(pooled[idx])
    }
}

/// Kaplan-Meier step function: survival drops at each distinct exact time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub group: Group,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

impl KmCurve {
    /// Right-continuous evaluation; 1 before the first drop.
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// `int_0^t S(u) du` computed exactly on the step function.
    pub fn restricted_mean(&self, t: f64) -> f64 {
        self.restricted_moment(t, 1)
    }

    /// `k int_0^t S(u) u^{k-1} du` computed exactly on the step function.
    pub fn restricted_moment(&self, t: f64, k: u32) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0f64;
        let mut s = 1.0;
        for (&jump, &value) in self.times.iter().zip(&self.survival) {
            if jump >= t {
                break;
            }
            acc += s * (jump.powi(k as i32) - prev.powi(k as i32));
            prev = jump;
            s = value;
        }
        acc + s * (t.powi(k as i32) - prev.powi(k as i32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(time: f64, event: bool, group: u8) -> Observation {
        Observation::new(time, event, Group::from_label(group).unwrap()).unwrap()
    }

    #[test]
    fn counts_and_at_risk_small_dataset() {
        let data =
            SurvivalDataset::new(vec![obs(2.0, true, 1), obs(3.0, false, 2)]).unwrap();
        assert_eq!(data.distinct_times(), &[2.0, 3.0]);
        assert_eq!(data.exact_counts(0), [1, 0]);
        assert_eq!(data.censored_counts(1), [0, 1]);
        assert_eq!(data.at_risk(2.0), [1, 1]);
        assert_eq!(data.at_risk(2.5), [0, 1]);
        assert_eq!(data.at_risk(0.0), [1, 1]);
        assert_eq!(data.at_risk(100.0), [0, 0]);
        assert_eq!(data.counts_at(10.0), CountsAt {
            exact_rev: [0, 0],
            censored_rev: [0, 0],
            at_risk: [0, 0]
        });
    }

    #[test]
    fn ties_aggregate() {
        let data = SurvivalDataset::new(vec![
            obs(2.0, true, 1),
            obs(2.0, true, 1),
            obs(2.0, false, 2),
        ])
        .unwrap();
        assert_eq!(data.distinct_times().len(), 1);
        assert_eq!(data.exact_counts(0), [2, 0]);
        assert_eq!(data.censored_counts(0), [0, 1]);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let csv = "time,event,group\n2.0,1,1\n3.0,0,2\n";
        let data = SurvivalDataset::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(data.group_sizes(), [1, 1]);
        let mut out = Vec::new();
        data.write_csv(&mut out).unwrap();
        let back = SurvivalDataset::from_csv_reader(out.as_slice()).unwrap();
        assert_eq!(back, data);

        // Empty file: no header at all.
        assert!(SurvivalDataset::from_csv_reader("".as_bytes()).is_err());
        // Header only: group 1 empty.
        match SurvivalDataset::from_csv_reader("time,event,group\n".as_bytes()) {
            Err(Error::EmptyGroup(1)) => {}
            other => panic!("expected EmptyGroup, got {other:?}"),
        }
        // Bad rows carry line numbers.
        match SurvivalDataset::from_csv_reader("time,event,group\n1.0,1,1\n-2,1,2\n".as_bytes()) {
            Err(Error::CsvParse { line: 3, .. }) => {}
            other => panic!("expected line-3 parse error, got {other:?}"),
        }
        match SurvivalDataset::from_csv_reader("time,event,group\n1.0,7,1\n".as_bytes()) {
            Err(Error::CsvParse { line: 2, .. }) => {}
            other => panic!("expected line-2 parse error, got {other:?}"),
        }
    }

    #[test]
    fn km_all_censored_is_flat() {
        let data =
            SurvivalDataset::new(vec![obs(1.0, false, 1), obs(2.0, false, 1)]).unwrap();
        let km = data.kaplan_meier(Group::One);
        assert!(km.times.is_empty());
        assert_eq!(km.eval(5.0), 1.0);
    }

    #[test]
    fn km_single_exact_drops_to_zero() {
        let data = SurvivalDataset::new(vec![obs(1.5, true, 1)]).unwrap();
        let km = data.kaplan_meier(Group::One);
        assert_eq!(km.eval(1.4), 1.0);
        assert_eq!(km.eval(1.5), 0.0);
    }

    #[test]
    fn km_hand_computed_five_points() {
        // Group 1: exact 1, exact 2, censored 3, exact 4, censored 5.
        // S(1) = 4/5, S(2) = 4/5 * 3/4 = 3/5, S(4) = 3/5 * 1/2 = 3/10.
        let data = SurvivalDataset::new(vec![
            obs(1.0, true, 1),
            obs(2.0, true, 1),
            obs(3.0, false, 1),
            obs(4.0, true, 1),
            obs(5.0, false, 1),
        ])
        .unwrap();
        let km = data.kaplan_meier(Group::One);
        assert_eq!(km.times, vec![1.0, 2.0, 4.0]);
        let want = [0.8, 0.6, 0.3];
        for (got, want) in km.survival.iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
        // Exact step-function integral: 1*1 + 0.8*1 + 0.6*2 + 0.3*(6-4).
        assert!((km.restricted_mean(6.0) - (1.0 + 0.8 + 1.2 + 0.6)).abs() < 1e-12);
    }

    #[test]
    fn km_invariant_to_input_order() {
        let rows = vec![
            obs(1.0, true, 1),
            obs(2.5, false, 1),
            obs(2.5, true, 1),
            obs(0.7, true, 2),
            obs(4.0, true, 1),
        ];
        let mut rev = rows.clone();
        rev.reverse();
        let a = SurvivalDataset::new(rows).unwrap();
        let b = SurvivalDataset::new(rev).unwrap();
        assert_eq!(a.kaplan_meier(Group::One), b.kaplan_meier(Group::One));
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_quantiles() {
        let data = SurvivalDataset::new(vec![
            obs(1.0, true, 1),
            obs(2.0, true, 1),
            obs(3.0, true, 2),
            obs(4.0, false, 2),
        ])
        .unwrap();
        assert_eq!(data.pooled_quantile(0.25).unwrap(), 1.0);
        assert_eq!(data.pooled_quantile(0.5).unwrap(), 2.0);
        assert_eq!(data.pooled_quantile(1.0).unwrap(), 4.0);
        assert!(data.pooled_quantile(0.0).is_err());
    }
}
