use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Cohort, CohortError, IndividualRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
            Subset::Test => "test",
        })
    }
}

impl std::str::FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Subset::Train),
            "validation" | "val" => Ok(Subset::Validation),
            "test" => Ok(Subset::Test),
            other => Err(format!("unknown subset {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    Random,
    Time,
    Site,
}

/// Individual → subset map. Samples inherit their individual's subset, so
/// recordings of one person never straddle two sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub strategy: SplitStrategy,
    pub params: Value,
    pub assignment: BTreeMap<String, Subset>,
}

impl SplitAssignment {
    pub fn subset_of(&self, individual_id: &str) -> Option<Subset> {
        self.assignment.get(individual_id).copied()
    }

    /// Members of `subset`, in cohort order.
    pub fn members<'a>(&self, cohort: &'a Cohort, subset: Subset) -> Vec<&'a IndividualRecord> {
        cohort
            .records
            .iter()
            .filter(|r| self.subset_of(&r.individual_id) == Some(subset))
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for s in self.assignment.values() {
            sizes[*s as usize] += 1;
        }
        sizes
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("assignment serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CohortError> {
        serde_json::from_str(text).map_err(|e| CohortError::Split(format!("bad assignment file: {e}")))
    }
}

/// Largest-remainder apportionment of `n` items by `ratios`.
pub(crate) fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    // Nudge so that 0.8 · 4260 lands on 3408 rather than 3407.999….
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn shuffled_ids<'a>(records: impl Iterator<Item = &'a IndividualRecord>, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = records.map(|r| r.individual_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

pub fn split_random(cohort: &Cohort, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, CohortError> {
    if cohort.len() < 3 {
        return Err(CohortError::Split(format!(
            "random split needs at least 3 individuals, got {}",
            cohort.len()
        )));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CohortError::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let sizes = largest_remainder(cohort.len(), &ratios);
    let ids = shuffled_ids(cohort.records.iter(), seed);
    let mut assignment = BTreeMap::new();
    let subsets = [Subset::Train, Subset::Validation, Subset::Test];
    let mut it = ids.into_iter();
    for (subset, size) in subsets.iter().zip(sizes) {
        for id in it.by_ref().take(size) {
            assignment.insert(id, *subset);
        }
    }
    Ok(SplitAssignment {
        strategy: SplitStrategy::Random,
        params: json!({ "ratios": ratios, "seed": seed }),
        assignment,
    })
}

/// Train: date < `cutoff_val`; validation: `[cutoff_val, cutoff_test)`; test: ≥ `cutoff_test`.
pub fn split_time(cohort: &Cohort, cutoff_val: NaiveDate, cutoff_test: NaiveDate) -> Result<SplitAssignment, CohortError> {
    if cutoff_val >= cutoff_test {
        return Err(CohortError::Split(format!(
            "validation cutoff {cutoff_val} must precede test cutoff {cutoff_test}"
        )));
    }
    let assignment: BTreeMap<String, Subset> = cohort
        .records
        .iter()
        .map(|r| {
            let d = r.enrollment_date;
            let s = if d < cutoff_val {
                Subset::Train
            } else if d < cutoff_test {
                Subset::Validation
            } else {
                Subset::Test
            };
            (r.individual_id.clone(), s)
        })
        .collect();
    let split = SplitAssignment {
        strategy: SplitStrategy::Time,
        params: json!({ "cutoff_val": cutoff_val.to_string(), "cutoff_test": cutoff_test.to_string() }),
        assignment,
    };
    for (subset, size) in [Subset::Train, Subset::Validation, Subset::Test].iter().zip(split.sizes()) {
        if size == 0 {
            return Err(CohortError::Split(format!("time split leaves the {subset} set empty")));
        }
    }
    Ok(split)
}

/// Cutoff dates placing roughly `val_fraction` and `test_fraction` of the
/// individuals (by enrollment-date quantile) in the validation and test tails.
pub fn auto_time_cutoffs(cohort: &Cohort, val_fraction: f64, test_fraction: f64) -> Result<(NaiveDate, NaiveDate), CohortError> {
    let n = cohort.len();
    if n < 3 {
        return Err(CohortError::Split("need at least 3 individuals".into()));
    }
    let mut dates: Vec<NaiveDate> = cohort.records.iter().map(|r| r.enrollment_date).collect();
    dates.sort();
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 2);
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1 - n_test);
    Ok((dates[n - n_test - n_val], dates[n - n_test]))
}

/// Test = individuals at `test_sites`; everyone else is split randomly into
/// train/validation with `val_fraction` going to validation.
pub fn split_site(
    cohort: &Cohort,
    test_sites: &BTreeSet<String>,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, CohortError> {
    if test_sites.is_empty() {
        return Err(CohortError::Split("no test sites given".into()));
    }
    let present: BTreeSet<&str> = cohort.records.iter().map(|r| r.site_id.as_str()).collect();
    if let Some(missing) = test_sites.iter().find(|s| !present.contains(s.as_str())) {
        return Err(CohortError::Split(format!("test site {missing:?} not in cohort")));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CohortError::Split(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    let (test, rest): (Vec<&IndividualRecord>, Vec<&IndividualRecord>) =
        cohort.records.iter().partition(|r| test_sites.contains(&r.site_id));
    if rest.is_empty() {
        return Err(CohortError::Split("test sites cover every individual".into()));
    }
    let sizes = largest_remainder(rest.len(), &[1.0 - val_fraction, val_fraction]);
    let ids = shuffled_ids(rest.into_iter(), seed);
    let mut assignment: BTreeMap<String, Subset> = test
        .iter()
        .map(|r| (r.individual_id.clone(), Subset::Test))
        .collect();
    for (i, id) in ids.into_iter().enumerate() {
        let s = if i < sizes[0] { Subset::Train } else { Subset::Validation };
        assignment.insert(id, s);
    }
    Ok(SplitAssignment {
        strategy: SplitStrategy::Site,
        params: json!({ "test_sites": test_sites, "val_fraction": val_fraction, "seed": seed }),
        assignment,
    })
}

/// Picks sites, largest first, until they hold at least `target_fraction` of
/// individuals; a site is skipped when it would push the total past
/// `1.25 · target_fraction`.
pub fn greedy_site_selection(cohort: &Cohort, target_fraction: f64) -> BTreeSet<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &cohort.records {
        *counts.entry(r.site_id.as_str()).or_default() += 1;
    }
    let mut sites: Vec<(&str, usize)> = counts.into_iter().collect();
    sites.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let n = cohort.len() as f64;
    let target = target_fraction * n;
    let ceiling = 1.25 * target;
    let mut chosen = BTreeSet::new();
    let mut total = 0usize;
    for &(site, count) in &sites {
        if total as f64 >= target {
            break;
        }
        if (total + count) as f64 <= ceiling {
            chosen.insert(site.to_string());
            total += count;
        }
    }
    if chosen.is_empty() {
        if let Some(&(site, _)) = sites.last() {
            chosen.insert(site.to_string());
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ContextRecord, Label};
    use std::path::PathBuf;

    fn cohort_with(n: usize, site: impl Fn(usize) -> String, day: impl Fn(usize) -> u32) -> Cohort {
        let records = (0..n)
            .map(|i| IndividualRecord {
                individual_id: format!("id{i:04}"),
                cough_sample_paths: vec![PathBuf::from(format!("{i}.wav"))],
                label: if i % 3 == 0 { Label::Positive } else { Label::Negative },
                site_id: site(i),
                enrollment_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(day(i) as u64),
                context: ContextRecord::default(),
            })
            .collect();
        Cohort::new(records, ".").unwrap()
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(4260, &[0.8, 0.1, 0.1]), vec![3408, 426, 426]);
        assert_eq!(largest_remainder(10, &[0.8, 0.1, 0.1]), vec![8, 1, 1]);
        assert_eq!(largest_remainder(7, &[0.8, 0.1, 0.1]), vec![5, 1, 1]);
        for n in 3..300 {
            let c = largest_remainder(n, &[0.8, 0.1, 0.1]);
            assert_eq!(c.iter().sum::<usize>(), n);
            for (k, r) in c.iter().zip([0.8, 0.1, 0.1]) {
                assert!((*k as f64 - r * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn random_split_is_seeded() {
        let c = cohort_with(4260, |i| format!("s{}", i % 7), |i| i as u32);
        let a = split_random(&c, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(a.sizes(), [3408, 426, 426]);
        assert_eq!(a, split_random(&c, [0.8, 0.1, 0.1], 7).unwrap());
        assert_ne!(a, split_random(&c, [0.8, 0.1, 0.1], 8).unwrap());
        let small = cohort_with(2, |_| "s".into(), |i| i as u32);
        assert!(split_random(&small, [0.8, 0.1, 0.1], 0).is_err());
        assert!(split_random(&c, [0.8, 0.1, 0.2], 0).is_err());
    }

    #[test]
    fn time_split_intervals() {
        let c = cohort_with(3, |_| "s".into(), |i| i as u32);
        let d = |k| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(k);
        let a = split_time(&c, d(1), d(2)).unwrap();
        assert_eq!(a.subset_of("id0000"), Some(Subset::Train));
        assert_eq!(a.subset_of("id0001"), Some(Subset::Validation));
        assert_eq!(a.subset_of("id0002"), Some(Subset::Test));
        assert!(split_time(&c, d(2), d(1)).is_err());

        let same_day = cohort_with(5, |_| "s".into(), |_| 0);
        let (v, t) = (d(0), d(1));
        assert!(split_time(&same_day, v, t).is_err());
    }

    #[test]
    fn auto_cutoffs_hit_ten_percent_tails() {
        let c = cohort_with(500, |_| "s".into(), |i| (i * 37 % 500) as u32);
        let (v, t) = auto_time_cutoffs(&c, 0.1, 0.1).unwrap();
        let a = split_time(&c, v, t).unwrap();
        let [_, val, test] = a.sizes();
        assert!((val as i64 - 50).abs() <= 2 && (test as i64 - 50).abs() <= 2);
    }

    #[test]
    fn site_split() {
        let c = cohort_with(100, |i| format!("s{}", i % 10), |i| i as u32);
        let sites: BTreeSet<String> = ["s0", "s1"].iter().map(|s| s.to_string()).collect();
        let a = split_site(&c, &sites, 0.1, 3).unwrap();
        let [train, val, test] = a.sizes();
        assert_eq!(test, 20);
        assert_eq!((train, val), (72, 8));
        for r in &c.records {
            let in_test = a.subset_of(&r.individual_id) == Some(Subset::Test);
            assert_eq!(in_test, sites.contains(&r.site_id));
        }
        let single = cohort_with(11, |i| if i == 0 { "solo".into() } else { "big".into() }, |i| i as u32);
        let only: BTreeSet<String> = ["solo".to_string()].into();
        assert_eq!(split_site(&single, &only, 0.1, 0).unwrap().sizes()[2], 1);
        let all: BTreeSet<String> = ["solo".to_string(), "big".to_string()].into();
        assert!(split_site(&single, &all, 0.1, 0).is_err());
        let ghost: BTreeSet<String> = ["nowhere".to_string()].into();
        assert!(split_site(&single, &ghost, 0.1, 0).is_err());
    }

    #[test]
    fn greedy_selection_lands_near_target() {
        // Site sizes 30, 25, 20, ... decreasing; 20% of the total must be reachable.
        let sizes = [30usize, 25, 20, 18, 15, 12, 10, 9, 8, 7, 5, 4, 3, 2, 2];
        let mut owner = Vec::new();
        for (s, &k) in sizes.iter().enumerate() {
            owner.extend(std::iter::repeat_n(s, k));
        }
        let c = cohort_with(owner.len(), |i| format!("site{:02}", owner[i]), |i| i as u32);
        let chosen = greedy_site_selection(&c, 0.2);
        let covered = c.records.iter().filter(|r| chosen.contains(&r.site_id)).count();
        let frac = covered as f64 / c.len() as f64;
        assert!((0.15..=0.25).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn assignment_json_round_trip() {
        let c = cohort_with(20, |i| format!("s{}", i % 4), |i| i as u32);
        let a = split_random(&c, [0.8, 0.1, 0.1], 1).unwrap();
        let back = SplitAssignment::from_json(&a.to_json()).unwrap();
        assert_eq!(a, back);
        assert!(a.to_json().contains("\"strategy\": \"random\""));
    }
}
