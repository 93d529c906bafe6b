use serde::{Deserialize, Serialize};

use super::{CohortError, ContextRecord, CATEGORICAL_FIELDS, CONTINUOUS_FIELDS};

/// Encoded context features (`x_context`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStat {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// False when the training values were constant (or absent).
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalTable {
    pub name: String,
    /// Category label for each code, in code order; `labels.len()` is the
    /// reserved unknown code.
    pub labels: Vec<String>,
    /// Training frequency of each code, unknown code last.
    pub marginals: Vec<f64>,
    /// Label imputed for missing answers.
    pub impute: String,
}

impl CategoricalTable {
    pub fn unknown_code(&self) -> usize {
        self.labels.len()
    }

    pub fn code(&self, label: &str) -> usize {
        self.labels
            .iter()
            .position(|l| l == label)
            .unwrap_or(self.unknown_code())
    }
}

/// Fitted on training records only; encoding never mutates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub continuous: Vec<ContinuousStat>,
    pub categorical: Vec<CategoricalTable>,
}

impl EncoderState {
    pub fn dim(&self) -> usize {
        self.continuous.iter().filter(|c| c.kept).count() + self.categorical.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.continuous
            .iter()
            .filter(|c| c.kept)
            .map(|c| c.name.clone())
            .chain(self.categorical.iter().map(|c| c.name.clone()))
            .collect()
    }

    pub fn dropped(&self) -> Vec<&str> {
        self.continuous
            .iter()
            .filter(|c| !c.kept)
            .map(|c| c.name.as_str())
            .collect()
    }

    /// Indices of the categorical entries within an encoded vector.
    pub fn categorical_range(&self) -> std::ops::Range<usize> {
        let start = self.continuous.iter().filter(|c| c.kept).count();
        start..start + self.categorical.len()
    }
}

fn canonical_domain(field: &str) -> &'static [&'static str] {
    match field {
        "travel_history" => &["No", "InterDistrict", "InterState", "InterCountry"],
        _ => &["no", "yes"],
    }
}

fn is_symptom_flag(field: &str) -> bool {
    matches!(field, "has_cough" | "has_sob" | "has_fever")
}

pub fn fit_context_encoder(train: &[ContextRecord]) -> Result<EncoderState, CohortError> {
    if train.is_empty() {
        return Err(CohortError::Encoder("cannot fit encoder on an empty training set".into()));
    }
    let continuous = CONTINUOUS_FIELDS
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let vals: Vec<f64> = train.iter().filter_map(|r| r.continuous()[j]).collect();
            if vals.is_empty() {
                return ContinuousStat {
                    name: name.to_string(),
                    mean: 0.0,
                    std: 0.0,
                    kept: false,
                };
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            ContinuousStat {
                name: name.to_string(),
                mean,
                std,
                kept: std > 0.0,
            }
        })
        .collect();

    let categorical = CATEGORICAL_FIELDS
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let domain = canonical_domain(name);
            let observed: Vec<&str> = train.iter().filter_map(|r| r.categorical()[j]).collect();
            let labels: Vec<String> = domain
                .iter()
                .filter(|d| observed.contains(d))
                .map(|d| d.to_string())
                .collect();
            let impute = if is_symptom_flag(name) {
                "no".to_string()
            } else {
                // Training mode; ties resolve to the earlier canonical label.
                domain
                    .iter()
                    .max_by_key(|d| (observed.iter().filter(|o| o == d).count(), std::cmp::Reverse(domain.iter().position(|x| x == *d))))
                    .map(|d| d.to_string())
                    .unwrap_or_else(|| domain[0].to_string())
            };
            let mut table = CategoricalTable {
                name: name.to_string(),
                labels,
                marginals: Vec::new(),
                impute,
            };
            let mut counts = vec![0.0; table.labels.len() + 1];
            for r in train {
                let label = r.categorical()[j].unwrap_or(table.impute.as_str()).to_string();
                counts[table.code(&label)] += 1.0;
            }
            table.marginals = counts.iter().map(|c| c / train.len() as f64).collect();
            table
        })
        .collect();

    Ok(EncoderState {
        continuous,
        categorical,
    })
}

pub fn encode_context(r: &ContextRecord, e: &EncoderState) -> FeatureVector {
    let mut out = Vec::with_capacity(e.dim());
    for (stat, value) in e.continuous.iter().zip(r.continuous()) {
        if stat.kept {
            out.push((value.unwrap_or(stat.mean) - stat.mean) / stat.std);
        }
    }
    for (table, value) in e.categorical.iter().zip(r.categorical()) {
        let label = value.unwrap_or(table.impute.as_str());
        out.push(table.code(label) as f64);
    }
    FeatureVector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::TravelHistory;

    fn rec(age: f64, temp: f64, travel: TravelHistory, fever: bool) -> ContextRecord {
        ContextRecord {
            age: Some(age),
            temperature: Some(temp),
            days_cough: Some(age / 10.0),
            days_sob: Some(1.0),
            days_fever: Some(temp - 97.0),
            has_cough: Some(true),
            has_sob: Some(false),
            has_fever: Some(fever),
            contact_confirmed: Some(false),
            is_health_worker: Some(false),
            travel_history: Some(travel),
        }
    }

    #[test]
    fn population_mean_and_std() {
        let train: Vec<_> = [20.0, 30.0, 40.0]
            .iter()
            .map(|&a| rec(a, 98.0 + a / 20.0, TravelHistory::No, false))
            .collect();
        let e = fit_context_encoder(&train).unwrap();
        let age = &e.continuous[0];
        assert_eq!(age.mean, 30.0);
        let oracle = ((100.0 + 0.0 + 100.0) / 3.0f64).sqrt();
        assert!((age.std - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_dropped() {
        let train: Vec<_> = [20.0, 30.0].iter().map(|&a| rec(a, 99.0, TravelHistory::No, false)).collect();
        let e = fit_context_encoder(&train).unwrap();
        // days_sob is constant 1.0; temperature and days_fever constant too.
        assert_eq!(e.dropped(), vec!["temperature", "days_sob", "days_fever"]);
        assert_eq!(e.dim(), 2 + 6);
        assert_eq!(encode_context(&train[0], &e).len(), e.dim());
    }

    #[test]
    fn travel_codes_and_unknown() {
        let train: Vec<_> = TravelHistory::ALL
            .iter()
            .enumerate()
            .map(|(i, &t)| rec(20.0 + i as f64, 98.0 + i as f64, t, i % 2 == 0))
            .collect();
        let e = fit_context_encoder(&train).unwrap();
        let travel = e.categorical.iter().find(|c| c.name == "travel_history").unwrap();
        assert_eq!(travel.labels, vec!["No", "InterDistrict", "InterState", "InterCountry"]);
        assert_eq!(travel.unknown_code(), 4);
        assert_eq!(travel.code("InterState"), 2);

        // A category never seen in training gets the reserved code.
        let partial = fit_context_encoder(&train[..2]).unwrap();
        let v = encode_context(&train[3], &partial);
        let idx = partial.categorical_range().end - 1;
        assert_eq!(v.0[idx], 2.0);
    }

    #[test]
    fn train_mean_record_encodes_to_zero() {
        let mut train: Vec<_> = [20.0, 30.0, 40.0]
            .iter()
            .map(|&a| rec(a, 98.0 + a / 10.0, TravelHistory::No, false))
            .collect();
        train[1].has_cough = Some(false);
        let e = fit_context_encoder(&train).unwrap();
        let mut mean_rec = rec(30.0, 101.0, TravelHistory::No, false);
        mean_rec.has_cough = Some(false);
        mean_rec.days_cough = Some(3.0);
        mean_rec.days_fever = Some(4.0);
        let v = encode_context(&mean_rec, &e);
        let k = e.categorical_range().start;
        assert!(v.0[..k].iter().all(|x| x.abs() < 1e-12), "{v:?}");
        // all-"No" answers map to code 0 for every categorical
        assert!(v.0[k..].iter().all(|&x| x == 0.0), "{v:?}");
    }

    #[test]
    fn missing_values_are_imputed() {
        let train: Vec<_> = [20.0, 40.0].iter().map(|&a| rec(a, 98.0 + a / 10.0, TravelHistory::InterState, true)).collect();
        let e = fit_context_encoder(&train).unwrap();
        let v = encode_context(&ContextRecord::default(), &e);
        let k = e.categorical_range().start;
        assert!(v.0[..k].iter().all(|&x| x == 0.0));
        // symptom flags default to "no", which training never saw → unknown code
        let fever = &e.categorical[2];
        assert_eq!(v.0[k + 2], fever.unknown_code() as f64);
        // travel imputed with the training mode
        assert_eq!(v.0[k + 5], 0.0);
    }

    #[test]
    fn standardized_training_set_has_zero_mean_unit_std() {
        let train: Vec<_> = (0..50)
            .map(|i| rec(18.0 + (i * 7 % 60) as f64, 97.0 + (i % 9) as f64 * 0.4, TravelHistory::No, i % 3 == 0))
            .collect();
        let e = fit_context_encoder(&train).unwrap();
        let enc: Vec<FeatureVector> = train.iter().map(|r| encode_context(r, &e)).collect();
        for j in 0..e.categorical_range().start {
            let col: Vec<f64> = enc.iter().map(|v| v.0[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let s = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9, "feature {j}: {m} {s}");
        }
        let before = e.clone();
        let _ = encode_context(&rec(99.0, 104.0, TravelHistory::InterCountry, true), &e);
        assert_eq!(before, e);
    }

    #[test]
    fn empty_train_rejected() {
        assert!(fit_context_encoder(&[]).is_err());
    }
}
