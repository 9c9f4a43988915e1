//! Schema-conforming synthetic student records for tests and demos.
//!
//! Rows follow the bundled SAPData schema. A latent engagement score drives
//! absence days, the four behavioral counts and the parental answers; the
//! class is assigned by ranking a noisy combination of those observed
//! features, so the label is learnable from the behavioral and absence
//! columns while the section, stage, grade and semester columns are pure
//! noise. Class counts follow the 127 / 211 / 142 proportions of the real data.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ClassLabel, Dataset, Record, Schema, Value};
use crate::rng::rng_from_seed;

/// Class counts for `n` rows in the real data's L / M / H proportions.
pub fn class_quota(n: usize) -> [usize; 3] {
    let l = (n as f64 * 127.0 / 480.0).round() as usize;
    let h = (n as f64 * 142.0 / 480.0).round() as usize;
    [l, n - l - h, h]
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn count(mean: f64, rng: &mut impl rand::Rng) -> f64 {
    let noise = Normal::new(0.0, 12.0).expect("valid std");
    (mean + noise.sample(rng)).round().clamp(0.0, 100.0)
}

pub fn synthetic_sapdata(n: usize, seed: u64) -> Dataset {
    let schema = Schema::sapdata();
    let mut rng = rng_from_seed(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut rows: Vec<Record> = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = std_normal.sample(&mut rng);
        let under7 = rng.random::<f64>() < sigmoid(1.6 * a + 0.2);
        let raised = count(45.0 + 22.0 * a, &mut rng);
        let visited = count(55.0 + 25.0 * a, &mut rng);
        let announce = count(38.0 + 16.0 * a, &mut rng);
        let discussion = count(43.0 + 8.0 * a, &mut rng);
        let survey_yes = rng.random::<f64>() < sigmoid(0.9 * a + 0.3);
        let satisfied = rng.random::<f64>() < sigmoid(0.7 * a + 0.4);
        let mum = rng.random::<f64>() < sigmoid(0.6 * a - 0.4);
        let mut record = Vec::with_capacity(schema.len());
        for f in &schema.features {
            let cat = |c: bool| Value::Category(if c { 0 } else { 1 });
            let v = match f.name.as_str() {
                "raisedhands" => Value::Numeric(raised),
                "VisITedResources" => Value::Numeric(visited),
                "AnnouncementsView" => Value::Numeric(announce),
                "Discussion" => Value::Numeric(discussion),
                "StudentAbsenceDays" => cat(under7),
                "ParentAnsweringSurvey" => cat(survey_yes),
                "ParentschoolSatisfaction" => cat(satisfied),
                "Relation" => Value::Category(u16::from(mum)),
                _ => Value::Category(rng.random_range(0..f.categories.len()) as u16),
            };
            record.push(v);
        }
        let noise: f64 = std_normal.sample(&mut rng);
        let s = if under7 { 1.2 } else { -1.2 }
            + 0.025 * (raised - 45.0)
            + 0.02 * (visited - 55.0)
            + 0.012 * (announce - 38.0)
            + 0.006 * (discussion - 43.0)
            + if survey_yes { 0.3 } else { -0.3 }
            + 0.45 * noise;
        scores.push(s);
        rows.push(record);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let quota = class_quota(n);
    let mut labels = vec![ClassLabel::M; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = if rank < quota[0] {
            ClassLabel::L
        } else if rank < quota[0] + quota[1] {
            ClassLabel::M
        } else {
            ClassLabel::H
        };
    }
    Dataset::new(schema, rows, labels).expect("synthetic rows follow the schema")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::class_distribution;

    #[test]
    fn quota_matches_real_counts() {
        assert_eq!(class_quota(480), [127, 211, 142]);
        let ds = synthetic_sapdata(480, 1);
        assert_eq!(class_distribution(&ds).unwrap().counts, [127, 211, 142]);
    }

    #[test]
    fn deterministic() {
        assert_eq!(synthetic_sapdata(50, 3), synthetic_sapdata(50, 3));
        assert_ne!(synthetic_sapdata(50, 3), synthetic_sapdata(50, 4));
    }
}
