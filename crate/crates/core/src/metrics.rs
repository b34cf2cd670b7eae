//! Accuracy, pseudo-label accuracy and the conceit (overconfidence) metric.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};
use crate::pseudo::{PseudoLabelSet, RoundRecord};

pub fn accuracy(predicted: &[usize], labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Metric("accuracy over an empty mask".into()));
    }
    let mut correct = 0usize;
    for &v in mask {
        match (predicted.get(v), labels.get(v)) {
            (Some(p), Some(y)) => correct += usize::from(p == y),
            _ => return Err(Error::Metric(format!("node {v} outside predictions or labels"))),
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

/// Share of adopted pseudo-labels that match the held-out truth.
pub fn pseudo_accuracy(sp: &PseudoLabelSet, labels: &[usize]) -> Result<f64> {
    if sp.is_empty() {
        return Err(Error::Metric("pseudo-label accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for e in &sp.entries {
        let y = labels
            .get(e.node)
            .ok_or_else(|| Error::Metric(format!("node {} has no label", e.node)))?;
        correct += usize::from(*y == e.class);
    }
    Ok(correct as f64 / sp.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceitOptions {
    /// Count only misclassified nodes whose confidence exceeds this.
    pub min_confidence: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conceit {
    /// Mean gap over counted nodes; 0 when none are counted.
    pub mean: f64,
    pub sum: f64,
    pub count: usize,
}

fn cosine<T: Real>(a: &[T], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, &y) in a.iter().zip(b) {
        let x = x.as_f64();
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Mean over misclassified mask nodes of `cos(z, μ_pred) − cos(z, μ_true)`,
/// where `μ_k` sums the representations of correctly classified mask nodes of
/// class `k`. `confidence` is required when a threshold is set.
pub fn conceit<T: Real>(
    z: &Matrix<T>,
    predicted: &[usize],
    labels: &[usize],
    mask: &[usize],
    confidence: Option<&[f64]>,
    options: &ConceitOptions,
) -> Result<Conceit> {
    if options.min_confidence.is_some() && confidence.is_none() {
        return Err(Error::Metric("confidence threshold set without confidences".into()));
    }
    let mut centroids: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &v in mask {
        if predicted[v] == labels[v] {
            let c = centroids.entry(labels[v]).or_insert_with(|| vec![0.0; z.cols()]);
            for (acc, x) in c.iter_mut().zip(z.row(v)) {
                *acc += x.as_f64();
            }
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for &v in mask {
        let (p, y) = (predicted[v], labels[v]);
        if p == y {
            continue;
        }
        if let (Some(t), Some(conf)) = (options.min_confidence, confidence) {
            if conf[v] <= t {
                continue;
            }
        }
        let centroid = |k: usize| {
            centroids
                .get(&k)
                .ok_or_else(|| Error::Metric(format!("class {k} has no correctly classified node")))
        };
        sum += cosine(z.row(v), centroid(p)?) - cosine(z.row(v), centroid(y)?);
        count += 1;
    }
    Ok(Conceit {
        mean: if count == 0 { 0.0 } else { sum / count as f64 },
        sum,
        count,
    })
}

/// Everything measured for one (method, seed) run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub config_digest: String,
    pub test_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub pseudo_accuracy: Option<f64>,
    pub conceit: Option<f64>,
    pub conceit_sum: Option<f64>,
    #[serde(default)]
    pub traces: Vec<RoundRecord>,
    /// Set when the run failed; metric fields are then empty.
    pub error: Option<String>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "run_id,dataset,method,seed,config_digest,test_accuracy,val_accuracy,pseudo_accuracy,conceit,error";

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("test_accuracy", self.test_accuracy),
            ("val_accuracy", self.val_accuracy),
            ("pseudo_accuracy", self.pseudo_accuracy),
        ] {
            if v.is_some_and(|x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::Metric(format!("{name} outside [0,1]")));
            }
        }
        if self.conceit.is_some_and(|x| !(-2.0..=2.0).contains(&x)) {
            return Err(Error::Metric("conceit outside [-2,2]".into()));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn csv_row(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(vec![]);
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        w.write_record([
            self.run_id.clone(),
            self.dataset.clone(),
            self.method.clone(),
            self.seed.to_string(),
            self.config_digest.clone(),
            opt(self.test_accuracy),
            opt(self.val_accuracy),
            opt(self.pseudo_accuracy),
            opt(self.conceit),
            self.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| Error::Io(e.into()))?;
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Appends one row to a CSV index under an exclusive file lock, writing
    /// the header first when the file is new.
    pub fn append_to_index(&self, path: &Path) -> Result<()> {
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(path)?;
        file.lock()?;
        let row = self.csv_row()?;
        let result = (|| {
            if file.metadata()?.len() == 0 {
                writeln!(file, "{}", Self::CSV_HEADER)?;
            }
            file.write_all(row.as_bytes())?;
            file.flush()
        })();
        file.unlock()?;
        Ok(result?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo::{PseudoEntry, Stage};
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        let y = vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
        let mask: Vec<usize> = (0..10).collect();
        assert_eq!(accuracy(&y, &y, &mask).unwrap(), 1.0);
        let wrong: Vec<usize> = y.iter().map(|v| (v + 1) % 3).collect();
        assert_eq!(accuracy(&wrong, &y, &mask).unwrap(), 0.0);
        let half: Vec<usize> = (0..10).map(|i| if i < 5 { y[i] } else { wrong[i] }).collect();
        assert_eq!(accuracy(&half, &y, &mask).unwrap(), 0.5);
        assert!(accuracy(&y, &y, &[]).is_err());
    }

    #[test]
    fn pseudo_accuracy_examples() {
        let labels = vec![0, 1, 1, 0];
        let set = |pairs: &[(usize, usize)]| PseudoLabelSet {
            entries: pairs.iter().map(|&(node, class)| PseudoEntry { node, class, score: 0.5, adjusted: 0.5 }).collect(),
            stage: Stage::Selected,
        };
        assert_eq!(pseudo_accuracy(&set(&[(1, 1), (3, 0)]), &labels).unwrap(), 1.0);
        assert_eq!(pseudo_accuracy(&set(&[(1, 1), (2, 0)]), &labels).unwrap(), 0.5);
        assert!(pseudo_accuracy(&set(&[]), &labels).is_err());
    }

    fn toy() -> (Matrix<f64>, Vec<usize>, Vec<usize>) {
        // two correct anchors per class, then misclassified probes
        let z = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 3.0],
            vec![0.9, 0.1],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let labels = vec![0, 0, 1, 1, 1, 0];
        let predicted = vec![0, 0, 1, 1, 0, 1];
        (z, labels, predicted)
    }

    #[test]
    fn conceit_hand_computed() {
        let (z, labels, predicted) = toy();
        let mask: Vec<usize> = (0..6).collect();
        let c = conceit(&z, &predicted, &labels, &mask, None, &ConceitOptions::default()).unwrap();
        // node 4: cos to class-0 axis minus cos to class-1 axis; node 5 sits on the diagonal
        let n = (0.81f64 + 0.01).sqrt();
        let expect4 = 0.9 / n - 0.1 / n;
        assert_eq!(c.count, 2);
        assert!((c.sum - expect4).abs() < 1e-12);
        assert!((c.mean - expect4 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_mistakes_gives_zero() {
        let (z, labels, _) = toy();
        let c = conceit(&z, &labels, &labels, &[0, 1, 2, 3], None, &ConceitOptions::default()).unwrap();
        assert_eq!((c.mean, c.count), (0.0, 0));
    }

    #[test]
    fn missing_centroid_names_the_class() {
        let (z, labels, predicted) = toy();
        let err = conceit(&z, &predicted, &labels, &[0, 1, 4], None, &ConceitOptions::default()).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn confidence_threshold_filters() {
        let (z, labels, predicted) = toy();
        let mask: Vec<usize> = (0..6).collect();
        let conf = vec![1.0, 1.0, 1.0, 1.0, 0.95, 0.5];
        let opts = ConceitOptions { min_confidence: Some(0.9) };
        let c = conceit(&z, &predicted, &labels, &mask, Some(&conf), &opts).unwrap();
        assert_eq!(c.count, 1);
        assert!(conceit(&z, &predicted, &labels, &mask, None, &opts).is_err());
    }

    #[test]
    fn index_appends_with_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.csv");
        let rec = MetricsRecord { run_id: "a".into(), test_accuracy: Some(0.5), ..Default::default() };
        rec.append_to_index(&path).unwrap();
        rec.append_to_index(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), MetricsRecord::CSV_HEADER);
        assert!(MetricsRecord { conceit: Some(3.0), ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn conceit_is_scale_invariant(seed in 0u64..200, scale in 0.01f64..100.0) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed, 4);
            let n = 30;
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let predicted: Vec<usize> = (0..n).map(|i| if i < 6 || rng.random::<f64>() < 0.7 { labels[i] } else { (labels[i] + 1) % 3 }).collect();
            let z = Matrix::from_vec(n, 4, (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mask: Vec<usize> = (0..n).collect();
            let a = conceit(&z, &predicted, &labels, &mask, None, &ConceitOptions::default()).unwrap();
            let b = conceit(&z.map(|v| v * scale), &predicted, &labels, &mask, None, &ConceitOptions::default()).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-9);
            prop_assert!((-2.0..=2.0).contains(&a.mean));
        }
    }
}
