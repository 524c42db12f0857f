//! Accuracy-matrix bookkeeping, ACC/BWT, and OOD aggregation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::{corrupt, CorruptionSpec, InputKind, Sample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Samples scored per forward pass.
const EVAL_CHUNK: usize = 256;

/// Stacks equal-length feature rows into an `n × d` tensor.
pub fn batch_tensor<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Tensor<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut d = None;
    for r in rows {
        if *d.get_or_insert(r.len()) != r.len() {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::new(vec![n, d.unwrap_or(0)], data)
}

/// Fraction of `test` whose argmax over every known proxy equals the label.
pub fn eval_task(model: &Model<f64>, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if let Some(s) = test.iter().find(|s| model.classifier.row_of(s.label).is_none()) {
        return Err(Error::UnknownClass(s.label));
    }
    let mut correct = 0usize;
    for chunk in test.chunks(EVAL_CHUNK) {
        let x = batch_tensor(chunk.iter().map(|s| s.features.as_slice()))?;
        let pred = model.predict(&x)?;
        correct += pred.iter().zip(chunk).filter(|(p, s)| **p == s.label).count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Lower-triangular `α[i][j]`: accuracy on task `j` after training task `i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends stage `i`, which must hold exactly `i + 1` entries in [0, 1].
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let want = self.rows.len() + 1;
        if row.len() != want {
            return Err(Error::InvalidArgument(format!("stage {} needs {want} accuracies, got {}", want - 1, row.len())));
        }
        if let Some(a) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidArgument(format!("accuracy {a} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Mean of the final row.
    pub fn acc(&self) -> Result<f64> {
        let last = self.rows.last().ok_or(Error::Undefined("ACC of an empty accuracy matrix"))?;
        Ok(last.iter().sum::<f64>() / last.len() as f64)
    }

    /// Mean over earlier tasks of final minus just-trained accuracy; `None` for one task.
    pub fn bwt(&self) -> Option<f64> {
        let t = self.rows.len();
        if t < 2 {
            return None;
        }
        let last = &self.rows[t - 1];
        let sum: f64 = (0..t - 1).map(|j| last[j] - self.rows[j][j]).sum();
        Some(sum / (t - 1) as f64)
    }

    /// Entrywise mean of same-shaped matrices.
    pub fn average(matrices: &[AccuracyMatrix]) -> Result<AccuracyMatrix> {
        let first = matrices.first().ok_or(Error::Undefined("average of no accuracy matrices"))?;
        if matrices.iter().any(|m| m.stages() != first.stages()) {
            return Err(Error::InvalidArgument("accuracy matrices differ in stage count".into()));
        }
        let n = matrices.len() as f64;
        let rows = (0..first.stages())
            .map(|i| {
                (0..=i)
                    .map(|j| matrices.iter().map(|m| m.rows[i][j]).sum::<f64>() / n)
                    .collect()
            })
            .collect();
        Ok(AccuracyMatrix { rows })
    }

    /// Rows are stages, columns tasks; cells above the diagonal are left empty.
    pub fn to_csv(&self) -> String {
        let t = self.rows.len();
        let mut out = String::from("stage");
        for j in 0..t {
            let _ = write!(out, ",task_{j}");
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{i}");
            for j in 0..t {
                match row.get(j) {
                    Some(a) => {
                        let _ = write!(out, ",{a:.6}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One evaluation row for a model snapshot: accuracy on each of `tests[..=stage]`.
pub fn stage_row(model: &Model<f64>, tests: &[Vec<Sample>], stage: usize) -> Result<Vec<f64>> {
    tests[..=stage].iter().map(|t| eval_task(model, t)).collect()
}

/// `α` from the model snapshot taken after each task.
pub fn accuracy_matrix(snapshots: &[Model<f64>], tests: &[Vec<Sample>]) -> Result<AccuracyMatrix> {
    if snapshots.len() > tests.len() {
        return Err(Error::InvalidArgument("more snapshots than test sets".into()));
    }
    let mut m = AccuracyMatrix::new();
    for (i, model) in snapshots.iter().enumerate() {
        m.push_row(stage_row(model, tests, i)?)?;
    }
    Ok(m)
}

/// Per-spec matrices on corrupted test sets plus their uniform average.
#[derive(Debug, Clone, PartialEq)]
pub struct OodMatrices {
    pub aggregate: AccuracyMatrix,
    pub per_spec: Vec<(CorruptionSpec, AccuracyMatrix)>,
}

pub fn ood_accuracy_matrix(
    snapshots: &[Model<f64>],
    tests: &[Vec<Sample>],
    kind: InputKind,
    specs: &[CorruptionSpec],
) -> Result<OodMatrices> {
    let mut eval = StageEvaluator::new(tests, kind, specs)?;
    for model in snapshots {
        eval.evaluate(model)?;
    }
    eval.finish()
}

/// Incremental evaluator: corrupts every test set once, then scores each
/// stage's model on the i.i.d. and corrupted copies as training proceeds.
pub struct StageEvaluator {
    iid_tests: Vec<Vec<Sample>>,
    ood_tests: Vec<(CorruptionSpec, Vec<Vec<Sample>>)>,
    iid: AccuracyMatrix,
    ood: Vec<AccuracyMatrix>,
}

impl StageEvaluator {
    pub fn new(tests: &[Vec<Sample>], kind: InputKind, specs: &[CorruptionSpec]) -> Result<Self> {
        let ood_tests = specs
            .iter()
            .map(|spec| {
                let sets = tests.iter().map(|t| corrupt(t, kind, spec)).collect::<Result<Vec<_>>>()?;
                Ok((*spec, sets))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StageEvaluator {
            iid_tests: tests.to_vec(),
            ood: vec![AccuracyMatrix::new(); ood_tests.len()],
            ood_tests,
            iid: AccuracyMatrix::new(),
        })
    }

    pub fn stages(&self) -> usize {
        self.iid.stages()
    }

    /// Adds the next stage's row to every matrix.
    pub fn evaluate(&mut self, model: &Model<f64>) -> Result<()> {
        let stage = self.iid.stages();
        if stage >= self.iid_tests.len() {
            return Err(Error::Contract("every stage has already been evaluated".into()));
        }
        self.iid.push_row(stage_row(model, &self.iid_tests, stage)?)?;
        for ((_, sets), m) in self.ood_tests.iter().zip(&mut self.ood) {
            m.push_row(stage_row(model, sets, stage)?)?;
        }
        Ok(())
    }

    pub fn iid(&self) -> &AccuracyMatrix {
        &self.iid
    }

    pub fn finish(self) -> Result<OodMatrices> {
        let aggregate = if self.ood.is_empty() {
            AccuracyMatrix::new()
        } else {
            AccuracyMatrix::average(&self.ood)?
        };
        Ok(OodMatrices {
            aggregate,
            per_spec: self.ood_tests.into_iter().map(|(s, _)| s).zip(self.ood).collect(),
        })
    }

    /// i.i.d. matrix and OOD matrices together.
    pub fn finish_all(self) -> Result<(AccuracyMatrix, OodMatrices)> {
        let iid = self.iid.clone();
        Ok((iid, self.finish()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_example() {
        let m = AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.6, 0.8]]).unwrap();
        assert_eq!(m.acc().unwrap(), 0.7);
        assert_eq!(m.bwt(), Some(0.6 - 0.9));
        assert!((m.bwt().unwrap() + 0.3).abs() < 1e-15);
    }

    #[test]
    fn no_forgetting_and_single_task() {
        let m = AccuracyMatrix::from_rows(vec![vec![0.5], vec![0.5, 0.7], vec![0.5, 0.7, 1.0]]).unwrap();
        assert_eq!(m.bwt(), Some(0.0));
        let one = AccuracyMatrix::from_rows(vec![vec![1.0]]).unwrap();
        assert_eq!(one.acc().unwrap(), 1.0);
        assert_eq!(one.bwt(), None);
        assert!(AccuracyMatrix::new().acc().is_err());
    }

    #[test]
    fn push_row_contract() {
        let mut m = AccuracyMatrix::new();
        assert!(m.push_row(vec![0.5, 0.5]).is_err());
        assert!(m.push_row(vec![1.5]).is_err());
        m.push_row(vec![0.5]).unwrap();
        assert_eq!(m.to_csv(), "stage,task_0\n0,0.500000\n");
    }

    #[test]
    fn averaging() {
        let a = AccuracyMatrix::from_rows(vec![vec![1.0], vec![0.0, 0.5]]).unwrap();
        let b = AccuracyMatrix::from_rows(vec![vec![0.0], vec![1.0, 0.5]]).unwrap();
        let avg = AccuracyMatrix::average(&[a.clone(), b]).unwrap();
        assert_eq!(avg.rows(), &[vec![0.5], vec![0.5, 0.5]]);
        assert_eq!(AccuracyMatrix::average(&[a.clone()]).unwrap(), a);
    }

    fn constant_model(n_classes: usize) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = EncoderSpec { input_dim: 2, hidden: vec![], embed_dim: 2 };
        let mut m = Model::new(spec, &mut rng).unwrap();
        m.classifier.add_class_with(0, vec![0.0, 0.0]);
        for c in 1..n_classes {
            m.classifier.add_class_with(c, vec![0.0, 0.0]);
        }
        m
    }

    #[test]
    fn ties_predict_first_class() {
        let m = constant_model(4);
        let test: Vec<Sample> = (0..8)
            .map(|i| Sample { id: i, features: vec![1.0, -1.0], label: i as usize % 4, task: 0 })
            .collect();
        assert_eq!(eval_task(&m, &test).unwrap(), 0.25);
        assert_eq!(eval_task(&m, &test[..1]).unwrap(), 1.0);
        let unseen = [Sample { id: 0, features: vec![0.0, 0.0], label: 9, task: 0 }];
        assert!(matches!(eval_task(&m, &unseen), Err(Error::UnknownClass(9))));
    }
}
