//! Central finite-difference checks of the taped gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::Result;
use crate::model::{EncoderSpec, LossKind, Model};
use crate::tensor::Tensor;
use crate::ClassId;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
}

impl GradcheckReport {
    fn merge(&mut self, other: GradcheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
    }
}

fn loss_value(model: &Model, x: &Tensor, labels: &[ClassId], kind: LossKind, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let xv = tape.leaf(x.clone());
    let z = model.forward(&mut tape, &bound, xv)?;
    let loss = model.loss(kind, &mut tape, &bound, z, labels, tau)?;
    Ok(tape.value(loss).data()[0])
}

/// Compares the taped gradient of every model parameter against central differences.
pub fn check_model(
    model: &Model,
    x: &Tensor,
    labels: &[ClassId],
    kind: LossKind,
    tau: f64,
    step: f64,
) -> Result<GradcheckReport> {
    let mut analytic = model.clone();
    let mut tape = Tape::new();
    let bound = analytic.bind(&mut tape)?;
    let xv = tape.leaf(x.clone());
    let z = analytic.forward(&mut tape, &bound, xv)?;
    let loss = analytic.loss(kind, &mut tape, &bound, z, labels, tau)?;
    let grads = tape.backward(loss)?;
    analytic.accumulate(&bound, &grads)?;
    let analytic_grads: Vec<(String, Vec<f64>)> = analytic
        .parameters()
        .into_iter()
        .map(|p| (p.name().to_string(), p.grad().data().to_vec()))
        .collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let mut probe = model.clone();
    for (pi, (name, g)) in analytic_grads.iter().enumerate() {
        for (i, &ga) in g.iter().enumerate() {
            let orig = probe.parameters()[pi].value().data()[i];
            probe.parameters_mut()[pi].value_mut().data_mut()[i] = orig + step;
            let up = loss_value(&probe, x, labels, kind, tau)?;
            probe.parameters_mut()[pi].value_mut().data_mut()[i] = orig - step;
            let down = loss_value(&probe, x, labels, kind, tau)?;
            probe.parameters_mut()[pi].value_mut().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            report.merge(GradcheckReport {
                max_rel_error: relative_error(ga, numeric),
                checked: 1,
                worst: format!("{name}[{i}]"),
            });
        }
    }
    Ok(report)
}

/// Shape of the randomized two-layer problem used by [`random_model_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradcheckProblem {
    pub input_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub classes: usize,
    pub batch: usize,
    pub tau: f64,
}

impl Default for GradcheckProblem {
    fn default() -> Self {
        GradcheckProblem {
            input_dim: 6,
            hidden: 8,
            embed_dim: 5,
            classes: 4,
            batch: 8,
            tau: 0.5,
        }
    }
}

/// Random two-layer encoder + proxies, inputs uniform in [−2, 2], PCL loss.
pub fn random_model_check(seed: u64, problem: GradcheckProblem, kind: LossKind) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = EncoderSpec {
        input_dim: problem.input_dim,
        hidden: vec![problem.hidden],
        embed_dim: problem.embed_dim,
    };
    let mut model = Model::new(spec, &mut rng)?;
    for c in 0..problem.classes {
        let row = (0..problem.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.classifier.add_class_with(c, row);
    }
    let data = (0..problem.batch * problem.input_dim)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let x = Tensor::new(vec![problem.batch, problem.input_dim], data)?;
    // every class present at least once, the rest random
    let labels: Vec<ClassId> = (0..problem.batch)
        .map(|i| if i < problem.classes { i } else { rng.random_range(0..problem.classes) })
        .collect();
    check_model(&model, &x, &labels, kind, problem.tau, FD_STEP)
}

/// Runs [`random_model_check`] over `configs` seeds and keeps the worst result.
pub fn suite(configs: u64, kind: LossKind) -> Result<GradcheckReport> {
    let mut total = GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for seed in 0..configs {
        let mut problem = GradcheckProblem::default();
        // vary the temperature across configurations
        problem.tau = [1.0, 0.5, 0.25, 2.0][(seed % 4) as usize];
        let mut r = random_model_check(seed, problem, kind)?;
        r.worst = format!("seed {seed}: {}", r.worst);
        total.merge(r);
    }
    Ok(total)
}
