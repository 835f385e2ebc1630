//! Gradient-check suites over every backward rule and over whole models.
//!
//! Each component is probed with a random linear functional
//! `L(x) = Σ r ⊙ op(x)` (or the real loss, for losses and models), so the
//! analytic gradient is simply the backward rule applied to `r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_all, check_all_piecewise, GradCheckReport, DEFAULT_STEP};
use crate::loss::{self, LossKind};
use crate::model::{Architecture, ModelGraph, ModelSpec, Phase, Preset};
use crate::nn::{self, BatchNormState, Mode};
use crate::tensor::{self, ConvSpec, Shape4, Tensor4};

/// Gradient-check result for one named component.
#[derive(Clone, Debug)]
pub struct ComponentReport {
    pub component: String,
    pub report: GradCheckReport,
}

/// Largest share of coordinates that may be skipped as kink crossings before
/// a check is considered uninformative.
pub const MAX_KINK_FRACTION: f64 = 0.05;

impl ComponentReport {
    pub fn kink_fraction(&self) -> f64 {
        let total = self.report.checked + self.report.kinks_skipped;
        if total == 0 {
            0.0
        } else {
            self.report.kinks_skipped as f64 / total as f64
        }
    }

    /// Below `tolerance` with enough coordinates actually compared.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.report.max_rel_error < tolerance
            && self.report.checked > 0
            && self.kink_fraction() <= MAX_KINK_FRACTION
    }
}

/// Corrupts analytic gradients (×2) so the checker can be shown to catch a
/// broken backward rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FaultInjection(pub bool);

impl FaultInjection {
    fn apply(self, mut g: Vec<f64>) -> Vec<f64> {
        if self.0 {
            g.iter_mut().for_each(|v| *v *= 2.0);
        }
        g
    }
}

type T4 = Tensor4<f64>;

fn random(shape: Shape4, rng: &mut ChaCha8Rng) -> T4 {
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)).expect("valid shape")
}

/// Random values bounded away from zero, so piecewise-linear ops have no
/// kink within a finite-difference step.
fn random_away_from_zero(shape: Shape4, rng: &mut ChaCha8Rng) -> T4 {
    Tensor4::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
    .expect("valid shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor_of(shape: Shape4, data: &[f64]) -> T4 {
    Tensor4::from_vec(shape, data.to_vec()).expect("probe keeps shape")
}

struct Suite {
    fault: FaultInjection,
    reports: Vec<ComponentReport>,
}

impl Suite {
    fn check(
        &mut self,
        name: &str,
        point: &[f64],
        analytic: Vec<f64>,
        f: impl FnMut(&[f64]) -> f64,
    ) -> Result<()> {
        let analytic = self.fault.apply(analytic);
        let report = check_all(point, &analytic, DEFAULT_STEP, f)?;
        self.reports.push(ComponentReport {
            component: name.to_string(),
            report,
        });
        Ok(())
    }

    fn check_piecewise(
        &mut self,
        name: &str,
        point: &[f64],
        analytic: Vec<f64>,
        f: impl FnMut(&[f64]) -> (f64, Vec<bool>),
    ) -> Result<()> {
        let analytic = self.fault.apply(analytic);
        let report = check_all_piecewise(point, &analytic, DEFAULT_STEP, f)?;
        self.reports.push(ComponentReport {
            component: name.to_string(),
            report,
        });
        Ok(())
    }
}

/// Checks the backward rule of every layer primitive and loss.
pub fn ops_suite(seed: u64, fault: FaultInjection) -> Result<Vec<ComponentReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = Suite {
        fault,
        reports: Vec::new(),
    };

    // conv2d: strided, padded geometry, then the flipped variant
    for (label, spec) in [
        ("conv2d", ConvSpec::new(3, 2, 1)),
        ("conv2d_flipped", ConvSpec::new(3, 1, 1).flipped()),
    ] {
        let xs = Shape4::new(2, 2, 5, 5);
        let ks = Shape4::new(3, 2, 3, 3);
        let x = random(xs, &mut rng);
        let k = random(ks, &mut rng);
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = tensor::conv2d(&x, &k, &b, &spec)?;
        let r = random(y.shape(), &mut rng);
        let g = tensor::conv2d_backward(&x, &k, &r, &spec)?;
        suite.check(
            &format!("{label}.input"),
            x.data(),
            g.input.into_vec(),
            |p| {
                dot(
                    tensor::conv2d(&tensor_of(xs, p), &k, &b, &spec)
                        .unwrap()
                        .data(),
                    r.data(),
                )
            },
        )?;
        suite.check(
            &format!("{label}.kernels"),
            k.data(),
            g.kernels.into_vec(),
            |p| {
                dot(
                    tensor::conv2d(&x, &tensor_of(ks, p), &b, &spec)
                        .unwrap()
                        .data(),
                    r.data(),
                )
            },
        )?;
        suite.check(&format!("{label}.bias"), &b, g.bias, |p| {
            dot(tensor::conv2d(&x, &k, p, &spec).unwrap().data(), r.data())
        })?;
    }

    {
        let s = Shape4::new(2, 3, 4, 4);
        let z = random_away_from_zero(s, &mut rng);
        let r = random(s, &mut rng);
        let g = nn::relu_backward(&z, &r)?;
        suite.check("relu", z.data(), g.into_vec(), |p| {
            dot(nn::relu(&tensor_of(s, p)).data(), r.data())
        })?;
    }

    {
        let s = Shape4::new(3, 5, 1, 1);
        let z = random(s, &mut rng).scale(3.0);
        let r = random(s, &mut rng);
        let y = nn::softmax_rows(&z);
        let g = nn::softmax_rows_backward(&y, &r)?;
        suite.check("softmax", z.data(), g.into_vec(), |p| {
            dot(nn::softmax_rows(&tensor_of(s, p)).data(), r.data())
        })?;
    }

    {
        let xs = Shape4::new(3, 2, 2, 2);
        let x = random(xs, &mut rng);
        let w: Vec<f64> = (0..8 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = nn::DenseParams::new(8, 4, w, b)?;
        let y = nn::dense_forward(&x, &p)?;
        let r = random(y.shape(), &mut rng);
        let g = nn::dense_backward(&x, &p, &r)?;
        suite.check("dense.input", x.data(), g.input.into_vec(), |q| {
            dot(
                nn::dense_forward(&tensor_of(xs, q), &p).unwrap().data(),
                r.data(),
            )
        })?;
        suite.check("dense.weights", &p.weights, g.weights, |q| {
            let pp = nn::DenseParams::new(8, 4, q.to_vec(), p.bias.clone()).unwrap();
            dot(nn::dense_forward(&x, &pp).unwrap().data(), r.data())
        })?;
        suite.check("dense.bias", &p.bias, g.bias, |q| {
            let pp = nn::DenseParams::new(8, 4, p.weights.clone(), q.to_vec()).unwrap();
            dot(nn::dense_forward(&x, &pp).unwrap().data(), r.data())
        })?;
    }

    {
        // the mask is a function of the seed, so replaying the seed fixes it
        let s = Shape4::new(2, 3, 3, 3);
        let x = random(s, &mut rng);
        let r = random(s, &mut rng);
        let mask_seed: u64 = rng.gen();
        let run = |t: &T4| {
            nn::dropout(
                t,
                0.5,
                Mode::Train,
                &mut ChaCha8Rng::seed_from_u64(mask_seed),
            )
            .unwrap()
        };
        let (_, mask) = run(&x);
        let g = nn::dropout_backward(&mask, &r)?;
        suite.check("dropout", x.data(), g.into_vec(), |p| {
            dot(run(&tensor_of(s, p)).0.data(), r.data())
        })?;
    }

    for mode in [Mode::Train, Mode::Eval] {
        let s = Shape4::new(3, 2, 3, 3);
        let x = random(s, &mut rng).map(|v| 2.0 * v + 0.5);
        let gamma: Vec<f64> = (0..2).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let r = random(s, &mut rng);
        let mut state = BatchNormState::new(2);
        state.running_mean = vec![0.3, -0.2];
        state.running_var = vec![1.7, 0.6];
        let bn = |x: &T4, g: &[f64], b: &[f64]| {
            nn::batchnorm2d(x, g, b, &mut state.clone(), mode).unwrap()
        };
        let (_, cache) = bn(&x, &gamma, &beta);
        let g = nn::batchnorm2d_backward(&cache, &gamma, &r)?;
        let label = match mode {
            Mode::Train => "batchnorm_train",
            Mode::Eval => "batchnorm_eval",
        };
        suite.check(
            &format!("{label}.input"),
            x.data(),
            g.input.into_vec(),
            |p| dot(bn(&tensor_of(s, p), &gamma, &beta).0.data(), r.data()),
        )?;
        suite.check(&format!("{label}.gamma"), &gamma, g.gamma, |p| {
            dot(bn(&x, p, &beta).0.data(), r.data())
        })?;
        suite.check(&format!("{label}.beta"), &beta, g.beta, |p| {
            dot(bn(&x, &gamma, p).0.data(), r.data())
        })?;
    }

    {
        let s = Shape4::new(2, 2, 5, 3);
        let x = random(s, &mut rng);
        let y = tensor::avg_pool2d(&x);
        let r = random(y.shape(), &mut rng);
        let g = tensor::avg_pool2d_backward(s, &r)?;
        suite.check("avg_pool2d", x.data(), g.into_vec(), |p| {
            dot(tensor::avg_pool2d(&tensor_of(s, p)).data(), r.data())
        })?;
        let r = random(Shape4::new(2, 2, 1, 1), &mut rng);
        let g = tensor::global_avg_pool_backward(s, &r)?;
        suite.check("global_avg_pool", x.data(), g.into_vec(), |p| {
            dot(tensor::global_avg_pool(&tensor_of(s, p)).data(), r.data())
        })?;
    }

    {
        let sa = Shape4::new(2, 2, 3, 3);
        let sb = Shape4::new(2, 3, 3, 3);
        let a = random(sa, &mut rng);
        let b = random(sb, &mut rng);
        let r = random(Shape4::new(2, 5, 3, 3), &mut rng);
        let parts = tensor::split_channels(&r, &[2, 3])?;
        suite.check("concat.a", a.data(), parts[0].data().to_vec(), |p| {
            dot(
                tensor::concat_channels(&tensor_of(sa, p), &b)
                    .unwrap()
                    .data(),
                r.data(),
            )
        })?;
        suite.check("concat.b", b.data(), parts[1].data().to_vec(), |p| {
            dot(
                tensor::concat_channels(&a, &tensor_of(sb, p))
                    .unwrap()
                    .data(),
                r.data(),
            )
        })?;
        let c = random(sa, &mut rng);
        let r = random(sa, &mut rng);
        suite.check("add", a.data(), r.data().to_vec(), |p| {
            dot(tensor::add(&tensor_of(sa, p), &c).unwrap().data(), r.data())
        })?;
    }

    for kind in [LossKind::Bce, LossKind::Cce] {
        let y = [0.0, 0.0, 1.0, 0.0, 0.0];
        let yhat: Vec<f64> = (0..5).map(|_| rng.gen_range(0.05..0.95)).collect();
        let f = |p: &[f64]| match kind {
            LossKind::Bce => loss::bce(&y, p).unwrap().value,
            LossKind::Cce => loss::cce(&y, p).unwrap().value,
        };
        let analytic = match kind {
            LossKind::Bce => loss::bce(&y, &yhat)?.gradient,
            LossKind::Cce => loss::cce(&y, &yhat)?.gradient,
        };
        suite.check(&kind.to_string(), &yhat, analytic, f)?;
    }

    Ok(suite.reports)
}

/// Side length of the inputs used for whole-model checks.
pub const MODEL_CHECK_SIZE: usize = 8;

/// Checks parameter and input gradients of a tiny preset model end to end:
/// batch of 2 random 8×8 images, random labels, BCE over softmax, batch
/// statistics on and dropout off. Coordinates whose probes flip a ReLU input
/// sign are skipped and counted.
pub fn model_suite(
    arch: Architecture,
    seed: u64,
    fault: FaultInjection,
) -> Result<Vec<ComponentReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::preset(arch, Preset::Tiny, MODEL_CHECK_SIZE, MODEL_CHECK_SIZE);
    let mut model = ModelGraph::<f64>::build(&spec)?;
    model.init_params(&mut rng);
    // non-trivial batchnorm affine parameters exercise more of the backward path
    for p in model.params_mut() {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") || p.name.ends_with(".bias") {
            let base = if p.name.ends_with(".gamma") { 1.0 } else { 0.0 };
            p.value
                .iter_mut()
                .for_each(|v| *v = base + rng.gen_range(-0.3..0.3));
        }
    }
    let xs = Shape4::new(2, 3, MODEL_CHECK_SIZE, MODEL_CHECK_SIZE);
    let x = random(xs, &mut rng);
    let targets: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let mut t = vec![0.0; spec.classes];
            t[rng.gen_range(0..spec.classes)] = 1.0;
            t
        })
        .collect();
    let phase = Phase::DETERMINISTIC_TRAIN;

    model.forward(&x, phase, &mut rng)?;
    let preds = model.forward(&x, phase, &mut rng)?;
    let (_, grad) = loss::batch_loss(LossKind::Bce, &targets, &preds)?;
    let input_grad = model.backward(&grad)?;
    let param_grad = model.flat_grads();
    let base = model.flat_params();

    let mut suite = Suite {
        fault,
        reports: Vec::new(),
    };
    let mut probe = model.clone();
    let eval_params = |p: &[f64]| {
        probe.set_flat_params(p).unwrap();
        let y = probe
            .forward(&x, phase, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let l = loss::batch_loss(LossKind::Bce, &targets, &y).unwrap().0;
        (l, probe.relu_signs().expect("forward recorded"))
    };
    suite.check_piecewise(&format!("{arch}.params"), &base, param_grad, eval_params)?;
    let mut probe = model.clone();
    suite.check_piecewise(
        &format!("{arch}.input"),
        x.data(),
        input_grad.into_vec(),
        |p| {
            let y = probe
                .forward(&tensor_of(xs, p), phase, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
            let l = loss::batch_loss(LossKind::Bce, &targets, &y).unwrap().0;
            (l, probe.relu_signs().expect("forward recorded"))
        },
    )?;
    Ok(suite.reports)
}

/// Largest relative error across reports, with the component it came from.
pub fn worst(reports: &[ComponentReport]) -> Option<&ComponentReport> {
    reports
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
}
