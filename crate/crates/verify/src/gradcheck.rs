//! Reverse-mode gradients against central differences, per operation and for
//! both full objectives.

use gmvae::distributions::{
    bernoulli_log_likelihood, categorical_kl_uniform, diag_gaussian_kl, gaussian_log_density,
    sample_concrete, sample_diag_gaussian_with, CategoricalParams, DiagGaussianParams,
};
use gmvae::model::{Gmvae, GmvaeConfig, Likelihood};
use gmvae::param::{backward, finite_diff_gradient, max_relative_error, Bound, ParamId, ParamStore, FD_STEP};
use gmvae::rng::{Noise, RecordingNoise, RngStream, ScriptedNoise};
use gmvae::tape::{Reduction, Tape, Var};
use gmvae::training::{elbo_concrete, elbo_marginal};
use gmvae::{Result, Tensor};

use crate::CheckOutcome;

pub const INSTANCES: u64 = 20;
pub const TOLERANCE: f64 = 1e-4;
/// Temperature of the full concrete-objective check. Near-one-hot relaxed
/// samples give gradient coordinates around 1e-10, below the central-difference
/// roundoff floor ε·|f|/h.
pub const CHECK_TEMPERATURE: f64 = 1.0;
/// Largest network the full-objective check builds.
pub const MAX_PARAMETERS: usize = 500;

/// (index, analytic, numeric) of the coordinate with the largest relative error.
fn worst_coordinate(analytic: &[f64], numeric: &[f64]) -> (usize, f64, f64) {
    (0..analytic.len())
        .map(|i| (i, analytic[i], numeric[i]))
        .max_by(|a, b| {
            let ra = max_relative_error(&[a.1], &[a.2]);
            let rb = max_relative_error(&[b.1], &[b.2]);
            ra.total_cmp(&rb)
        })
        .unwrap_or((0, 0.0, 0.0))
}

fn extent(rng: &mut RngStream) -> usize {
    1 + rng.below(6)
}

fn uniform(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()).expect("shape")
}

/// Entries in ±[lo, hi] with a random sign, keeping clear of relu's kink.
fn away_from_zero(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let magnitude = uniform(rng, shape, lo, hi);
    magnitude.map(|v| if rng.uniform() < 0.5 { -v } else { v })
}

fn matrix(rng: &mut RngStream) -> Tensor {
    let shape = [extent(rng), extent(rng)];
    uniform(rng, &shape, -2.0, 2.0)
}

/// A non-differentiable operand that is identical on every evaluation of an instance.
fn fixed(shape: &[usize], mut draw: impl FnMut(&mut RngStream) -> f64) -> Tensor {
    let mut rng = RngStream::new(shape.iter().product::<usize>() as u64);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| draw(&mut rng)).collect()).expect("shape")
}

fn vars(b: &Bound, n: usize) -> Vec<Var> {
    (0..n).map(|i| b.var(ParamId(i))).collect()
}

/// Builds loss = Σ f(inputs) ⊙ C with a random positive C and compares the
/// tape gradient of every input against central differences.
pub fn check_op<G, F>(op: &str, id: u64, mut gen: G, f: F) -> Result<CheckOutcome>
where
    G: FnMut(&mut RngStream) -> Vec<Tensor>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut outcome = CheckOutcome {
        name: op.to_string(),
        instances: INSTANCES as usize,
        worst: 0.0,
        detail: String::new(),
    };
    for inst in 0..INSTANCES {
        let mut rng = RngStream::derive(0x6772_6164, id, inst);
        let mut params = ParamStore::new();
        for (i, t) in gen(&mut rng).into_iter().enumerate() {
            params.push(format!("in{i}"), t);
        }
        let out_shape = {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let out = f(&mut tape, &vars(&b, params.len()))?;
            tape.shape(out).to_vec()
        };
        let weights = uniform(&mut rng, &out_shape, 0.5, 1.5);
        let loss = |ps: &ParamStore, tape: &mut Tape| -> Result<(Var, Bound)> {
            let b = ps.bind(tape);
            let out = f(tape, &vars(&b, ps.len()))?;
            let c = tape.constant(weights.clone());
            let prod = tape.mul(out, c)?;
            Ok((tape.sum(prod)?, b))
        };

        let mut tape = Tape::new();
        let (l, b) = loss(&params, &mut tape)?;
        backward(tape, l, &mut params, &b)?;
        let analytic: Vec<f64> = params.iter().flat_map(|p| p.grad.data().to_vec()).collect();
        let numeric: Vec<f64> = finite_diff_gradient(&mut params, FD_STEP, |ps| {
            let mut tape = Tape::new();
            let (l, _) = loss(ps, &mut tape)?;
            tape.value(l).item()
        })?
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
        let err = max_relative_error(&analytic, &numeric);
        if err >= outcome.worst {
            let (i, a, n) = worst_coordinate(&analytic, &numeric);
            outcome.worst = err;
            outcome.detail = format!("instance {inst}, coordinate {i}: analytic {a:e}, numeric {n:e}");
        }
    }
    Ok(outcome)
}

/// Every differentiable tape operation and distribution routine.
pub fn operation_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let same = |rng: &mut RngStream| {
        let a = matrix(rng);
        let b = uniform(rng, a.shape(), -2.0, 2.0);
        vec![a, b]
    };
    let with_scalar = |rng: &mut RngStream| {
        let a = matrix(rng);
        vec![a, Tensor::scalar(0.5 + rng.uniform())]
    };
    let one = |rng: &mut RngStream| vec![matrix(rng)];

    out.push(check_op(
        "matmul",
        1,
        |rng| {
            let (m, k, n) = (extent(rng), extent(rng), extent(rng));
            vec![uniform(rng, &[m, k], -2.0, 2.0), uniform(rng, &[k, n], -2.0, 2.0)]
        },
        |t, v| t.matmul(v[0], v[1]),
    )?);
    out.push(check_op("add", 2, same, |t, v| t.add(v[0], v[1]))?);
    out.push(check_op("sub", 3, same, |t, v| t.sub(v[0], v[1]))?);
    out.push(check_op("mul", 4, same, |t, v| t.mul(v[0], v[1]))?);
    out.push(check_op(
        "div",
        5,
        |rng| {
            let a = matrix(rng);
            let b = away_from_zero(rng, a.shape(), 0.5, 2.0);
            vec![a, b]
        },
        |t, v| t.div(v[0], v[1]),
    )?);
    out.push(check_op("mul by scalar tensor", 6, with_scalar, |t, v| t.mul(v[0], v[1]))?);
    out.push(check_op("add scalar tensor", 7, with_scalar, |t, v| t.add(v[1], v[0]))?);
    out.push(check_op("div by scalar tensor", 8, with_scalar, |t, v| t.div(v[0], v[1]))?);
    out.push(check_op("sub from scalar tensor", 9, with_scalar, |t, v| t.sub(v[1], v[0]))?);
    out.push(check_op("add_scalar", 10, one, |t, v| Ok(t.add_scalar(v[0], -0.75)))?);
    out.push(check_op("mul_scalar", 11, one, |t, v| Ok(t.mul_scalar(v[0], 2.5)))?);
    out.push(check_op("neg", 12, one, |t, v| t.neg(v[0]))?);
    out.push(check_op("exp", 13, one, |t, v| t.exp(v[0]))?);
    out.push(check_op(
        "log",
        14,
        |rng| {
            let s = [extent(rng), extent(rng)];
            vec![uniform(rng, &s, 0.2, 3.0)]
        },
        |t, v| t.log(v[0]),
    )?);
    out.push(check_op(
        "relu",
        15,
        |rng| {
            let s = [extent(rng), extent(rng)];
            vec![away_from_zero(rng, &s, 0.01, 2.0)]
        },
        |t, v| t.relu(v[0]),
    )?);
    out.push(check_op("sigmoid", 16, one, |t, v| t.sigmoid(v[0]))?);
    out.push(check_op("softplus", 17, one, |t, v| t.softplus(v[0]))?);
    out.push(check_op(
        "add_row",
        18,
        |rng| {
            let (m, n) = (extent(rng), extent(rng));
            vec![uniform(rng, &[m, n], -2.0, 2.0), uniform(rng, &[n], -2.0, 2.0)]
        },
        |t, v| t.add_row(v[0], v[1]),
    )?);
    for axis in 0..2 {
        let a = axis as u64;
        out.push(check_op(&format!("log_softmax axis {axis}"), 19 + a, one, move |t, v| {
            t.log_softmax(v[0], axis)
        })?);
        out.push(check_op(&format!("softmax axis {axis}"), 21 + a, one, move |t, v| {
            t.softmax(v[0], axis)
        })?);
    }
    out.push(check_op("sum", 23, one, |t, v| t.sum(v[0]))?);
    out.push(check_op("mean", 24, one, |t, v| t.mean(v[0]))?);
    for axis in 0..2 {
        let a = axis as u64;
        out.push(check_op(&format!("sum axis {axis}"), 25 + a, one, move |t, v| {
            t.reduce(Reduction::Sum, v[0], Some(axis))
        })?);
        out.push(check_op(&format!("mean axis {axis}"), 27 + a, one, move |t, v| {
            t.reduce(Reduction::Mean, v[0], Some(axis))
        })?);
    }
    out.push(check_op(
        "concat columns",
        29,
        |rng| {
            let m = extent(rng);
            (0..3)
                .map(|_| {
                    let n = extent(rng);
                    uniform(rng, &[m, n], -2.0, 2.0)
                })
                .collect()
        },
        |t, v| t.concat(v, 1),
    )?);
    out.push(check_op(
        "concat rows",
        30,
        |rng| {
            let n = extent(rng);
            (0..2)
                .map(|_| {
                    let m = extent(rng);
                    uniform(rng, &[m, n], -2.0, 2.0)
                })
                .collect()
        },
        |t, v| t.concat(v, 0),
    )?);
    out.push(check_op("narrow", 31, one, |t, v| {
        let n = t.shape(v[0])[1];
        let start = n / 3;
        t.narrow(v[0], 1, start, n - start)
    })?);
    out.push(check_op("reshape", 32, one, |t, v| {
        let n = t.value(v[0]).numel();
        t.reshape(v[0], &[n])
    })?);

    out.push(check_op("categorical_kl_uniform", 33, one, |t, v| {
        categorical_kl_uniform(t, &CategoricalParams::new(v[0]))
    })?);
    out.push(check_op(
        "sample_concrete",
        34,
        |rng| {
            let s = [extent(rng), extent(rng)];
            vec![uniform(rng, &s, -1.0, 1.0)]
        },
        |t, v| {
            let mut noise = RngStream::new(t.value(v[0]).numel() as u64);
            Ok(sample_concrete(t, v[0], 1.5, &mut noise)?.value)
        },
    )?);
    let gaussian = |rng: &mut RngStream| {
        let s = [extent(rng), extent(rng)];
        (0..3).map(|_| uniform(rng, &s, -1.0, 1.0)).collect()
    };
    out.push(check_op("sample_diag_gaussian", 35, gaussian, |t, v| {
        let p = DiagGaussianParams { mean: v[0], log_variance: v[1] };
        let eps = t.constant(fixed(t.shape(v[0]), |rng| rng.standard_normal_scalar()));
        sample_diag_gaussian_with(t, &p, eps)
    })?);
    out.push(check_op("gaussian_log_density", 36, gaussian, |t, v| {
        let p = DiagGaussianParams { mean: v[0], log_variance: v[1] };
        gaussian_log_density(t, v[2], &p)
    })?);
    out.push(check_op(
        "diag_gaussian_kl",
        37,
        |rng| {
            let s = [extent(rng), extent(rng)];
            (0..4).map(|_| uniform(rng, &s, -1.0, 1.0)).collect()
        },
        |t, v| {
            let q = DiagGaussianParams { mean: v[0], log_variance: v[1] };
            let p = DiagGaussianParams { mean: v[2], log_variance: v[3] };
            diag_gaussian_kl(t, &q, &p)
        },
    )?);
    out.push(check_op("bernoulli_log_likelihood", 38, one, |t, v| {
        let x = t.constant(fixed(t.shape(v[0]), |rng| (rng.uniform() < 0.5) as u8 as f64));
        bernoulli_log_likelihood(t, x, v[0])
    })?);
    Ok(out)
}

/// A K = 3, 6-input model small enough for exhaustive central differences.
/// Biases are random so no relu sits exactly on its kink.
pub fn tiny_model(likelihood: Likelihood, seed: u64) -> Result<Gmvae> {
    let mut cfg = GmvaeConfig::tiny(3, 6, 2, 4);
    cfg.likelihood = likelihood;
    let mut rng = RngStream::new(seed);
    let mut model = Gmvae::new(cfg, &mut rng)?;
    for p in model.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value = p.value.map(|_| 0.2 * rng.uniform() - 0.1);
    }
    Ok(model)
}

fn batch(likelihood: Likelihood, rng: &mut RngStream) -> Tensor {
    let t = uniform(rng, &[4, 6], 0.0, 1.0);
    match likelihood {
        Likelihood::Bernoulli => t.map(|v| (v < 0.5) as u8 as f64),
        Likelihood::DiagGaussian => t,
    }
}

/// Full-objective check. The noise of the first evaluation is recorded and
/// replayed for every finite-difference evaluation.
pub fn check_objective(likelihood: Likelihood, concrete: bool) -> Result<CheckOutcome> {
    let name = format!(
        "{} objective, {} likelihood",
        if concrete { "concrete" } else { "marginal" },
        match likelihood {
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::DiagGaussian => "gaussian",
        }
    );
    let mut outcome = CheckOutcome { name, instances: INSTANCES as usize, worst: 0.0, detail: String::new() };
    for inst in 0..INSTANCES {
        let mut model = tiny_model(likelihood, 100 + inst)?;
        if model.params().numel() > MAX_PARAMETERS {
            return Err(gmvae::Error::Config(format!("{} parameters", model.params().numel())));
        }
        let mut rng = RngStream::derive(0x6f62_6a, concrete as u64, inst);
        let x = batch(likelihood, &mut rng);
        let w = 0.7;
        let eval = |model: &Gmvae, tape: &mut Tape, noise: &mut dyn Noise| -> Result<(Var, Bound)> {
            let b = model.bind(tape);
            let xv = tape.constant(x.clone());
            let terms = if concrete {
                elbo_concrete(model, tape, &b, xv, noise, CHECK_TEMPERATURE, w)?
            } else {
                elbo_marginal(model, tape, &b, xv, noise, w, false)?
            };
            Ok((terms.loss, b))
        };

        let mut recorder = RecordingNoise::new(rng.clone());
        let mut tape = Tape::new();
        let (loss, b) = eval(&model, &mut tape, &mut recorder)?;
        let script: ScriptedNoise = recorder.into_script();
        backward(tape, loss, model.params_mut(), &b)?;
        let analytic: Vec<f64> = model.params().iter().flat_map(|p| p.grad.data().to_vec()).collect();

        let cfg = model.config().clone();
        let mut params = model.params().clone();
        let numeric: Vec<f64> = finite_diff_gradient(&mut params, FD_STEP, |ps| {
            let m = Gmvae::from_params(cfg.clone(), ps.clone())?;
            let mut tape = Tape::new();
            let (loss, _) = eval(&m, &mut tape, &mut script.clone())?;
            tape.value(loss).item()
        })?
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
        let err = max_relative_error(&analytic, &numeric);
        if err >= outcome.worst {
            let (i, a, n) = worst_coordinate(&analytic, &numeric);
            let mut offset = i;
            let param = model
                .params()
                .iter()
                .find(|p| {
                    let hit = offset < p.value.numel();
                    if !hit {
                        offset -= p.value.numel();
                    }
                    hit
                })
                .map(|p| p.name.clone())
                .unwrap_or_default();
            outcome.worst = err;
            outcome.detail = format!("instance {inst}, {param}[{offset}]: analytic {a:e}, numeric {n:e}");
        }
    }
    Ok(outcome)
}

/// Both estimators under both likelihoods.
pub fn objective_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for concrete in [false, true] {
        for likelihood in [Likelihood::Bernoulli, Likelihood::DiagGaussian] {
            out.push(check_objective(likelihood, concrete)?);
        }
    }
    Ok(out)
}
