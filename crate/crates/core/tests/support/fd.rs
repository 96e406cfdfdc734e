//! Central finite-difference checks of every hand-written gradient.

use ood_forge_core::cider::{loss_compactness, loss_dispersion, PrototypeBank};
use ood_forge_core::detectors::linear_log_softmax_input_grad;
use ood_forge_core::nnet::{cross_entropy_grad, Dense, LinearProbe, Mlp};
use ood_forge_core::numerics::{l2_normalize, softmax, Matrix};
use ood_forge_core::rng::Rng;

/// Largest absolute difference relative to the largest entry of either
/// gradient.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-12, f64::max);
    diff / scale
}

pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

const H: f64 = 1e-5;

fn flatten(layer: &Dense) -> Vec<f64> {
    let mut v = layer.weights.as_slice().to_vec();
    v.extend_from_slice(&layer.bias);
    v
}

fn unflatten(params: &[f64], outputs: usize, inputs: usize) -> Dense {
    let split = outputs * inputs;
    Dense::new(
        Matrix::new(outputs, inputs, params[..split].to_vec()).unwrap(),
        params[split..].to_vec(),
    )
    .unwrap()
}

/// Mean cross-entropy (with weight decay) of a random probe on a random batch.
pub fn probe_cross_entropy(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (c, d, n) = (2 + rng.below(4), 1 + rng.below(6), 1 + rng.below(8));
    let decay = if rng.below(2) == 0 { 0.0 } else { rng.uniform(0.0, 0.1) };
    let probe =
        LinearProbe::new(Matrix::new(c, d, rng.gaussian_vec(c * d)).unwrap(), rng.gaussian_vec(c))
            .unwrap();
    let x = Matrix::new(n, d, rng.gaussian_vec(n * d)).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
    let (_, grads) = cross_entropy_grad(&probe, &x, &labels, decay).unwrap();
    let numeric = central_diff(
        |p| {
            let layer = unflatten(p, c, d);
            let probe = LinearProbe::new(layer.weights, layer.bias).unwrap();
            cross_entropy_grad(&probe, &x, &labels, decay).unwrap().0
        },
        &flatten(&probe.layer),
        H,
    );
    rel_err(&flatten(&grads), &numeric)
}

fn random_mlp(rng: &mut Rng, widths: &[usize]) -> Mlp {
    Mlp::from_layers(
        widths
            .windows(2)
            .map(|w| {
                Dense::new(
                    Matrix::new(w[1], w[0], rng.gaussian_vec(w[0] * w[1])).unwrap(),
                    rng.gaussian_vec(w[1]),
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap()
}

/// Smallest |pre-activation| of the hidden layers.
fn kink_distance(m: &Mlp, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let mut closest = f64::INFINITY;
    let last = m.layers().len() - 1;
    for (i, layer) in m.layers().iter().enumerate() {
        let z = layer.forward(&h).unwrap();
        if i < last {
            closest = z.iter().fold(closest, |a, v| a.min(v.abs()));
        }
        h = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    closest
}

/// Parameter and input gradients of `r · mlp(x)` for a random 5→7→3 network.
///
/// Instances with a hidden pre-activation within 1e-3 of the rectifier kink
/// are redrawn, since a finite difference across the kink is meaningless.
pub fn mlp(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let widths = [5, 7, 3];
    let (m, x) = loop {
        let m = random_mlp(&mut rng, &widths);
        let x = rng.gaussian_vec(5);
        if kink_distance(&m, &x) > 1e-3 {
            break (m, x);
        }
    };
    let r = rng.gaussian_vec(3);
    let objective = |m: &Mlp, x: &[f64]| -> f64 {
        m.apply(x).unwrap().iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let (_, tape) = m.forward(&x).unwrap();
    let (grads, input_grad) = m.backward(&tape, &r).unwrap();

    let mut worst = rel_err(&input_grad, &central_diff(|x| objective(&m, x), &x, H));
    for (li, layer) in m.layers().iter().enumerate() {
        let (o, i) = (layer.outputs(), layer.inputs());
        let numeric = central_diff(
            |p| {
                let mut layers = m.layers().to_vec();
                layers[li] = unflatten(p, o, i);
                objective(&Mlp::from_layers(layers).unwrap(), &x)
            },
            &flatten(layer),
            H,
        );
        worst = worst.max(rel_err(&flatten(&grads.layers[li]), &numeric));
    }
    worst
}

fn random_unit_rows(rng: &mut Rng, rows: usize, dim: usize) -> Matrix {
    let data: Vec<f64> = (0..rows)
        .flat_map(|_| l2_normalize(&rng.gaussian_vec(dim)).unwrap())
        .collect();
    Matrix::new(rows, dim, data).unwrap()
}

/// Compactness gradient with respect to the batch of projections.
///
/// The loss only accepts unit vectors (within 1e-6), so the step is 1e-7.
pub fn compactness(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (c, d, n) = (2 + rng.below(4), 2 + rng.below(6), 1 + rng.below(8));
    let tau = rng.uniform(0.1, 1.0);
    let bank = PrototypeBank::new(random_unit_rows(&mut rng, c, d), 0.9, tau).unwrap();
    let z = random_unit_rows(&mut rng, n, d);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
    let (_, grad) = loss_compactness(&z, &labels, &bank).unwrap();
    let numeric = central_diff(
        |flat| {
            let z = Matrix::new(n, d, flat.to_vec()).unwrap();
            loss_compactness(&z, &labels, &bank).unwrap().0
        },
        z.as_slice(),
        1e-7,
    );
    rel_err(grad.as_slice(), &numeric)
}

/// Dispersion gradient, compared on the tangent space of each prototype:
/// the bank re-normalizes its rows, so differences only see the tangential
/// component.
pub fn dispersion(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (c, d) = (2 + rng.below(5), 2 + rng.below(6));
    let tau = rng.uniform(0.1, 1.0);
    let mu = random_unit_rows(&mut rng, c, d);
    let bank = PrototypeBank::new(mu.clone(), 0.9, tau).unwrap();
    let (_, grad) = loss_dispersion(&bank).unwrap();
    let mut projected = grad.clone();
    for k in 0..c {
        let m = mu.row(k);
        let gm: f64 = grad.row(k).iter().zip(m).map(|(a, b)| a * b).sum();
        for (p, mi) in projected.row_mut(k).iter_mut().zip(m) {
            *p -= gm * mi;
        }
    }
    let numeric = central_diff(
        |flat| {
            let raw = Matrix::new(c, d, flat.to_vec()).unwrap();
            loss_dispersion(&PrototypeBank::new(raw, 0.9, tau).unwrap())
                .unwrap()
                .0
        },
        mu.as_slice(),
        H,
    );
    rel_err(projected.as_slice(), &numeric)
}

/// Input gradient of `log softmax(probe(x)/T)` at a random class.
pub fn odin_linear(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (c, d) = (2 + rng.below(5), 1 + rng.below(8));
    let probe =
        LinearProbe::new(Matrix::new(c, d, rng.gaussian_vec(c * d)).unwrap(), rng.gaussian_vec(c))
            .unwrap();
    let x = rng.gaussian_vec(d);
    let class = rng.below(c);
    // Log-uniform temperature over [1, 1000].
    let t = 10f64.powf(rng.uniform(0.0, 3.0));
    let analytic = linear_log_softmax_input_grad(&probe, &x, class, t).unwrap();
    let numeric = central_diff(
        |x| {
            let logits: Vec<f64> = probe
                .weights()
                .iter_rows()
                .zip(probe.bias())
                .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
                .map(|l| l / t)
                .collect();
            softmax(&logits).unwrap()[class].ln()
        },
        &x,
        H,
    );
    rel_err(&analytic, &numeric)
}

pub struct GradCheck {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

pub const CHECKS: [(&str, fn(u64) -> f64); 5] = [
    ("probe cross-entropy", probe_cross_entropy),
    ("MLP forward/backward", mlp),
    ("compactness loss", compactness),
    ("dispersion loss", dispersion),
    ("ODIN linear input gradient", odin_linear),
];

pub fn run_suite(instances: usize) -> Vec<GradCheck> {
    CHECKS
        .iter()
        .map(|&(name, check)| GradCheck {
            name,
            instances,
            worst: (0..instances as u64).map(check).fold(0.0, f64::max),
        })
        .collect()
}
