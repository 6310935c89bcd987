//! Central finite-difference checks of graph gradients, with a catalogue
//! of randomised instances covering every differentiable op.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::nn::spectral::power_iterate;
use crate::rng::Seed;
use crate::tensor::Tensor;

const H: f64 = 1e-6;

type T64 = Tensor<f64>;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> T64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    T64::from_f64(shape, &data).expect("sized")
}

/// Values bounded away from zero, for kinked ops.
pub fn rand_away(rng: &mut ChaCha8Rng, shape: &[usize]) -> T64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    T64::from_f64(shape, &data).expect("sized")
}

fn contracted<F>(f: &F, vals: &[T64], weights: Option<&T64>, grads: bool) -> (f64, Vec<usize>, Vec<T64>)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = vals.iter().map(|v| g.variable(v.clone())).collect();
    let out = f(&mut g, &vars);
    let shape = g.shape(out).to_vec();
    let Some(w) = weights else {
        return (0.0, shape, Vec::new());
    };
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv).expect("same shape");
    let loss = g.sum_all(prod);
    let value = g.value(loss).data()[0];
    if !grads {
        return (value, shape, Vec::new());
    }
    let mut gr = g.backward(loss).expect("scalar loss");
    let gs = vars
        .iter()
        .zip(vals)
        .map(|(v, t)| gr.take(*v).unwrap_or_else(|| T64::zeros(t.shape())))
        .collect();
    (value, shape, gs)
}

/// Worst relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over the inputs, where
/// `a` is the analytic and `n` the numerical gradient of the output
/// contracted with random weights.
pub fn relative_error<F>(inputs: &[T64], rng: &mut ChaCha8Rng, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let (_, shape, _) = contracted(&f, inputs, None, false);
    let weights = rand_tensor(rng, &shape, -1.0, 1.0);
    let (_, _, analytic) = contracted(&f, inputs, Some(&weights), true);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut num = vec![0.0; input.numel()];
        for (j, slot) in num.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            let (fp, _, _) = contracted(&f, &plus, Some(&weights), false);
            let (fm, _, _) = contracted(&f, &minus, Some(&weights), false);
            *slot = (fp - fm) / (2.0 * H);
        }
        let a = analytic[k].data();
        let diff = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-10));
    }
    worst
}

/// One op family: a tolerance and a randomised instance returning its
/// worst relative error.
pub struct OpCheck {
    pub name: &'static str,
    pub tolerance: f64,
    pub instance: fn(&mut ChaCha8Rng) -> f64,
}

/// Worst error of `check` over `n` seeded instances.
pub fn run_check(check: &OpCheck, n: u64, seed: u64) -> f64 {
    (0..n)
        .map(|i| (check.instance)(&mut Seed(seed).named(check.name).child(i).rng()))
        .fold(0.0, f64::max)
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn pair(rng: &mut ChaCha8Rng) -> (T64, T64) {
    let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
    (rand_tensor(rng, &s, -2.0, 2.0), rand_tensor(rng, &s, -2.0, 2.0))
}

fn mat(rng: &mut ChaCha8Rng) -> T64 {
    let s = [dim(rng, 1, 3), dim(rng, 2, 6)];
    rand_tensor(rng, &s, -3.0, 3.0)
}

fn cube(rng: &mut ChaCha8Rng) -> T64 {
    let s = [dim(rng, 1, 3), dim(rng, 2, 4), dim(rng, 2, 4)];
    rand_tensor(rng, &s, -2.0, 2.0)
}

/// Every differentiable op with its tolerance: `1e-3` for convolution and
/// upsampling, `1e-4` otherwise.
pub fn catalogue() -> Vec<OpCheck> {
    vec![
        OpCheck { name: "add", tolerance: 1e-4, instance: |r| {
            let (a, b) = pair(r);
            relative_error(&[a, b], r, |g, v| g.add(v[0], v[1]).unwrap())
        } },
        OpCheck { name: "add_broadcast", tolerance: 1e-4, instance: |r| {
            let (a, _) = pair(r);
            let row = rand_tensor(r, &[1, a.shape()[1]], -2.0, 2.0);
            relative_error(&[a, row], r, |g, v| g.add(v[0], v[1]).unwrap())
        } },
        OpCheck { name: "sub", tolerance: 1e-4, instance: |r| {
            let (a, b) = pair(r);
            relative_error(&[a, b], r, |g, v| g.sub(v[0], v[1]).unwrap())
        } },
        OpCheck { name: "mul", tolerance: 1e-4, instance: |r| {
            let (a, b) = pair(r);
            relative_error(&[a, b], r, |g, v| g.mul(v[0], v[1]).unwrap())
        } },
        OpCheck { name: "mul_broadcast", tolerance: 1e-4, instance: |r| {
            let (a, _) = pair(r);
            let col = rand_tensor(r, &[a.shape()[0], 1], -2.0, 2.0);
            relative_error(&[a, col], r, |g, v| g.mul(v[0], v[1]).unwrap())
        } },
        OpCheck { name: "scale", tolerance: 1e-4, instance: |r| {
            let s = r.random_range(-2.0..2.0);
            relative_error(&[mat(r)], r, move |g, v| g.scale(v[0], s))
        } },
        OpCheck { name: "add_scalar", tolerance: 1e-4, instance: |r| {
            let s = r.random_range(-2.0..2.0);
            relative_error(&[mat(r)], r, move |g, v| g.add_scalar(v[0], s))
        } },
        OpCheck { name: "one_minus", tolerance: 1e-4, instance: |r| {
            relative_error(&[mat(r)], r, |g, v| g.one_minus(v[0]))
        } },
        OpCheck { name: "gelu", tolerance: 1e-4, instance: |r| {
            relative_error(&[mat(r)], r, |g, v| g.gelu(v[0]))
        } },
        OpCheck { name: "sigmoid", tolerance: 1e-4, instance: |r| {
            relative_error(&[mat(r)], r, |g, v| g.sigmoid(v[0]))
        } },
        OpCheck { name: "relu", tolerance: 1e-4, instance: |r| {
            let s = [dim(r, 1, 3), dim(r, 2, 6)];
            relative_error(&[rand_away(r, &s)], r, |g, v| g.relu(v[0]))
        } },
        OpCheck { name: "matmul", tolerance: 1e-4, instance: |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            let a = rand_tensor(r, &[m, k], -1.0, 1.0);
            let b = rand_tensor(r, &[k, n], -1.0, 1.0);
            relative_error(&[a, b], r, |g, v| g.matmul(v[0], v[1]).unwrap())
        } },
        OpCheck { name: "transpose", tolerance: 1e-4, instance: |r| {
            relative_error(&[mat(r)], r, |g, v| g.transpose(v[0]).unwrap())
        } },
        OpCheck { name: "reshape", tolerance: 1e-4, instance: |r| {
            let x = mat(r);
            let n = x.numel();
            relative_error(&[x], r, move |g, v| g.reshape(v[0], &[n]).unwrap())
        } },
        OpCheck { name: "concat", tolerance: 1e-4, instance: |r| {
            let a = mat(r);
            let axis = dim(r, 0, 1);
            let mut s = a.shape().to_vec();
            s[axis] = dim(r, 1, 3);
            let b = rand_tensor(r, &s, -1.0, 1.0);
            relative_error(&[a, b], r, move |g, v| g.concat(&[v[0], v[1]], axis).unwrap())
        } },
        OpCheck { name: "conv1d", tolerance: 1e-3, instance: |r| {
            let (ci, co, k) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4));
            let (stride, pad) = (dim(r, 1, 2), dim(r, 0, 2));
            let t = dim(r, k.max(3), 9);
            let x = if r.random::<bool>() {
                rand_tensor(r, &[ci, t], -1.0, 1.0)
            } else {
                rand_tensor(r, &[2, ci, t], -1.0, 1.0)
            };
            let w = rand_tensor(r, &[co, ci, k], -1.0, 1.0);
            relative_error(&[x, w], r, move |g, v| g.conv1d(v[0], v[1], stride, pad).unwrap())
        } },
        OpCheck { name: "upsample_linear", tolerance: 1e-3, instance: |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 6)];
            let f = dim(r, 1, 3);
            relative_error(&[rand_tensor(r, &s, -1.0, 1.0)], r, move |g, v| g.upsample_linear(v[0], f).unwrap())
        } },
        OpCheck { name: "softmax", tolerance: 1e-4, instance: |r| {
            let axis = dim(r, 0, 2);
            relative_error(&[cube(r)], r, move |g, v| g.softmax(v[0], axis).unwrap())
        } },
        OpCheck { name: "layer_norm", tolerance: 1e-4, instance: |r| {
            let x = cube(r);
            let axis = dim(r, 0, 2);
            let n = x.shape()[axis];
            let gamma = rand_tensor(r, &[n], 0.5, 1.5);
            let beta = rand_tensor(r, &[n], -0.5, 0.5);
            relative_error(&[x, gamma, beta], r, move |g, v| g.layer_norm(v[0], v[1], v[2], axis, 1e-5).unwrap())
        } },
        OpCheck { name: "sum_axis", tolerance: 1e-4, instance: |r| {
            let axis = dim(r, 0, 2);
            relative_error(&[cube(r)], r, move |g, v| g.sum_axis(v[0], axis).unwrap())
        } },
        OpCheck { name: "mean_axis", tolerance: 1e-4, instance: |r| {
            let axis = dim(r, 0, 2);
            relative_error(&[cube(r)], r, move |g, v| g.mean_axis(v[0], axis).unwrap())
        } },
        OpCheck { name: "sum_all", tolerance: 1e-4, instance: |r| {
            relative_error(&[cube(r)], r, |g, v| g.sum_all(v[0]))
        } },
        OpCheck { name: "mean_all", tolerance: 1e-4, instance: |r| {
            relative_error(&[cube(r)], r, |g, v| g.mean_all(v[0]))
        } },
        OpCheck { name: "mae", tolerance: 1e-4, instance: |r| {
            let x = cube(r);
            // keep every difference away from the kink at zero
            let d = rand_away(r, x.shape());
            relative_error(&[x.clone(), x], r, move |g, v| {
                let c = g.constant(d.clone());
                let shifted = g.add(v[1], c).unwrap();
                g.mae(v[0], shifted).unwrap()
            })
        } },
        OpCheck { name: "sinusoidal", tolerance: 1e-4, instance: |r| {
            let n = dim(r, 1, 4);
            let k = dim(r, 1, 4);
            relative_error(&[rand_tensor(r, &[n, 2], -3.0, 3.0)], r, move |g, v| g.sinusoidal(v[0], k).unwrap())
        } },
        OpCheck { name: "gather_rows", tolerance: 1e-4, instance: |r| {
            let n = dim(r, 1, 6);
            let rows: Vec<Option<usize>> = (0..n)
                .map(|_| if r.random_range(0..4) == 0 { None } else { Some(r.random_range(0..5)) })
                .collect();
            let table = rand_tensor(r, &[5, 2], -1.0, 1.0);
            relative_error(&[table], r, move |g, v| g.gather_rows(v[0], &rows).unwrap())
        } },
        OpCheck { name: "spectral_normalize", tolerance: 1e-4, instance: |r| {
            let (rows, c, k) = (dim(r, 1, 4), dim(r, 1, 3), dim(r, 1, 3));
            let w = rand_tensor(r, &[rows, c, k], -1.0, 1.0);
            // singular-vector estimates as a layer would hold them
            let mut u: Vec<f64> = (0..rows).map(|_| r.random_range(0.1..1.0)).collect();
            let (v, _) = power_iterate(w.data(), rows, c * k, &mut u, 3);
            relative_error(&[w], r, move |g, x| g.spectral_normalize(x[0], &u, &v).unwrap())
        } },
    ]
}
