//! Small dense networks with hand-written backpropagation.
//!
//! Hidden layers use `tanh`; the output layer is linear. Everything is `f64`
//! and single-threaded so runs replay bit-for-bit.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and the final output of a batched forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Same layout as the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. Weights start uniform in
    /// `±1/sqrt(fan_in)`, the last layer in `±final_scale`.
    pub fn new(sizes: &[usize], final_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "network needs at least an input and an output size");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(idx, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = if idx == last { final_scale } else { 1.0 / (fan_in as f64).sqrt() };
                let mut draw = || rng.random_range(-bound..=bound);
                let w = Array2::from_shape_simple_fn((fan_out, fan_in), &mut draw);
                let b = Array1::from_shape_simple_fn(fan_out, &mut draw);
                Dense { w, b }
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, x: &Array2<f64>) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = cur.dot(&layer.w.t());
            z += &layer.b;
            if idx != last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(std::mem::replace(&mut cur, z));
        }
        Trace { inputs, output: cur }
    }

    pub fn predict(&self, x: &Array1<f64>) -> Array1<f64> {
        let row = x.view().insert_axis(Axis(0)).to_owned();
        self.forward(&row).output.row(0).to_owned()
    }

    /// Gradients of `Σ grad_out ⊙ output` with respect to parameters and
    /// inputs, given the trace of the same forward pass.
    pub fn backward(&self, trace: &Trace, grad_out: &Array2<f64>) -> (Grads, Array2<f64>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_out.clone();
        for idx in (0..n).rev() {
            let input = &trace.inputs[idx];
            gw.push(delta.t().dot(input));
            gb.push(delta.sum_axis(Axis(0)));
            let mut back = delta.dot(&self.layers[idx].w);
            if idx > 0 {
                // `input` is tanh output of the previous layer
                back.zip_mut_with(input, |g, &a| *g *= 1.0 - a * a);
            }
            delta = back;
        }
        gw.reverse();
        gb.reverse();
        (Grads { w: gw, b: gb }, delta)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p = *it.next().expect("length checked"));
        }
        Ok(())
    }

    /// `self ← tau·online + (1 − tau)·self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.w.zip_mut_with(&o.w, |a, &b| *a = tau * b + (1.0 - tau) * *a);
            t.b.zip_mut_with(&o.b, |a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
    }
}

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        self.w.iter().zip(&self.b).flat_map(|(w, b)| w.iter().chain(b.iter()).copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros = Grads {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        };
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Descends along `g`.
    pub fn apply(&mut self, net: &mut Mlp, g: &Grads) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.w)
                .and(&mut self.m.w[i])
                .and(&mut self.v.w[i])
                .and(&g.w[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.b)
                .and(&mut self.m.b[i])
                .and(&mut self.v.b[i])
                .and(&g.b[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net() -> (Mlp, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (Mlp::new(&[5, 7, 6, 3], 0.5, &mut rng), rng)
    }

    fn loss(net: &Mlp, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
        (&net.forward(x).output * w).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut mlp, mut rng) = net();
        let x = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let trace = mlp.forward(&x);
        let (g, gx) = mlp.backward(&trace, &w);
        let analytic = g.flat();
        let mut flat = mlp.flat_params();
        let h = 1e-6;
        for k in 0..flat.len() {
            let orig = flat[k];
            flat[k] = orig + h;
            mlp.set_flat_params(&flat).unwrap();
            let up = loss(&mlp, &x, &w);
            flat[k] = orig - h;
            mlp.set_flat_params(&flat).unwrap();
            let down = loss(&mlp, &x, &w);
            flat[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic[k]).abs() <= 1e-6 * fd.abs().max(1.0), "param {k}: {fd} vs {}", analytic[k]);
        }
        mlp.set_flat_params(&flat).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&mlp, &xp, &w) - loss(&mlp, &xm, &w)) / (2.0 * h);
                assert!((fd - gx[[r, c]]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn soft_update_blends() {
        let (online, _) = net();
        let mut target = online.clone();
        target.soft_update_from(&online, 0.01);
        let drift = target.flat_params().iter().zip(online.flat_params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-15);
        let zero = vec![0.0; online.param_count()];
        let one = vec![1.0; online.param_count()];
        let mut t = online.clone();
        t.set_flat_params(&zero).unwrap();
        let mut o = online.clone();
        o.set_flat_params(&one).unwrap();
        t.soft_update_from(&o, 0.01);
        assert!(t.flat_params().iter().all(|&p| (p - 0.01).abs() < 1e-15));
        for _ in 0..99 {
            t.soft_update_from(&o, 0.01);
        }
        let expect = 1.0 - 0.99f64.powi(100);
        assert!(t.flat_params().iter().all(|&p| (p - expect).abs() < 1e-12));
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::new(&[2, 8, 1], 0.1, &mut rng);
        let mut opt = Adam::new(&mlp, 1e-2);
        let x = Array2::from_shape_simple_fn((16, 2), || rng.random_range(-1.0..1.0));
        let target = x.column(0).to_owned() * 0.5 - &x.column(1);
        let mse = |m: &Mlp| {
            let out = m.forward(&x).output;
            (&out.column(0) - &target).mapv(|d| d * d).mean().unwrap()
        };
        let before = mse(&mlp);
        for _ in 0..300 {
            let trace = mlp.forward(&x);
            let resid = &trace.output.column(0) - &target;
            let g_out = (resid * (2.0 / 16.0)).insert_axis(Axis(1));
            let (g, _) = mlp.backward(&trace, &g_out);
            opt.apply(&mut mlp, &g);
        }
        assert!(mse(&mlp) < 0.05 * before);
    }

    #[test]
    fn flat_params_round_trip() {
        let (mut mlp, _) = net();
        let p = mlp.flat_params();
        assert_eq!(p.len(), 5 * 7 + 7 + 7 * 6 + 6 + 6 * 3 + 3);
        mlp.set_flat_params(&p).unwrap();
        assert_eq!(mlp.flat_params(), p);
        assert!(mlp.set_flat_params(&p[1..]).is_err());
        assert_eq!(mlp.sizes(), vec![5, 7, 6, 3]);
    }
}
