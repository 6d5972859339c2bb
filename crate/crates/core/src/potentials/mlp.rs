//! Scalar-output tanh perceptron over a flat parameter vector, with
//! hand-written reverse mode.
//!
//! Besides the usual parameter and input gradients, [`MlpShape::param_backward`]
//! can differentiate a forward-mode tangent (the directional derivative of
//! the output along an input direction `z`) with respect to the parameters.
//! That mixed second-order term is what the force part of the energy/force
//! loss needs.

/// Layer sizes `[input, hidden..., 1]` and the parameter layout: for every
/// layer, an `out × in` row-major weight block followed by `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpShape {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    n_params: usize,
}

/// Forward activations of one evaluation, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    /// h[0] = input, h[l] = tanh(a[l]) for hidden layers
    h: Vec<Vec<f64>>,
    /// forward tangents: hdot[0] = input direction, hdot[l] = (1 − h²)·adot[l]
    hdot: Vec<Vec<f64>>,
    adot: Vec<Vec<f64>>,
    output_tangent: f64,
    g: Vec<f64>,
    g_next: Vec<f64>,
    gt: Vec<f64>,
    gt_next: Vec<f64>,
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && *sizes.last().unwrap() == 1);
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut n = 0;
        for w in sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        MlpShape {
            sizes,
            offsets,
            n_params: n,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Range of layer `l`'s weight block in the flat parameter vector.
    pub fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l];
        start..start + self.sizes[l] * self.sizes[l + 1]
    }

    pub fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.weight_range(l).end;
        start..start + self.sizes[l + 1]
    }

    pub fn new_tape(&self) -> MlpTape {
        let widest = *self.sizes.iter().max().unwrap();
        MlpTape {
            h: self.sizes[..self.sizes.len() - 1]
                .iter()
                .map(|&n| vec![0.0; n])
                .collect(),
            hdot: self.sizes[..self.sizes.len() - 1]
                .iter()
                .map(|&n| vec![0.0; n])
                .collect(),
            adot: self.sizes[..self.sizes.len() - 1]
                .iter()
                .map(|&n| vec![0.0; n])
                .collect(),
            output_tangent: 0.0,
            g: vec![0.0; widest],
            g_next: vec![0.0; widest],
            gt: vec![0.0; widest],
            gt_next: vec![0.0; widest],
        }
    }

    /// Evaluates the network at `x`, recording activations on `tape`.
    pub fn forward(&self, params: &[f64], x: &[f64], tape: &mut MlpTape) -> f64 {
        debug_assert_eq!(params.len(), self.n_params);
        tape.h[0].copy_from_slice(x);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[self.weight_range(l)];
            let b = &params[self.bias_range(l)];
            if l == last {
                let a: f64 = b[0] + dot(&w[..n_in], &tape.h[l]);
                return a;
            }
            let (lo, hi) = tape.h.split_at_mut(l + 1);
            let input = &lo[l];
            let out = &mut hi[0];
            for o in 0..n_out {
                out[o] = (b[o] + dot(&w[o * n_in..(o + 1) * n_in], input)).tanh();
            }
        }
        unreachable!()
    }

    /// Propagates an input direction `z` through the recorded forward pass
    /// and returns the directional derivative of the output along it.
    pub fn forward_tangent(&self, params: &[f64], z: &[f64], tape: &mut MlpTape) -> f64 {
        tape.hdot[0].copy_from_slice(z);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[self.weight_range(l)];
            if l == last {
                tape.output_tangent = dot(&w[..n_in], &tape.hdot[l]);
                return tape.output_tangent;
            }
            for o in 0..n_out {
                let ad = dot(&w[o * n_in..(o + 1) * n_in], &tape.hdot[l]);
                let h = tape.h[l + 1][o];
                tape.adot[l + 1][o] = ad;
                tape.hdot[l + 1][o] = (1.0 - h * h) * ad;
            }
        }
        unreachable!()
    }

    /// Gradient of the output with respect to the input, written to `gx`.
    pub fn input_gradient(&self, params: &[f64], tape: &mut MlpTape, gx: &mut [f64]) {
        let MlpTape { h, g, g_next, .. } = tape;
        g[0] = 1.0;
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[self.weight_range(l)];
            let dst: &mut [f64] = if l == 0 { &mut *gx } else { &mut g_next[..n_in] };
            dst.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                for (d, &wv) in dst.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *d += go * wv;
                }
            }
            if l > 0 {
                for i in 0..n_in {
                    let hv = h[l][i];
                    g[i] = g_next[i] * (1.0 - hv * hv);
                }
            }
        }
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `energy_weight · e(x) + ė` where ė is the tangent recorded by
    /// [`forward_tangent`](Self::forward_tangent). With `with_tangent =
    /// false` only the first term is differentiated.
    pub fn param_backward(
        &self,
        params: &[f64],
        tape: &mut MlpTape,
        energy_weight: f64,
        with_tangent: bool,
        grad: &mut [f64],
    ) {
        let MlpTape {
            h,
            hdot,
            adot,
            g,
            g_next,
            gt,
            gt_next,
            ..
        } = tape;
        g[0] = energy_weight;
        gt[0] = if with_tangent { 1.0 } else { 0.0 };
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let wr = self.weight_range(l);
            let br = self.bias_range(l);
            let w = &params[wr.clone()];
            {
                let gw = &mut grad[wr];
                for o in 0..n_out {
                    let (go, gto) = (g[o], gt[o]);
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    if go != 0.0 {
                        for (r, &x) in row.iter_mut().zip(&h[l]) {
                            *r += go * x;
                        }
                    }
                    if with_tangent && gto != 0.0 {
                        for (r, &x) in row.iter_mut().zip(&hdot[l]) {
                            *r += gto * x;
                        }
                    }
                }
            }
            for (gb, &go) in grad[br].iter_mut().zip(g.iter()) {
                *gb += go;
            }
            if l == 0 {
                break;
            }
            // back through W: g_h = Wᵀ g_a, gt_h = Wᵀ gt_a
            g_next[..n_in].iter_mut().for_each(|v| *v = 0.0);
            gt_next[..n_in].iter_mut().for_each(|v| *v = 0.0);
            for o in 0..n_out {
                let wrow = &w[o * n_in..(o + 1) * n_in];
                let go = g[o];
                if go != 0.0 {
                    for (d, &wv) in g_next[..n_in].iter_mut().zip(wrow) {
                        *d += go * wv;
                    }
                }
                if with_tangent {
                    let gto = gt[o];
                    if gto != 0.0 {
                        for (d, &wv) in gt_next[..n_in].iter_mut().zip(wrow) {
                            *d += gto * wv;
                        }
                    }
                }
            }
            // back through h = tanh(a), ḣ = (1 − h²)·ȧ
            for i in 0..n_in {
                let hv = h[l][i];
                let s = 1.0 - hv * hv;
                let mut gh = g_next[i];
                if with_tangent {
                    gt[i] = gt_next[i] * s;
                    gh += gt_next[i] * (-2.0 * hv * adot[l][i]);
                } else {
                    gt[i] = 0.0;
                }
                g[i] = gh * s;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_params(shape: &MlpShape, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..shape.n_params()).map(|_| rng.random_range(-0.8..0.8)).collect()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let shape = MlpShape::new(vec![4, 6, 5, 1]);
        let p = random_params(&shape, 1);
        let x = vec![0.3, -0.2, 0.9, 0.1];
        let mut tape = shape.new_tape();
        shape.forward(&p, &x, &mut tape);
        let mut gx = vec![0.0; 4];
        shape.input_gradient(&p, &mut tape, &mut gx);
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (shape.forward(&p, &xp, &mut tape) - shape.forward(&p, &xm, &mut tape)) / 2e-6;
            assert!((fd - gx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn tangent_param_gradient_matches_finite_differences() {
        let shape = MlpShape::new(vec![3, 5, 4, 1]);
        let p = random_params(&shape, 2);
        let x = vec![0.5, -0.4, 0.2];
        let z = vec![0.7, 0.1, -0.3];
        let c = 0.37;
        let objective = |params: &[f64]| {
            let mut t = shape.new_tape();
            let e = shape.forward(params, &x, &mut t);
            c * e + shape.forward_tangent(params, &z, &mut t)
        };
        let mut tape = shape.new_tape();
        shape.forward(&p, &x, &mut tape);
        shape.forward_tangent(&p, &z, &mut tape);
        let mut grad = vec![0.0; shape.n_params()];
        shape.param_backward(&p, &mut tape, c, true, &mut grad);
        for k in 0..shape.n_params() {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[k] += 1e-6;
            pm[k] -= 1e-6;
            let fd = (objective(&pp) - objective(&pm)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-7, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }
}
