use std::f64::consts::PI;

/// Gaussian radial basis with a smooth cosine cutoff:
/// φ_k(d) = exp(−(d − μ_k)²/2w²) · ½(cos(πd/r_max) + 1), μ_k uniform on
/// [0, r_max], w = r_max/K.
#[derive(Debug, Clone)]
pub struct RadialBasis {
    r_max: f64,
    width: f64,
    centers: Vec<f64>,
}

impl RadialBasis {
    pub fn new(n_basis: usize, r_max: f64) -> Self {
        assert!(n_basis >= 2, "need at least two basis functions");
        let centers = (0..n_basis).map(|k| r_max * k as f64 / (n_basis - 1) as f64).collect();
        RadialBasis {
            r_max,
            width: r_max / n_basis as f64,
            centers,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// f_cut(d) and its derivative.
    #[inline]
    pub fn cutoff(&self, d: f64) -> (f64, f64) {
        if d >= self.r_max {
            return (0.0, 0.0);
        }
        let x = PI * d / self.r_max;
        (0.5 * (x.cos() + 1.0), -0.5 * PI / self.r_max * x.sin())
    }

    /// Adds `weight · φ_k(d)` to `out[k]`.
    #[inline]
    pub fn accumulate(&self, d: f64, out: &mut [f64]) {
        let (fc, _) = self.cutoff(d);
        if fc == 0.0 {
            return;
        }
        let inv = 1.0 / (2.0 * self.width * self.width);
        for (o, &mu) in out.iter_mut().zip(&self.centers) {
            let x = d - mu;
            *o += (-x * x * inv).exp() * fc;
        }
    }

    /// Writes φ'_k(d) into `out`.
    #[inline]
    pub fn derivatives(&self, d: f64, out: &mut [f64]) {
        let (fc, dfc) = self.cutoff(d);
        let w2 = self.width * self.width;
        let inv = 1.0 / (2.0 * w2);
        for (o, &mu) in out.iter_mut().zip(&self.centers) {
            let x = d - mu;
            let g = (-x * x * inv).exp();
            *o = g * (dfc - fc * x / w2);
        }
    }
}
