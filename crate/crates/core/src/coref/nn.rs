use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, stable for large magnitudes.
pub fn bce_with_logit(s: f64, y: f64) -> f64 {
    s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
}

pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let u = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array2::from_shape_simple_fn((rows, cols), || u.sample(rng))
}

/// Named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn to_record(&self) -> Vec<TensorRecord> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| TensorRecord {
                name: n.clone(),
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect()
    }

    pub fn from_record(records: Vec<TensorRecord>) -> Result<Self, String> {
        let mut p = Params::new();
        for r in records {
            let t = Array2::from_shape_vec((r.shape[0], r.shape[1]), r.data)
                .map_err(|e| format!("tensor {}: {e}", r.name))?;
            p.push(r.name, t);
        }
        Ok(p)
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        for i in 0..params.tensors.len() {
            Zip::from(&mut params.tensors[i])
                .and(&grads.tensors[i])
                .and(&mut self.m.tensors[i])
                .and(&mut self.v.tensors[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stable_bce() {
        assert!((bce_with_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-12);
        let s: f64 = 3.0;
        let p = sigmoid(s);
        assert!((bce_with_logit(s, 0.0) + (1.0 - p).ln()).abs() < 1e-12);
        assert!(bce_with_logit(800.0, 0.0).is_finite());
        assert!(bce_with_logit(-800.0, 1.0).is_finite());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Params::new();
        p.push("w", array![[1.0, -1.0]]);
        let mut g = p.zeros_like();
        g.tensors[0] = array![[0.5, -2.0]];
        let mut adam = Adam::new(&p, 0.1);
        adam.update(&mut p, &g);
        assert!((p.tensors[0][[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p.tensors[0][[0, 1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn record_round_trip() {
        let mut p = Params::new();
        p.push("a", array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(Params::from_record(p.to_record()).unwrap(), p);
    }
}
