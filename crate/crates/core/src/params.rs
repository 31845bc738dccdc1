//! Named parameter tensors, their gradients, and the Adam optimizer.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// An ordered collection of named parameter matrices.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its id.
    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> usize {
        self.names.push(name.to_string());
        self.values.push(value);
        self.values.len() - 1
    }

    /// Appends a `rows×cols` tensor drawn elementwise from `U(-scale, scale)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> usize {
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..=scale));
        self.insert(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Lossless little-endian encoding: per tensor, name length, name, shape, then values.
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, value) in self.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
            for x in value.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }

    /// Inverse of [`ParamSet::write_bytes`]; returns the set and the number of bytes consumed.
    pub fn read_bytes(bytes: &[u8]) -> Option<(ParamSet, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        let count = cur.u32()? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?).ok()?.to_string();
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let raw = cur.take(rows.checked_mul(cols)?.checked_mul(8)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            set.insert(&name, Array2::from_shape_vec((rows, cols), data).ok()?);
        }
        Some((set, cur.pos))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
}

/// Gradients aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Grads {
    values: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads {
            values: params.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: usize) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn accumulate(&mut self, id: usize, g: &Array2<f64>) {
        self.values[id] += g;
    }

    /// Adds row `r` of `g` to row `ids[r]` of the gradient of `id`.
    pub fn accumulate_rows(&mut self, id: usize, ids: &[usize], g: &Array2<f64>) {
        let target = &mut self.values[id];
        for (r, &row) in ids.iter().enumerate() {
            let mut dst = target.row_mut(row);
            dst += &g.row(r);
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x * factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.values.iter()
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam optimizer state for one parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        for (id, g) in grads.values.iter().enumerate() {
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = &mut params.values[id];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        p.insert_uniform("w", 3, 4, 0.1, &mut rng);
        p.insert("b", array![[f64::MIN_POSITIVE, -0.0, 1e300]]);
        let mut bytes = Vec::new();
        p.write_bytes(&mut bytes);
        let (back, used) = ParamSet::read_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, p);
        assert!(ParamSet::read_bytes(&bytes[..bytes.len() - 1]).is_none());
    }

    #[test]
    fn uniform_init_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        p.insert_uniform("w", 50, 50, 0.1, &mut rng);
        assert!(p.value(0).iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = ParamSet::new();
        p.insert("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &p);
        for _ in 0..2000 {
            let mut g = Grads::zeros_like(&p);
            let grad = p.value(0).mapv(|x| 2.0 * x);
            g.accumulate(0, &grad);
            opt.step(&mut p, &g);
        }
        assert!(p.value(0).iter().all(|x| x.abs() < 1e-2));
    }
}
