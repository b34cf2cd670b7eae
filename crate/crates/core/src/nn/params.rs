use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Option<Vec<T>>,
}

/// Weights `θ_1..θ_s` of a stacked graph-convolution network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights and zero biases for the given layer widths
    /// (`dims[0]` is the input width, `dims.last()` the output width).
    pub fn glorot(dims: &[usize], bias: bool, rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::from_f64(rng.random_range(-limit..=limit)))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
                    bias: bias.then(|| vec![T::zero(); fan_out]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize], bias: bool) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| Layer {
                    weight: Matrix::zeros(w[0], w[1]),
                    bias: bias.then(|| vec![T::zero(); w[1]]),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: l.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
                })
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.weight.rows()).collect();
        d.push(self.output_dim());
        d
    }

    pub fn check(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::Shape {
                    op: "ModelParams",
                    detail: format!(
                        "layer {i} outputs {} but layer {} expects {}",
                        pair[0].weight.cols(),
                        i + 1,
                        pair[1].weight.rows()
                    ),
                });
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(b) = &l.bias {
                if b.len() != l.weight.cols() {
                    return Err(Error::Shape {
                        op: "ModelParams",
                        detail: format!("layer {i} bias has {} entries", b.len()),
                    });
                }
            }
            if !l.weight.is_finite() || l.bias.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: i });
            }
        }
        Ok(())
    }

    /// All parameter tensors in layer order (weight, then bias).
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.as_ref().map(|b| b.iter().map(|v| U::from_f64(v.as_f64())).collect()),
                })
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DFCKPT01";

impl ModelParams<f32> {
    /// Binary checkpoint: magic, layer count, then per layer
    /// `rows cols has_bias` (u64 LE) followed by row-major f32 LE weights and
    /// the bias vector when present.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        for l in &self.layers {
            for v in [l.weight.rows() as u64, l.weight.cols() as u64, l.bias.is_some() as u64] {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in l.weight.as_slice().iter().chain(l.bias.iter().flatten()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Schema("not a parameter checkpoint".into()));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let count = read_u64(&mut r)? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let has_bias = read_u64(&mut r)? != 0;
            let mut read_f32s = |len: usize| -> Result<Vec<f32>> {
                let mut buf = vec![0u8; len * 4];
                r.read_exact(&mut buf)?;
                Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            };
            let weight = Matrix::from_vec(rows, cols, read_f32s(rows * cols)?)?;
            let bias = if has_bias { Some(read_f32s(cols)?) } else { None };
            layers.push(Layer { weight, bias });
        }
        let p = Self { layers };
        p.check()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn glorot_shapes_and_bounds() {
        let p = ModelParams::<f32>::glorot(&[10, 4, 3], true, &mut seeded(0, 0));
        assert_eq!(p.dims(), vec![10, 4, 3]);
        assert_eq!(p.num_params(), 10 * 4 + 4 + 4 * 3 + 3);
        let limit = (6.0f32 / 14.0).sqrt();
        assert!(p.layers[0].weight.as_slice().iter().all(|v| v.abs() <= limit));
        p.check().unwrap();
    }

    #[test]
    fn bad_checkpoint_rejected() {
        assert!(ModelParams::read_checkpoint(&b"nonsense........"[..]).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip(seed in 0u64..1000, hidden in 1usize..6, bias: bool) {
            let p = ModelParams::<f32>::glorot(&[3, hidden, 2], bias, &mut seeded(seed, 1));
            let mut buf = Vec::new();
            p.write_checkpoint(&mut buf).unwrap();
            let back = ModelParams::read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
