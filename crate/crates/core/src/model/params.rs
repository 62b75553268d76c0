//! Trainable tensors and their initialisation.
//!
//! Every tensor has a stable name used by checkpoints and gradient reports:
//! `Q`, `K` for the embeddings, `W1..W8`, `U1..U8`, `b1..b8` for the two
//! recurrent cells (1..4 acquisition, 5..8 knowledge state), `Wa1 Wa2 wa ba1
//! ba2` and `Wg1 Wg2 wg bg1 bg2` for the two pooled score heads, `Wp1 Wp2 bp1
//! bp2 wp bp` for the problem-solving head, and `irt_w irt_b` for the learned
//! combiner that only the `no_irt` variant carries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::autodiff::Tensor;

const EMBEDDING_STD: f64 = 0.02;
const FORGET_BIAS: f64 = 1.0;
const HEAD_BIAS: f64 = 0.1;

/// Gate order is input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: [Tensor; 4],
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

/// Two-layer ReLU network followed by an element-wise output weight.
/// Shared layout of the acquisition and knowledge-state heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w_out: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    /// 1 × 3d row.
    pub w_out: Tensor,
    /// Scalar.
    pub b_out: Tensor,
}

/// Affine combiner `w · [α, β, ζ] + b` of the `no_irt` ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct IrtAffine {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QiktParams {
    pub config: ModelConfig,
    pub question_emb: Tensor,
    pub kc_emb: Tensor,
    pub ka_lstm: LstmParams,
    pub ks_lstm: LstmParams,
    pub ka_head: ScoreHead,
    pub ks_head: ScoreHead,
    pub ps_head: SolverHead,
    pub irt: Option<IrtAffine>,
}

/// Name and shape of every tensor a config requires, in canonical order.
pub fn expected_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, n, m) = (cfg.d, cfg.n, cfg.m);
    let mut out = vec![("Q".to_string(), vec![n, d]), ("K".to_string(), vec![m, d])];
    for (first, in_width) in [(1, 4 * d), (5, 2 * d)] {
        for g in 0..4 {
            out.push((format!("W{}", first + g), vec![d, in_width]));
        }
        for g in 0..4 {
            out.push((format!("U{}", first + g), vec![d, d]));
        }
        for g in 0..4 {
            out.push((format!("b{}", first + g), vec![d]));
        }
    }
    for (tag, width) in [("a", n), ("g", m)] {
        out.push((format!("W{tag}1"), vec![d, d]));
        out.push((format!("b{tag}1"), vec![d]));
        out.push((format!("W{tag}2"), vec![width, d]));
        out.push((format!("b{tag}2"), vec![width]));
        out.push((format!("w{tag}"), vec![width]));
    }
    let p = 3 * d;
    out.push(("Wp1".to_string(), vec![p, p]));
    out.push(("bp1".to_string(), vec![p]));
    out.push(("Wp2".to_string(), vec![p, p]));
    out.push(("bp2".to_string(), vec![p]));
    out.push(("wp".to_string(), vec![1, p]));
    out.push(("bp".to_string(), vec![]));
    if cfg.variant.learned_combiner() {
        out.push(("irt_w".to_string(), vec![3]));
        out.push(("irt_b".to_string(), vec![]));
    }
    out
}

/// Trainable parameters living in the prediction layer itself.
pub fn prediction_layer_parameter_count(cfg: &ModelConfig) -> usize {
    if cfg.variant.learned_combiner() {
        4
    } else {
        0
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("valid std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }

    fn lstm(&mut self, d: usize, in_width: usize) -> LstmParams {
        let w = std::array::from_fn(|_| self.uniform(&[d, in_width], in_width));
        let u = std::array::from_fn(|_| self.uniform(&[d, d], d));
        let b = std::array::from_fn(|g| {
            if g == 1 {
                Tensor::filled(&[d], FORGET_BIAS)
            } else {
                self.uniform(&[d], in_width)
            }
        });
        LstmParams { w, u, b }
    }

    fn score_head(&mut self, d: usize, width: usize) -> ScoreHead {
        ScoreHead {
            w1: self.uniform(&[d, d], d),
            b1: Tensor::filled(&[d], HEAD_BIAS),
            w2: self.uniform(&[width, d], d),
            b2: Tensor::filled(&[width], HEAD_BIAS),
            w_out: self.uniform(&[width], width),
        }
    }
}

impl QiktParams {
    /// Uniform `±1/sqrt(fan_in)` weights, N(0, 0.02²) embeddings and unit
    /// forget-gate biases, all drawn from a ChaCha stream seeded by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let (d, n, m) = (config.d, config.n, config.m);
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let question_emb = init.normal(&[n, d], EMBEDDING_STD);
        let kc_emb = init.normal(&[m, d], EMBEDDING_STD);
        let ka_lstm = init.lstm(d, 4 * d);
        let ks_lstm = init.lstm(d, 2 * d);
        let ka_head = init.score_head(d, n);
        let ks_head = init.score_head(d, m);
        let p = 3 * d;
        let ps_head = SolverHead {
            w1: init.uniform(&[p, p], p),
            b1: Tensor::filled(&[p], HEAD_BIAS),
            w2: init.uniform(&[p, p], p),
            b2: Tensor::filled(&[p], HEAD_BIAS),
            w_out: init.uniform(&[1, p], p),
            b_out: init.uniform(&[], p),
        };
        let irt = config.variant.learned_combiner().then(|| IrtAffine {
            w: Tensor::filled(&[3], 1.0),
            b: Tensor::scalar(0.0),
        });
        Self {
            config,
            question_emb,
            kc_emb,
            ka_lstm,
            ks_lstm,
            ka_head,
            ks_head,
            ps_head,
            irt,
        }
    }

    /// Every tensor set to zero.
    pub fn zeros(config: ModelConfig) -> Self {
        let mut p = Self::init(config, 0);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    /// Tensors in canonical order (same as [`expected_layout`]).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.question_emb, &self.kc_emb];
        for cell in [&self.ka_lstm, &self.ks_lstm] {
            out.extend(cell.w.iter());
            out.extend(cell.u.iter());
            out.extend(cell.b.iter());
        }
        for head in [&self.ka_head, &self.ks_head] {
            out.extend([&head.w1, &head.b1, &head.w2, &head.b2, &head.w_out]);
        }
        let ps = &self.ps_head;
        out.extend([&ps.w1, &ps.b1, &ps.w2, &ps.b2, &ps.w_out, &ps.b_out]);
        if let Some(irt) = &self.irt {
            out.extend([&irt.w, &irt.b]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.question_emb, &mut self.kc_emb];
        for cell in [&mut self.ka_lstm, &mut self.ks_lstm] {
            out.extend(cell.w.iter_mut());
            out.extend(cell.u.iter_mut());
            out.extend(cell.b.iter_mut());
        }
        for head in [&mut self.ka_head, &mut self.ks_head] {
            out.extend([
                &mut head.w1,
                &mut head.b1,
                &mut head.w2,
                &mut head.b2,
                &mut head.w_out,
            ]);
        }
        let ps = &mut self.ps_head;
        out.extend([
            &mut ps.w1,
            &mut ps.b1,
            &mut ps.w2,
            &mut ps.b2,
            &mut ps.w_out,
            &mut ps.b_out,
        ]);
        if let Some(irt) = &mut self.irt {
            out.extend([&mut irt.w, &mut irt.b]);
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        expected_layout(&self.config)
            .into_iter()
            .map(|(name, _)| name)
            .zip(self.tensors())
            .collect()
    }

    /// Rebuilds a parameter set from tensors given in canonical order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> crate::Result<Self> {
        let layout = expected_layout(&config);
        if layout.len() != tensors.len() {
            return Err(crate::Error::Checkpoint(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(crate::Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut p = Self::zeros(config);
        for (dst, src) in p.tensors_mut().into_iter().zip(tensors) {
            *dst = src;
        }
        Ok(p)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn layout_matches_tensors() {
        let cfg = ModelConfig::new(3, 5, 2, 1.0, Variant::NoIrt).unwrap();
        let p = QiktParams::init(cfg, 9);
        let layout = expected_layout(&cfg);
        assert_eq!(layout.len(), p.tensors().len());
        for ((_, shape), t) in layout.iter().zip(p.tensors()) {
            assert_eq!(t.shape(), shape.as_slice());
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::new(4, 6, 3, 1.0, Variant::Full).unwrap();
        assert_eq!(QiktParams::init(cfg, 1), QiktParams::init(cfg, 1));
        assert_ne!(QiktParams::init(cfg, 1), QiktParams::init(cfg, 2));
    }

    #[test]
    fn forget_biases_start_at_one() {
        let cfg = ModelConfig::new(4, 6, 3, 1.0, Variant::Full).unwrap();
        let p = QiktParams::init(cfg, 3);
        assert!(p.ka_lstm.b[1].data().iter().all(|&v| v == 1.0));
        assert!(p.ks_lstm.b[1].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn parameter_count_formula() {
        let (d, n, m) = (4usize, 6usize, 3usize);
        let cfg = ModelConfig::new(d, n, m, 1.0, Variant::Full).unwrap();
        let p = QiktParams::init(cfg, 0);
        let ka = 4 * (d * 4 * d + d * d + d);
        let ks = 4 * (d * 2 * d + d * d + d);
        let head = |w: usize| d * d + d + w * d + w + w;
        let ps = 2 * (9 * d * d + 3 * d) + 3 * d + 1;
        assert_eq!(p.parameter_count(), n * d + m * d + ka + ks + head(n) + head(m) + ps);
        assert_eq!(prediction_layer_parameter_count(&cfg), 0);
    }
}
