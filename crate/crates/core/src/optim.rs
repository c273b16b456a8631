use std::fmt;
use std::str::FromStr;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::nn::{ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    RmsProp,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::RmsProp];
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMS_DECAY: f64 = 0.9;
const EPSILON: f64 = 1e-8;

/// First-order optimizer over a [`ParamStore`]. Moment buffers share the
/// parameter layout so they can be checkpointed alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<F> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub steps: u64,
    pub first: Option<ParamStore<F>>,
    pub second: Option<ParamStore<F>>,
}

impl<F: Real> Optimizer<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParamStore<F>) -> Self {
        let (first, second) = match kind {
            OptimizerKind::Sgd => (None, None),
            OptimizerKind::Adam => (Some(params.zeros_like()), Some(params.zeros_like())),
            OptimizerKind::RmsProp => (None, Some(params.zeros_like())),
        };
        Self {
            kind,
            learning_rate,
            steps: 0,
            first,
            second,
        }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &ParamStore<F>) {
        self.steps += 1;
        let lr = F::of(self.learning_rate);
        let eps = F::of(EPSILON);
        match self.kind {
            OptimizerKind::Sgd => params.add_scaled(grads, -lr),
            OptimizerKind::RmsProp => {
                let decay = F::of(RMS_DECAY);
                let sq = self.second.as_mut().expect("rmsprop state");
                for ((p, g), s) in params.tensors_mut().iter_mut().zip(grads.tensors()).zip(sq.tensors_mut()) {
                    Zip::from(p).and(g).and(s).for_each(|p, &g, s| {
                        *s = decay * *s + (F::one() - decay) * g * g;
                        *p = *p - lr * g / (s.sqrt() + eps);
                    });
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (F::of(ADAM_BETA1), F::of(ADAM_BETA2));
                let t = self.steps as i32;
                let c1 = F::one() - F::of(ADAM_BETA1.powi(t));
                let c2 = F::one() - F::of(ADAM_BETA2.powi(t));
                let m = self.first.as_mut().expect("adam state");
                let v = self.second.as_mut().expect("adam state");
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                {
                    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = b1 * *m + (F::one() - b1) * g;
                        *v = b2 * *v + (F::one() - b2) * g * g;
                        *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn quadratic_descends(kind: OptimizerKind) {
        // minimise Σ (p - 3)^2
        let mut p = ParamStore::<f64>::new();
        p.push("w", Array2::zeros((2, 2)));
        let mut opt = Optimizer::new(kind, 0.05, &p);
        for _ in 0..2000 {
            let mut g = p.clone();
            g.get_mut(0).mapv_inplace(|v| 2.0 * (v - 3.0));
            opt.step(&mut p, &g);
        }
        assert!(p.get(0).iter().all(|v| (v - 3.0).abs() < 0.05), "{kind}: {:?}", p.get(0));
    }

    #[test]
    fn every_optimizer_minimises_a_quadratic() {
        for kind in OptimizerKind::ALL {
            quadratic_descends(kind);
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("RMSProp".parse::<OptimizerKind>().unwrap(), OptimizerKind::RmsProp);
        assert!("lbfgs".parse::<OptimizerKind>().is_err());
    }
}
