//! Q-function representations: a plain table and a small ReLU network with
//! hand-written backpropagation, plus the Adam optimizer that trains both.

mod checkpoint;
mod gradcheck;
mod mlp;
mod optim;

pub use gradcheck::{central_difference_check, GradCheckReport};
pub use mlp::Mlp;
pub use optim::Adam;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};

/// Maps a state id to the network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Encoding {
    OneHot {
        n_states: usize,
    },
    /// Fixed-length feature vector per state.
    Features {
        table: Vec<Vec<f64>>,
    },
}

impl Encoding {
    pub fn n_states(&self) -> usize {
        match self {
            Encoding::OneHot { n_states } => *n_states,
            Encoding::Features { table } => table.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoding::OneHot { n_states } => *n_states,
            Encoding::Features { table } => table.first().map_or(0, |r| r.len()),
        }
    }

    pub(crate) fn input(&self, s: usize) -> mlp::Input<'_> {
        match self {
            Encoding::OneHot { .. } => mlp::Input::OneHot(s),
            Encoding::Features { table } => mlp::Input::Dense(&table[s]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Architecture {
    Tabular,
    /// ReLU hidden layers of the given widths, linear output.
    Mlp {
        hidden: Vec<usize>,
    },
}

impl Architecture {
    /// Two hidden layers of 256 units.
    pub fn default_network() -> Self {
        Architecture::Mlp {
            hidden: vec![256, 256],
        }
    }

    /// Three hidden layers of 512 units.
    pub fn wide_network() -> Self {
        Architecture::Mlp {
            hidden: vec![512, 512, 512],
        }
    }

    pub fn label(&self) -> String {
        match self {
            Architecture::Tabular => "tabular".into(),
            Architecture::Mlp { hidden } => {
                let w: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                format!("mlp{}", w.join("x"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QFunction {
    Tabular {
        n_states: usize,
        n_actions: usize,
        /// `table[s * n_actions + a]`
        table: Vec<f64>,
    },
    Network {
        encoding: Encoding,
        mlp: Mlp,
    },
}

/// Activations kept from [`QFunction::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    states: Vec<usize>,
    layers: Vec<Vec<Vec<f64>>>,
}

impl QFunction {
    pub fn tabular(n_states: usize, n_actions: usize, init: f64) -> Self {
        QFunction::Tabular {
            n_states,
            n_actions,
            table: vec![init; n_states * n_actions],
        }
    }

    pub fn network(
        encoding: Encoding,
        hidden: &[usize],
        n_actions: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut sizes = vec![encoding.input_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        QFunction::Network {
            encoding,
            mlp: Mlp::uniform_fan_in(&sizes, rng),
        }
    }

    /// Build a fresh Q-function for `arch` over one-hot states.
    pub fn build(arch: &Architecture, n_states: usize, n_actions: usize, seed: u64) -> Self {
        match arch {
            Architecture::Tabular => Self::tabular(n_states, n_actions, 0.0),
            Architecture::Mlp { hidden } => Self::network(
                Encoding::OneHot { n_states },
                hidden,
                n_actions,
                &mut seeded(seed),
            ),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            QFunction::Tabular { n_states, .. } => *n_states,
            QFunction::Network { encoding, .. } => encoding.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            QFunction::Tabular { n_actions, .. } => *n_actions,
            QFunction::Network { mlp, .. } => mlp.output_dim(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            QFunction::Tabular { table, .. } => table,
            QFunction::Network { mlp, .. } => mlp.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            QFunction::Tabular { table, .. } => table,
            QFunction::Network { mlp, .. } => mlp.params_mut(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// `Q(s, ·)`
    pub fn forward(&self, s: usize) -> Vec<f64> {
        match self {
            QFunction::Tabular {
                n_actions, table, ..
            } => table[s * n_actions..(s + 1) * n_actions].to_vec(),
            QFunction::Network { encoding, mlp } => mlp.forward(encoding.input(s)),
        }
    }

    /// Outputs for a batch of states, row-major `[batch][action]`, plus the
    /// cache the backward pass needs.
    pub fn forward_batch(&self, states: &[usize]) -> (Vec<f64>, ForwardCache) {
        match self {
            QFunction::Tabular {
                n_actions, table, ..
            } => {
                let mut out = Vec::with_capacity(states.len() * n_actions);
                for &s in states {
                    out.extend_from_slice(&table[s * n_actions..(s + 1) * n_actions]);
                }
                let cache = ForwardCache {
                    states: states.to_vec(),
                    layers: Vec::new(),
                };
                (out, cache)
            }
            QFunction::Network { encoding, mlp } => {
                let na = mlp.output_dim();
                let mut out = Vec::with_capacity(states.len() * na);
                let mut layers = Vec::with_capacity(states.len());
                for &s in states {
                    let acts = mlp.forward_cached(encoding.input(s));
                    out.extend_from_slice(acts.last().expect("output layer"));
                    layers.push(acts);
                }
                let cache = ForwardCache {
                    states: states.to_vec(),
                    layers,
                };
                (out, cache)
            }
        }
    }

    /// Gradient of `sum_b sum_a grad_out[b][a] * Q(s_b, a)` with respect to
    /// every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let na = self.n_actions();
        if grad_out.len() != cache.states.len() * na {
            return Err(Error::ShapeMismatch {
                expected: format!("{} output gradients", cache.states.len() * na),
                found: grad_out.len().to_string(),
            });
        }
        let mut grad = vec![0.0; self.n_params()];
        match self {
            QFunction::Tabular { .. } => {
                for (b, &s) in cache.states.iter().enumerate() {
                    for a in 0..na {
                        grad[s * na + a] += grad_out[b * na + a];
                    }
                }
            }
            QFunction::Network { encoding, mlp } => {
                for (b, &s) in cache.states.iter().enumerate() {
                    mlp.backward_accumulate(
                        encoding.input(s),
                        &cache.layers[b],
                        &grad_out[b * na..(b + 1) * na],
                        &mut grad,
                    );
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step: 0,
                total: f64::NAN,
                gap: f64::NAN,
                bellman: f64::NAN,
            });
        }
        Ok(grad)
    }

    /// Shape description used by checkpoints: layer sizes, or `[S, A]` for
    /// tables.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            QFunction::Tabular {
                n_states,
                n_actions,
                ..
            } => vec![*n_states, *n_actions],
            QFunction::Network { mlp, .. } => mlp.sizes().to_vec(),
        }
    }
}
