//! Versioned JSON checkpoints: layer shapes plus row-major parameters.

use serde::{Deserialize, Serialize};

use super::{Encoding, Mlp, QFunction};
use crate::error::{Error, Result};

const FORMAT: &str = "offrl-qfunction";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    kind: String,
    /// `[S, A]` for tables, layer sizes for networks.
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoding: Option<Encoding>,
    params: Vec<f64>,
}

impl QFunction {
    pub fn to_checkpoint(&self) -> Result<String> {
        let (kind, encoding) = match self {
            QFunction::Tabular { .. } => ("tabular", None),
            QFunction::Network { encoding, .. } => ("network", Some(encoding.clone())),
        };
        let doc = Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            shape: self.shape(),
            encoding,
            params: self.params().to_vec(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Parse a checkpoint, checking that the parameter count agrees with the
    /// recorded shape.
    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::parse(
                1,
                format!("unknown checkpoint format {:?}", doc.format),
            ));
        }
        if doc.version != VERSION {
            return Err(Error::parse(
                1,
                format!("unsupported checkpoint version {}", doc.version),
            ));
        }
        let mismatch = |expected: String| Error::ShapeMismatch {
            expected,
            found: format!("{} parameters", doc.params.len()),
        };
        match doc.kind.as_str() {
            "tabular" => {
                let &[ns, na] = doc.shape.as_slice() else {
                    return Err(Error::ShapeMismatch {
                        expected: "tabular shape [S, A]".into(),
                        found: format!("{:?}", doc.shape),
                    });
                };
                if doc.params.len() != ns * na {
                    return Err(mismatch(format!("{} parameters", ns * na)));
                }
                Ok(QFunction::Tabular {
                    n_states: ns,
                    n_actions: na,
                    table: doc.params,
                })
            }
            "network" => {
                let encoding = doc
                    .encoding
                    .ok_or_else(|| Error::parse(1, "network checkpoint without encoding"))?;
                if doc.shape.first() != Some(&encoding.input_dim()) {
                    return Err(Error::ShapeMismatch {
                        expected: format!("input width {}", encoding.input_dim()),
                        found: format!("{:?}", doc.shape),
                    });
                }
                let shape = format!("layer sizes {:?}", doc.shape);
                let mlp = Mlp::from_parts(doc.shape, doc.params.clone())
                    .ok_or_else(|| mismatch(shape))?;
                Ok(QFunction::Network { encoding, mlp })
            }
            other => Err(Error::parse(
                1,
                format!("unknown Q-function kind {other:?}"),
            )),
        }
    }

    /// Load a checkpoint that must have exactly the shape of `template`.
    pub fn load_matching(text: &str, template: &QFunction) -> Result<Self> {
        let q = Self::from_checkpoint(text)?;
        if q.shape() != template.shape() || q.n_states() != template.n_states() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", template.shape()),
                found: format!("{:?}", q.shape()),
            });
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::Architecture;

    #[test]
    fn network_round_trip_is_exact() {
        let q = QFunction::build(&Architecture::Mlp { hidden: vec![7, 5] }, 4, 3, 11);
        let back = QFunction::from_checkpoint(&q.to_checkpoint().unwrap()).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn tabular_round_trip() {
        let mut q = QFunction::tabular(2, 3, 0.0);
        q.params_mut()[4] = 1.0 / 3.0;
        let back = QFunction::load_matching(&q.to_checkpoint().unwrap(), &q).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let q = QFunction::build(&Architecture::Mlp { hidden: vec![4] }, 4, 3, 0);
        let other = QFunction::build(&Architecture::Mlp { hidden: vec![5] }, 4, 3, 0);
        let text = q.to_checkpoint().unwrap();
        assert!(matches!(
            QFunction::load_matching(&text, &other),
            Err(Error::ShapeMismatch { .. })
        ));
        let truncated = text.replacen("\"params\":[", "\"params\":[0.5,", 1);
        assert!(matches!(
            QFunction::from_checkpoint(&truncated),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rejects_unknown_version() {
        let q = QFunction::tabular(1, 1, 0.0);
        let text = q
            .to_checkpoint()
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        assert!(QFunction::from_checkpoint(&text).is_err());
    }
}
