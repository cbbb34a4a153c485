//! JSON checkpoints: a manifest of shapes plus base64-encoded little-endian
//! `f64` arrays in canonical tensor order. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Embedding, Layer, MlpParams, RffMatrix};
use crate::model::PrbModel;

pub const FORMAT: &str = "magfield-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingManifest {
    Fourier { rows: usize, seed: u64 },
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub embedding: EmbeddingManifest,
    pub hidden_activation: String,
    pub output_activation: String,
    /// Layer widths `[input, hidden..., output]` per network.
    pub mag_net: Vec<usize>,
    pub phase_net: Vec<usize>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub arrays: Vec<String>,
}

fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() != expected * 8 {
        return Err(format!("expected {} values, found {} bytes", expected, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn net_entries(prefix: &str, net: &MlpParams, out: &mut Vec<TensorEntry>) {
    for (i, l) in net.layers.iter().enumerate() {
        out.push(TensorEntry {
            name: format!("{prefix}.weight{i}"),
            shape: vec![l.weight.nrows(), l.weight.ncols()],
        });
    }
    for (i, l) in net.layers.iter().enumerate() {
        out.push(TensorEntry {
            name: format!("{prefix}.bias{i}"),
            shape: vec![l.bias.len()],
        });
    }
}

impl Checkpoint {
    pub fn from_model(model: &PrbModel) -> Self {
        let mut tensors = Vec::new();
        let mut arrays = Vec::new();
        let embedding = match &model.embedding {
            Embedding::Fourier(rff) => {
                tensors.push(TensorEntry {
                    name: "rff.B".into(),
                    shape: vec![rff.rows(), 3],
                });
                arrays.push(encode(rff.matrix().as_slice().expect("standard layout")));
                EmbeddingManifest::Fourier {
                    rows: rff.rows(),
                    seed: rff.seed(),
                }
            }
            Embedding::Identity => EmbeddingManifest::Identity,
        };
        net_entries("mag", &model.mag_net, &mut tensors);
        net_entries("phase", &model.phase_net, &mut tensors);
        arrays.extend(model.tensors().into_iter().map(encode));
        Checkpoint {
            manifest: Manifest {
                format: FORMAT.into(),
                embedding,
                hidden_activation: "tanh".into(),
                output_activation: "identity".into(),
                mag_net: model.mag_net.dims(),
                phase_net: model.phase_net.dims(),
                tensors,
            },
            arrays,
        }
    }

    pub fn to_model(&self) -> std::result::Result<PrbModel, String> {
        let m = &self.manifest;
        if m.format != FORMAT {
            return Err(format!("unsupported format {:?}", m.format));
        }
        if m.hidden_activation != "tanh" || m.output_activation != "identity" {
            return Err("unsupported activation".into());
        }
        if m.tensors.len() != self.arrays.len() {
            return Err("tensor list and array list differ in length".into());
        }
        let mut arrays = m.tensors.iter().zip(&self.arrays).map(|(entry, text)| {
            let n: usize = entry.shape.iter().product();
            decode(text, n).map(|v| (entry, v)).map_err(|e| format!("{}: {e}", entry.name))
        });
        let mut next = |name: &str| -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
            let (entry, values) = arrays.next().ok_or_else(|| format!("missing tensor {name}"))??;
            if entry.name != name {
                return Err(format!("expected tensor {name}, found {}", entry.name));
            }
            Ok((entry.shape.clone(), values))
        };
        let embedding = match m.embedding {
            EmbeddingManifest::Fourier { rows, seed } => {
                let (shape, values) = next("rff.B")?;
                if shape != [rows, 3] {
                    return Err("rff.B shape disagrees with manifest".into());
                }
                let b = Array2::from_shape_vec((rows, 3), values).map_err(|e| e.to_string())?;
                Embedding::Fourier(RffMatrix::from_matrix(b, seed).map_err(|e| e.to_string())?)
            }
            EmbeddingManifest::Identity => Embedding::Identity,
        };
        let mut read_net = |prefix: &str, dims: &[usize]| -> std::result::Result<MlpParams, String> {
            if dims.len() < 2 {
                return Err(format!("{prefix}: network needs at least one layer"));
            }
            let mut weights = Vec::new();
            for (i, w) in dims.windows(2).enumerate() {
                let (shape, values) = next(&format!("{prefix}.weight{i}"))?;
                if shape != [w[1], w[0]] {
                    return Err(format!("{prefix}.weight{i}: shape disagrees with layer widths"));
                }
                weights.push(Array2::from_shape_vec((w[1], w[0]), values).map_err(|e| e.to_string())?);
            }
            let mut layers = Vec::new();
            for (i, weight) in weights.into_iter().enumerate() {
                let (shape, values) = next(&format!("{prefix}.bias{i}"))?;
                if shape != [weight.nrows()] {
                    return Err(format!("{prefix}.bias{i}: shape disagrees with layer widths"));
                }
                layers.push(Layer {
                    weight,
                    bias: Array1::from(values),
                });
            }
            Ok(MlpParams { layers })
        };
        let mag = read_net("mag", &m.mag_net)?;
        let phase = read_net("phase", &m.phase_net)?;
        PrbModel::from_parts(embedding, mag, phase).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

pub fn save_model(model: &PrbModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, Checkpoint::from_model(model).to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<PrbModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
        .and_then(|c| c.to_model())
        .map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkShape;

    #[test]
    fn bit_exact_round_trip() {
        let mut model = PrbModel::new(
            &NetworkShape {
                rff_rows: 8,
                hidden_layers: 2,
                width: 6,
            },
            17,
        );
        // Values whose decimal forms would not survive a lossy encoding.
        model.mag_net.layers[0].bias[0] = f64::MIN_POSITIVE;
        model.phase_net.layers[2].bias[0] = 0.1 + 0.2;
        let json = Checkpoint::from_model(&model).to_json();
        let back = Checkpoint::from_json(&json).unwrap().to_model().unwrap();
        assert_eq!(back, model);
        let bits = |m: &PrbModel| m.tensors().concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
    }

    #[test]
    fn manifest_lists_shapes() {
        let model = PrbModel::new(
            &NetworkShape {
                rff_rows: 4,
                hidden_layers: 1,
                width: 3,
            },
            0,
        );
        let ck = Checkpoint::from_model(&model);
        assert_eq!(ck.manifest.embedding, EmbeddingManifest::Fourier { rows: 4, seed: 0 });
        assert_eq!(ck.manifest.mag_net, vec![8, 3, 1]);
        let names: Vec<&str> = ck.manifest.tensors.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "rff.B",
                "mag.weight0",
                "mag.weight1",
                "mag.bias0",
                "mag.bias1",
                "phase.weight0",
                "phase.weight1",
                "phase.bias0",
                "phase.bias1"
            ]
        );
    }

    #[test]
    fn corrupted_array_is_rejected() {
        let model = PrbModel::new(
            &NetworkShape {
                rff_rows: 2,
                hidden_layers: 1,
                width: 2,
            },
            0,
        );
        let mut ck = Checkpoint::from_model(&model);
        ck.arrays[1] = STANDARD.encode([0u8; 8]);
        assert!(ck.to_model().is_err());
    }
}
