//! Model files: a JSON document whose parameter blocks are base64-encoded
//! row-major little-endian `f64` arrays.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Dense, FeatureSelector, HeadError, HeadModel, Loss, OutputActivation};
use crate::matrix::Matrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "affectkit-head";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    selector: FeatureSelector,
    activation: OutputActivation,
    input_dim: usize,
    hidden_size: Option<usize>,
    outputs: usize,
    seed: u64,
    loss: Loss,
    blocks: Vec<Block>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    name: String,
    shape: [usize; 2],
    data: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(block: &Block) -> Result<Vec<f64>, HeadError> {
    let bytes = STANDARD
        .decode(&block.data)
        .map_err(|e| HeadError::Malformed(format!("block {}: {e}", block.name)))?;
    let expected = block.shape[0] * block.shape[1];
    if bytes.len() != expected * 8 {
        return Err(HeadError::Malformed(format!(
            "block {} holds {} bytes, shape {:?} needs {}",
            block.name,
            bytes.len(),
            block.shape,
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_model(model: &HeadModel) -> Result<String, HeadError> {
    model.validate()?;
    let mut blocks = Vec::new();
    for (name, layer) in [
        ("hidden", model.hidden.as_ref()),
        ("output", Some(&model.output)),
    ] {
        let Some(layer) = layer else { continue };
        blocks.push(Block {
            name: format!("{name}.weight"),
            shape: [layer.outputs(), layer.inputs()],
            data: encode(layer.weight.as_slice()),
        });
        blocks.push(Block {
            name: format!("{name}.bias"),
            shape: [layer.outputs(), 1],
            data: encode(&layer.bias),
        });
    }
    let file = ModelFile {
        format: FORMAT_TAG.into(),
        version: MODEL_FORMAT_VERSION,
        selector: model.selector,
        activation: model.activation,
        input_dim: model.input_dim(),
        hidden_size: model.hidden.as_ref().map(Dense::outputs),
        outputs: model.output.outputs(),
        seed: model.seed,
        loss: model.loss.clone(),
        blocks,
    };
    let mut text =
        serde_json::to_string_pretty(&file).map_err(|e| HeadError::Malformed(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn read_model(text: &str) -> Result<HeadModel, HeadError> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| HeadError::Malformed(e.to_string()))?;
    if file.format != FORMAT_TAG || file.version != MODEL_FORMAT_VERSION {
        return Err(HeadError::Malformed(format!(
            "unsupported model format {:?} version {}",
            file.format, file.version
        )));
    }
    let find = |name: &str| {
        file.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| HeadError::Malformed(format!("missing block {name}")))
    };
    let layer = |prefix: &str, inputs: usize, outputs: usize| -> Result<Dense, HeadError> {
        let w = find(&format!("{prefix}.weight"))?;
        let b = find(&format!("{prefix}.bias"))?;
        if w.shape != [outputs, inputs] || b.shape != [outputs, 1] {
            return Err(HeadError::Malformed(format!(
                "{prefix} block shapes disagree with header"
            )));
        }
        Ok(Dense {
            weight: Matrix::from_vec(outputs, inputs, decode(w)?),
            bias: decode(b)?,
        })
    };
    let hidden = file
        .hidden_size
        .map(|h| layer("hidden", file.input_dim, h))
        .transpose()?;
    let output = layer(
        "output",
        file.hidden_size.unwrap_or(file.input_dim),
        file.outputs,
    )?;
    let expected_blocks = if hidden.is_some() { 4 } else { 2 };
    if file.blocks.len() != expected_blocks {
        return Err(HeadError::Malformed(format!(
            "expected {expected_blocks} parameter blocks, found {}",
            file.blocks.len()
        )));
    }
    let model = HeadModel {
        selector: file.selector,
        hidden,
        output,
        activation: file.activation,
        loss: file.loss,
        seed: file.seed,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &HeadModel, path: impl AsRef<Path>) -> Result<(), HeadError> {
    let path = path.as_ref();
    fs::write(path, write_model(model)?).map_err(|source| HeadError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HeadModel, HeadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| HeadError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{train_classifier, TrainConfig};
    use proptest::prelude::*;

    fn toy_model(seed: u64, hidden: usize) -> HeadModel {
        let x = Matrix::from_vec(4, 3, (0..12).map(|v| v as f64 / 12.0).collect());
        let cfg = TrainConfig {
            epochs: 2,
            hidden_size: hidden,
            seed,
            ..TrainConfig::default()
        };
        train_classifier(
            FeatureSelector::Embeddings,
            &x,
            &[0, 1, 7, 1],
            8,
            &cfg,
            None,
        )
        .unwrap()
        .model
    }

    #[test]
    fn rejects_tampered_files() {
        let text = write_model(&toy_model(1, 4)).unwrap();
        assert!(read_model(&text.replace("\"version\": 1", "\"version\": 9")).is_err());
        assert!(read_model(&text.replace("\"outputs\": 8", "\"outputs\": 12")).is_err());
        assert!(read_model("{}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn write_read_round_trip(seed in any::<u64>(), hidden in 1usize..6) {
            let m = toy_model(seed, hidden);
            let text = write_model(&m).unwrap();
            let back = read_model(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(write_model(&back).unwrap(), text);
        }
    }
}
