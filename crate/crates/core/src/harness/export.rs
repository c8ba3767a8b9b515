use std::path::Path;

use serde::{Deserialize, Serialize};

use super::imageio::write_gray;
use crate::error::{Error, Result};
use crate::model::EfficientFcn;
use crate::nn::{Mode, Session};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightmapEntry {
    pub codeword: usize,
    pub file: String,
    pub min: f64,
    pub max: f64,
}

/// Min-max scales a map to bytes; a constant map becomes uniform 128.
pub fn normalize_map(values: &[f32]) -> (Vec<u8>, f64, f64) {
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let bytes = if max > min {
        let span = (max - min) as f64;
        values
            .iter()
            .map(|&v| (255.0 * (v - min) as f64 / span).round() as u8)
            .collect()
    } else {
        vec![128; values.len()]
    };
    (bytes, min as f64, max as f64)
}

/// Writes each channel of a `(1, n, h, w)` tensor as `weightmap_XXX.png` plus
/// `index.json`.
pub fn write_weightmaps(maps: &Tensor<f32>, out_dir: impl AsRef<Path>) -> Result<Vec<WeightmapEntry>> {
    let dir = out_dir.as_ref();
    let s = maps.shape();
    if s.n != 1 {
        return Err(Error::Shape {
            op: "export_weightmaps",
            msg: format!("expected a single image, got {s}"),
        });
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::with_capacity(s.c);
    for i in 0..s.c {
        let (bytes, min, max) = normalize_map(maps.plane(0, i));
        let file = format!("weightmap_{i:03}.png");
        write_gray(dir.join(&file), s.w, s.h, bytes)?;
        index.push(WeightmapEntry {
            codeword: i,
            file,
            min,
            max,
        });
    }
    let idx = dir.join("index.json");
    std::fs::write(&idx, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&idx, e))?;
    Ok(index)
}

/// Runs the model on `image` and exports the normalized weighting maps.
pub fn export_weightmaps(
    model: &EfficientFcn<f32>,
    image: &Tensor<f32>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<WeightmapEntry>> {
    let mut sess = Session::frozen(&model.store, Mode::Eval);
    let x = sess.tape.constant(image.batch_item(0));
    let out = model.forward(&mut sess, x)?;
    write_weightmaps(sess.tape.value(out.codebook.a_norm), out_dir)
}
