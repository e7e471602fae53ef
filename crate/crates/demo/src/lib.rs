//! Browser bindings over `micon-core`. Each export takes plain values and
//! returns a JSON string; the logic lives in [`ops`] so it runs natively too.

use wasm_bindgen::prelude::*;

pub mod ops;

fn to_js<T: serde::Serialize>(r: micon_core::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Radius-2 fingerprints of two SMILES and their Tanimoto similarity.
#[wasm_bindgen]
pub fn compare_molecules(a: &str, b: &str) -> Result<String, JsError> {
    to_js(ops::compare_molecules(a, b))
}

/// Perturbation-aware loss and its gradient for 2-D points given as
/// `[x0, y0, x1, y1, ...]` with one label per point.
#[wasm_bindgen]
pub fn paclr_points(xy: Vec<f64>, labels: Vec<u32>, tau: f64) -> Result<String, JsError> {
    to_js(ops::paclr_points(&xy, &labels, tau))
}

/// Raw-feature retrieval accuracy on a small generated screen.
#[wasm_bindgen]
pub fn toy_retrieval(seed: u64, batch_strength: f64, noise_sd: f64, post: &str) -> Result<String, JsError> {
    let post = post.parse().map_err(|e: String| JsError::new(&e))?;
    to_js(ops::toy_retrieval(seed, batch_strength, noise_sd, post))
}
