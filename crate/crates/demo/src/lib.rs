//! A four-feature toy credit model explained under all eight value
//! functions, exposed to the browser through `wasm-bindgen`.
//!
//! The pure functions in [`ops`] return JSON strings and are what the tests
//! exercise; the `#[wasm_bindgen]` wrappers only forward to them.

pub mod ops;

use wasm_bindgen::prelude::*;

/// Feature names, ranges, the default applicant, and variant names.
#[wasm_bindgen]
pub fn toy_info() -> String {
    ops::toy_info()
}

/// Exact attributions of `x` (JSON array) under one variant.
#[wasm_bindgen]
pub fn explain(x_json: &str, variant: &str) -> Result<String, JsValue> {
    ops::explain(x_json, variant).map_err(|e| JsValue::from_str(&e))
}

/// All eight variants side by side, with sparsity and rank agreement.
#[wasm_bindgen]
pub fn compare(x_json: &str) -> Result<String, JsValue> {
    ops::compare(x_json).map_err(|e| JsValue::from_str(&e))
}
