//! Browser playground for the provenance tester.
//!
//! Thin `wasm-bindgen` wrappers over [`scenarios`]; every export takes
//! plain numbers and returns a JSON string for the page to render. The
//! scenario logic itself is host-testable.

pub mod scenarios;

use wasm_bindgen::prelude::*;

fn to_json<T: serde::Serialize>(value: provtest::Result<T>) -> String {
    match value {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

/// Runs the candidate-set tester on a fresh synthetic zoo whose only child
/// was derived from `base-00` at perturbation rate `rho`.
#[wasm_bindgen]
pub fn identify_demo(seed: u32, rho: f64, prompt_count: u32, alpha: f64) -> String {
    to_json(scenarios::identify(seed as u64, rho, prompt_count as usize, alpha))
}

/// Runs successive elimination over arms with the requested true agreement
/// levels and returns the per-round trace.
#[wasm_bindgen]
pub fn bai_demo(seed: u32, arm_mus: Vec<f64>, alpha: f64, budget: u32) -> String {
    to_json(scenarios::bai_trace(seed as u64, &arm_mus, alpha, budget as u64))
}

/// Selects prompts by rejection sampling and returns the running mean
/// pairwise agreement of the reference models, slot by slot.
#[wasm_bindgen]
pub fn rejection_demo(seed: u32, k: u32, slots: u32, tau: f64) -> String {
    to_json(scenarios::rejection_trend(seed as u64, k, slots as usize, tau))
}
