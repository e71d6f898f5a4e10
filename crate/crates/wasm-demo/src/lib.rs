//! Browser bindings for the interactive demo page in `www/`.
//!
//! Each export takes plain numbers or a JSON string and returns a JSON
//! string. The `*_value` functions hold the logic so it can be tested
//! natively.

use irsa_core::analysis::{aoi_violation_prob, average_aoi, plr_lower_bound, throughput, AoiInputs};
use irsa_core::decode::{sic_conventional, sic_genie, sic_identify, DecodeResult, DecoderOptions};
use irsa_core::energy_chain::{average_degree_distribution, BatteryChain};
use irsa_core::sim::FrameTrace;
use irsa_core::{Capacity, DegreeDistribution, Error, Result, SystemConfig};
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Battery chain of a full-battery AVOID population and the loss bound it implies.
pub fn battery_explorer_value(
    num_devices: u32,
    frame_length: u32,
    alpha_u: f64,
    capacity: u32,
    eta_m: f64,
    max_degree: u32,
) -> Result<Value> {
    let config = SystemConfig::new(
        num_devices,
        frame_length,
        alpha_u / num_devices as f64,
        Capacity::Finite(capacity),
        eta_m / frame_length as f64,
        max_degree,
    )?;
    let dist = DegreeDistribution::full_battery(capacity, max_degree);
    let chain = BatteryChain::avoid(&config, &dist)?;
    let phi = &chain.steady_state;
    let bound = plr_lower_bound(&config, dist.row(0), phi[0])?;
    let load = config.channel_load();
    Ok(json!({
        "sigma": config.activation_prob(),
        "load": load,
        "steady_state": phi,
        "average_degree": average_degree_distribution(phi, &dist)?,
        "plr_lower_bound": bound,
        "throughput_upper_bound": throughput(load, bound),
    }))
}

/// Normalized average AoI and violation probability against the loss rate.
pub fn age_curves_value(num_devices: u32, frame_length: u32, alpha_u: f64, theta: u64, points: u32) -> Result<Value> {
    if points < 2 {
        return Err(Error::OutOfRange(format!("need at least 2 points, got {points}")));
    }
    let config = SystemConfig::new(
        num_devices,
        frame_length,
        alpha_u / num_devices as f64,
        Capacity::Unlimited,
        0.0,
        1,
    )?;
    let u = num_devices as f64;
    let mut loss = Vec::with_capacity(points as usize);
    let mut aoi = Vec::with_capacity(points as usize);
    let mut avp = Vec::with_capacity(points as usize);
    for i in 0..points {
        // The last point stays just below 1, where the age diverges.
        let p = 0.99 * i as f64 / (points - 1) as f64;
        let inputs = AoiInputs::from_config(&config, p);
        loss.push(p);
        aoi.push(average_aoi(&inputs) / u);
        avp.push(aoi_violation_prob(theta, &inputs));
    }
    Ok(json!({ "loss": loss, "aoi_norm": aoi, "avp": avp }))
}

#[derive(Debug, Deserialize)]
struct Pattern {
    intended: Vec<u32>,
    #[serde(default)]
    dropped: Vec<u32>,
}

fn decode_summary(result: &DecodeResult, trace: &FrameTrace) -> Value {
    json!({
        "order": result.decoded_devices(trace),
        "iterations": result.iterations,
        "subset_attempts": result.subset_attempts,
        "residual_sizes": result.residual_sizes,
    })
}

/// Runs the three decoders on a hand-made frame. `patterns` is a JSON array
/// of `{"intended": [...], "dropped": [...]}` with zero-based slots.
pub fn decode_frame_value(frame_length: u32, patterns: &str) -> Result<Value> {
    let parsed: Vec<Pattern> =
        serde_json::from_str(patterns).map_err(|e| Error::InvalidConfig(format!("patterns: {e}")))?;
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = parsed.into_iter().map(|p| (p.intended, p.dropped)).collect();
    let trace = FrameTrace::from_patterns(frame_length, &pairs)?;
    let options = DecoderOptions::default();
    let conventional = match sic_conventional(&trace, &options) {
        Ok(r) => decode_summary(&r, &trace),
        Err(e) => json!({ "error": e.to_string() }),
    };
    Ok(json!({
        "slots": trace.slots,
        "conventional": conventional,
        "genie": decode_summary(&sic_genie(&trace, &options), &trace),
        "identify": decode_summary(&sic_identify(&trace, &options), &trace),
    }))
}

fn to_js(value: Result<Value>) -> std::result::Result<String, JsError> {
    value.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn battery_explorer(
    num_devices: u32,
    frame_length: u32,
    alpha_u: f64,
    capacity: u32,
    eta_m: f64,
    max_degree: u32,
) -> std::result::Result<String, JsError> {
    to_js(battery_explorer_value(
        num_devices,
        frame_length,
        alpha_u,
        capacity,
        eta_m,
        max_degree,
    ))
}

#[wasm_bindgen]
pub fn age_curves(
    num_devices: u32,
    frame_length: u32,
    alpha_u: f64,
    theta: u32,
    points: u32,
) -> std::result::Result<String, JsError> {
    to_js(age_curves_value(
        num_devices,
        frame_length,
        alpha_u,
        theta as u64,
        points,
    ))
}

#[wasm_bindgen]
pub fn decode_frame(frame_length: u32, patterns: &str) -> std::result::Result<String, JsError> {
    to_js(decode_frame_value(frame_length, patterns))
}
