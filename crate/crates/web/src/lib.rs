//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each exported function takes plain strings or numbers and returns a JSON
//! string, so the page needs no generated type glue beyond `wasm-bindgen`.
//! The `*_json` functions hold the logic and are usable natively.

use coverlab::enumeration::{enumerate, index_of};
use coverlab::identifier::{least_index, radius, IdentifierConfig, SequentialIdentifier};
use coverlab::streams::{DistributionSpec, ReadoutStream};
use coverlab::Rational;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Keeps a trajectory request from freezing the tab.
pub const MAX_HORIZON: u64 = 250_000;

fn parse_q(s: &str) -> Result<Rational, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("`{s}` is not a rational"))
}

/// Index of `q`, the first `count` enumerated rationals, and the least index
/// within `delta` of `q`.
pub fn explore_json(q: &str, delta: &str, count: u32) -> Result<Value, String> {
    let q = parse_q(q)?;
    let delta = parse_q(delta)?;
    if !delta.is_positive() {
        return Err("delta must be positive".into());
    }
    let prefix: Vec<String> = (1..=count.min(200) as u64)
        .map(|i| enumerate(i).map(|r| r.to_string()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let least = least_index(&q, &delta).map_err(|e| e.to_string())?;
    Ok(json!({
        "q": q.to_string(),
        "index": index_of(&q).to_string(),
        "least_index": least,
        "least_value": enumerate(least).map_err(|e| e.to_string())?.to_string(),
        "prefix": prefix,
    }))
}

#[derive(Deserialize)]
struct TrajectoryRequest {
    distribution: DistributionSpec,
    seed: u64,
    horizon: u64,
    #[serde(default = "demo_identifier")]
    identifier: IdentifierConfig,
}

/// The default identifier with radii to within `2^-64` instead of `2^-n`.
/// Full precision is available by passing `identifier` explicitly.
fn demo_identifier() -> IdentifierConfig {
    IdentifierConfig {
        slack_cap: Some(64),
        ..IdentifierConfig::default()
    }
}

#[derive(Serialize)]
struct Point {
    j: u64,
    n: u64,
    mean: f64,
    threshold: f64,
    output: u64,
    value: Option<String>,
}

/// Decision-by-decision run of the identifier over `Q`.
///
/// `request` is JSON like
/// `{"distribution": {"kind": "two_point", "a": "0", "b": "1", "p": "1/2"}, "seed": 1, "horizon": 100000}`.
/// An `identifier` object (same keys as in the CLI config) overrides the
/// demo defaults.
pub fn trajectory_json(request: &str) -> Result<Value, String> {
    let req: TrajectoryRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.horizon == 0 || req.horizon > MAX_HORIZON {
        return Err(format!("horizon must be in 1..={MAX_HORIZON}"));
    }
    let mut stream = ReadoutStream::new(req.distribution.clone(), req.seed, req.identifier.epsilon)
        .map_err(|e| e.to_string())?;
    let mut id = SequentialIdentifier::rational(req.identifier)
        .map_err(|e| e.to_string())?
        .with_trace();
    match stream.constant_value().cloned() {
        Some(q) => {
            id.observe_repeated(&q, req.horizon)
                .map_err(|e| e.to_string())?;
        }
        None => {
            for _ in 0..req.horizon {
                let (x, x_sq) = stream.next_readout_with_square();
                id.observe_with_square(&x, &x_sq)
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    let points: Vec<Point> = id
        .take_trace()
        .into_iter()
        .map(|d| Point {
            j: d.j,
            n: d.n,
            mean: d.mean.to_f64(),
            threshold: d.threshold.upper_bound().to_f64(),
            output: d.output,
            value: (d.output > 0).then(|| {
                enumerate(d.output)
                    .map(|q| q.to_string())
                    .unwrap_or_default()
            }),
        })
        .collect();
    Ok(json!({
        "distribution": req.distribution.label(),
        "mean": req.distribution.mean_label(),
        "target_index": req.distribution.mean().map(|m| index_of(&m).to_string()),
        "final_output": id.output(),
        "decisions": points,
    }))
}

/// The radius, readout inflation and threshold on a log grid of `n`.
///
/// Radii are computed to within `2^-64`, which is plenty for plotting.
pub fn radius_curve_json(
    s_sq: &str,
    alpha: &str,
    n_max: u64,
    points: u32,
) -> Result<Value, String> {
    let s_sq = parse_q(s_sq)?;
    let cfg = IdentifierConfig {
        alpha: parse_q(alpha)?,
        slack_cap: Some(64),
        ..IdentifierConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let n_max = n_max.clamp(2, 1 << 40);
    let points = points.clamp(2, 400);
    let mut ns: Vec<u64> = (0..points)
        .map(|k| (n_max as f64).powf(k as f64 / (points - 1) as f64).round() as u64)
        .map(|n| n.max(1))
        .collect();
    ns.dedup();
    let mut rows = Vec::with_capacity(ns.len());
    for n in ns {
        let rad = radius(n as u128, &s_sq, &cfg).map_err(|e| e.to_string())?;
        let eta = cfg.epsilon.eta(n as u128);
        let r = rad.upper_bound().to_f64();
        let e = eta.upper_bound().to_f64();
        rows.push(json!({ "n": n, "radius": r, "eta": e, "threshold": r + e }));
    }
    Ok(json!({ "s_sq": s_sq.to_string(), "alpha": cfg.alpha.to_string(), "rows": rows }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn explore(q: &str, delta: &str, count: u32) -> Result<String, JsError> {
    to_js(explore_json(q, delta, count))
}

#[wasm_bindgen]
pub fn trajectory(request: &str) -> Result<String, JsError> {
    to_js(trajectory_json(request))
}

#[wasm_bindgen]
pub fn radius_curve(s_sq: &str, alpha: &str, n_max: u64, points: u32) -> Result<String, JsError> {
    to_js(radius_curve_json(s_sq, alpha, n_max, points))
}
