//! JSON artifacts. Every document carries `"schema": 1`.

use serde_json::{json, Value};
use slq_core::convexity::Verdict;
use slq_core::{ConvexityReport64, CostEstimate, RiccatiSolution64, ValueReport64};

pub const SCHEMA: u32 = 1;

/// `null` for non-finite values, the number otherwise.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn certificate(sol: &RiccatiSolution64, method: &str, value: f64) -> Value {
    let cert = &sol.certificate;
    let lambda = match cert.kind {
        slq_core::CertificateKind::StronglyRegular { lambda } => num(lambda),
        _ => Value::Null,
    };
    let reason = match &cert.kind {
        slq_core::CertificateKind::NotCertified { reason } => json!(reason),
        _ => Value::Null,
    };
    json!({
        "schema": SCHEMA,
        "kind": cert.kind.name(),
        "lambda": lambda,
        "reason": reason,
        "kmin": num(cert.kmin),
        "pmin": num(cert.pmin),
        "range_defect": num(cert.range_defect),
        "gain_sup": num(cert.gain_sup),
        "nullity": cert.nullity,
        "method": method,
        "iterations": sol.iterations,
        "steps": sol.grid().steps(),
        "residual": num(sol.residual),
        "truncation_estimate": num(sol.truncation_estimate),
        "value": num(value),
        "witness": Value::Null,
    })
}

pub fn evidence_against(iteration: usize, node: usize, lambda_min: f64, steps: usize) -> Value {
    json!({
        "schema": SCHEMA,
        "kind": "EvidenceAgainst",
        "lambda": Value::Null,
        "reason": "K_j is not positive definite",
        "method": "iterate",
        "steps": steps,
        "witness": { "iteration": iteration, "node": node, "lambda_min": num(lambda_min) },
    })
}

pub fn cost(est: &CostEstimate<f64>, policy: &str, value: Option<f64>) -> Value {
    json!({
        "schema": SCHEMA,
        "policy": policy,
        "mean": num(est.mean),
        "stderr": num(est.stderr),
        "n_paths": est.n_paths,
        "exact": est.exact.map_or(Value::Null, num),
        "discretization": est.discretization.map_or(Value::Null, num),
        "value": value.map_or(Value::Null, num),
    })
}

pub fn verify(r: &ValueReport64) -> Value {
    let rows: Vec<Value> = r
        .perturbations
        .iter()
        .map(|p| {
            json!({
                "kind": p.kind.name(),
                "amplitude": num(p.amplitude),
                "excess": num(p.excess),
                "predicted": num(p.predicted),
                "stderr": num(p.stderr),
                "bias": num(p.bias),
                "z": num(p.z),
                "identity_ok": p.identity_ok(),
                "margin": num(p.margin),
                "margin_stderr": num(p.margin_stderr),
                "margin_bias": num(p.margin_bias),
                "margin_ok": p.margin_ok,
            })
        })
        .collect();
    json!({
        "schema": SCHEMA,
        "value": num(r.value),
        "mc_mean": num(r.mc_mean),
        "stderr": num(r.stderr),
        "bias": num(r.bias),
        "z": num(r.z),
        "n_paths": r.n_paths,
        "value_ok": r.value_ok(),
        "all_ok": r.all_ok(),
        "perturbations": rows,
    })
}

pub fn convexity(r: &ConvexityReport64) -> Value {
    let (lambda, witness) = match &r.verdict {
        Verdict::CertifiedConvex { lambda, witness } => (num(*lambda), json!(witness.name())),
        Verdict::EvidenceAgainst { witness } => (Value::Null, json!(witness)),
        Verdict::Inconclusive { reason } => (Value::Null, json!(reason)),
    };
    let certificates: Vec<Value> = r
        .certificates
        .iter()
        .map(|(w, l)| json!({ "witness": w.name(), "lambda": num(*l) }))
        .collect();
    json!({
        "schema": SCHEMA,
        "verdict": r.verdict.name(),
        "lambda": lambda,
        "witness": witness,
        "hessian_lambda_min": r.hessian_lambda_min.map_or(Value::Null, num),
        "c0_estimate": r.c0_estimate.map_or(Value::Null, num),
        "certificates": certificates,
        "details": r.details,
    })
}
