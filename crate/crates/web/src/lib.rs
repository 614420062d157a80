//! Browser demo: generate a synthetic failed run, diagnose it, and re-render
//! the recovery hint at different budgets. Everything runs in-page with the
//! deterministic fallback diagnosis.

use failscope::synth::{synthesize, Category};
use failscope::{run_pipeline, Config, Report};
use serde_json::json;

/// Category names accepted by [`synth`], in display order.
pub fn category_names() -> Vec<&'static str> {
    Category::ALL.iter().map(|c| c.as_str()).collect()
}

pub fn synth(category: &str, seed: u32) -> Result<String, String> {
    let c: Category = category.parse().map_err(|e: failscope::synth::SynthError| e.to_string())?;
    Ok(synthesize(c, u64::from(seed)))
}

/// Runs the pipeline over trace text. Returns `{"summary": ..., "report": ...}`.
pub fn diagnose(trace: &str) -> Result<String, String> {
    let report = run_pipeline(trace, "browser", &Config::default(), None).map_err(|e| e.to_string())?;
    let value = json!({
        "summary": report.summary(),
        "report": report,
    });
    Ok(value.to_string())
}

/// Re-renders the hint stored in a report at `budget` tokens.
pub fn rehint(report_json: &str, budget: u32) -> Result<String, String> {
    let report = Report::from_json(report_json).map_err(|e| format!("invalid report: {e}"))?;
    let hint = report.rehint(budget as usize).map_err(|e| e.to_string())?;
    Ok(json!({ "text": hint.text, "token_estimate": hint.token_estimate }).to_string())
}

#[cfg(target_arch = "wasm32")]
mod bindings {
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen]
    pub fn categories() -> Vec<String> {
        super::category_names().into_iter().map(String::from).collect()
    }

    #[wasm_bindgen]
    pub fn synth_trace(category: &str, seed: u32) -> Result<String, JsError> {
        super::synth(category, seed).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn diagnose_trace(trace: &str) -> Result<String, JsError> {
        super::diagnose(trace).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn format_hint(report_json: &str, budget: u32) -> Result<String, JsError> {
        super::rehint(report_json, budget).map_err(|e| JsError::new(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn round_trip_through_the_demo_api() {
        assert_eq!(category_names().len(), 6);
        let trace = synth("state-workflow", 4).unwrap();
        let out: Value = serde_json::from_str(&diagnose(&trace).unwrap()).unwrap();
        assert!(out["summary"].as_str().unwrap().starts_with("run synth-state_workflow-4"));
        let report = out["report"].to_string();
        let wide: Value = serde_json::from_str(&rehint(&report, 1200).unwrap()).unwrap();
        assert_eq!(wide["text"], out["report"]["hint"]["text"]);
        let narrow: Value = serde_json::from_str(&rehint(&report, 100).unwrap()).unwrap();
        assert!(narrow["token_estimate"].as_u64().unwrap() <= 100);
    }

    #[test]
    fn errors_are_messages() {
        assert!(synth("nope", 1).unwrap_err().contains("unknown category"));
        assert!(diagnose("").unwrap_err().contains("no spans"));
        assert!(rehint("{}", 500).unwrap_err().starts_with("invalid report"));
        let trace = synth("patch_submission", 1).unwrap();
        let out: Value = serde_json::from_str(&diagnose(&trace).unwrap()).unwrap();
        assert!(rehint(&out["report"].to_string(), 20).unwrap_err().contains("100"));
    }
}
