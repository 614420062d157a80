mod common;

use failscope::config::WireConfig;
use failscope::wire::{parse_span_line, parse_span_line_capped, read_trace, write_trace, EventType, WireError, TRUNCATION_MARKER};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

proptest! {
    #[test]
    fn generated_spans_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = common::random_span(&mut rng, 0);
        let line = span.to_line();
        let back = parse_span_line(&line).unwrap();
        prop_assert_eq!(&back, &span);
        prop_assert_eq!(back.to_line(), line);
    }

    #[test]
    fn arbitrary_payload_text_round_trips(payload in "\\PC{0,200}", step in 0u64..1_000_000) {
        let span = failscope::wire::Span::new("s", step, 1, EventType::ToolReturn, failscope::wire::Status::Error)
            .with_payload(payload);
        prop_assert_eq!(parse_span_line(&span.to_line()).unwrap(), span);
    }

    #[test]
    fn capped_payloads_end_on_a_char_boundary(payload in "\\PC{0,80}", cap in 0usize..64) {
        let span = failscope::wire::Span::new("s", 0, 0, EventType::ModelResponse, failscope::wire::Status::Ok)
            .with_payload(payload.clone());
        let back = parse_span_line_capped(&span.to_line(), cap).unwrap();
        if payload.len() <= cap {
            prop_assert_eq!(back.payload, payload);
        } else {
            let kept = back.payload.strip_suffix(TRUNCATION_MARKER).unwrap();
            prop_assert!(kept.len() <= cap);
            prop_assert!(payload.starts_with(kept));
        }
    }
}

#[test]
fn field_order_on_write_is_fixed() {
    let line = r#"{"zz":1,"meta":{"tool":"kubectl"},"payload":"","status":"ok","event":"tool_call","ts_ms":5,"step":3,"parent_id":null,"span_id":"a"}"#;
    let span = parse_span_line(line).unwrap();
    assert_eq!(span.step, 3);
    assert_eq!(span.tool(), Some("kubectl"));
    assert_eq!(
        span.to_line(),
        r#"{"span_id":"a","parent_id":null,"step":3,"ts_ms":5,"event":"tool_call","status":"ok","payload":"","meta":{"tool":"kubectl"},"zz":1}"#
    );
}

#[test]
fn optional_fields_default() {
    let span = parse_span_line(r#"{"span_id":"a","step":0,"ts_ms":0,"event":"submission","status":"unknown"}"#).unwrap();
    assert!(span.parent_id.is_none());
    assert!(span.payload.is_empty());
    assert!(span.meta.is_empty());
}

#[test]
fn malformed_records_are_rejected() {
    let bad = [
        "not json",
        r#"{"span_id":"","step":0,"ts_ms":0,"event":"tool_call","status":"ok"}"#,
        r#"{"span_id":"a","step":-1,"ts_ms":0,"event":"tool_call","status":"ok"}"#,
        r#"{"span_id":"a","step":0,"ts_ms":-4,"event":"tool_call","status":"ok"}"#,
        r#"{"span_id":"a","step":0,"ts_ms":0,"event":"teleport","status":"ok"}"#,
        r#"{"span_id":"a","step":0,"ts_ms":0,"event":"tool_call","status":"maybe"}"#,
        r#"{"span_id":"a","ts_ms":0,"event":"tool_call","status":"ok"}"#,
    ];
    for line in bad {
        assert!(matches!(parse_span_line(line), Err(WireError::Malformed { .. })), "{line}");
    }
}

#[test]
fn skipped_lines_are_reported_with_line_numbers() {
    let good = failscope::wire::Span::new("a", 0, 0, EventType::ModelResponse, failscope::wire::Status::Ok);
    let text = format!("{}\n\n{{oops\n{}\n", good.to_line(), good.clone().with_meta("x", json!(1)).to_line());
    let strict = read_trace(&text, &WireConfig::default()).unwrap_err();
    assert!(strict.to_string().contains("line 3"), "{strict}");

    let lenient = WireConfig {
        skip_malformed: true,
        ..WireConfig::default()
    };
    let read = read_trace(&text, &lenient).unwrap();
    assert_eq!(read.spans.len(), 2);
    assert_eq!(read.skipped.len(), 1);
    assert_eq!(read.skipped[0].0, 3);
}

#[test]
fn whole_trace_round_trips() {
    let text = common::registration_case();
    let read = read_trace(&text, &WireConfig::default()).unwrap();
    assert_eq!(write_trace(&read.spans), text);
}

#[test]
fn empty_input_is_an_error() {
    assert!(matches!(read_trace("\n \n", &WireConfig::default()), Err(WireError::Empty)));
}
