//! Line-oriented query traces.
//!
//! ```text
//! # restoredge-trace v1
//! 0.5,Alexa,40000,b:3,1
//! 1.25,Alexa,52000,v:0.1,-0.3,0.9
//! ```
//!
//! Fields: arrival time (ms), application tag, query size (bytes), then either
//! a profile bucket key with its reuse coin or a feature vector.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::{AppRegistry, AppTag, FeatureVector, Payload};

pub const TRACE_HEADER: &str = "# restoredge-trace v1";

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("cannot read trace `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub timestamp_ms: f64,
    pub app: AppTag,
    pub size_bytes: u64,
    pub payload: Payload,
}

fn err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_real(line: usize, what: &str, s: &str) -> Result<f64, TraceError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| err(line, format!("{what} `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(err(line, format!("{what} `{s}` is not finite")));
    }
    Ok(v)
}

fn parse_line(n: usize, line: &str, registry: &mut AppRegistry) -> Result<TraceRecord, TraceError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 4 {
        return Err(err(n, format!("expected at least 4 fields, found {}", fields.len())));
    }
    let timestamp_ms = parse_real(n, "timestamp", fields[0])?;
    if timestamp_ms < 0.0 {
        return Err(err(n, "timestamp is negative"));
    }
    if fields[1].is_empty() {
        return Err(err(n, "empty app tag"));
    }
    let app = AppTag::new(fields[1]);
    let size_bytes: u64 = fields[2]
        .parse()
        .map_err(|_| err(n, format!("size `{}` is not a byte count", fields[2])))?;
    if size_bytes == 0 {
        return Err(err(n, "size must be positive"));
    }
    let payload = if let Some(key) = fields[3].strip_prefix("b:") {
        if fields.len() != 5 {
            return Err(err(n, "bucket records take exactly 5 fields"));
        }
        let bucket_key = key
            .parse()
            .map_err(|_| err(n, format!("bucket key `{key}` is not an integer")))?;
        let reuse_coin = match fields[4] {
            "0" => false,
            "1" => true,
            other => return Err(err(n, format!("reuse coin `{other}` must be 0 or 1"))),
        };
        Payload::Profile { bucket_key, reuse_coin }
    } else if let Some(first) = fields[3].strip_prefix("v:") {
        let mut xs = vec![parse_real(n, "vector component", first)?];
        for f in &fields[4..] {
            xs.push(parse_real(n, "vector component", f)?);
        }
        let v = FeatureVector::new(xs).map_err(|e| err(n, e.to_string()))?;
        match registry.dimension(&app) {
            Some(d) if d != v.dimension() => {
                return Err(err(
                    n,
                    format!("app {app} has dimension {d}, this vector has {}", v.dimension()),
                ))
            }
            Some(_) => {}
            None => registry.register(app.clone(), v.dimension()),
        }
        Payload::Vector(v)
    } else {
        return Err(err(n, format!("payload `{}` must start with b: or v:", fields[3])));
    };
    Ok(TraceRecord {
        timestamp_ms,
        app,
        size_bytes,
        payload,
    })
}

/// Parses a whole trace. Blank lines and further `#` comments are skipped;
/// timestamps must not decrease.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut out: Vec<TraceRecord> = Vec::new();
    let mut registry = AppRegistry::new();
    let Some((n, first)) = lines.find(|(_, l)| !l.is_empty()) else {
        return Ok(out);
    };
    if first != TRACE_HEADER {
        return Err(err(n, format!("expected header `{TRACE_HEADER}`")));
    }
    for (n, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = parse_line(n, line, &mut registry)?;
        if let Some(prev) = out.last() {
            if rec.timestamp_ms < prev.timestamp_ms {
                return Err(err(
                    n,
                    format!("timestamp {} precedes previous {}", rec.timestamp_ms, prev.timestamp_ms),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn ingest_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_trace(&text)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in records {
        write!(s, "{},{},{},", r.timestamp_ms, r.app, r.size_bytes).unwrap();
        match &r.payload {
            Payload::Profile { bucket_key, reuse_coin } => {
                writeln!(s, "b:{bucket_key},{}", u8::from(*reuse_coin)).unwrap()
            }
            Payload::Vector(v) => {
                let parts: Vec<String> = v.components().iter().map(|x| x.to_string()).collect();
                writeln!(s, "v:{}", parts.join(",")).unwrap()
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_is_empty_stream() {
        assert_eq!(parse_trace("").unwrap(), vec![]);
        assert_eq!(parse_trace("\n\n").unwrap(), vec![]);
    }

    #[test]
    fn one_line_one_query() {
        let t = format!("{TRACE_HEADER}\n12.5,Alexa,40000,b:3,1\n");
        let r = parse_trace(&t).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(
            r[0].payload,
            Payload::Profile {
                bucket_key: 3,
                reuse_coin: true
            }
        );
        assert_eq!(r[0].timestamp_ms, 12.5);
    }

    #[test]
    fn vector_line() {
        let t = format!("{TRACE_HEADER}\n0,MNIST,100,v:1,0,-2.5\n");
        let r = parse_trace(&t).unwrap();
        match &r[0].payload {
            Payload::Vector(v) => assert_eq!(v.components(), &[1.0, 0.0, -2.5]),
            p => panic!("{p:?}"),
        }
    }

    #[test]
    fn shuffled_timestamps_name_first_bad_line() {
        let t = format!("{TRACE_HEADER}\n5,A,1,b:0,0\n7,A,1,b:0,0\n6,A,1,b:0,0\n1,A,1,b:0,0\n");
        assert_eq!(
            parse_trace(&t).unwrap_err(),
            TraceError::Parse {
                line: 4,
                message: "timestamp 6 precedes previous 7".into()
            }
        );
    }

    #[test]
    fn missing_header_rejected() {
        assert!(matches!(parse_trace("0,A,1,b:0,0\n"), Err(TraceError::Parse { line: 1, .. })));
    }

    #[test]
    fn malformed_lines() {
        for bad in [
            "x,A,1,b:0,0",
            "1,A,0,b:0,0",
            "1,,1,b:0,0",
            "1,A,1,b:0,2",
            "1,A,1,b:0",
            "1,A,1,q:0,0",
            "1,A,1,v:0,0",
            "1,A,1,v:1,NaN",
            "-1,A,1,b:0,0",
            "1,A,1",
        ] {
            let t = format!("{TRACE_HEADER}\n{bad}\n");
            assert!(matches!(parse_trace(&t), Err(TraceError::Parse { line: 2, .. })), "{bad}");
        }
    }

    #[test]
    fn dimension_must_be_consistent_per_app() {
        let t = format!("{TRACE_HEADER}\n0,A,1,v:1,2\n1,A,1,v:1,2,3\n");
        assert!(matches!(parse_trace(&t), Err(TraceError::Parse { line: 3, .. })));
        let t = format!("{TRACE_HEADER}\n0,A,1,v:1,2\n1,B,1,v:1,2,3\n");
        assert!(parse_trace(&t).is_ok());
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        let payload = prop_oneof![
            (any::<u64>(), any::<bool>()).prop_map(|(k, c)| Payload::Profile {
                bucket_key: k,
                reuse_coin: c
            }),
            proptest::collection::vec(-1e6f64..1e6, 3)
                .prop_filter("nonzero", |v| v.iter().any(|x| *x != 0.0))
                .prop_map(|v| Payload::Vector(FeatureVector::new(v).unwrap())),
        ];
        (0.0f64..1e7, 1u64..10_000_000, payload).prop_map(|(t, size, payload)| TraceRecord {
            timestamp_ms: t,
            app: AppTag::new("App"),
            size_bytes: size,
            payload,
        })
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(mut recs in proptest::collection::vec(arb_record(), 0..20)) {
            recs.sort_by(|a, b| a.timestamp_ms.total_cmp(&b.timestamp_ms));
            let text = format_trace(&recs);
            prop_assert_eq!(parse_trace(&text).unwrap(), recs);
        }
    }
}
