//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! Q <id> <lat> <lon> <radius_m> <t_ms> <max_age_ms>
//! C <id> <lat> <lon> <t_ms>
//! A <question_id> <candidate_id> <t_ms>
//! T <delta_ms>
//! ```

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use fsd_core::geomatch::{CandidateLocation, GeoEvent, LatLon, Question};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioEvent {
    Question(Question),
    Candidate(CandidateLocation),
    Answer { question_id: Arc<str>, candidate_id: Arc<str>, t_ms: u64 },
    Advance(u64),
}

impl ScenarioEvent {
    /// Absolute time of a timestamped event.
    pub fn time_ms(&self) -> Option<u64> {
        match self {
            ScenarioEvent::Question(q) => Some(q.created_ms),
            ScenarioEvent::Candidate(c) => Some(c.reported_ms),
            ScenarioEvent::Answer { t_ms, .. } => Some(*t_ms),
            ScenarioEvent::Advance(_) => None,
        }
    }

    /// The pipeline payload, if this is not a clock advance.
    pub fn to_geo_event(&self) -> Option<GeoEvent> {
        match self {
            ScenarioEvent::Question(q) => Some(GeoEvent::Question(q.clone())),
            ScenarioEvent::Candidate(c) => Some(GeoEvent::Candidate(c.clone())),
            ScenarioEvent::Answer {
                question_id,
                candidate_id,
                ..
            } => Some(GeoEvent::Answer {
                question_id: Arc::clone(question_id),
                candidate_id: Arc::clone(candidate_id),
            }),
            ScenarioEvent::Advance(_) => None,
        }
    }
}

impl fmt::Display for ScenarioEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioEvent::Question(q) => write!(
                f,
                "Q {} {} {} {} {} {}",
                q.question_id, q.lat_deg, q.lon_deg, q.radius_m, q.created_ms, q.max_age_ms
            ),
            ScenarioEvent::Candidate(c) => {
                write!(f, "C {} {} {} {}", c.candidate_id, c.lat_deg, c.lon_deg, c.reported_ms)
            }
            ScenarioEvent::Answer {
                question_id,
                candidate_id,
                t_ms,
            } => write!(f, "A {question_id} {candidate_id} {t_ms}"),
            ScenarioEvent::Advance(d) => write!(f, "T {d}"),
        }
    }
}

pub fn format_scenario(events: &[ScenarioEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{e}");
    }
    out
}

fn field<T: FromStr>(fields: &[&str], i: usize, what: &str) -> Result<T, String> {
    fields[i].parse().map_err(|_| format!("bad {what} `{}`", fields[i]))
}

fn coordinate(fields: &[&str], lat_at: usize) -> Result<LatLon, String> {
    let lat: f64 = field(fields, lat_at, "latitude")?;
    let lon: f64 = field(fields, lat_at + 1, "longitude")?;
    let p = LatLon::new(lat, lon);
    if !p.is_valid() {
        return Err(format!("coordinate ({lat}, {lon}) out of range"));
    }
    Ok(p)
}

fn parse_line(fields: &[&str]) -> Result<ScenarioEvent, String> {
    let expect = |n: usize| {
        if fields.len() == n {
            Ok(())
        } else {
            Err(format!("`{}` takes {} fields, got {}", fields[0], n - 1, fields.len() - 1))
        }
    };
    match fields[0] {
        "Q" => {
            expect(7)?;
            let p = coordinate(fields, 2)?;
            let radius: f64 = field(fields, 4, "radius")?;
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(format!("radius must be positive, got {radius}"));
            }
            Ok(ScenarioEvent::Question(Question::new(
                fields[1],
                p.lat_deg,
                p.lon_deg,
                radius,
                field(fields, 5, "time")?,
                field(fields, 6, "max age")?,
            )))
        }
        "C" => {
            expect(5)?;
            let p = coordinate(fields, 2)?;
            Ok(ScenarioEvent::Candidate(CandidateLocation::new(
                fields[1],
                p.lat_deg,
                p.lon_deg,
                field(fields, 4, "time")?,
            )))
        }
        "A" => {
            expect(4)?;
            Ok(ScenarioEvent::Answer {
                question_id: Arc::from(fields[1]),
                candidate_id: Arc::from(fields[2]),
                t_ms: field(fields, 3, "time")?,
            })
        }
        "T" => {
            expect(2)?;
            if fields[1].starts_with('-') {
                return Err(format!("clock cannot move backwards (T {})", fields[1]));
            }
            Ok(ScenarioEvent::Advance(field(fields, 1, "delta")?))
        }
        other => Err(format!("unknown event `{other}`")),
    }
}

/// Parses a scenario. Timestamps must not fall behind the clock implied by
/// the events before them, including `T` advances.
pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioEvent>, ParseError> {
    let mut events = Vec::new();
    let mut clock = 0u64;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_ascii_whitespace().collect();
        let event = parse_line(&fields).map_err(|message| ParseError { line, message })?;
        match event.time_ms() {
            Some(t) if t < clock => {
                return Err(ParseError {
                    line,
                    message: format!("time {t} is before the current clock {clock}"),
                })
            }
            Some(t) => clock = t,
            None => {
                if let ScenarioEvent::Advance(d) = event {
                    clock = clock.checked_add(d).ok_or_else(|| ParseError {
                        line,
                        message: "clock overflow".into(),
                    })?;
                }
            }
        }
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_line() {
        let ev = parse_scenario("Q q1 0.0 0.0 1000 0 900000").unwrap();
        assert_eq!(ev, [ScenarioEvent::Question(Question::new("q1", 0.0, 0.0, 1000.0, 0, 900_000))]);
    }

    #[test]
    fn candidate_line() {
        let ev = parse_scenario("C c1 0.0 0.005 0").unwrap();
        assert_eq!(ev, [ScenarioEvent::Candidate(CandidateLocation::new("c1", 0.0, 0.005, 0))]);
    }

    #[test]
    fn negative_advance_rejected() {
        let err = parse_scenario("# header\n\nT -5").unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("Q q1 0 0 1000 0", 1),
            ("C c 0 0 0\nC c 91 0 5", 2),
            ("C c 0 180 0", 1),
            ("Q q 0 0 -1 0 10", 1),
            ("C c 0 0 10\nC d 0 0 9", 2),
            ("T 100\nC c 0 0 50", 2),
            ("X 1 2", 1),
            ("C c 0 zero 0", 1),
        ];
        for (text, line) in cases {
            let err = parse_scenario(text).unwrap_err();
            assert_eq!(err.line, line, "{text}: {err}");
        }
    }

    #[test]
    fn comments_and_round_trip() {
        let text = "Q q1 12.5 -3.25 750 0 60000 # trailing\nC c1 12.5 -3.2 10\nA q1 c1 20\nT 500\n";
        let ev = parse_scenario(text).unwrap();
        assert_eq!(ev.len(), 4);
        let again = parse_scenario(&format_scenario(&ev)).unwrap();
        assert_eq!(ev, again);
        assert!(format_scenario(&ev).starts_with("Q q1 12.5 -3.25 750 0 60000\n"));
    }

    #[test]
    fn empty_scenario() {
        assert!(parse_scenario("").unwrap().is_empty());
        assert!(parse_scenario("# nothing\n   \n").unwrap().is_empty());
    }
}
