//! Match results as JSON documents.

use crate::error::{Error, Result};
use crate::matcher::MatchResult;

pub fn to_json(result: &MatchResult) -> String {
    serde_json::to_string_pretty(result).expect("match results serialize")
}

pub fn from_json(text: &str) -> Result<MatchResult> {
    let r: MatchResult = serde_json::from_str(text).map_err(|e| Error::Parse {
        format: "match result json",
        line: e.line(),
        message: e.to_string(),
    })?;
    if let Some((m, row)) = r.assignment.iter().enumerate().find(|(_, row)| row.len() != r.triplets.len()) {
        return Err(Error::Parse {
            format: "match result json",
            line: 0,
            message: format!("assignment row {m} has {} entries for {} triplets", row.len(), r.triplets.len()),
        });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{AmbiguityFlag, AmbiguityKind};
    use crate::model::TargetParams;

    fn sample() -> MatchResult {
        MatchResult {
            triplets: vec![TargetParams::new(0.001, -80.0, 1.0, 0.1), TargetParams::new(0.0049, -16.0, 0.6, 0.85)],
            residual: 1.5e-12,
            ambiguity_flags: vec![AmbiguityFlag {
                kind: AmbiguityKind::Unresolved,
                components: vec![0, 1],
                matchings: 0,
            }],
            pulses_used: 4,
            assignment: vec![vec![1, 0], vec![0, 1], vec![0, 1], vec![1, 0]],
        }
    }

    #[test]
    fn document_fields() {
        let v: serde_json::Value = serde_json::from_str(&to_json(&sample())).unwrap();
        for key in ["tau", "f", "phi", "amp"] {
            assert!(v["triplets"][0].get(key).is_some(), "{key}");
        }
        assert!(v.get("residual").is_some());
        assert_eq!(v["flags"][0]["kind"], "unresolved");
    }

    #[test]
    fn round_trip() {
        let r = sample();
        assert_eq!(from_json(&to_json(&r)).unwrap(), r);
        let mut bad = r;
        bad.assignment[2].pop();
        assert!(matches!(from_json(&to_json(&bad)), Err(Error::Parse { .. })));
        assert!(from_json("[]").is_err());
    }
}
