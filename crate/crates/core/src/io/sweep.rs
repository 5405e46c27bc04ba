//! Sweep tables as CSV.

use crate::error::{Error, Result};
use crate::harness::{SweepResult, SweepRow};

pub const HEADER: [&str; 6] = ["snr_db", "rmse_tau_s", "rmse_f_hz", "rmse_amp", "trials", "failures"];

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        format: "sweep csv",
        line,
        message: message.into(),
    }
}

pub fn to_csv(result: &SweepResult) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in &result.rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn from_csv(text: &str) -> Result<SweepResult> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(parse_err(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.deserialize::<SweepRow>() {
        let row = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        if row.failures > row.trials {
            return Err(parse_err(rows.len() + 2, "more failures than trials"));
        }
        rows.push(row);
    }
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let res = SweepResult {
            rows: vec![
                SweepRow {
                    snr_db: 0.0,
                    rmse_tau_s: 1.25e-3,
                    rmse_f_hz: 3.5,
                    rmse_amp: 0.2,
                    trials: 5,
                    failures: 1,
                },
                SweepRow {
                    snr_db: 5.0,
                    rmse_tau_s: f64::NAN,
                    rmse_f_hz: f64::NAN,
                    rmse_amp: f64::NAN,
                    trials: 5,
                    failures: 5,
                },
            ],
        };
        let text = to_csv(&res);
        assert!(text.starts_with("snr_db,rmse_tau_s,rmse_f_hz,rmse_amp,trials,failures\n"));
        assert_eq!(text.lines().count(), 3);
        let back = from_csv(&text).unwrap();
        assert_eq!(back.rows[0], res.rows[0]);
        assert!(back.rows[1].rmse_f_hz.is_nan());
        assert_eq!(to_csv(&back), text);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(from_csv("a,b\n1,2\n").is_err());
        let h = HEADER.join(",");
        assert!(matches!(from_csv(&format!("{h}\n0,1,1,1,x,0\n")), Err(Error::Parse { line: 2, .. })));
        assert!(from_csv(&format!("{h}\n0,1,1,1,2,3\n")).is_err());
        assert_eq!(from_csv(&format!("{h}\n")).unwrap().rows.len(), 0);
    }
}
