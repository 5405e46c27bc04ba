//! Pulse sample tables.
//!
//! The text form is a header of `# key=value` lines (`m`, `Ts`, `sigma2`)
//! followed by one `n re im` row per sample, floats written with 17
//! significant digits so that reading a file back reproduces every bit.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::synth::PulseSamples;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        format: "pulse text",
        line,
        message: message.into(),
    }
}

pub fn to_text(pulse: &PulseSamples) -> String {
    let mut out = String::with_capacity(64 * (pulse.len() + 3));
    let _ = writeln!(out, "# m={}", pulse.m);
    let _ = writeln!(out, "# Ts={:.16e}", pulse.ts);
    let _ = writeln!(out, "# sigma2={:.16e}", pulse.sigma2);
    for (n, z) in pulse.samples.iter().enumerate() {
        let _ = writeln!(out, "{n} {:.16e} {:.16e}", z.re, z.im);
    }
    out
}

fn parse_float(s: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| parse_err(line, format!("bad {what} {s:?}")))
}

pub fn from_text(text: &str) -> Result<PulseSamples> {
    let (mut m, mut ts, mut sigma2) = (None, None, 0.0);
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(meta) = s.strip_prefix('#') {
            let Some((key, value)) = meta.split_once('=') else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "m" => m = Some(value.parse::<usize>().map_err(|_| parse_err(line, format!("bad pulse index {value:?}")))?),
                "Ts" => ts = Some(parse_float(value, line, "Ts")?),
                "sigma2" => sigma2 = parse_float(value, line, "sigma2")?,
                other => return Err(parse_err(line, format!("unknown key {other:?}"))),
            }
            continue;
        }
        let mut cols = s.split_whitespace();
        let (Some(n), Some(re), Some(im), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(parse_err(line, "expected three columns: n re im"));
        };
        let n: usize = n.parse().map_err(|_| parse_err(line, format!("bad sample index {n:?}")))?;
        if n != samples.len() {
            return Err(parse_err(line, format!("sample index {n}, expected {}", samples.len())));
        }
        samples.push(Complex64::new(parse_float(re, line, "real part")?, parse_float(im, line, "imaginary part")?));
    }
    let ts = ts.ok_or_else(|| parse_err(0, "missing Ts header"))?;
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(parse_err(0, "Ts must be positive and finite"));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(parse_err(0, "sigma2 must be finite and nonnegative"));
    }
    Ok(PulseSamples {
        m: m.unwrap_or(0),
        samples,
        ts,
        sigma2,
    })
}

pub fn to_json(pulse: &PulseSamples) -> String {
    serde_json::to_string_pretty(pulse).expect("pulse samples serialize")
}

pub fn from_json(text: &str) -> Result<PulseSamples> {
    let p: PulseSamples = serde_json::from_str(text).map_err(|e| Error::Parse {
        format: "pulse json",
        line: e.line(),
        message: e.to_string(),
    })?;
    if !(p.ts > 0.0 && p.ts.is_finite()) {
        return Err(Error::Parse {
            format: "pulse json",
            line: 0,
            message: "Ts must be positive and finite".into(),
        });
    }
    Ok(p)
}
