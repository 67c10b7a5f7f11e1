//! Byte-deterministic writers: CSV, plain PGM, and JSON with 17 significant
//! digits per float.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use anyhow::{Context, Result};
use hyrec_core::driver::IterationRecord;
use serde::Serialize;

/// `d.dddddddddddddddde±x`; non-finite values as `nan`, `inf`, `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub const CSV_COLUMNS: &str = "cycle,iter,lambda,resnorm,relerr,basis_count,wall_ms";

/// One CSV row per record; `prefix` (if any) becomes the first column.
pub fn iterations_csv(prefix_name: Option<&str>, runs: &[(&str, &[IterationRecord])]) -> String {
    let mut s = String::new();
    if let Some(p) = prefix_name {
        s.push_str(p);
        s.push(',');
    }
    s.push_str(CSV_COLUMNS);
    s.push('\n');
    for (label, recs) in runs {
        for r in *recs {
            if prefix_name.is_some() {
                s.push_str(label);
                s.push(',');
            }
            let relerr = r.rel_error.map_or_else(|| "nan".to_string(), fmt_f64);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.cycle,
                r.iteration,
                fmt_f64(r.lambda),
                fmt_f64(r.projected_resnorm),
                relerr,
                r.basis_count,
                fmt_f64(r.wall_ms)
            );
        }
    }
    s
}

/// Plain (P2) graymap of a row-major `width × height` image, values clipped
/// to `[0, 1]` and scaled to `0..=255`.
pub fn pgm(values: &[f64], width: usize, height: usize) -> String {
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width).take(height) {
        let line: Vec<String> = row
            .iter()
            .map(|v| {
                let c = if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                };
                ((c * 255.0).round() as u8).to_string()
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with 17-significant-digit floats (non-finite floats become
/// `null`) and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf)?)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits_and_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678] {
            let s = fmt_f64(x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn json_uses_fixed_digits_and_is_valid() {
        #[derive(Serialize)]
        struct T {
            a: f64,
            b: Vec<f64>,
            c: f64,
        }
        let s = to_json(&T {
            a: 0.1,
            b: vec![1.0, 2.0],
            c: f64::NAN,
        })
        .unwrap();
        assert_eq!(
            s,
            "{\"a\":1.0000000000000001e-1,\"b\":[1.0000000000000000e0,2.0000000000000000e0],\"c\":null}\n"
        );
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn pgm_layout() {
        let s = pgm(&[0.0, 0.5, 1.0, 2.0, -1.0, f64::NAN], 3, 2);
        assert_eq!(s, "P2\n3 2\n255\n0 128 255\n255 0 0\n");
    }

    #[test]
    fn csv_prefix_column() {
        let r = IterationRecord {
            cycle: 0,
            inner_iter: 1,
            iteration: 1,
            lambda: 0.5,
            projected_resnorm: 1.0,
            rel_error: Some(0.25),
            basis_count: 1,
            wall_ms: 0.0,
        };
        let s = iterations_csv(Some("solver"), &[("hybr", std::slice::from_ref(&r))]);
        let mut lines = s.lines();
        assert_eq!(
            lines.next(),
            Some("solver,cycle,iter,lambda,resnorm,relerr,basis_count,wall_ms")
        );
        assert!(lines
            .next()
            .unwrap()
            .starts_with("hybr,0,1,5.0000000000000000e-1,"));
    }
}
