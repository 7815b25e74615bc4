//! Line-oriented circuit serialization.
//!
//! ```text
//! U3 0 1.57079632679 0 3.14159265359
//! CNOT 0 1
//! RXX 0.5
//! U4 <32 numbers: re/im pairs of the 4x4 matrix, row-major>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored when parsing.

use std::fmt::Write as _;

use super::{Circuit, Gate, U3Gate};
use crate::error::{Error, Result};
use crate::linalg::{c, Mat4};

const SIGNIFICANT_DIGITS: usize = 12;

/// Formats `x` with 12 significant digits in the shortest of fixed or
/// scientific notation, trailing zeros removed.
pub fn format_angle(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub(super) fn to_text(circuit: &Circuit) -> String {
    let mut out = String::new();
    for g in circuit.gates() {
        match g {
            Gate::U3(u) => writeln!(
                out,
                "U3 {} {} {} {}",
                u.qubit,
                format_angle(u.theta),
                format_angle(u.phi),
                format_angle(u.lambda)
            ),
            Gate::Cnot { control, target } => writeln!(out, "CNOT {control} {target}"),
            Gate::Rxx(theta) => writeln!(out, "RXX {}", format_angle(*theta)),
            Gate::Opaque(m) => {
                let parts: Vec<String> =
                    m.transpose().iter().flat_map(|z| [format!("{:e}", z.re), format!("{:e}", z.im)]).collect();
                writeln!(out, "U4 {}", parts.join(" "))
            }
        }
        .expect("writing to a String cannot fail");
    }
    out
}

/// Parses the text produced by [`Circuit::to_text`].
pub fn parse_circuit(text: &str) -> Result<Circuit> {
    let mut circuit = Circuit::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let perr = |msg: String| Error::Parse { line, msg };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| perr(format!("invalid number `{s}`")))
        };
        let qubit = |s: &str| -> Result<usize> { s.parse::<usize>().map_err(|_| perr(format!("invalid qubit `{s}`"))) };
        let arity = |n: usize| -> Result<()> {
            if fields.len() == n + 1 {
                Ok(())
            } else {
                Err(perr(format!("`{}` takes {n} arguments, got {}", fields[0], fields.len() - 1)))
            }
        };
        let gate = match fields[0] {
            "U3" => {
                arity(4)?;
                Gate::U3(U3Gate::new(num(fields[2])?, num(fields[3])?, num(fields[4])?, qubit(fields[1])?))
            }
            "CNOT" => {
                arity(2)?;
                Gate::Cnot { control: qubit(fields[1])?, target: qubit(fields[2])? }
            }
            "RXX" => {
                arity(1)?;
                Gate::Rxx(num(fields[1])?)
            }
            "U4" => {
                arity(32)?;
                let values = fields[1..].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>()?;
                let m = Mat4::from_fn(|r, col| {
                    let k = 2 * (4 * r + col);
                    c(values[k], values[k + 1])
                });
                Gate::opaque(m).map_err(|e| perr(e.to_string()))?
            }
            other => return Err(perr(format!("unknown gate `{other}`"))),
        };
        circuit.push(gate).map_err(|e| perr(e.to_string()))?;
    }
    Ok(circuit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{circuit_unitary, decompose_two_qubit, merge_u3_pairs};
    use crate::linalg::{haar_unitary, phase_distance4, to_mat4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn angle_formatting() {
        assert_eq!(format_angle(0.0), "0");
        assert_eq!(format_angle(std::f64::consts::PI), "3.14159265359");
        assert_eq!(format_angle(-0.5), "-0.5");
        assert_eq!(format_angle(1.5e-9), "1.5e-9");
        assert_eq!(format_angle(2.0), "2");
    }

    #[test]
    fn roundtrip_preserves_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = to_mat4(&haar_unitary(4, &mut rng));
        let circ = decompose_two_qubit(&u).unwrap();
        let back = parse_circuit(&circ.to_text()).unwrap();
        assert_eq!(back.len(), circ.len());
        assert!(phase_distance4(&circuit_unitary(&back), &u) < 1e-10);

        let merged = merge_u3_pairs(&circ).unwrap();
        let back = parse_circuit(&merged.to_text()).unwrap();
        assert!(phase_distance4(&circuit_unitary(&back), &u) < 1e-10);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = parse_circuit("CNOT 0 1\n\nU3 0 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(matches!(parse_circuit("FOO 1").unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(parse_circuit("CNOT 0 0").is_err());
        assert!(parse_circuit("U3 2 0 0 0").is_err());
    }

    #[test]
    fn rxx_and_comments_parse() {
        let c = parse_circuit("# header\nRXX 0.25\n").unwrap();
        assert_eq!(c.gates(), &[Gate::Rxx(0.25)]);
    }
}
