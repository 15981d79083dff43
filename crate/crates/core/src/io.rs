//! Plain-text `key = value` files for scenarios and timing schedules.
//!
//! Scenario files give positions and the receiver radius in micrometres,
//! flow in micrometres per second, diffusion in m²/s and times in seconds.
//! Keys left out keep the reference values. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Scenario, TimingSchedule, TIME_KEYS, UM, USERS};

/// Nine significant digits.
pub fn fmt9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.8e}");
    let parsed: f64 = s.parse().unwrap_or(v);
    let exp = parsed.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let f = format!("{parsed:.decimals$}");
        if f.contains('.') {
            f.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            f
        }
    } else {
        let (m, e) = s.split_once('e').unwrap_or((&s, "0"));
        let m = if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.')
        } else {
            m
        };
        format!("{m}e{e}")
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: format!("expected key = value, got '{line}'"),
        })?;
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn number(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{key}: '{v}' is not a number"),
    })?;
    if !x.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{key}: value must be finite"),
        });
    }
    Ok(x)
}

fn triple(line: usize, key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Parse {
            line,
            msg: format!("{key}: expected x, y, z"),
        });
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = number(line, key, p)?;
    }
    Ok(out)
}

fn user_index(key: &str, prefix: &str) -> Option<usize> {
    let rest = key.strip_prefix(prefix)?;
    let i: usize = rest.parse().ok()?;
    (1..=USERS).contains(&i).then(|| i - 1)
}

/// Parses a scenario file over the reference defaults and validates it.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut s = Scenario::reference();
    let um = |v: [f64; 3]| v.map(|x| x * UM);
    for (line, key, v) in parse_pairs(text)? {
        let k = key.as_str();
        if let Some(i) = user_index(k, "tx") {
            s.tx_positions[i] = um(triple(line, k, &v)?);
        } else if let Some(i) = user_index(k, "rx") {
            s.rx_positions[i] = um(triple(line, k, &v)?);
        } else if let Some(i) = user_index(k, "c") {
            s.reaction_coeffs[i] = number(line, k, &v)?;
        } else {
            match k {
                "d1" => s.diffusion[0] = number(line, k, &v)?,
                "d2" => s.diffusion[1] = number(line, k, &v)?,
                "flow" => s.flow = um(triple(line, k, &v)?),
                "rx_radius" => s.rx_radius = number(line, k, &v)? * UM,
                "zeta0" => s.amplitudes[0] = number(line, k, &v)?,
                "zeta1" => s.amplitudes[1] = number(line, k, &v)?,
                "c" => s.reaction_coeffs = [number(line, k, &v)?; USERS],
                "slot" => s.slot_duration = number(line, k, &v)?,
                "noise1" => s.env_noise[0] = number(line, k, &v)?,
                "noise2" => s.env_noise[1] = number(line, k, &v)?,
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key '{k}'"),
                    })
                }
            }
        }
    }
    s.validate()?;
    Ok(s)
}

pub fn format_scenario(s: &Scenario) -> String {
    let um = |v: [f64; 3]| {
        v.iter()
            .map(|x| fmt9(x / UM))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut out = String::new();
    for i in 0..USERS {
        out.push_str(&format!("tx{} = {}\n", i + 1, um(s.tx_positions[i])));
    }
    for i in 0..USERS {
        out.push_str(&format!("rx{} = {}\n", i + 1, um(s.rx_positions[i])));
    }
    out.push_str(&format!(
        "d1 = {}\nd2 = {}\n",
        fmt9(s.diffusion[0]),
        fmt9(s.diffusion[1])
    ));
    out.push_str(&format!("flow = {}\n", um(s.flow)));
    out.push_str(&format!("rx_radius = {}\n", fmt9(s.rx_radius / UM)));
    out.push_str(&format!(
        "zeta0 = {}\nzeta1 = {}\n",
        fmt9(s.amplitudes[0]),
        fmt9(s.amplitudes[1])
    ));
    for i in 0..USERS {
        out.push_str(&format!("c{} = {}\n", i + 1, fmt9(s.reaction_coeffs[i])));
    }
    out.push_str(&format!("slot = {}\n", fmt9(s.slot_duration)));
    out.push_str(&format!(
        "noise1 = {}\nnoise2 = {}\n",
        fmt9(s.env_noise[0]),
        fmt9(s.env_noise[1])
    ));
    out
}

/// Parses a times file; all twelve keys are required.
pub fn parse_times(text: &str) -> Result<TimingSchedule> {
    let mut seen: BTreeMap<usize, f64> = BTreeMap::new();
    for (line, key, v) in parse_pairs(text)? {
        let idx = TIME_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("unknown key '{key}'"),
            })?;
        if seen.insert(idx, number(line, &key, &v)?).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key '{key}'"),
            });
        }
    }
    let missing: Vec<&str> = (0..12)
        .filter(|k| !seen.contains_key(k))
        .map(|k| TIME_KEYS[k])
        .collect();
    if !missing.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: format!("missing keys: {}", missing.join(", ")),
        });
    }
    let mut a = [0.0; 12];
    for (k, v) in seen {
        a[k] = v;
    }
    Ok(TimingSchedule::from_array(a))
}

pub fn format_times(ts: &TimingSchedule) -> String {
    TIME_KEYS
        .iter()
        .zip(ts.to_array())
        .map(|(k, v)| format!("{k} = {}\n", fmt9(v)))
        .collect()
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&read_to_string(path)?)
}

pub fn load_times(path: &Path) -> Result<TimingSchedule> {
    parse_times(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt9_digits() {
        assert_eq!(fmt9(0.1234567891234), "0.123456789");
        assert_eq!(fmt9(-0.2323), "-0.2323");
        assert_eq!(fmt9(1.0), "1");
        assert_eq!(fmt9(1.16211e7), "11621100");
        assert_eq!(fmt9(1.2345678912e-7), "1.23456789e-7");
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(7e-5), "7e-5");
        assert_eq!(fmt9(-2.5e12), "-2.5e12");
    }

    #[test]
    fn scenario_round_trip() {
        let s = Scenario::reference();
        let back = parse_scenario(&format_scenario(&s)).unwrap();
        for i in 0..USERS {
            for k in 0..3 {
                assert!((back.tx_positions[i][k] - s.tx_positions[i][k]).abs() < 1e-18);
                assert!((back.rx_positions[i][k] - s.rx_positions[i][k]).abs() < 1e-18);
            }
        }
        assert_eq!(back.diffusion, s.diffusion);
        assert_eq!(back.amplitudes, s.amplitudes);
    }

    #[test]
    fn empty_file_is_reference() {
        assert_eq!(
            parse_scenario("# nothing\n").unwrap(),
            Scenario::reference()
        );
    }

    #[test]
    fn bad_lines_name_the_line() {
        let e = parse_scenario("d1 = 1e-8\nbogus = 3\n").unwrap_err();
        assert_eq!(
            e,
            Error::Parse {
                line: 2,
                msg: "unknown key 'bogus'".into()
            }
        );
        assert!(matches!(
            parse_scenario("zeta0 = abc"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_scenario("rx_radius = -1"),
            Err(Error::InvalidScenario(_))
        ));
    }

    #[test]
    fn times_round_trip_and_missing() {
        let ts = TimingSchedule::from_array([
            0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5,
        ]);
        assert_eq!(parse_times(&format_times(&ts)).unwrap(), ts);
        let e = parse_times("rel1_1 = 0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { ref msg, .. } if msg.contains("smp3_2")));
    }
}
