/// FLOP counts: plain or scientific notation, or PetaFLOPs with a `PF` suffix.
pub fn parse_compute(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let (body, scale) = match t.strip_suffix("PF").or_else(|| t.strip_suffix("pf")) {
        Some(b) => (b.trim(), 1e15),
        None => (t, 1.0),
    };
    let v: f64 = body.parse().map_err(|_| format!("not a number: {s}"))?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(format!("must be positive: {s}"));
    }
    Ok(v * scale)
}

/// Positive integer, also written as `1e6` or `2^20`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<u64>() {
        return if v > 0 {
            Ok(v)
        } else {
            Err("must be positive".into())
        };
    }
    let v = match t.split_once('^') {
        Some((b, e)) => {
            let b: f64 = b.parse().map_err(|_| format!("not a count: {s}"))?;
            let e: i32 = e.parse().map_err(|_| format!("not a count: {s}"))?;
            b.powi(e)
        }
        None => t.parse::<f64>().map_err(|_| format!("not a count: {s}"))?,
    };
    if !(v >= 1.0) || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(format!("not a positive integer: {s}"));
    }
    Ok(v as u64)
}

/// `lo:hi` with both ends counts.
pub fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got {s}"))?;
    let (lo, hi) = (parse_count(lo)?, parse_count(hi)?);
    if hi < lo {
        return Err(format!("empty range {s}"));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_suffix() {
        assert_eq!(parse_compute("236PF").unwrap(), 236e15);
        assert_eq!(parse_compute("1.5e21").unwrap(), 1.5e21);
        assert!(parse_compute("-3").is_err());
        assert!(parse_compute("PF").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("128").unwrap(), 128);
        assert_eq!(parse_count("1e6").unwrap(), 1_000_000);
        assert_eq!(parse_count("2^20").unwrap(), 1 << 20);
        assert!(parse_count("0").is_err());
        assert!(parse_count("1.5").is_err());
        assert_eq!(parse_range("1e3:1e12").unwrap(), (1000, 1_000_000_000_000));
        assert!(parse_range("10:1").is_err());
    }
}
