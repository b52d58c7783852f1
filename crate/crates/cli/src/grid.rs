/// Parses a horizon grid: comma-separated items, each a number or a range
/// `a..b` / `a..=b` with an optional `:step`.
pub fn parse_grid(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (range, step) = match item.split_once(':') {
            Some((r, s)) => (r, num(s)?),
            None => (item, 1),
        };
        if step == 0 {
            return Err(format!("zero step in `{item}`"));
        }
        if let Some((lo, hi)) = range.split_once("..=") {
            let (lo, hi) = (num(lo)?, num(hi)?);
            out.extend((lo..=hi).step_by(step as usize));
        } else if let Some((lo, hi)) = range.split_once("..") {
            let (lo, hi) = (num(lo)?, num(hi)?);
            out.extend((lo..hi).step_by(step as usize));
        } else if step != 1 {
            return Err(format!("step without a range in `{item}`"));
        } else {
            out.push(num(range)?);
        }
    }
    if out.is_empty() {
        return Err("empty horizon grid".into());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn num(s: &str) -> Result<u64, String> {
    s.trim().parse().map_err(|_| format!("not a cycle count: `{s}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms() {
        assert_eq!(parse_grid("20").unwrap(), [20]);
        assert_eq!(parse_grid("0..3").unwrap(), [0, 1, 2]);
        assert_eq!(parse_grid("0..=10:5").unwrap(), [0, 5, 10]);
        assert_eq!(parse_grid("7, 1..3, 2").unwrap(), [1, 2, 7]);
    }

    #[test]
    fn rejects() {
        for bad in ["", "x", "1..y", "0..5:0", "4:2"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }
}
